import math

import numpy as np
import pytest

from bilex.corpus import (
    ALL_TAGS,
    DataFormatError,
    TranslationDictionary,
    Vocabulary,
    frequency_table_from_counts,
    pos_table_from_tags,
)
from bilex.features import (
    FEATURE_GROUPS,
    FEATURE_NAMES,
    N_FEATURES,
    ExternalScores,
    FeatureSchema,
    build_groups,
    featurize_pair,
    label_candidates,
    load_external_scores,
    write_feature_matrix,
)
from bilex.retrieval import CandidateSet
from conftest import write


@pytest.fixture
def world():
    src_vocab = Vocabulary.from_words(["s0", "s1", "s2"])
    tgt_vocab = Vocabulary.from_words(["t0", "t1", "t2", "t3"])
    freq_src = frequency_table_from_counts({"s0": 1000, "s1": 100, "s2": 10}, src_vocab)
    freq_tgt = frequency_table_from_counts({"t0": 800, "t1": 80, "t2": 8, "t3": 4}, tgt_vocab)
    pos_src, _ = pos_table_from_tags({"s0": "NOUN", "s1": "VERB", "s2": "ADJ"}, src_vocab)
    pos_tgt, _ = pos_table_from_tags({"t0": "NOUN", "t1": "VERB", "t2": "NOUN", "t3": "ADV"}, tgt_vocab)
    return src_vocab, tgt_vocab, freq_src, freq_tgt, pos_src, pos_tgt


def simple_cands(n_src=3, top_k=3):
    src_ids = np.arange(n_src)
    cand_ids = np.tile(np.arange(top_k), (n_src, 1))
    scores = np.tile(np.linspace(1.0, 0.5, top_k), (n_src, 1))
    return CandidateSet.from_arrays(src_ids, cand_ids, scores)


class TestSchema:
    def test_layout(self):
        assert N_FEATURES == 46
        assert FEATURE_NAMES[0] == "csls"
        assert FEATURE_NAMES[9] == "pos_match"
        assert FEATURE_NAMES[10] == "src_pos_ADJ"
        assert FEATURE_NAMES[27] == "src_pos_UNK"
        assert FEATURE_NAMES[28] == "cand_pos_ADJ"
        assert FEATURE_NAMES[45] == "cand_pos_UNK"
        assert len(ALL_TAGS) == 18

    def test_fingerprint_changes_with_mask(self):
        assert FeatureSchema().fingerprint() != FeatureSchema(disabled=("pos",)).fingerprint()
        assert FeatureSchema(disabled=("pos",)).fingerprint() == FeatureSchema(disabled=("pos",)).fingerprint()

    def test_unknown_group_rejected(self):
        with pytest.raises(ValueError):
            FeatureSchema(disabled=("bogus",))

    def test_mask_zeroes_columns_only(self, world):
        _, _, fs, ft, ps, pt = world
        vec = featurize_pair(0, 0, 0.9, 1.5, fs, ft, ps, pt)
        masked = FeatureSchema(disabled=("pos", "freq")).apply_mask(vec[None, :])[0]
        assert not masked[list(FEATURE_GROUPS["pos"])].any()
        assert not masked[list(FEATURE_GROUPS["freq"])].any()
        np.testing.assert_array_equal(masked[:3], vec[:3])


class TestLabelCandidates:
    def test_membership(self):
        dic = TranslationDictionary(entries={0: (0, 2)})
        labels = label_candidates(0, [0, 1, 2], dic)
        assert labels.tolist() == [1, 0, 1]

    def test_empty_candidates_rejected(self):
        dic = TranslationDictionary(entries={0: (0,)})
        with pytest.raises(ValueError, match="empty"):
            label_candidates(0, [], dic)


class TestFeaturizePair:
    def test_pos_match_and_one_hot(self, world):
        _, _, fs, ft, ps, pt = world
        vec = featurize_pair(0, 0, 0.9, None, fs, ft, ps, pt)  # NOUN/NOUN
        assert vec[9] == 1.0
        noun = ALL_TAGS.index("NOUN")
        assert vec[10 + noun] == 1.0 and vec[10:28].sum() == 1.0
        assert vec[28 + noun] == 1.0 and vec[28:46].sum() == 1.0

    def test_pos_mismatch(self, world):
        _, _, fs, ft, ps, pt = world
        vec = featurize_pair(0, 1, 0.9, None, fs, ft, ps, pt)  # NOUN vs VERB
        assert vec[9] == 0.0

    def test_zipf_difference(self, world):
        src_vocab, tgt_vocab, *_ = world
        fs = frequency_table_from_counts({"s0": 10**6}, src_vocab)
        ft = frequency_table_from_counts({"t0": 10**6}, tgt_vocab)
        fs.zipf[0], ft.zipf[0] = 6.0, 4.5
        _, _, _, _, ps, pt = world
        vec = featurize_pair(0, 0, 0.0, None, fs, ft, ps, pt)
        assert vec[5] == pytest.approx(1.5)
        assert vec[6] == pytest.approx(1.5)

    def test_log_rank_value_class(self, world):
        # a mid-frequency word around rank 15490 lands near 13.92
        src_vocab = Vocabulary.from_words([f"w{i}" for i in range(20000)])
        counts = {f"w{i}": 20001 - i for i in range(20000)}
        table = frequency_table_from_counts(counts, src_vocab)
        assert table.rank[15489] == 15490
        _, tgt_vocab, _, ft, ps, pt = world
        pos_big, _ = pos_table_from_tags({}, src_vocab)
        vec = featurize_pair(15489, 0, 0.0, None, table, ft, pos_big, pt)
        assert vec[7] == pytest.approx(math.log2(15491))
        assert round(float(vec[7]), 2) == 13.92

    def test_ext_present_flag(self, world):
        _, _, fs, ft, ps, pt = world
        with_ext = featurize_pair(0, 0, 0.9, -2.5, fs, ft, ps, pt)
        without = featurize_pair(0, 0, 0.9, None, fs, ft, ps, pt)
        assert with_ext[1] == -2.5 and with_ext[2] == 1.0
        assert without[1] == 0.0 and without[2] == 0.0

    def test_pure_function_bitwise(self, world):
        _, _, fs, ft, ps, pt = world
        a = featurize_pair(1, 2, 0.123, 0.5, fs, ft, ps, pt)
        b = featurize_pair(1, 2, 0.123, 0.5, fs, ft, ps, pt)
        np.testing.assert_array_equal(a, b)


class TestBuildGroups:
    def test_shape_contract(self, world):
        src_vocab, tgt_vocab, fs, ft, ps, pt = world
        cands = simple_cands(3, 3)
        dic = TranslationDictionary(entries={0: (0,), 1: (1,), 2: (2,)})
        groups = build_groups([0, 1, 2], cands, fs, ft, ps, pt, src_vocab, tgt_vocab, dic=dic)
        assert len(groups) == 3
        for grp in groups:
            assert grp.features.shape == (3, 46)
            assert grp.labels.sum() == 1
            assert not grp.gold_missed

    def test_group_count_includes_gold_missed(self, world):
        src_vocab, tgt_vocab, fs, ft, ps, pt = world
        cands = simple_cands(3, 2)  # candidates are t0, t1 only
        dic = TranslationDictionary(entries={0: (0,), 1: (3,), 2: (1,)})
        groups = build_groups(dic.sources(), cands, fs, ft, ps, pt, src_vocab, tgt_vocab, dic=dic)
        assert len(groups) == 3
        flags = [grp.gold_missed for grp in groups]
        assert flags == [False, True, False]

    def test_ext_coverage_mixed(self, world):
        src_vocab, tgt_vocab, fs, ft, ps, pt = world
        cands = simple_cands(1, 3)
        ext = ExternalScores(logits={("s0", "t0"): 1.0, ("s0", "t2"): -1.0})
        groups = build_groups([0], cands, fs, ft, ps, pt, src_vocab, tgt_vocab, ext=ext)
        present = groups[0].features[:, 2]
        assert present.tolist() == [1.0, 0.0, 1.0]

    def test_missing_source_fatal(self, world):
        src_vocab, tgt_vocab, fs, ft, ps, pt = world
        cands = simple_cands(1, 2)
        with pytest.raises(DataFormatError, match="no candidate list"):
            build_groups([2], cands, fs, ft, ps, pt, src_vocab, tgt_vocab)

    def test_inference_groups_without_dict(self, world):
        src_vocab, tgt_vocab, fs, ft, ps, pt = world
        groups = build_groups([0], simple_cands(1, 3), fs, ft, ps, pt, src_vocab, tgt_vocab)
        assert not groups[0].has_gold
        assert not groups[0].labels.any()

    def test_shuffle_unshuffle_restores_features(self, world, rng):
        src_vocab, tgt_vocab, fs, ft, ps, pt = world
        groups = build_groups([0], simple_cands(1, 3), fs, ft, ps, pt, src_vocab, tgt_vocab)
        m = groups[0].features
        perm = rng.permutation(3)
        inv = np.argsort(perm)
        np.testing.assert_array_equal(m[perm][inv], m)

    def test_one_hot_consistency(self, world, rng):
        src_vocab, tgt_vocab, fs, ft, ps, pt = world
        groups = build_groups([0, 1, 2], simple_cands(3, 4), fs, ft, ps, pt, src_vocab, tgt_vocab)
        for grp in groups:
            for row in grp.features:
                src_hot = row[10:28]
                cand_hot = row[28:46]
                assert src_hot.sum() == 1.0 and cand_hot.sum() == 1.0
                same = src_hot.argmax() == cand_hot.argmax()
                assert (row[9] == 1.0) == same
                assert abs(row[6]) == pytest.approx(abs(row[5]))


class TestExternalScores:
    def test_loader(self, tmp_path):
        p = write(tmp_path / "ext.tsv", "s0\tt0\t1.25\ns0\tt1\t-0.5\n")
        ext = load_external_scores(p)
        assert ext.get("s0", "t0") == 1.25
        assert ext.get("s0", "missing") is None

    def test_duplicate_last_wins(self, tmp_path, caplog):
        import logging

        p = write(tmp_path / "ext.tsv", "s0\tt0\t1.0\ns0\tt0\t2.0\n")
        with caplog.at_level(logging.WARNING):
            ext = load_external_scores(p)
        assert ext.get("s0", "t0") == 2.0
        assert ext.duplicates == 1

    def test_non_finite_fatal(self, tmp_path):
        p = write(tmp_path / "ext.tsv", "s0\tt0\tnan\n")
        with pytest.raises(DataFormatError, match="non-finite"):
            load_external_scores(p)

    def test_malformed_row_fatal(self, tmp_path):
        p = write(tmp_path / "ext.tsv", "s0\tt0\n")
        with pytest.raises(DataFormatError, match="line 1"):
            load_external_scores(p)


def test_feature_matrix_export_header(tmp_path, world):
    src_vocab, tgt_vocab, fs, ft, ps, pt = world
    groups = build_groups([0], simple_cands(1, 2), fs, ft, ps, pt, src_vocab, tgt_vocab)
    path = tmp_path / "features.tsv"
    write_feature_matrix(groups, src_vocab, tgt_vocab, path)
    header = path.read_text().splitlines()[0].split("\t")
    assert header[:3] == ["src", "cand", "label"]
    assert header[3:] == list(FEATURE_NAMES)
