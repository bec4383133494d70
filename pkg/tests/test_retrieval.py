import numpy as np
import pytest

from bilex.corpus import TranslationDictionary, Vocabulary
from bilex.retrieval import (
    CandidateSet,
    SimilarityParams,
    align_procrustes,
    apply_alignment,
    augment_dictionary,
    csls_score,
    hubness_skew,
    k_occurrence,
    knn_mean_similarity,
    load_candidates,
    mine_hard_negatives,
    mutual_nn_pairs,
    retrieve_topk,
    skewness,
    write_candidates,
)
from bilex.synth import random_orthogonal
from conftest import unit_space


def brute_force_csls(src, tgt, k_csls):
    """Pointwise oracle: full similarity matrix plus per-row/column means."""
    sims = src.matrix @ tgt.matrix.T
    r_src = np.sort(sims, axis=1)[:, -k_csls:].mean(axis=1)
    r_tgt = np.sort(sims.T, axis=1)[:, -k_csls:].mean(axis=1)
    full = np.empty_like(sims)
    for i in range(sims.shape[0]):
        for j in range(sims.shape[1]):
            full[i, j] = csls_score(src.matrix[i], tgt.matrix[j], r_src[i], r_tgt[j])
    return full, r_src, r_tgt


def rank_desc_with_id_ties(row):
    return sorted(range(len(row)), key=lambda j: (-row[j], j))


class TestCslsScore:
    def test_saturated_hub(self):
        e = np.array([1.0, 0.0])
        assert csls_score(e, e, 1.0, 1.0) == 0.0

    def test_orthogonal_empty_neighborhoods(self):
        assert csls_score(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.0, 0.0) == 0.0

    def test_arithmetic(self):
        x = np.array([1.0, 0.0])
        y = np.array([0.8, 0.6])
        assert csls_score(x, y, 0.5, 0.3) == pytest.approx(0.8)

    def test_formula_example(self):
        # 2cos = 1.2, r terms 0.9 and 0.1
        x = np.array([1.0, 0.0])
        y = np.array([0.6, 0.8])
        assert csls_score(x, y, 0.9, 0.1) == pytest.approx(0.2)


class TestKnnMeanSimilarity:
    def test_self_match(self):
        index = unit_space([[1, 0], [0, 1]])
        q = unit_space([[1, 0]])
        assert knn_mean_similarity(q, index, 1)[0] == pytest.approx(1.0)

    def test_orthogonal_basis_k2(self):
        index = unit_space([[1, 0], [0, 1]])
        q = unit_space([[1, 0]])
        assert knn_mean_similarity(q, index, 2)[0] == pytest.approx(0.5)

    def test_against_full_sort_oracle(self, rng):
        q = unit_space(rng.standard_normal((50, 16)))
        index = unit_space(rng.standard_normal((50, 16)))
        for k in (1, 3, 10, 50):
            got = knn_mean_similarity(q, index, k)
            sims = q.matrix @ index.matrix.T
            want = np.sort(sims, axis=1)[:, -k:].mean(axis=1)
            np.testing.assert_allclose(got, want, atol=1e-9)

    def test_k_out_of_range(self):
        index = unit_space([[1, 0], [0, 1]])
        with pytest.raises(ValueError):
            knn_mean_similarity(index, index, 3)

    def test_thread_count_invariance(self, rng):
        q = unit_space(rng.standard_normal((700, 8)))
        index = unit_space(rng.standard_normal((300, 8)))
        a = knn_mean_similarity(q, index, 5, n_threads=1)
        b = knn_mean_similarity(q, index, 5, n_threads=4)
        np.testing.assert_array_equal(a, b)


class TestRetrieveTopk:
    def test_matches_pointwise_oracle(self, rng):
        src = unit_space(rng.standard_normal((100, 32)))
        tgt = unit_space(rng.standard_normal((200, 32)))
        params = SimilarityParams(k_csls=10, top_k=5)
        cands, means = retrieve_topk(src, tgt, params)
        full, r_src, r_tgt = brute_force_csls(src, tgt, 10)
        np.testing.assert_allclose(means.r_src, r_src, atol=1e-9)
        np.testing.assert_allclose(means.r_tgt, r_tgt, atol=1e-9)
        for i in range(100):
            want = rank_desc_with_id_ties(full[i])[:5]
            assert cands.cand_ids[i].tolist() == want
            np.testing.assert_allclose(cands.scores[i], full[i][want], atol=1e-6)

    def test_identical_sources_order_equals_cosine_order(self, rng):
        v = rng.standard_normal(8)
        src = unit_space(np.tile(v, (20, 1)))
        tgt = unit_space(rng.standard_normal((20, 8)))
        params = SimilarityParams(k_csls=3, top_k=20)
        cands, _ = retrieve_topk(src, tgt, params)
        cos = src.matrix[0] @ tgt.matrix.T
        cos_order = rank_desc_with_id_ties(cos)
        sims = src.matrix @ tgt.matrix.T
        r_tgt = np.sort(sims.T, axis=1)[:, -3:].mean(axis=1)
        csls_order = rank_desc_with_id_ties(2 * cos - r_tgt)
        for i in range(20):
            assert cands.cand_ids[i].tolist() == csls_order
        # with identical sources every target's source neighborhood is the
        # same constant, so the two orderings coincide
        assert csls_order == cos_order

    def test_scores_non_increasing_and_no_duplicates(self, rng):
        src = unit_space(rng.standard_normal((30, 8)))
        tgt = unit_space(rng.standard_normal((40, 8)))
        cands, _ = retrieve_topk(src, tgt, SimilarityParams(k_csls=5, top_k=12))
        for i in range(30):
            row = cands.scores[i]
            assert all(a >= b for a, b in zip(row, row[1:]))
            assert len(set(cands.cand_ids[i].tolist())) == 12

    def test_cosine_metric(self, rng):
        src = unit_space(rng.standard_normal((10, 8)))
        tgt = unit_space(rng.standard_normal((15, 8)))
        cands, _ = retrieve_topk(src, tgt, SimilarityParams(k_csls=3, top_k=4), metric="cosine")
        sims = src.matrix @ tgt.matrix.T
        for i in range(10):
            want = rank_desc_with_id_ties(sims[i])[:4]
            assert cands.cand_ids[i].tolist() == want

    def test_tie_breaking_by_ascending_id(self):
        # two identical target vectors force an exact tie
        src = unit_space([[1.0, 0.0]])
        tgt = unit_space([[0.6, 0.8], [1.0, 0.0], [1.0, 0.0]])
        cands, _ = retrieve_topk(src, tgt, SimilarityParams(k_csls=1, top_k=2), metric="cosine")
        assert cands.cand_ids[0].tolist() == [1, 2]

    def test_param_validation(self, rng):
        src = unit_space(rng.standard_normal((4, 4)))
        with pytest.raises(ValueError):
            retrieve_topk(src, src, SimilarityParams(k_csls=0, top_k=2))
        with pytest.raises(ValueError):
            retrieve_topk(src, src, SimilarityParams(k_csls=1, top_k=9))

    def test_unnormalized_rejected(self, rng):
        from conftest import space_from

        src = space_from(rng.standard_normal((4, 4)))
        with pytest.raises(ValueError, match="normalized"):
            retrieve_topk(src, src, SimilarityParams(k_csls=1, top_k=2))

    def test_thread_count_invariance(self, rng):
        src = unit_space(rng.standard_normal((600, 16)))
        tgt = unit_space(rng.standard_normal((700, 16)))
        params = SimilarityParams(k_csls=10, top_k=7)
        a, _ = retrieve_topk(src, tgt, params, n_threads=1)
        b, _ = retrieve_topk(src, tgt, params, n_threads=8)
        np.testing.assert_array_equal(a.cand_ids, b.cand_ids)
        np.testing.assert_array_equal(a.scores, b.scores)

    def test_oracle_equivalence_at_500(self, rng):
        # the largest instance the oracle invariant covers
        src = unit_space(rng.standard_normal((500, 24)))
        tgt = unit_space(rng.standard_normal((500, 24)))
        cands, _ = retrieve_topk(src, tgt, SimilarityParams(k_csls=10, top_k=10))
        sims = src.matrix @ tgt.matrix.T
        r_src = np.sort(sims, axis=1)[:, -10:].mean(axis=1)
        r_tgt = np.sort(sims.T, axis=1)[:, -10:].mean(axis=1)
        full = 2 * sims - r_src[:, None] - r_tgt[None, :]
        for i in range(500):
            want = rank_desc_with_id_ties(full[i])[:10]
            assert cands.cand_ids[i].tolist() == want
            np.testing.assert_allclose(cands.scores[i], full[i][want], atol=1e-6)


def test_r_tgt_shift_leaves_ordering_invariant(rng):
    # adding a constant to every target's correction shifts scores by -c
    # and cannot change any argsort
    sims = rng.standard_normal((12, 30))
    r_tgt = rng.uniform(-1, 1, 30)
    c = 0.37
    base = 2 * sims - r_tgt[None, :]
    shifted = 2 * sims - (r_tgt + c)[None, :]
    np.testing.assert_allclose(shifted, base - c, atol=1e-12)
    for i in range(12):
        assert rank_desc_with_id_ties(base[i]) == rank_desc_with_id_ties(shifted[i])


class TestProcrustes:
    def test_identity_correspondence(self, rng):
        src = unit_space(rng.standard_normal((30, 6)))
        seed = TranslationDictionary(entries={i: (i,) for i in range(30)})
        W = align_procrustes(src, src, seed)
        np.testing.assert_allclose(W, np.eye(6), atol=1e-6)

    def test_recovers_random_rotation(self, rng):
        Q = random_orthogonal(8, rng)
        src = unit_space(rng.standard_normal((50, 8)))
        tgt = unit_space(src.matrix @ Q)
        seed = TranslationDictionary(entries={i: (i,) for i in range(50)})
        W = align_procrustes(src, tgt, seed)
        assert np.abs(W - Q).max() < 1e-5

    def test_single_pair_matches_angle_grid_search(self, rng):
        # d=2 oracle: scan rotations and reflections over a fine angle grid
        x = unit_space([[0.6, 0.8]])
        y = unit_space([[-0.8, 0.6]])
        seed = TranslationDictionary(entries={0: (0,)})
        W = align_procrustes(x, y, seed)
        ours = np.linalg.norm(x.matrix @ W - y.matrix)

        best = np.inf
        for theta in np.linspace(0, 2 * np.pi, 200001):
            c, s = np.cos(theta), np.sin(theta)
            for M in (np.array([[c, -s], [s, c]]), np.array([[c, s], [s, -c]])):
                best = min(best, np.linalg.norm(x.matrix @ M - y.matrix))
        assert ours <= best + 1e-6

    def test_orthogonality_invariant(self, rng):
        for trial in range(5):
            src = unit_space(rng.standard_normal((10, 5)))
            tgt = unit_space(rng.standard_normal((10, 5)))
            seed = TranslationDictionary(entries={i: (i,) for i in range(10)})
            W = align_procrustes(src, tgt, seed)
            assert np.abs(W.T @ W - np.eye(5)).max() < 1e-5

    def test_multi_target_pairs_contribute_rows(self, rng):
        src = unit_space(rng.standard_normal((4, 3)))
        tgt = unit_space(rng.standard_normal((5, 3)))
        seed = TranslationDictionary(entries={0: (0, 1), 1: (2,)})
        W = align_procrustes(src, tgt, seed)
        assert W.shape == (3, 3)

    def test_empty_seed_rejected(self, rng):
        src = unit_space(rng.standard_normal((4, 3)))
        with pytest.raises(ValueError, match="empty seed"):
            align_procrustes(src, src, TranslationDictionary(entries={}))

    def test_dimension_mismatch_rejected(self, rng):
        a = unit_space(rng.standard_normal((4, 3)))
        b = unit_space(rng.standard_normal((4, 4)))
        with pytest.raises(ValueError, match="dimension"):
            align_procrustes(a, b, TranslationDictionary(entries={0: (0,)}))

    def test_apply_alignment_preserves_norms(self, rng):
        Q = random_orthogonal(6, rng)
        src = unit_space(rng.standard_normal((10, 6)))
        rotated = apply_alignment(src, Q)
        np.testing.assert_allclose(np.linalg.norm(rotated.matrix, axis=1), 1.0, atol=1e-12)


class TestMutualNN:
    def test_identity_spaces_all_self_pairs(self, rng):
        space = unit_space(rng.standard_normal((10, 6)))
        pairs = mutual_nn_pairs(space, space, SimilarityParams(k_csls=3, top_k=3))
        assert sorted((s, t) for s, t, _ in pairs) == [(i, i) for i in range(10)]

    def test_broken_argmax_chain_excluded(self):
        # s0 leans toward t0 but s1 sits exactly on it: s0's best target is
        # t0 while t0's best source is s1, so s0 never forms a mutual pair
        a = np.deg2rad(25.0)
        src = unit_space([[np.cos(a), np.sin(a), 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        tgt = unit_space(np.eye(3))
        params = SimilarityParams(k_csls=1, top_k=1)
        sims = src.matrix @ tgt.matrix.T
        r_src = np.sort(sims, axis=1)[:, -1:].mean(axis=1)
        r_tgt = np.sort(sims.T, axis=1)[:, -1:].mean(axis=1)
        full = 2 * sims - r_src[:, None] - r_tgt[None, :]
        assert full[0].argmax() == 0  # s0 -> t0
        assert full[:, 0].argmax() == 1  # t0 -> s1, chain broken
        pairs = mutual_nn_pairs(src, tgt, params)
        assert all(s != 0 for s, _, _ in pairs)
        assert (1, 0) in {(s, t) for s, t, _ in pairs}

    def test_scores_sorted_descending(self, rng):
        src = unit_space(rng.standard_normal((20, 8)))
        tgt = unit_space(rng.standard_normal((20, 8)))
        pairs = mutual_nn_pairs(src, tgt, SimilarityParams(k_csls=5, top_k=5))
        scores = [p[2] for p in pairs]
        assert scores == sorted(scores, reverse=True)

    def test_symmetric_under_role_swap(self, rng):
        src = unit_space(rng.standard_normal((25, 8)))
        tgt = unit_space(rng.standard_normal((30, 8)))
        params = SimilarityParams(k_csls=4, top_k=4)
        fwd = {(s, t) for s, t, _ in mutual_nn_pairs(src, tgt, params)}
        rev = {(s, t) for t, s, _ in mutual_nn_pairs(tgt, src, params)}
        assert fwd == rev


class TestAugmentDictionary:
    def test_n_aug_zero_is_identity(self):
        seed = TranslationDictionary(entries={0: (1,)})
        out = augment_dictionary(seed, [(2, 3, 0.9)], 0)
        assert out.entries == seed.entries

    def test_existing_sources_excluded(self):
        seed = TranslationDictionary(entries={0: (5,)})
        mined = [(0, 1, 0.9), (1, 2, 0.8), (2, 3, 0.7)]
        out = augment_dictionary(seed, mined, 1)
        assert out.entries == {0: (5,), 1: (2,)}

    def test_supply_exhaustion(self, caplog):
        import logging

        seed = TranslationDictionary(entries={})
        mined = [(0, 0, 0.9), (1, 1, 0.8), (2, 2, 0.7)]
        with caplog.at_level(logging.WARNING):
            out = augment_dictionary(seed, mined, 4000)
        assert len(out.entries) == 3
        assert any("only 3" in r.message for r in caplog.records)


class TestMineHardNegatives:
    def make_cands(self, n_src, top_k):
        src_ids = np.arange(n_src)
        cand_ids = np.tile(np.arange(top_k), (n_src, 1))
        scores = np.tile(np.linspace(1, 0, top_k), (n_src, 1))
        return CandidateSet.from_arrays(src_ids, cand_ids, scores)

    def test_twenty_negatives_per_positive(self):
        cands = self.make_cands(3, 50)
        dic = TranslationDictionary(entries={0: (7,), 1: (0,), 2: (49,)})
        pairs = mine_hard_negatives(dic, cands, n_neg=20)
        for s in range(3):
            rows = [p for p in pairs if p[0] == s]
            positives = [p for p in rows if p[2] == 1]
            negatives = [p for p in rows if p[2] == 0]
            assert len(positives) == 1
            assert len(negatives) == 20
            assert all(t not in dic.entries[s] for _, t, lab in negatives)

    def test_gold_saturation_warns(self, caplog):
        import logging

        cands = self.make_cands(1, 3)
        dic = TranslationDictionary(entries={0: (0, 1, 2)})
        with caplog.at_level(logging.WARNING):
            pairs = mine_hard_negatives(dic, cands, n_neg=20)
        assert all(lab == 1 for _, _, lab in pairs)
        assert any("no non-gold" in r.message for r in caplog.records)

    def test_two_golds_share_the_same_negatives(self):
        cands = self.make_cands(1, 10)
        dic = TranslationDictionary(entries={0: (2, 5)})
        pairs = mine_hard_negatives(dic, cands, n_neg=3)
        expected_negs = [0, 1, 3]  # top non-gold candidates in score order
        want = []
        for g in (2, 5):
            want.append((0, g, 1))
            want.extend((0, c, 0) for c in expected_negs)
        assert sorted(pairs) == sorted(want)

    def test_missing_source_fatal(self):
        from bilex.corpus import DataFormatError

        cands = self.make_cands(1, 5)
        dic = TranslationDictionary(entries={3: (0,)})
        with pytest.raises(DataFormatError, match="no candidate list"):
            mine_hard_negatives(dic, cands)


class TestHubness:
    def test_constant_k_occurrence_zero_skew(self):
        space = unit_space(np.eye(6))
        assert hubness_skew(space, space, k=1, metric="cosine") == 0.0

    def test_hub_positive_skew(self):
        # one target near every source, the rest orthogonal
        d = 20
        src_rows = np.eye(d)[:10]
        hub = src_rows.mean(axis=0)
        tgt_rows = np.vstack([hub, np.eye(d)[10:19]])
        src = unit_space(src_rows)
        tgt = unit_space(tgt_rows)
        assert hubness_skew(src, tgt, k=1, metric="cosine") > 0.0

    def test_skewness_matches_three_pass_oracle(self, rng):
        src = unit_space(rng.standard_normal((200, 16)))
        tgt = unit_space(rng.standard_normal((200, 16)))
        for metric in ("cosine", "csls"):
            got = hubness_skew(src, tgt, k=5, metric=metric)
            counts = k_occurrence(src, tgt, k=5, metric=metric).astype(np.float64)
            mean = counts.sum() / counts.size
            m2 = ((counts - mean) ** 2).sum() / counts.size
            m3 = ((counts - mean) ** 3).sum() / counts.size
            assert got == pytest.approx(m3 / m2**1.5, abs=1e-9)

    def test_k_occurrence_mean(self, rng):
        src = unit_space(rng.standard_normal((40, 8)))
        tgt = unit_space(rng.standard_normal((30, 8)))
        counts = k_occurrence(src, tgt, k=5, metric="cosine")
        assert counts.sum() == 40 * 5
        assert counts.mean() == pytest.approx(5 * 40 / 30)

    def test_planted_hub_csls_below_cosine(self):
        from bilex.retrieval import apply_alignment
        from bilex.synth import SynthConfig, gen_bilingual_world

        world = gen_bilingual_world(
            SynthConfig(vocab_n=1000, dim=48, noise_sigma=0.25, hub_count=15, mean_offset=1.0, seed=3)
        )
        src = apply_alignment(world.src, world.rotation)
        s_cos = hubness_skew(src, world.tgt, k=10, metric="cosine")
        s_csls = hubness_skew(src, world.tgt, k=10, metric="csls")
        assert s_csls < s_cos

    def test_invalid_k(self):
        space = unit_space(np.eye(3))
        with pytest.raises(ValueError):
            hubness_skew(space, space, k=0)

    def test_skewness_degenerate(self):
        assert skewness(np.array([2.0, 2.0, 2.0])) == 0.0


class TestCandidateFiles:
    def test_roundtrip(self, tmp_path, rng):
        src = unit_space(rng.standard_normal((6, 8)))
        tgt = unit_space(rng.standard_normal((9, 8)))
        cands, _ = retrieve_topk(src, tgt, SimilarityParams(k_csls=2, top_k=4))
        path = tmp_path / "cands.tsv"
        write_candidates(cands, src.vocab, tgt.vocab, path)
        back = load_candidates(path, src.vocab, tgt.vocab)
        np.testing.assert_array_equal(back.cand_ids, cands.cand_ids)
        np.testing.assert_allclose(back.scores, cands.scores, atol=5e-7)
        # six decimal places in the export
        first = path.read_text().splitlines()[0].split("\t")
        assert len(first[2].split(".")[1]) == 6

    def test_unknown_word_fatal(self, tmp_path):
        from bilex.corpus import DataFormatError

        path = tmp_path / "cands.tsv"
        path.write_text("mystery\tw0\t0.500000\n")
        v = Vocabulary.from_words(["w0"])
        with pytest.raises(DataFormatError, match="unknown source word"):
            load_candidates(path, v, v)
