"""Batch pipeline driver: synth, retrieve, mine, train, eval, analyze.

Options resolve as CLI flag > config file ("key = value" lines) > default.
Every command validates its full configuration before writing anything.
Exit codes: 0 success, 2 config error, 3 data error, 4 internal invariant.

All randomness flows from the single --seed value; identical configurations
produce byte-identical output files. Wall-clock information goes only to the
run.log sidecar.
"""

from __future__ import annotations

import argparse
import datetime
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import corpus, evaluation, features, ltr, retrieval, synth

log = logging.getLogger(__name__)

ENV_THREADS = "BILEX_THREADS"


class ConfigError(Exception):
    """One or more configuration problems, reported all at once."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def load_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, line in corpus._data_lines(Path(path)):
        if "=" not in line:
            raise ConfigError([f"{path}: line {line_no}: expected 'key = value'"])
        key, _, raw = line.partition("=")
        values[key.strip().replace("-", "_")] = raw.strip()
    return values


def _as_bool(raw: str) -> bool:
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def resolve_options(args: argparse.Namespace, schema: dict[str, tuple]) -> argparse.Namespace:
    """Merge flags, config file entries, and defaults into one namespace."""
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    out = argparse.Namespace()
    errors = []
    for key, (conv, default) in schema.items():
        value = getattr(args, key, None)
        if value is None and key in file_values:
            try:
                value = conv(file_values[key])
            except ValueError as e:
                errors.append(f"config key {key}: {e}")
                continue
        if value is None:
            value = default
        setattr(out, key, value)
    if errors:
        raise ConfigError(errors)
    return out


def _resolve_threads(opts: argparse.Namespace) -> int:
    if opts.threads is not None:
        return opts.threads
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError([f"{ENV_THREADS} must be an integer, got {env!r}"]) from None
    return 1


def _require_paths(opts: argparse.Namespace, fields: list[str], errors: list[str], optional: list[str] = ()) -> None:
    for name in fields:
        value = getattr(opts, name)
        if value is None:
            errors.append(f"missing required option: --{name.replace('_', '-')}")
        elif not Path(value).is_file():
            errors.append(f"--{name.replace('_', '-')}: no such file: {value}")
    for name in optional:
        value = getattr(opts, name)
        if value is not None and not Path(value).is_file():
            errors.append(f"--{name.replace('_', '-')}: no such file: {value}")


class _RunLog:
    """Timing sidecar; the only output file that may differ between runs."""

    def __init__(self, out_dir: Path, command: str):
        self.out_dir = out_dir
        self.command = command
        self.t0 = time.perf_counter()
        self.lines: list[str] = [f"command\t{command}", f"started\t{datetime.datetime.now().isoformat()}"]

    def note(self, key: str, value) -> None:
        self.lines.append(f"{key}\t{value}")

    def close(self) -> None:
        self.lines.append(f"elapsed_s\t{time.perf_counter() - self.t0:.3f}")
        (self.out_dir / "run.log").write_text("\n".join(self.lines) + "\n", encoding="utf-8")


def _write_kv(path: Path, items: list[tuple[str, object]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items:
            fh.write(f"{key}\t{value}\n")


def _load_spaces(opts: argparse.Namespace, normalize: bool = True):
    src = corpus.load_embeddings(opts.src_emb, opts.max_vocab)
    tgt = corpus.load_embeddings(opts.tgt_emb, opts.max_vocab)
    if normalize:
        src = corpus.normalize_rows(src)
        tgt = corpus.normalize_rows(tgt)
    return src, tgt


def _aligned_source(src, tgt, seed_dict_path):
    """Procrustes-align the source space when a seed dictionary is given."""
    if seed_dict_path is None:
        return src, None
    seed = corpus.load_dictionary(seed_dict_path, src.vocab, tgt.vocab)
    W = retrieval.align_procrustes(src, tgt, seed)
    return retrieval.apply_alignment(src, W), seed


def _subset_space(space, ids: list[int]):
    vocab = corpus.Vocabulary.from_words([space.vocab.word(i) for i in ids])
    return corpus.EmbeddingSpace(
        vocab=vocab,
        matrix=space.matrix[ids],
        dim=space.dim,
        normalized=space.normalized,
    )


def _read_word_list(path: str | Path, vocab: corpus.Vocabulary) -> list[int]:
    ids = []
    for line_no, line in corpus._data_lines(Path(path)):
        word = corpus._nfc(line.strip())
        if word not in vocab:
            raise corpus.DataFormatError(f"{path}: line {line_no}: unknown word {word!r}")
        ids.append(vocab.id(word))
    return ids


# ---------------------------------------------------------------- synth

SYNTH_SCHEMA = {
    "out_dir": (str, None),
    "n": (int, 2000),
    "dim": (int, 64),
    "noise_sigma": (float, 0.0),
    "hub_count": (int, 0),
    "zipf_exponent": (float, 1.0),
    "pos_match_prob": (float, 0.9),
    "rank_jitter": (float, 0.1),
    "mean_offset": (float, 0.0),
    "test_fraction": (float, 0.3),
    "seed": (int, 0),
}


def cmd_synth(opts: argparse.Namespace) -> int:
    errors = []
    if opts.out_dir is None:
        errors.append("missing required option: --out-dir")
    cfg = synth.SynthConfig(
        vocab_n=opts.n,
        dim=opts.dim,
        noise_sigma=opts.noise_sigma,
        hub_count=opts.hub_count,
        zipf_exponent=opts.zipf_exponent,
        pos_match_prob=opts.pos_match_prob,
        rank_jitter=opts.rank_jitter,
        mean_offset=opts.mean_offset,
        seed=opts.seed,
    )
    try:
        cfg.validate()
    except ValueError as e:
        errors.append(str(e))
    if not 0.0 < opts.test_fraction < 1.0:
        errors.append(f"--test-fraction must be in (0, 1), got {opts.test_fraction}")
    if errors:
        raise ConfigError(errors)
    out = Path(opts.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runlog = _RunLog(out, "synth")

    world = synth.gen_bilingual_world(cfg)
    train_dict, test_dict = synth.split_gold(world, opts.test_fraction)
    corpus.write_embeddings(world.src, out / "embeddings.src.vec")
    corpus.write_embeddings(world.tgt, out / "embeddings.tgt.vec")
    corpus.write_dictionary(world.gold, world.src.vocab, world.tgt.vocab, out / "dict.full.tsv")
    corpus.write_dictionary(train_dict, world.src.vocab, world.tgt.vocab, out / "dict.train.tsv")
    corpus.write_dictionary(test_dict, world.src.vocab, world.tgt.vocab, out / "dict.test.tsv")
    corpus.write_frequency_counts(world.counts_src, out / "freq.src.tsv")
    corpus.write_frequency_counts(world.counts_tgt, out / "freq.tgt.tsv")
    corpus.write_pos_tags(world.tags_src, out / "pos.src.tsv")
    corpus.write_pos_tags(world.tags_tgt, out / "pos.tgt.tsv")
    _write_kv(out / "world.meta", [
        ("vocab_n", cfg.vocab_n),
        ("dim", cfg.dim),
        ("noise_sigma", repr(cfg.noise_sigma)),
        ("hub_count", cfg.hub_count),
        ("zipf_exponent", repr(cfg.zipf_exponent)),
        ("pos_match_prob", repr(cfg.pos_match_prob)),
        ("rank_jitter", repr(cfg.rank_jitter)),
        ("test_fraction", repr(opts.test_fraction)),
        ("seed", cfg.seed),
        ("train_pairs", train_dict.pair_count()),
        ("test_pairs", test_dict.pair_count()),
    ])
    runlog.note("vocab_n", cfg.vocab_n)
    runlog.close()
    return 0


# ---------------------------------------------------------------- retrieve

RETRIEVE_SCHEMA = {
    "out_dir": (str, None),
    "src_emb": (str, None),
    "tgt_emb": (str, None),
    "seed_dict": (str, None),
    "source_words": (str, None),
    "metric": (str, "csls"),
    "k_csls": (int, 10),
    "top_k": (int, 50),
    "max_vocab": (int, None),
    "threads": (int, None),
}


def cmd_retrieve(opts: argparse.Namespace) -> int:
    errors = []
    if opts.out_dir is None:
        errors.append("missing required option: --out-dir")
    _require_paths(opts, ["src_emb", "tgt_emb"], errors, optional=["seed_dict", "source_words"])
    if opts.metric not in ("csls", "cosine"):
        errors.append(f"--metric must be csls or cosine, got {opts.metric!r}")
    if opts.k_csls < 1:
        errors.append(f"--k-csls must be >= 1, got {opts.k_csls}")
    if opts.top_k < 1:
        errors.append(f"--top-k must be >= 1, got {opts.top_k}")
    if errors:
        raise ConfigError(errors)
    threads = _resolve_threads(opts)
    out = Path(opts.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runlog = _RunLog(out, "retrieve")

    src, tgt = _load_spaces(opts)
    src, seed = _aligned_source(src, tgt, opts.seed_dict)
    if opts.source_words is not None:
        scope_ids = _read_word_list(opts.source_words, src.vocab)
        queries = _subset_space(src, scope_ids)
    else:
        scope_ids = list(range(len(src)))
        queries = src

    params = retrieval.SimilarityParams(k_csls=opts.k_csls, top_k=opts.top_k)
    cands, _ = retrieval.retrieve_topk(queries, tgt, params, metric=opts.metric, n_threads=threads)
    # candidate rows are indexed by scope position; export uses real words
    retrieval.write_candidates(cands, queries.vocab, tgt.vocab, out / "candidates.tsv")

    skew_k = min(10, opts.top_k)
    n_k = np.bincount(cands.cand_ids[:, :skew_k].ravel(), minlength=len(tgt))
    report: list[tuple[str, object]] = [
        ("n_src", len(queries)),
        ("n_tgt", len(tgt)),
        ("metric", opts.metric),
        ("k_csls", opts.k_csls),
        ("top_k", opts.top_k),
        ("hubness_skew_k", skew_k),
        ("hubness_skew", f"{retrieval.skewness(n_k.astype(np.float64)):.6f}"),
        ("src_zero_rows", src.zero_row_count),
        ("tgt_zero_rows", tgt.zero_row_count),
        ("src_duplicates", src.duplicate_count),
        ("tgt_duplicates", tgt.duplicate_count),
    ]
    if seed is not None:
        scope_set = {int(s) for s in scope_ids}
        eligible = [s for s in seed.sources() if s in scope_set]
        missed = 0
        pos_of = {int(s): i for i, s in enumerate(scope_ids)}
        for s in eligible:
            row = pos_of[s]
            retrieved = set(cands.cand_ids[row].tolist())
            if not retrieved & set(seed.entries[s]):
                missed += 1
        report.append(("dict_sources_in_scope", len(eligible)))
        report.append(("gold_missed", missed))
        if eligible:
            report.append(("gold_missed_rate", f"{missed / len(eligible):.6f}"))
    _write_kv(out / "retrieval_report.txt", report)
    runlog.note("n_src", len(queries))
    runlog.close()
    return 0


# ---------------------------------------------------------------- mine

MINE_SCHEMA = {
    "out_dir": (str, None),
    "src_emb": (str, None),
    "tgt_emb": (str, None),
    "candidates": (str, None),
    "dict": (str, None),
    "n_neg": (int, 20),
    "max_vocab": (int, None),
}


def cmd_mine(opts: argparse.Namespace) -> int:
    errors = []
    if opts.out_dir is None:
        errors.append("missing required option: --out-dir")
    _require_paths(opts, ["src_emb", "tgt_emb", "candidates", "dict"], errors)
    if opts.n_neg < 0:
        errors.append(f"--n-neg must be >= 0, got {opts.n_neg}")
    if errors:
        raise ConfigError(errors)
    out = Path(opts.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runlog = _RunLog(out, "mine")

    src, tgt = _load_spaces(opts, normalize=False)
    cands = retrieval.load_candidates(opts.candidates, src.vocab, tgt.vocab)
    dic = corpus.load_dictionary(opts.dict, src.vocab, tgt.vocab)
    pairs = retrieval.mine_hard_negatives(dic, cands, n_neg=opts.n_neg)
    retrieval.write_labeled_pairs(pairs, src.vocab, tgt.vocab, out / "hard_negatives.tsv")
    runlog.note("rows", len(pairs))
    runlog.close()
    return 0


# ---------------------------------------------------------------- train

TRAIN_SCHEMA = {
    "out_dir": (str, None),
    "src_emb": (str, None),
    "tgt_emb": (str, None),
    "candidates": (str, None),
    "dict_train": (str, None),
    "freq_src": (str, None),
    "freq_tgt": (str, None),
    "pos_src": (str, None),
    "pos_tgt": (str, None),
    "ext_scores": (str, None),
    "mode": (str, "supervised"),
    "n_aug": (int, 4000),
    "k_csls": (int, 10),
    "top_k": (int, 50),
    "n_trees": (int, 200),
    "max_depth": (int, 3),
    "learning_rate": (float, 0.1),
    "min_child_weight": (float, 1.0),
    "l2_leaf_reg": (float, 1.0),
    "sigma": (float, 1.0),
    "seed": (int, 0),
    "no_pos": (_as_bool, False),
    "no_freq": (_as_bool, False),
    "mix_search": (_as_bool, False),
    "dump_features": (_as_bool, False),
    "max_vocab": (int, None),
    "threads": (int, None),
}


def _build_schema(opts: argparse.Namespace) -> features.FeatureSchema:
    disabled = []
    if opts.no_pos:
        disabled.append("pos")
    if opts.no_freq:
        disabled.append("freq")
    return features.FeatureSchema(disabled=tuple(disabled))


def _extend_candidates(cands, missing: list[int], src, tgt, params, threads):
    """Retrieve candidate lists for sources absent from the loaded file."""
    queries = _subset_space(src, missing)
    extra, _ = retrieval.retrieve_topk(queries, tgt, params, metric="csls", n_threads=threads)
    if cands.cand_ids.size and extra.cand_ids.shape[1] != cands.cand_ids.shape[1]:
        raise corpus.DataFormatError(
            f"candidate width mismatch: file has {cands.cand_ids.shape[1]}, retrieval produced {extra.cand_ids.shape[1]}"
        )
    src_ids = np.concatenate([cands.src_ids, np.array(missing, dtype=np.int64)])
    cand_ids = np.concatenate([cands.cand_ids, extra.cand_ids]) if cands.cand_ids.size else extra.cand_ids
    scores = np.concatenate([cands.scores, extra.scores]) if cands.scores.size else extra.scores
    return retrieval.CandidateSet.from_arrays(src_ids, cand_ids, scores)


def cmd_train(opts: argparse.Namespace) -> int:
    errors = []
    if opts.out_dir is None:
        errors.append("missing required option: --out-dir")
    _require_paths(
        opts,
        ["src_emb", "tgt_emb", "candidates", "dict_train", "freq_src", "freq_tgt", "pos_src", "pos_tgt"],
        errors,
        optional=["ext_scores"],
    )
    if opts.mode not in ("supervised", "semi"):
        errors.append(f"--mode must be supervised or semi, got {opts.mode!r}")
    if opts.mode == "semi" and opts.n_aug < 0:
        errors.append(f"--n-aug must be >= 0 in semi mode, got {opts.n_aug}")
    gparams = ltr.GbdtParams(
        n_trees=opts.n_trees,
        max_depth=opts.max_depth,
        learning_rate=opts.learning_rate,
        min_child_weight=opts.min_child_weight,
        l2_leaf_reg=opts.l2_leaf_reg,
        sigma=opts.sigma,
        seed=opts.seed,
    )
    try:
        gparams.validate()
    except ValueError as e:
        errors.append(str(e))
    if errors:
        raise ConfigError(errors)
    threads = _resolve_threads(opts)
    out = Path(opts.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runlog = _RunLog(out, "train")

    need_vectors = opts.mode == "semi" and opts.n_aug > 0
    src, tgt = _load_spaces(opts, normalize=need_vectors)
    dic = corpus.load_dictionary(opts.dict_train, src.vocab, tgt.vocab)
    cands = retrieval.load_candidates(opts.candidates, src.vocab, tgt.vocab)
    freq_src = corpus.load_frequency_table(opts.freq_src, src.vocab)
    freq_tgt = corpus.load_frequency_table(opts.freq_tgt, tgt.vocab)
    pos_src = corpus.load_pos_table(opts.pos_src, src.vocab)
    pos_tgt = corpus.load_pos_table(opts.pos_tgt, tgt.vocab)
    ext = features.load_external_scores(opts.ext_scores) if opts.ext_scores else None
    params = retrieval.SimilarityParams(k_csls=opts.k_csls, top_k=opts.top_k)

    if need_vectors:
        aligned_src, _ = _aligned_source(src, tgt, opts.dict_train)
        mined = retrieval.mutual_nn_pairs(aligned_src, tgt, params, n_threads=threads)
        dic = retrieval.augment_dictionary(dic, mined, opts.n_aug)
        missing = [s for s in dic.sources() if s not in cands]
        if missing:
            cands = _extend_candidates(cands, missing, aligned_src, tgt, params, threads)
        runlog.note("augmented_to", len(dic))

    schema = _build_schema(opts)
    groups = features.build_groups(
        dic.sources(), cands, freq_src, freq_tgt, pos_src, pos_tgt,
        src.vocab, tgt.vocab, dic=dic, ext=ext, schema=schema,
    )
    if opts.dump_features:
        features.write_feature_matrix(groups, src.vocab, tgt.vocab, out / "features.tsv")

    meta: dict = {}
    if opts.mix_search:
        meta["recommended_mix"] = _search_mix(groups, gparams, schema, opts.seed)

    model, trace = ltr.train(groups, gparams, schema)
    model.meta.update(meta)
    ltr.save_model(model, out / "model.json")
    with open(out / "train_trace.tsv", "w", encoding="utf-8") as fh:
        fh.write("round\ttrain_map\n")
        for round_no, value in trace:
            fh.write(f"{round_no}\t{value:.6f}\n")
    runlog.note("final_train_map", f"{trace[-1][1]:.6f}")
    runlog.close()
    return 0


def _search_mix(groups, gparams, schema, seed: int) -> float:
    """Pick the blend weight on a held-out 10% slice of the training groups."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1001,)))
    perm = rng.permutation(len(groups))
    n_held = max(1, len(groups) // 10)
    held = [groups[i] for i in perm[:n_held]]
    rest = [groups[i] for i in perm[n_held:]]
    if not any(0 < int(grp.labels.sum()) < len(grp) for grp in rest):
        log.warning("mix search skipped: no trainable group outside the held-out slice")
        return 0.5
    model, _ = ltr.train(rest, gparams, schema)
    ranker = ltr.predict_groups(model, held)
    csls = [grp.csls for grp in held]
    best_mix, best_p1 = 0.5, -1.0
    for mix in [x / 10 for x in range(1, 10)]:
        combined = ltr.combine_with_retriever(ranker, csls, mix)
        p1 = evaluation.precision_at_1(held, combined)
        if p1 > best_p1:
            best_mix, best_p1 = mix, p1
    return best_mix


# ---------------------------------------------------------------- eval

EVAL_SCHEMA = {
    "out_dir": (str, None),
    "src_emb": (str, None),
    "tgt_emb": (str, None),
    "model": (str, None),
    "candidates": (str, None),
    "dict_test": (str, None),
    "freq_src": (str, None),
    "freq_tgt": (str, None),
    "pos_src": (str, None),
    "pos_tgt": (str, None),
    "ext_scores": (str, None),
    "mix": (float, None),
    "errors_only": (_as_bool, False),
    "max_vocab": (int, None),
}


def cmd_eval(opts: argparse.Namespace) -> int:
    errors = []
    if opts.out_dir is None:
        errors.append("missing required option: --out-dir")
    _require_paths(
        opts,
        ["src_emb", "tgt_emb", "model", "candidates", "dict_test", "freq_src", "freq_tgt", "pos_src", "pos_tgt"],
        errors,
        optional=["ext_scores"],
    )
    if opts.mix is not None and not 0.0 <= opts.mix <= 1.0:
        errors.append(f"--mix must be in [0, 1], got {opts.mix}")
    if errors:
        raise ConfigError(errors)
    out = Path(opts.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runlog = _RunLog(out, "eval")

    src, tgt = _load_spaces(opts, normalize=False)
    model = ltr.load_model(opts.model)
    dic = corpus.load_dictionary(opts.dict_test, src.vocab, tgt.vocab)
    cands = retrieval.load_candidates(opts.candidates, src.vocab, tgt.vocab)
    freq_src = corpus.load_frequency_table(opts.freq_src, src.vocab)
    freq_tgt = corpus.load_frequency_table(opts.freq_tgt, tgt.vocab)
    pos_src = corpus.load_pos_table(opts.pos_src, src.vocab)
    pos_tgt = corpus.load_pos_table(opts.pos_tgt, tgt.vocab)
    ext = features.load_external_scores(opts.ext_scores) if opts.ext_scores else None

    groups = features.build_groups(
        dic.sources(), cands, freq_src, freq_tgt, pos_src, pos_tgt,
        src.vocab, tgt.vocab, dic=dic, ext=ext, schema=model.schema,
    )
    scores = ltr.predict_groups(model, groups)
    if opts.mix is not None:
        scores = ltr.combine_with_retriever(scores, [grp.csls for grp in groups], opts.mix)

    report = evaluation.build_eval_report(groups, scores, dic, freq_src, freq_tgt, pos_src, opts.errors_only)
    _write_kv(out / "eval_report.txt", [
        ("n_eval", report.n_eval),
        ("p_at_1", f"{report.p_at_1:.6f}"),
        ("p_at_1_x100", f"{report.p_at_1 * 100:.2f}"),
        ("gold_missed", report.gold_missed),
        ("mix", "none" if opts.mix is None else repr(opts.mix)),
        ("errors_only", int(opts.errors_only)),
        ("freq_absdiff_gold_zipf", f"{report.freq_diff.gold_zipf:.6f}"),
        ("freq_absdiff_predicted_zipf", f"{report.freq_diff.predicted_zipf:.6f}"),
        ("freq_absdiff_gold_logrank", f"{report.freq_diff.gold_logrank:.6f}"),
        ("freq_absdiff_predicted_logrank", f"{report.freq_diff.predicted_logrank:.6f}"),
    ])
    evaluation.write_per_pos(report.per_pos, out / "per_pos.tsv")
    records = evaluation.explain_predictions(groups, scores, src.vocab, tgt.vocab, freq_src, freq_tgt, pos_src, pos_tgt)
    evaluation.write_explanations(records, out / "explanations.tsv")
    runlog.note("p_at_1", f"{report.p_at_1:.6f}")
    runlog.close()
    return 0


# ---------------------------------------------------------------- analyze

ANALYZE_SCHEMA = {
    "out_dir": (str, None),
    "src_emb": (str, None),
    "tgt_emb": (str, None),
    "dict": (str, None),
    "freq_src": (str, None),
    "freq_tgt": (str, None),
    "pos_src": (str, None),
    "seed_dict": (str, None),
    "words": (str, None),
    "pair_label": (str, "src-tgt"),
    "min_n": (int, 10),
    "k_csls": (int, 10),
    "top_k": (int, 50),
    "max_vocab": (int, None),
    "threads": (int, None),
}


def _safe_name(word: str) -> str:
    cleaned = "".join(c if c.isalnum() else "_" for c in word)
    return cleaned or "word"


def cmd_analyze(opts: argparse.Namespace) -> int:
    errors = []
    if opts.out_dir is None:
        errors.append("missing required option: --out-dir")
    _require_paths(
        opts,
        ["src_emb", "tgt_emb", "dict", "freq_src", "freq_tgt", "pos_src"],
        errors,
        optional=["seed_dict", "words"],
    )
    if errors:
        raise ConfigError(errors)
    threads = _resolve_threads(opts)
    out = Path(opts.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runlog = _RunLog(out, "analyze")

    need_vectors = opts.words is not None
    src, tgt = _load_spaces(opts, normalize=need_vectors)
    dic = corpus.load_dictionary(opts.dict, src.vocab, tgt.vocab)
    freq_src = corpus.load_frequency_table(opts.freq_src, src.vocab)
    freq_tgt = corpus.load_frequency_table(opts.freq_tgt, tgt.vocab)
    pos_src = corpus.load_pos_table(opts.pos_src, src.vocab)

    grid = evaluation.pos_freq_correlation(dic, freq_src, freq_tgt, pos_src, min_n=opts.min_n)
    evaluation.write_correlation_grid(grid, opts.pair_label, out / "pos_correlation.tsv")

    if need_vectors:
        src_aligned, _ = _aligned_source(src, tgt, opts.seed_dict)
        word_ids = _read_word_list(opts.words, src.vocab)
        params = retrieval.SimilarityParams(k_csls=opts.k_csls, top_k=opts.top_k)
        queries = _subset_space(src_aligned, word_ids)
        cands, _ = retrieval.retrieve_topk(queries, tgt, params, n_threads=threads)
        for row, s in enumerate(word_ids):
            word = src.vocab.word(s)
            if s not in dic.entries:
                log.warning("analyze: %r has no gold entry, skipping PCA export", word)
                continue
            gold = dic.entries[s][0]
            vectors = np.vstack([
                src_aligned.matrix[s],
                tgt.matrix[gold],
                tgt.matrix[cands.cand_ids[row]],
            ])
            coords = evaluation.pca_project(vectors)
            rows = [(word, "source", coords[0, 0], coords[0, 1]),
                    (tgt.vocab.word(gold), "gold", coords[1, 0], coords[1, 1])]
            rows += [
                (tgt.vocab.word(int(c)), "candidate", coords[2 + i, 0], coords[2 + i, 1])
                for i, c in enumerate(cands.cand_ids[row])
            ]
            evaluation.write_pca_coordinates(rows, out / f"pca_{_safe_name(word)}.tsv")
    runlog.close()
    return 0


# ---------------------------------------------------------------- parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file; flags win")
    p.add_argument("--out-dir", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilex", description="Bilingual lexicon induction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic bilingual world")
    _add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--hub-count", dest="hub_count", type=int)
    p.add_argument("--zipf-exponent", dest="zipf_exponent", type=float)
    p.add_argument("--pos-match-prob", dest="pos_match_prob", type=float)
    p.add_argument("--rank-jitter", dest="rank_jitter", type=float)
    p.add_argument("--mean-offset", dest="mean_offset", type=float)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(schema=SYNTH_SCHEMA, func=cmd_synth)

    p = sub.add_parser("retrieve", help="align and retrieve top-k candidates")
    _add_common(p)
    p.add_argument("--src-emb", dest="src_emb")
    p.add_argument("--tgt-emb", dest="tgt_emb")
    p.add_argument("--seed-dict", dest="seed_dict")
    p.add_argument("--source-words", dest="source_words")
    p.add_argument("--metric", choices=["csls", "cosine"])
    p.add_argument("--k-csls", dest="k_csls", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--max-vocab", dest="max_vocab", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(schema=RETRIEVE_SCHEMA, func=cmd_retrieve)

    p = sub.add_parser("mine", help="export hard-negative training pairs")
    _add_common(p)
    p.add_argument("--src-emb", dest="src_emb")
    p.add_argument("--tgt-emb", dest="tgt_emb")
    p.add_argument("--candidates")
    p.add_argument("--dict")
    p.add_argument("--n-neg", dest="n_neg", type=int)
    p.add_argument("--max-vocab", dest="max_vocab", type=int)
    p.set_defaults(schema=MINE_SCHEMA, func=cmd_mine)

    p = sub.add_parser("train", help="train the lexical-feature boosted ranker")
    _add_common(p)
    p.add_argument("--src-emb", dest="src_emb")
    p.add_argument("--tgt-emb", dest="tgt_emb")
    p.add_argument("--candidates")
    p.add_argument("--dict-train", dest="dict_train")
    p.add_argument("--freq-src", dest="freq_src")
    p.add_argument("--freq-tgt", dest="freq_tgt")
    p.add_argument("--pos-src", dest="pos_src")
    p.add_argument("--pos-tgt", dest="pos_tgt")
    p.add_argument("--ext-scores", dest="ext_scores")
    p.add_argument("--mode", choices=["supervised", "semi"])
    p.add_argument("--n-aug", dest="n_aug", type=int)
    p.add_argument("--k-csls", dest="k_csls", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--n-trees", dest="n_trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--min-child-weight", dest="min_child_weight", type=float)
    p.add_argument("--l2-leaf-reg", dest="l2_leaf_reg", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-pos", dest="no_pos", action="store_true", default=None)
    p.add_argument("--no-freq", dest="no_freq", action="store_true", default=None)
    p.add_argument("--mix-search", dest="mix_search", action="store_true", default=None)
    p.add_argument("--dump-features", dest="dump_features", action="store_true", default=None)
    p.add_argument("--max-vocab", dest="max_vocab", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(schema=TRAIN_SCHEMA, func=cmd_train)

    p = sub.add_parser("eval", help="rank test groups and report accuracy")
    _add_common(p)
    p.add_argument("--src-emb", dest="src_emb")
    p.add_argument("--tgt-emb", dest="tgt_emb")
    p.add_argument("--model")
    p.add_argument("--candidates")
    p.add_argument("--dict-test", dest="dict_test")
    p.add_argument("--freq-src", dest="freq_src")
    p.add_argument("--freq-tgt", dest="freq_tgt")
    p.add_argument("--pos-src", dest="pos_src")
    p.add_argument("--pos-tgt", dest="pos_tgt")
    p.add_argument("--ext-scores", dest="ext_scores")
    p.add_argument("--mix", type=float, nargs="?", const=0.5)
    p.add_argument("--errors-only", dest="errors_only", action="store_true", default=None)
    p.add_argument("--max-vocab", dest="max_vocab", type=int)
    p.set_defaults(schema=EVAL_SCHEMA, func=cmd_eval)

    p = sub.add_parser("analyze", help="correlation grid and PCA coordinate export")
    _add_common(p)
    p.add_argument("--src-emb", dest="src_emb")
    p.add_argument("--tgt-emb", dest="tgt_emb")
    p.add_argument("--dict")
    p.add_argument("--freq-src", dest="freq_src")
    p.add_argument("--freq-tgt", dest="freq_tgt")
    p.add_argument("--pos-src", dest="pos_src")
    p.add_argument("--seed-dict", dest="seed_dict")
    p.add_argument("--words")
    p.add_argument("--pair-label", dest="pair_label")
    p.add_argument("--min-n", dest="min_n", type=int)
    p.add_argument("--k-csls", dest="k_csls", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--max-vocab", dest="max_vocab", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(schema=ANALYZE_SCHEMA, func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args, args.schema)
        return args.func(opts)
    except ConfigError as e:
        for msg in e.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except (corpus.DataFormatError, ValueError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (AssertionError, ArithmeticError) as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
