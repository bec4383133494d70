"""Per-candidate feature vectors and labeled ranking groups.

The 46-column layout is fixed: retriever/reranker scores, frequency features,
a POS-match bit, and two 18-way one-hot POS blocks. Ablations zero columns
out in place; the schema length never changes.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    ALL_TAGS,
    DataFormatError,
    FrequencyTable,
    PosTable,
    TranslationDictionary,
    Vocabulary,
    _data_lines,
    _nfc,
)
from .retrieval import CandidateSet

log = logging.getLogger(__name__)

FEATURE_NAMES: tuple[str, ...] = (
    "csls",
    "ext_logit",
    "ext_present",
    "zipf_src",
    "zipf_cand",
    "zipf_diff",
    "zipf_absdiff",
    "log_rank_src",
    "log_rank_cand",
    "pos_match",
    *(f"src_pos_{t}" for t in ALL_TAGS),
    *(f"cand_pos_{t}" for t in ALL_TAGS),
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 46

FEATURE_GROUPS = {
    "freq": tuple(range(3, 9)),
    "pos": tuple(range(9, 46)),
}


@dataclass(frozen=True)
class FeatureSchema:
    """Feature layout plus the set of ablated (zeroed) groups."""

    names: tuple[str, ...] = FEATURE_NAMES
    disabled: tuple[str, ...] = ()

    def __post_init__(self):
        for group in self.disabled:
            if group not in FEATURE_GROUPS:
                raise ValueError(f"unknown feature group {group!r}")

    def fingerprint(self) -> str:
        payload = "|".join(self.names) + ";disabled=" + ",".join(sorted(self.disabled))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def masked_columns(self) -> list[int]:
        cols: list[int] = []
        for group in sorted(self.disabled):
            cols.extend(FEATURE_GROUPS[group])
        return cols

    def apply_mask(self, features: np.ndarray) -> np.ndarray:
        cols = self.masked_columns()
        if not cols:
            return features
        out = features.copy()
        out[:, cols] = 0.0
        return out


@dataclass
class ExternalScores:
    """(source word, candidate word) -> raw reranker logit."""

    logits: dict[tuple[str, str], float]
    duplicates: int = 0

    def get(self, src_word: str, cand_word: str) -> float | None:
        return self.logits.get((src_word, cand_word))

    def __len__(self) -> int:
        return len(self.logits)


def load_external_scores(path: str | Path) -> ExternalScores:
    """Load "src<TAB>cand<TAB>logit" rows; duplicate keys keep the last value."""
    path = Path(path)
    logits: dict[tuple[str, str], float] = {}
    duplicates = 0
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataFormatError(f"{path}: line {line_no}: expected 'src<TAB>cand<TAB>logit'")
        try:
            value = float(fields[2])
        except ValueError:
            raise DataFormatError(f"{path}: line {line_no}: non-numeric logit {fields[2]!r}") from None
        if not math.isfinite(value):
            raise DataFormatError(f"{path}: line {line_no}: non-finite logit {fields[2]!r}")
        key = (_nfc(fields[0]), _nfc(fields[1]))
        if key in logits:
            duplicates += 1
            log.warning("%s: line %d: duplicate pair %r, last value wins", path, line_no, key)
        logits[key] = value
    return ExternalScores(logits=logits, duplicates=duplicates)


@dataclass
class RankingGroup:
    """One source word with its ranked candidates: the unit of LTR training."""

    src: int
    candidate_ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    csls: np.ndarray
    has_gold: bool = False
    gold_missed: bool = False

    def __len__(self) -> int:
        return len(self.candidate_ids)


def label_candidates(src: int, cands: list[int] | np.ndarray, dic: TranslationDictionary) -> np.ndarray:
    """1 for candidates in the gold set of src, else 0."""
    if len(cands) == 0:
        raise ValueError(f"empty candidate list for source id {src}")
    gold = set(dic.entries[src])
    return np.array([1 if int(c) in gold else 0 for c in cands], dtype=np.int8)


def featurize_pair(
    src: int,
    cand: int,
    csls: float,
    ext: float | None,
    freq_src: FrequencyTable,
    freq_tgt: FrequencyTable,
    pos_src: PosTable,
    pos_tgt: PosTable,
) -> np.ndarray:
    """One 46-dim feature row for a (source, candidate) pair."""
    vec = np.zeros(N_FEATURES, dtype=np.float64)
    vec[0] = csls
    if ext is not None:
        vec[1] = ext
        vec[2] = 1.0
    zs = float(freq_src.zipf[src])
    zc = float(freq_tgt.zipf[cand])
    vec[3] = zs
    vec[4] = zc
    vec[5] = zs - zc
    vec[6] = abs(zs - zc)
    vec[7] = math.log2(1 + int(freq_src.rank[src]))
    vec[8] = math.log2(1 + int(freq_tgt.rank[cand]))
    ts = int(pos_src.tag_ids[src])
    tc = int(pos_tgt.tag_ids[cand])
    vec[9] = 1.0 if ts == tc else 0.0
    vec[10 + ts] = 1.0
    vec[28 + tc] = 1.0
    return vec


def build_groups(
    sources: list[int],
    cands: CandidateSet,
    freq_src: FrequencyTable,
    freq_tgt: FrequencyTable,
    pos_src: PosTable,
    pos_tgt: PosTable,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    dic: TranslationDictionary | None = None,
    ext: ExternalScores | None = None,
    schema: FeatureSchema | None = None,
) -> list[RankingGroup]:
    """One RankingGroup per requested source, candidate order preserved.

    Labels come from dic when the source is present there; otherwise the
    group is an unlabeled inference group. Sources without a candidate list
    are fatal.
    """
    schema = schema or FeatureSchema()
    groups: list[RankingGroup] = []
    for s in sources:
        if s not in cands:
            raise DataFormatError(f"source {src_vocab.word(s)!r} has no candidate list")
        ids, scores = cands.for_source(s)
        has_gold = dic is not None and s in dic.entries
        if has_gold:
            labels = label_candidates(s, ids, dic)
        else:
            labels = np.zeros(len(ids), dtype=np.int8)
        rows = np.empty((len(ids), N_FEATURES), dtype=np.float64)
        sw = src_vocab.word(s)
        for i, (c, v) in enumerate(zip(ids, scores)):
            ext_value = ext.get(sw, tgt_vocab.word(int(c))) if ext is not None else None
            rows[i] = featurize_pair(s, int(c), float(v), ext_value, freq_src, freq_tgt, pos_src, pos_tgt)
        rows = schema.apply_mask(rows)
        gold_missed = has_gold and int(labels.sum()) == 0
        if gold_missed:
            log.info("build_groups: gold for %r never retrieved", sw)
        groups.append(
            RankingGroup(
                src=s,
                candidate_ids=np.asarray(ids, dtype=np.int64),
                labels=labels,
                features=rows,
                csls=np.asarray(scores, dtype=np.float64),
                has_gold=has_gold,
                gold_missed=gold_missed,
            )
        )
    return groups


def write_feature_matrix(groups: list[RankingGroup], src_vocab: Vocabulary, tgt_vocab: Vocabulary, path: str | Path) -> None:
    """Debug export: one row per candidate with a schema-name header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("src\tcand\tlabel\t" + "\t".join(FEATURE_NAMES) + "\n")
        for grp in groups:
            sw = src_vocab.word(grp.src)
            for i, c in enumerate(grp.candidate_ids):
                cells = "\t".join(repr(float(v)) for v in grp.features[i])
                fh.write(f"{sw}\t{tgt_vocab.word(int(c))}\t{int(grp.labels[i])}\t{cells}\n")
