"""Lexical resource loading: embeddings, dictionaries, frequency and POS tables.

All loaders NFC-normalize tokens and never lowercase. Loaded structures are
treated as immutable after construction and are safe to share across threads.
"""

from __future__ import annotations

import logging
import math
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

UPOS_TAGS = (
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X",
)
UNK_TAG = "UNK"
ALL_TAGS = UPOS_TAGS + (UNK_TAG,)
TAG_INDEX = {t: i for i, t in enumerate(ALL_TAGS)}


class DataFormatError(ValueError):
    """A resource file violates its format contract."""


def _nfc(token: str) -> str:
    return unicodedata.normalize("NFC", token)


@dataclass
class Vocabulary:
    """Ordered word inventory with dense 0-based ids."""

    words: list[str]
    index: dict[str, int]

    @classmethod
    def from_words(cls, words: list[str]) -> "Vocabulary":
        index = {w: i for i, w in enumerate(words)}
        if len(index) != len(words):
            raise DataFormatError("duplicate words in vocabulary")
        return cls(words=list(words), index=index)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, word: str) -> int:
        return self.index[word]

    def word(self, word_id: int) -> str:
        return self.words[word_id]


@dataclass
class EmbeddingSpace:
    """Vocabulary plus a row-major vector matrix (row i = vector of word i)."""

    vocab: Vocabulary
    matrix: np.ndarray
    dim: int
    normalized: bool = False
    duplicate_count: int = 0
    zero_row_count: int = 0

    def __len__(self) -> int:
        return len(self.vocab)


@dataclass
class TranslationDictionary:
    """source id -> tuple of target ids (deduplicated, sorted ascending)."""

    entries: dict[int, tuple[int, ...]]
    oov_src: int = 0
    oov_tgt: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def sources(self) -> list[int]:
        return sorted(self.entries)

    def pair_count(self) -> int:
        return sum(len(t) for t in self.entries.values())


@dataclass
class FrequencyTable:
    """Per-word-id Zipf scores and frequency ranks.

    zipf(w) = max(0, log10(count_w / total_tokens * 1e9)); words missing from
    the source counts get zipf 0 and rank len(vocab) (worst). Ranks over
    listed words are 1..m by descending count, ties broken by vocabulary
    order.
    """

    zipf: np.ndarray
    rank: np.ndarray
    total_tokens: int
    listed: int
    oov: int = 0


@dataclass
class PosTable:
    """Per-word-id Universal POS tag; words without an entry map to UNK."""

    tag_ids: np.ndarray
    unknown_tag_count: int = 0
    oov: int = 0

    def tag(self, word_id: int) -> str:
        return ALL_TAGS[self.tag_ids[word_id]]


def _data_lines(path: Path):
    """Yield (1-based line number, stripped line), skipping blanks and # comments."""
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            yield line_no, line


def load_embeddings(path: str | Path, max_vocab: int | None = None) -> EmbeddingSpace:
    """Load text-format word vectors: header "<count> <dim>", then one word per line.

    Duplicate tokens keep their first occurrence (warned and counted). If
    max_vocab is given only the first max_vocab rows are read.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise DataFormatError(f"{path}: line 1: malformed header {header.strip()!r}, expected '<count> <dim>'")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError(f"{path}: line 1: non-integer header fields {header.strip()!r}") from None
        if count < 0 or dim <= 0:
            raise DataFormatError(f"{path}: line 1: invalid header values count={count} dim={dim}")

        expected = count if max_vocab is None else min(count, max_vocab)
        words: list[str] = []
        index: dict[str, int] = {}
        rows: list[np.ndarray] = []
        duplicates = 0
        read = 0
        for line_no, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if read >= expected:
                read += 1
                continue
            read += 1
            parts = line.split(" ")
            token = _nfc(parts[0])
            values = parts[1:]
            if values and values[-1] == "":  # trailing space, common in fastText exports
                values = values[:-1]
            if len(values) != dim:
                raise DataFormatError(
                    f"{path}: line {line_no}: expected {dim} values for {token!r}, found {len(values)}"
                )
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise DataFormatError(f"{path}: line {line_no}: non-numeric value in row for {token!r}") from None
            if token in index:
                duplicates += 1
                log.warning("%s: line %d: duplicate token %r, keeping first occurrence", path, line_no, token)
                continue
            index[token] = len(words)
            words.append(token)
            rows.append(vec)

    if max_vocab is None and read != count:
        raise DataFormatError(f"{path}: header declares {count} rows, found {read}")
    if max_vocab is not None and read < expected:
        raise DataFormatError(f"{path}: expected at least {expected} rows, found {read}")

    matrix = np.vstack(rows) if rows else np.zeros((0, dim), dtype=np.float64)
    vocab = Vocabulary(words=words, index=index)
    return EmbeddingSpace(vocab=vocab, matrix=matrix, dim=dim, normalized=False, duplicate_count=duplicates)


def normalize_rows(space: EmbeddingSpace) -> EmbeddingSpace:
    """Return a unit-row copy of the space; zero rows stay zero and are counted.

    A space already flagged normalized is returned unchanged, which makes
    normalization an exact fixed point.
    """
    if space.normalized:
        return space
    norms = np.linalg.norm(space.matrix, axis=1)
    nonzero = norms > 0.0
    out = space.matrix.copy()
    out[nonzero] /= norms[nonzero, None]
    zero_rows = int((~nonzero).sum())
    if zero_rows:
        log.warning("normalize_rows: %d zero rows left unnormalized", zero_rows)
    return EmbeddingSpace(
        vocab=space.vocab,
        matrix=out,
        dim=space.dim,
        normalized=True,
        duplicate_count=space.duplicate_count,
        zero_row_count=zero_rows,
    )


def load_dictionary(path: str | Path, src: Vocabulary, tgt: Vocabulary) -> TranslationDictionary:
    """Load a tab-separated translation dictionary, skipping OOV pairs.

    Targets are stored deduplicated and sorted by id, so the result does not
    depend on input line order.
    """
    path = Path(path)
    grouped: dict[int, set[int]] = {}
    oov_src = 0
    oov_tgt = 0
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataFormatError(f"{path}: line {line_no}: expected exactly one tab, got {len(fields) - 1}")
        s, t = _nfc(fields[0]), _nfc(fields[1])
        if s not in src:
            oov_src += 1
            continue
        if t not in tgt:
            oov_tgt += 1
            continue
        grouped.setdefault(src.id(s), set()).add(tgt.id(t))
    if oov_src or oov_tgt:
        log.info("%s: skipped %d pairs with OOV source, %d with OOV target", path, oov_src, oov_tgt)
    entries = {s: tuple(sorted(ts)) for s, ts in grouped.items()}
    return TranslationDictionary(entries=entries, oov_src=oov_src, oov_tgt=oov_tgt)


def frequency_table_from_counts(counts: dict[str, int], vocab: Vocabulary) -> FrequencyTable:
    """Build zipf scores and ranks for vocab from a word -> raw count mapping."""
    n = len(vocab)
    total = sum(counts.values())
    zipf = np.zeros(n, dtype=np.float64)
    rank = np.full(n, n, dtype=np.int64)
    listed: list[tuple[int, int]] = []  # (word id, count)
    oov = 0
    for word, c in counts.items():
        if word in vocab:
            listed.append((vocab.id(word), c))
        else:
            oov += 1
    if total > 0:
        for wid, c in listed:
            zipf[wid] = max(0.0, math.log10(c / total * 1e9))
    # descending count, ties by vocabulary order
    listed.sort(key=lambda wc: (-wc[1], wc[0]))
    for r, (wid, _) in enumerate(listed, start=1):
        rank[wid] = r
    return FrequencyTable(zipf=zipf, rank=rank, total_tokens=total, listed=len(listed), oov=oov)


def load_frequency_table(path: str | Path, vocab: Vocabulary) -> FrequencyTable:
    """Load "word<TAB>count" rows; counts must be positive integers."""
    path = Path(path)
    counts: dict[str, int] = {}
    duplicates = 0
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataFormatError(f"{path}: line {line_no}: expected 'word<TAB>count'")
        word = _nfc(fields[0])
        try:
            c = int(fields[1])
        except ValueError:
            raise DataFormatError(f"{path}: line {line_no}: non-numeric count {fields[1]!r}") from None
        if c <= 0:
            raise DataFormatError(f"{path}: line {line_no}: non-positive count {c}")
        if word in counts:
            duplicates += 1
            log.warning("%s: line %d: duplicate word %r, last value wins", path, line_no, word)
        counts[word] = c
    if duplicates:
        log.info("%s: %d duplicate rows", path, duplicates)
    return frequency_table_from_counts(counts, vocab)


def pos_table_from_tags(tags: dict[str, str], vocab: Vocabulary) -> tuple[PosTable, int]:
    """Build a PosTable from word -> tag; unknown tag strings fall back to X.

    Returns the table and the number of unknown tag strings encountered.
    """
    n = len(vocab)
    tag_ids = np.full(n, TAG_INDEX[UNK_TAG], dtype=np.int8)
    unknown = 0
    oov = 0
    for word, tag in tags.items():
        if word not in vocab:
            oov += 1
            continue
        if tag not in TAG_INDEX or tag == UNK_TAG:
            unknown += 1
            tag = "X"
        tag_ids[vocab.id(word)] = TAG_INDEX[tag]
    table = PosTable(tag_ids=tag_ids, unknown_tag_count=unknown, oov=oov)
    return table, unknown


def load_pos_table(path: str | Path, vocab: Vocabulary) -> PosTable:
    """Load "word<TAB>UPOS" rows. Nothing here is fatal: bad rows are skipped,
    unknown tags become X with a warning, absent words stay UNK."""
    path = Path(path)
    tags: dict[str, str] = {}
    for line_no, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            log.warning("%s: line %d: skipping malformed row", path, line_no)
            continue
        tags[_nfc(fields[0])] = fields[1]
    table, unknown = pos_table_from_tags(tags, vocab)
    if unknown:
        log.warning("%s: %d unknown tag strings mapped to X", path, unknown)
    return table


def write_embeddings(space: EmbeddingSpace, path: str | Path) -> None:
    """Write the text format back out with shortest-roundtrip float rendering."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(space)} {space.dim}\n")
        for i, word in enumerate(space.vocab.words):
            coords = " ".join(repr(float(v)) for v in space.matrix[i])
            fh.write(f"{word} {coords}\n")


def write_dictionary(dic: TranslationDictionary, src: Vocabulary, tgt: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sorted(dic.entries):
            for t in dic.entries[s]:
                fh.write(f"{src.word(s)}\t{tgt.word(t)}\n")


def write_frequency_counts(counts: dict[str, int], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in counts:
            fh.write(f"{word}\t{counts[word]}\n")


def write_pos_tags(tags: dict[str, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in tags:
            fh.write(f"{word}\t{tags[word]}\n")
