"""Listwise gradient-boosted tree ranker optimizing mean average precision.

Pairwise logistic gradients are weighted by the exact AP change of swapping
the pair in the current ranking; trees are grown by exact greedy search with
second-order (Newton) leaf values. Everything is deterministic: stable sorts,
fixed reduction orders, ties to the lowest feature index / candidate position.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DataFormatError
from .features import FeatureSchema, RankingGroup

log = logging.getLogger(__name__)

MODEL_FORMAT = "bilex-gbdt"
MODEL_VERSION = 1


@dataclass
class GbdtParams:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    l2_leaf_reg: float = 1.0
    sigma: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.l2_leaf_reg < 0.0:
            raise ValueError(f"l2_leaf_reg must be >= 0, got {self.l2_leaf_reg}")
        if self.min_child_weight < 0.0:
            raise ValueError(f"min_child_weight must be >= 0, got {self.min_child_weight}")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass
class RegressionTree:
    """Array-encoded binary tree; rows route left iff feature < threshold."""

    feature: np.ndarray    # int32, -1 at leaves
    threshold: np.ndarray  # float64, 0.0 at leaves
    left: np.ndarray       # int32, -1 at leaves
    right: np.ndarray      # int32, -1 at leaves
    value: np.ndarray      # float64, leaf outputs, 0.0 at internal nodes

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int32)
        is_leaf = self.feature < 0
        while True:
            active = ~is_leaf[node]
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] < self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]

    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class GbdtModel:
    trees: list[RegressionTree]
    params: GbdtParams
    schema: FeatureSchema
    fingerprint: str
    base_score: float = 0.0
    meta: dict = field(default_factory=dict)


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Descending-score permutation; ties keep original candidate position."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def average_precision(labels) -> float:
    """AP of binary labels already in ranked order; 0.0 when no positives."""
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty label list")
    positives = y.sum()
    if positives == 0:
        return 0.0
    hits = np.cumsum(y)
    ks = np.arange(1, y.size + 1, dtype=np.float64)
    return float((hits[y == 1] / ks[y == 1]).sum() / positives)


def mean_ap(groups: list[RankingGroup], scores: list[np.ndarray]) -> float:
    """Mean AP over groups that contain a positive, each ranked by score."""
    aps = []
    skipped = 0
    for grp, s in zip(groups, scores):
        if int(grp.labels.sum()) == 0:
            skipped += 1
            continue
        aps.append(average_precision(grp.labels[rank_order(s)]))
    if skipped:
        log.debug("mean_ap: %d all-negative groups excluded", skipped)
    return float(np.mean(aps)) if aps else 0.0


def _ap_prefixes(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative positives and cumulative y_k/k over 1-based rank positions."""
    ks = np.arange(1, y.size + 1, dtype=np.float64)
    return np.cumsum(y).astype(np.float64), np.cumsum(y / ks)


def delta_ap(labels, ranking, i: int, j: int) -> float:
    """AP(ranking with positions i and j swapped) minus AP(ranking).

    labels are per candidate; ranking maps rank position -> candidate index;
    i and j are 0-based rank positions. Swapping is symmetric in (i, j); the
    result is 0 when the swapped labels are equal.
    """
    if i == j:
        raise ValueError("positions must differ")
    y = np.asarray(labels, dtype=np.float64)[np.asarray(ranking, dtype=np.int64)]
    a, b = (i + 1, j + 1) if i < j else (j + 1, i + 1)
    if y[a - 1] == y[b - 1]:
        return 0.0
    P = y.sum()
    c, S = _ap_prefixes(y)
    mid = S[b - 2] - S[a - 1]
    if y[a - 1] == 0.0:  # positive moves up from b to a
        return float(((c[a - 1] + 1.0) / a - c[b - 1] / b + mid) / P)
    return float((c[b - 1] / b - c[a - 1] / a - mid) / P)


def _pair_sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable 1 / (1 + exp(x))."""
    out = np.empty_like(x)
    neg = x < 0
    out[neg] = 1.0 / (1.0 + np.exp(x[neg]))
    ex = np.exp(-x[~neg])
    out[~neg] = ex / (1.0 + ex)
    return out


def compute_lambdas(scores: np.ndarray, labels: np.ndarray, sigma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-candidate gradient/hessian of the AP-weighted pairwise objective.

    For each (positive i, negative j) pair, rho = 1/(1+exp(sigma*(s_i-s_j)))
    and the pair's weight is |delta AP| of swapping the two in the current
    ranking; positives accumulate negative gradient. Gradients sum to zero by
    construction.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n = s.size
    g = np.zeros(n)
    h = np.zeros(n)
    pos = np.nonzero(y == 1)[0]
    neg = np.nonzero(y == 0)[0]
    if pos.size == 0 or neg.size == 0:
        return g, h

    order = rank_order(s)
    rank_of = np.empty(n, dtype=np.int64)
    rank_of[order] = np.arange(1, n + 1)
    c, S = _ap_prefixes(y[order].astype(np.float64))
    P = float(pos.size)

    ra = rank_of[pos][:, None]          # positive ranks, (P, 1)
    rb = rank_of[neg][None, :]          # negative ranks, (1, N)
    amin = np.minimum(ra, rb)
    amax = np.maximum(ra, rb)
    concordant = ra < rb
    mid = S[amax - 2] - S[amin - 1]
    w = ((c[amin - 1] + (~concordant).astype(np.float64)) / amin + mid - c[amax - 1] / amax) / P

    rho = _pair_sigmoid(sigma * (s[pos][:, None] - s[neg][None, :]))
    lam = sigma * rho * w
    curv = sigma * sigma * rho * (1.0 - rho) * w
    g[pos] = -lam.sum(axis=1)
    g[neg] = lam.sum(axis=0)
    h[pos] = curv.sum(axis=1)
    h[neg] = curv.sum(axis=0)
    return g, h


def _lambdas_single_positive_batch(
    scores: np.ndarray,
    labels: np.ndarray,
    sigma: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized lambdas for groups holding exactly one positive each.

    With a single positive at rank a, swapping it with a negative at rank b
    changes AP by exactly 1/a - 1/b, so the pair weights need no prefix sums.
    scores and labels are (n_groups, k); returns (g, h) of the same shape.
    """
    order = np.argsort(-scores, axis=1, kind="stable")
    k = scores.shape[1]
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(1, k + 1), order.shape), axis=1)
    r = ranks.astype(np.float64)
    pos = labels == 1
    r_pos = (r * pos).sum(axis=1, keepdims=True)
    s_pos = (scores * pos).sum(axis=1, keepdims=True)
    w = np.abs(1.0 / r_pos - 1.0 / r)
    rho = _pair_sigmoid(sigma * (s_pos - scores))
    lam = sigma * rho * w
    curv = sigma * sigma * rho * (1.0 - rho) * w
    lam[pos] = 0.0
    curv[pos] = 0.0
    g = np.where(pos, -lam.sum(axis=1, keepdims=True), lam)
    h = np.where(pos, curv.sum(axis=1, keepdims=True), curv)
    return g, h


class _SplitContext:
    """Per-training precomputation shared by every tree.

    Columns taking only the values {0, 1} get their one candidate split
    evaluated from indicator sums; the remaining columns keep a stable
    sorted row order that is partitioned down the tree, so each column is
    sorted only once per training.
    """

    def __init__(self, X: np.ndarray):
        self.X = X
        is_binary = ((X == 0.0) | (X == 1.0)).all(axis=0)
        self.binary_cols = np.nonzero(is_binary)[0]
        self.numeric_cols = np.nonzero(~is_binary)[0]
        self.ones = X[:, self.binary_cols] == 1.0  # (n, nb)
        self.presorted = np.argsort(X[:, self.numeric_cols], axis=0, kind="stable")


def _best_split_at(ctx: _SplitContext, g, h, rows, idx_num, G, H, lam, mcw):
    """Best (gain, feature, threshold) of a node, or None.

    Ties go to the lowest feature index, then the lowest threshold, matching
    a deterministic feature-ascending scan.
    """
    m = rows.size
    n_features = ctx.X.shape[1]
    gain_of = np.full(n_features, -np.inf)
    thr_of = np.zeros(n_features)
    parent = G * G / (H + lam) if H + lam > 0 else 0.0

    if ctx.binary_cols.size:
        ones = ctx.ones[rows]
        gn = g[rows]
        hn = h[rows]
        G1 = gn @ ones
        H1 = hn @ ones
        GL, HL = G - G1, H - H1  # zeros sort left of ones
        GR, HR = G1, H1
        count1 = ones.sum(axis=0)
        sep = (count1 > 0) & (count1 < m)
        dl, dr = HL + lam, HR + lam
        valid = sep & (HL >= mcw) & (HR >= mcw) & (dl > 0) & (dr > 0)
        if valid.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                gains = 0.5 * (GL * GL / dl + GR * GR / dr - parent)
            gain_of[ctx.binary_cols[valid]] = gains[valid]
            thr_of[ctx.binary_cols] = 0.5

    if ctx.numeric_cols.size and m >= 2:
        xs = ctx.X[idx_num, ctx.numeric_cols[None, :]]
        cg = np.cumsum(g[idx_num], axis=0)
        ch = np.cumsum(h[idx_num], axis=0)
        GL, HL = cg[:-1], ch[:-1]
        GR, HR = G - GL, H - HL
        dl, dr = HL + lam, HR + lam
        valid = (xs[1:] != xs[:-1]) & (HL >= mcw) & (HR >= mcw) & (dl > 0) & (dr > 0)
        if valid.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                gains = np.where(valid, 0.5 * (GL * GL / dl + GR * GR / dr - parent), -np.inf)
            cuts = np.argmax(gains, axis=0)  # first maximum = lowest threshold
            cols = np.arange(ctx.numeric_cols.size)
            col_gains = gains[cuts, cols]
            lo = xs[cuts, cols]
            hi = xs[cuts + 1, cols]
            thr = 0.5 * (lo + hi)
            thr = np.where(thr <= lo, hi, thr)  # midpoint rounded onto lo
            gain_of[ctx.numeric_cols] = col_gains
            thr_of[ctx.numeric_cols] = thr

    f = int(np.argmax(gain_of))  # first maximum = lowest feature index
    if not gain_of[f] > 0.0:
        return None
    return f, float(thr_of[f])


def fit_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    params: GbdtParams,
    ctx: _SplitContext | None = None,
) -> RegressionTree:
    """Grow one regression tree by exact greedy gain search.

    Candidate thresholds are midpoints of consecutive distinct sorted values;
    gain = 0.5*(GL^2/(HL+reg) + GR^2/(HR+reg) - G^2/(H+reg)). Ties go to the
    lowest feature index, then the lowest threshold.
    """
    n, n_features = X.shape
    if n == 0:
        raise ValueError("cannot fit a tree on empty input")
    lam = params.l2_leaf_reg
    mcw = params.min_child_weight
    if ctx is None:
        ctx = _SplitContext(X)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n), ctx.presorted, 0)]
    while stack:
        node, rows, idx_num, depth = stack.pop()
        G = float(g[rows].sum())
        H = float(h[rows].sum())
        best = None
        if depth < params.max_depth:
            best = _best_split_at(ctx, g, h, rows, idx_num, G, H, lam, mcw)
        if best is None:
            denom = H + lam
            value[node] = (-G / denom if denom > 0 else 0.0) + 0.0
            continue
        f, thr = best
        feature[node] = f
        threshold[node] = thr
        go_left = X[:, f] < thr
        sel = go_left[rows]
        keep = go_left[idx_num]  # every column holds the same row set
        m_left = int(sel.sum())
        nn = ctx.numeric_cols.size
        left_idx = idx_num.T[keep.T].reshape(nn, m_left).T
        right_idx = idx_num.T[~keep.T].reshape(nn, rows.size - m_left).T
        lchild = new_node()
        rchild = new_node()
        left[node] = lchild
        right[node] = rchild
        stack.append((rchild, rows[~sel], right_idx, depth + 1))
        stack.append((lchild, rows[sel], left_idx, depth + 1))
    return RegressionTree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
    )


def train(
    groups: list[RankingGroup],
    params: GbdtParams,
    schema: FeatureSchema | None = None,
) -> tuple[GbdtModel, list[tuple[int, float]]]:
    """Boost n_trees rounds over pooled group rows; returns (model, MAP trace).

    Groups lacking both a positive and a negative contribute no gradient but
    their rows remain in the pool. At least one mixed group is required.
    """
    params.validate()
    schema = schema or FeatureSchema()
    if not groups:
        raise ValueError("no groups to train on")
    sizes = [len(grp) for grp in groups]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    trainable = [
        i for i, grp in enumerate(groups)
        if 0 < int(grp.labels.sum()) < len(grp)
    ]
    if not trainable:
        raise ValueError("no trainable group: need at least one group with a positive and a negative")

    X = np.vstack([grp.features for grp in groups])
    n = X.shape[0]
    scores = np.zeros(n, dtype=np.float64)
    ctx = _SplitContext(X)

    # groups with exactly one positive take a vectorized batch path,
    # bucketed by candidate count; the rest use the general pair scheme
    single = [i for i in trainable if int(groups[i].labels.sum()) == 1]
    general = [i for i in trainable if int(groups[i].labels.sum()) != 1]
    batches: dict[int, list[int]] = {}
    for i in single:
        batches.setdefault(len(groups[i]), []).append(i)
    batch_rows = {
        size: np.array([[offsets[i] + j for j in range(size)] for i in members])
        for size, members in batches.items()
    }
    batch_labels = {
        size: np.vstack([groups[i].labels for i in members])
        for size, members in batches.items()
    }

    trees: list[RegressionTree] = []
    trace: list[tuple[int, float]] = []
    for round_no in range(1, params.n_trees + 1):
        g = np.zeros(n)
        h = np.zeros(n)
        for size, members in batches.items():
            rows = batch_rows[size]
            gg, hh = _lambdas_single_positive_batch(scores[rows], batch_labels[size], params.sigma)
            g[rows.ravel()] = gg.ravel()
            h[rows.ravel()] = hh.ravel()
        for i in general:
            lo, hi = offsets[i], offsets[i + 1]
            gg, hh = compute_lambdas(scores[lo:hi], groups[i].labels, params.sigma)
            g[lo:hi] = gg
            h[lo:hi] = hh
        tree = fit_tree(X, g, h, params, ctx)
        trees.append(tree)
        scores += params.learning_rate * tree.predict(X)
        per_group = [scores[offsets[i]:offsets[i + 1]] for i in range(len(groups))]
        trace.append((round_no, mean_ap(groups, per_group)))

    model = GbdtModel(
        trees=trees,
        params=params,
        schema=schema,
        fingerprint=schema.fingerprint(),
        base_score=0.0,
    )
    return model, trace


def predict(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    """base_score + learning_rate * sum of tree outputs, after schema checks."""
    expected = model.schema.fingerprint()
    if model.fingerprint != expected:
        raise DataFormatError(
            f"schema fingerprint mismatch: model carries {model.fingerprint[:12]}..., "
            f"schema hashes to {expected[:12]}..."
        )
    if X.ndim != 2 or X.shape[1] != len(model.schema.names):
        raise DataFormatError(f"feature matrix must have {len(model.schema.names)} columns, got {X.shape}")
    out = np.full(X.shape[0], model.base_score, dtype=np.float64)
    for tree in model.trees:
        out += model.params.learning_rate * tree.predict(X)
    return out


def predict_groups(model: GbdtModel, groups: list[RankingGroup]) -> list[np.ndarray]:
    return [predict(model, grp.features) for grp in groups]


def save_model(model: GbdtModel, path: str | Path) -> None:
    """Versioned JSON document; floats render with shortest-roundtrip repr."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "base_score": model.base_score,
        "params": {
            "n_trees": model.params.n_trees,
            "max_depth": model.params.max_depth,
            "learning_rate": model.params.learning_rate,
            "min_child_weight": model.params.min_child_weight,
            "l2_leaf_reg": model.params.l2_leaf_reg,
            "sigma": model.params.sigma,
            "seed": model.params.seed,
        },
        "schema": {
            "names": list(model.schema.names),
            "disabled": list(model.schema.disabled),
            "fingerprint": model.fingerprint,
        },
        "meta": model.meta,
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "value": tree.value.tolist(),
            }
            for tree in model.trees
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _check_tree(tree: RegressionTree, n_features: int, where: str) -> None:
    n = tree.n_nodes()
    if n == 0:
        raise DataFormatError(f"{where}: empty tree")
    internal = tree.feature >= 0
    if (tree.feature >= n_features).any():
        raise DataFormatError(f"{where}: feature index out of range")
    kids = np.concatenate([tree.left[internal], tree.right[internal]])
    if ((kids <= 0) | (kids >= n)).any():
        raise DataFormatError(f"{where}: child index out of range")
    if not ((tree.left[~internal] == -1) & (tree.right[~internal] == -1)).all():
        raise DataFormatError(f"{where}: leaf with children")
    if not np.isfinite(tree.value).all() or not np.isfinite(tree.threshold).all():
        raise DataFormatError(f"{where}: non-finite node values")


def load_model(path: str | Path) -> GbdtModel:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: malformed model document at byte offset {e.pos}: {e.msg}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataFormatError(f"{path}: not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise DataFormatError(f"{path}: unsupported model version {doc.get('version')!r}, expected {MODEL_VERSION}")
    try:
        params = GbdtParams(**doc["params"])
        schema = FeatureSchema(names=tuple(doc["schema"]["names"]), disabled=tuple(doc["schema"]["disabled"]))
        trees = [
            RegressionTree(
                feature=np.array(t["feature"], dtype=np.int32),
                threshold=np.array(t["threshold"], dtype=np.float64),
                left=np.array(t["left"], dtype=np.int32),
                right=np.array(t["right"], dtype=np.int32),
                value=np.array(t["value"], dtype=np.float64),
            )
            for t in doc["trees"]
        ]
        model = GbdtModel(
            trees=trees,
            params=params,
            schema=schema,
            fingerprint=doc["schema"]["fingerprint"],
            base_score=float(doc["base_score"]),
            meta=doc.get("meta", {}),
        )
    except (KeyError, TypeError) as e:
        raise DataFormatError(f"{path}: missing or invalid model field: {e}") from None
    for t, tree in enumerate(model.trees):
        _check_tree(tree, len(model.schema.names), f"{path}: tree {t}")
    return model


def combine_with_retriever(
    ranker_scores: list[np.ndarray],
    csls_scores: list[np.ndarray],
    mix: float,
) -> list[np.ndarray]:
    """Per group, min-max normalize both score lists and blend them.

    combined = mix * ranker + (1 - mix) * retriever; a constant list
    normalizes to all 0.5.
    """
    if not 0.0 <= mix <= 1.0:
        raise ValueError(f"mix must be in [0, 1], got {mix}")

    def norm(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        span = x.max() - x.min()
        if span == 0.0:
            return np.full_like(x, 0.5)
        return (x - x.min()) / span

    out = []
    for r, c in zip(ranker_scores, csls_scores):
        if len(r) != len(c):
            raise ValueError("score lists must be parallel within each group")
        out.append(mix * norm(r) + (1.0 - mix) * norm(c))
    return out
