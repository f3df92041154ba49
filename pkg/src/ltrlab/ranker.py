"""Gradient-boosted regression trees trained on NDCG-weighted lambda gradients.

Trees are stored in flat arrays (``feature``, ``threshold``, ``left``,
``right``, ``value``, ``cover``), with ``feature == -1`` marking a leaf.
A row goes left when ``x[feature] <= threshold``.

The same tree learner also runs in squared-error regression mode
(:func:`fit_regression`), which backs the baseline content scorer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datamodel import Channel, Dataset, FeatureSchema, QueryGroup, SchemaMismatchError

__all__ = [
    "Tree",
    "TreeEnsemble",
    "TrainConfig",
    "NoRankingSignalError",
    "fit_regression",
    "fit_tree",
    "lambda_gradients",
    "load_ensemble",
    "predict",
    "rank_by_scores",
    "rank_group",
    "save_ensemble",
    "train_ranker",
]

logger = logging.getLogger(__name__)

REG_LAMBDA = 1.0
FORMAT_TAG = "ltrlab-tree-ensemble"
FORMAT_VERSION = 1

# Pair lambdas are rounded onto this dyadic grid before accumulation.  Sums of
# fewer than 2**12 such terms bounded by 1 are exact in float64, so per-item
# gradients do not depend on summation order and cancel exactly within a group.
_QUANTUM = 2.0**-40
_MAX_EXACT_GROUP = 2**12


class NoRankingSignalError(ValueError):
    pass


# ---------------------------------------------------------------- NDCG lambdas


def _discounts(n: int, k: int) -> np.ndarray:
    d = 1.0 / np.log2(np.arange(n, dtype=np.float64) + 2.0)
    d[k:] = 0.0
    return d


def _quantize(a: np.ndarray) -> np.ndarray:
    return np.round(a / _QUANTUM) * _QUANTUM


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _padded_lambdas(scores: np.ndarray, labels: np.ndarray, valid: np.ndarray, k: int):
    """Gradients/hessians for a batch of groups padded to a common width."""
    g, n = scores.shape
    disc = _discounts(n, k)
    s_rank = np.where(valid, scores, -np.inf)
    order = np.argsort(-s_rank, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(n)[None, :].repeat(g, axis=0), axis=1)
    item_disc = disc[rank]

    y = np.where(valid, labels, 0.0)
    # NDCG is scale-free; dividing by the group maximum keeps 1 / IDCG finite for tiny labels
    top = y.max(axis=1, keepdims=True)
    y = np.divide(y, top, out=np.zeros_like(y), where=top > 0)
    ideal = -np.sort(-y, axis=1)
    idcg = ideal @ disc
    inv_idcg = np.divide(1.0, idcg, out=np.zeros_like(idcg), where=idcg > 0)

    higher = (y[:, :, None] > y[:, None, :]) & valid[:, :, None] & valid[:, None, :]
    delta = (np.abs(y[:, :, None] - y[:, None, :]) * np.abs(item_disc[:, :, None] - item_disc[:, None, :])
             * inv_idcg[:, None, None])
    rho = _sigmoid(scores[:, None, :] - scores[:, :, None])  # 1 / (1 + exp(s_i - s_j))
    lam = np.where(higher, _quantize(rho * delta), 0.0)
    hw = np.where(higher, _quantize(rho * (1.0 - rho) * delta), 0.0)

    grad = lam.sum(axis=1) - lam.sum(axis=2)
    hess = hw.sum(axis=1) + hw.sum(axis=2)
    return grad, hess


def lambda_gradients(scores: Sequence[float], labels: Sequence[float], k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-item first and second derivatives of the NDCG-weighted pairwise logistic loss.

    For each pair with ``y_i > y_j`` the pair weight is the absolute change of
    NDCG@k (identity gain) from swapping ``i`` and ``j`` in the current score
    order; ``grad_i`` receives ``-rho * |dNDCG|`` and ``grad_j`` the opposite,
    with ``rho = 1 / (1 + exp(s_i - s_j))``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.ndim != 1 or s.shape != y.shape or s.size < 2:
        raise ValueError("scores and labels must be equal-length sequences of at least 2 items")
    if s.size > _MAX_EXACT_GROUP:
        raise ValueError(f"groups larger than {_MAX_EXACT_GROUP} items are not supported")
    if k < 1:
        raise ValueError("k must be >= 1")
    grad, hess = _padded_lambdas(s[None, :], y[None, :], np.ones((1, s.size), dtype=bool), k)
    return grad[0], hess[0]


@dataclass
class _GroupLayout:
    """Padded index matrices for batched per-group computations."""

    index: np.ndarray  # (G, n_max), -1 for padding
    valid: np.ndarray
    chunks: list[slice]

    @classmethod
    def build(cls, sizes: Sequence[int], max_cells: int = 1 << 22) -> _GroupLayout:
        n_max = max(sizes)
        if n_max > _MAX_EXACT_GROUP:
            raise ValueError(f"groups larger than {_MAX_EXACT_GROUP} items are not supported")
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        index = np.full((len(sizes), n_max), -1, dtype=np.intp)
        for i, n in enumerate(sizes):
            index[i, :n] = np.arange(offsets[i], offsets[i] + n)
        per_chunk = max(1, max_cells // (n_max * n_max))
        chunks = [slice(a, min(a + per_chunk, len(sizes))) for a in range(0, len(sizes), per_chunk)]
        return cls(index, index >= 0, chunks)

    def lambdas(self, scores: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        grad = np.zeros_like(scores)
        hess = np.zeros_like(scores)
        for sl in self.chunks:
            idx, valid = self.index[sl], self.valid[sl]
            safe = np.where(valid, idx, 0)
            g, h = _padded_lambdas(scores[safe], labels[safe], valid, k)
            grad[idx[valid]] = g[valid]
            hess[idx[valid]] = h[valid]
        return grad, hess

    def mean_ndcg(self, scores: np.ndarray, labels: np.ndarray, k: int) -> float:
        """Mean NDCG@k with identity gain over groups whose ideal DCG is positive."""
        total, count = 0.0, 0
        for sl in self.chunks:
            idx, valid = self.index[sl], self.valid[sl]
            safe = np.where(valid, idx, 0)
            s = np.where(valid, scores[safe], -np.inf)
            y = np.where(valid, labels[safe], 0.0)
            disc = _discounts(s.shape[1], k)
            order = np.argsort(-s, axis=1, kind="stable")
            dcg = np.take_along_axis(y, order, axis=1) @ disc
            idcg = -np.sort(-y, axis=1) @ disc
            ok = idcg > 0
            total += float(np.sum(dcg[ok] / idcg[ok]))
            count += int(ok.sum())
        return total / count if count else float("nan")


# ------------------------------------------------------------------- trees


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    @cached_property
    def depth(self) -> int:
        deepest, stack = 0, [(0, 0)]
        while stack:
            node, level = stack.pop()
            if self.feature[node] >= 0:
                stack += [(int(self.left[node]), level + 1), (int(self.right[node]), level + 1)]
            else:
                deepest = max(deepest, level)
        return deepest

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``x``."""
        x = np.atleast_2d(x)
        node = np.zeros(x.shape[0], dtype=np.intp)
        rows = np.arange(x.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            inner = f >= 0
            go_left = x[rows, np.where(inner, f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_dict(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"leaf": float(self.value[node]), "cover": float(self.cover[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "cover": float(self.cover[node]),
            "left": self.to_dict(int(self.left[node])),
            "right": self.to_dict(int(self.right[node])),
        }

    @classmethod
    def from_dict(cls, record: dict) -> Tree:
        cols: dict[str, list] = {k: [] for k in ("feature", "threshold", "left", "right", "value", "cover")}

        def visit(rec: dict) -> int:
            node = len(cols["feature"])
            for k in cols:
                cols[k].append(0)
            cols["cover"][node] = float(rec["cover"])
            if "leaf" in rec:
                cols["feature"][node], cols["left"][node], cols["right"][node] = -1, -1, -1
                cols["value"][node] = float(rec["leaf"])
                cols["threshold"][node] = 0.0
            else:
                cols["feature"][node] = int(rec["feature"])
                cols["threshold"][node] = float(rec["threshold"])
                cols["value"][node] = 0.0
                cols["left"][node] = visit(rec["left"])
                cols["right"][node] = visit(rec["right"])
            return node

        visit(record)
        return cls(
            np.array(cols["feature"], dtype=np.intp),
            np.array(cols["threshold"], dtype=np.float64),
            np.array(cols["left"], dtype=np.intp),
            np.array(cols["right"], dtype=np.intp),
            np.array(cols["value"], dtype=np.float64),
            np.array(cols["cover"], dtype=np.float64),
        )

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> Tree:
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                   np.array([float(value)]), np.array([float(cover)]))


def _best_split(xs: np.ndarray, gs: np.ndarray, hs: np.ndarray, min_leaf: int, lam: float):
    """Best exact split of one node given per-feature sorted values, grads and hessians.

    All arrays are ``(m, n_features)`` with each column sorted by its feature.
    Returns ``(gain, feature column, split position)`` or ``None``.
    """
    m = xs.shape[0]
    if m < 2 * min_leaf:
        return None
    cg = np.cumsum(gs, axis=0)
    ch = np.cumsum(hs, axis=0)
    G, H = cg[-1, 0], ch[-1, 0]
    gl, hl = cg[:-1], ch[:-1]
    gr, hr = G - gl, H - hl
    gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - G * G / (H + lam)
    ok = xs[1:] > xs[:-1]
    left_n = np.arange(1, m)[:, None]
    ok &= (left_n >= min_leaf) & (m - left_n >= min_leaf)
    gain = np.where(ok, gain, -np.inf)
    # column-major argmax: lowest feature column first, then lowest threshold
    flat = int(np.argmax(gain.T))
    col, pos = divmod(flat, m - 1)
    best = gain[pos, col]
    if not np.isfinite(best):
        return None
    return float(best), col, pos


@dataclass(frozen=True)
class _Presorted:
    """Per-feature row orderings, computed once and shared by every tree."""

    features: np.ndarray  # (k,) feature indices
    order: np.ndarray  # (k, n) rows sorted by each feature (stable)
    values: np.ndarray  # (k, n) the sorted feature values

    @classmethod
    def build(cls, x: np.ndarray, features: Sequence[int]) -> _Presorted:
        features = np.asarray(features, dtype=np.intp)
        order = np.argsort(x[:, features], axis=0, kind="stable").T.copy()
        values = x[order, features[:, None]]
        return cls(features, order, values)


def fit_tree(
    x: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    features: Sequence[int],
    max_depth: int,
    min_leaf_count: int = 1,
    reg_lambda: float = REG_LAMBDA,
    min_split_gain: float = 1e-12,
    presorted: _Presorted | None = None,
) -> Tree:
    """Exact greedy regression tree with Newton leaf values ``-G / (H + reg_lambda)``."""
    if presorted is None:
        presorted = _Presorted.build(x, features)
    feats = presorted.features
    n = x.shape[0]
    feat, thr, left, right, value, cover = [], [], [], [], [], []

    def new_node(rows: np.ndarray) -> int:
        node = len(feat)
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(-float(np.sum(grad[rows])) / (float(np.sum(hess[rows])) + reg_lambda))
        cover.append(float(rows.size))
        return node

    root_rows = np.arange(n)
    frontier = [(new_node(root_rows), root_rows)]
    member = np.zeros(n, dtype=bool)
    for _ in range(max_depth):
        if feats.size == 0:
            break
        nxt = []
        for node, rows in frontier:
            m = rows.size
            if m < 2 * min_leaf_count:
                continue
            if m == n:
                sorted_rows, xs = presorted.order.T, presorted.values.T
            else:
                member[:] = False
                member[rows] = True
                sel = member[presorted.order]
                sorted_rows = presorted.order[sel].reshape(feats.size, m).T
                xs = presorted.values[sel].reshape(feats.size, m).T
            found = _best_split(xs, grad[sorted_rows], hess[sorted_rows], min_leaf_count, reg_lambda)
            if found is None or found[0] <= min_split_gain:
                continue
            _, col, pos = found
            f = int(feats[col])
            threshold = 0.5 * (xs[pos, col] + xs[pos + 1, col])
            if not threshold < xs[pos + 1, col]:  # midpoint rounded up onto the right value
                threshold = xs[pos, col]
            go_left = x[rows, f] <= threshold
            lrows, rrows = rows[go_left], rows[~go_left]
            feat[node], thr[node] = f, float(threshold)
            left[node] = new_node(lrows)
            right[node] = new_node(rrows)
            value[node] = 0.0
            nxt += [(left[node], lrows), (right[node], rrows)]
        if not nxt:
            break
        frontier = nxt
    return Tree(
        np.array(feat, dtype=np.intp),
        np.array(thr, dtype=np.float64),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(value, dtype=np.float64),
        np.array(cover, dtype=np.float64),
    )


# --------------------------------------------------------------- ensembles


@dataclass(eq=False)
class TreeEnsemble:
    trees: list[Tree]
    learning_rate: float
    base_score: float
    feature_names: tuple[str, ...]
    schema_fingerprint: str
    objective: str = "lambdarank"
    history: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def check_features(self, x: np.ndarray, schema: FeatureSchema | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise SchemaMismatchError(f"model expects {self.n_features} features, got {x.shape[1]}")
        if schema is not None and schema.fingerprint != self.schema_fingerprint:
            raise SchemaMismatchError("feature schema differs from the one the model was trained on")
        return x

    def predict(self, x: np.ndarray, schema: FeatureSchema | None = None) -> np.ndarray:
        x = self.check_features(x, schema)
        total = np.zeros(x.shape[0])
        for tree in self.trees:
            total += tree.predict(x)
        return self.base_score + self.learning_rate * total

    def used_features(self) -> set[int]:
        out: set[int] = set()
        for t in self.trees:
            out |= t.used_features()
        return out

    def to_json(self) -> str:
        record = {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "objective": self.objective,
            "schema_fingerprint": self.schema_fingerprint,
            "feature_names": list(self.feature_names),
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "history": [float(v) for v in self.history],
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(record, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> TreeEnsemble:
        rec = json.loads(text)
        if rec.get("format") != FORMAT_TAG:
            raise ValueError("not a tree-ensemble file")
        if rec.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {rec.get('version')!r}")
        return cls(
            trees=[Tree.from_dict(t) for t in rec["trees"]],
            learning_rate=float(rec["learning_rate"]),
            base_score=float(rec["base_score"]),
            feature_names=tuple(rec["feature_names"]),
            schema_fingerprint=rec["schema_fingerprint"],
            objective=rec.get("objective", "lambdarank"),
            history=[float(v) for v in rec.get("history", [])],
        )


def save_ensemble(ensemble: TreeEnsemble, path: str | Path) -> None:
    Path(path).write_text(ensemble.to_json() + "\n", encoding="utf-8")


def load_ensemble(path: str | Path) -> TreeEnsemble:
    return TreeEnsemble.from_json(Path(path).read_text(encoding="utf-8"))


def predict(ensemble: TreeEnsemble, features: np.ndarray, schema: FeatureSchema | None = None):
    """Score rows of ``features``; a single 1-d row returns a float."""
    arr = np.asarray(features, dtype=np.float64)
    out = ensemble.predict(arr, schema)
    return float(out[0]) if arr.ndim == 1 else out


def rank_group(ensemble: TreeEnsemble, group: QueryGroup) -> list[int]:
    """Item indices of ``group`` by descending score, ties by ascending product id."""
    scores = ensemble.predict(group.features)
    return rank_by_scores(scores, group.product_ids)


def rank_by_scores(scores: Sequence[float], product_ids: Sequence[str]) -> list[int]:
    keys = sorted(range(len(product_ids)), key=lambda i: (-float(scores[i]), product_ids[i]))
    return keys


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 50
    max_depth: int = 4
    min_leaf_count: int = 20
    learning_rate: float = 0.2
    ndcg_k: int = 10
    channels: tuple[Channel, ...] = (Channel.SPARSE, Channel.XE, Channel.ENGAGEMENT)
    seed: int = 0
    subsample: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", tuple(Channel(c) for c in self.channels))
        if self.n_trees < 0 or self.max_depth < 1 or self.min_leaf_count < 1:
            raise ValueError("n_trees >= 0, max_depth >= 1 and min_leaf_count >= 1 are required")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.ndcg_k < 1:
            raise ValueError("ndcg_k must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")

    def with_channels(self, channels: Iterable[Channel]) -> TrainConfig:
        return TrainConfig(self.n_trees, self.max_depth, self.min_leaf_count, self.learning_rate,
                           self.ndcg_k, tuple(channels), self.seed, self.subsample)


def train_ranker(dataset: Dataset, labels: Sequence[np.ndarray], config: TrainConfig) -> TreeEnsemble:
    """Boost ``config.n_trees`` trees on lambda gradients of per-group labels.

    ``labels`` holds one array per group of ``dataset``.  Only features whose
    channel is in ``config.channels`` are eligible for splits.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(labels) != len(dataset):
        raise ValueError("need one label array per group")
    labels = [np.asarray(y, dtype=np.float64) for y in labels]
    for g, y in zip(dataset.groups, labels):
        if y.shape != (len(g),) or np.any(~np.isfinite(y)) or np.any(y < 0):
            raise ValueError(f"group {g.group_id!r}: labels must be finite, non-negative, one per item")
    if not any(np.ptp(y) > 0 for y in labels):
        raise NoRankingSignalError("no ranking signal: every group has constant labels")

    x = dataset.stacked_features()
    y = np.concatenate(labels)
    layout = _GroupLayout.build([len(g) for g in dataset.groups])
    allowed = dataset.schema.indices(config.channels)
    rng = np.random.default_rng(config.seed)

    presorted = _Presorted.build(x, allowed) if config.subsample >= 1.0 else None
    scores = np.zeros(x.shape[0])
    trees: list[Tree] = []
    history = []
    for t in range(config.n_trees):
        grad, hess = layout.lambdas(scores, y, config.ndcg_k)
        rows = None
        if config.subsample < 1.0:
            keep = rng.random(len(dataset)) < config.subsample
            keep[rng.integers(len(dataset))] = True
            rows = layout.index[keep][layout.valid[keep]]
        if rows is None:
            tree = fit_tree(x, grad, hess, allowed, config.max_depth, config.min_leaf_count,
                            presorted=presorted)
        else:
            tree = fit_tree(x[rows], grad[rows], hess[rows], allowed, config.max_depth, config.min_leaf_count)
        trees.append(tree)
        scores += config.learning_rate * tree.predict(x)
        history.append(layout.mean_ndcg(scores, y, config.ndcg_k))
        logger.debug("round %d: train ndcg@%d %.6f", t, config.ndcg_k, history[-1])
    return TreeEnsemble(trees, config.learning_rate, 0.0, dataset.schema.names,
                        dataset.schema.fingerprint, "lambdarank", history)


def fit_regression(
    x: np.ndarray,
    y: np.ndarray,
    schema: FeatureSchema,
    config: TrainConfig,
) -> TreeEnsemble:
    """Squared-error boosting with the same tree learner (gradient ``pred - y``, unit hessian)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("x must be a non-empty (n, d) matrix matching y")
    if x.shape[1] != len(schema):
        raise SchemaMismatchError("x columns do not match the schema")
    allowed = schema.indices(config.channels)
    base = float(np.mean(y))
    pred = np.full(y.shape[0], base)
    hess = np.ones_like(y)
    presorted = _Presorted.build(x, allowed)
    trees = []
    history = []
    for _ in range(config.n_trees):
        tree = fit_tree(x, pred - y, hess, allowed, config.max_depth, config.min_leaf_count,
                        presorted=presorted)
        trees.append(tree)
        pred += config.learning_rate * tree.predict(x)
        history.append(float(np.mean((pred - y) ** 2)))
    return TreeEnsemble(trees, config.learning_rate, base, schema.names, schema.fingerprint,
                        "squared_error", history)


def ndcg_history_is_monotone(history: Sequence[float], tol: float = 1e-3) -> bool:
    return all(b >= a - tol for a, b in zip(history, history[1:])) if history else True
