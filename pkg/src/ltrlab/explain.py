"""Exact path-dependent SHAP values for tree ensembles and mean-|SHAP| importance.

The value of a coalition ``S`` for one tree is the expected output when
features in ``S`` follow the instance down the tree and every other split is
averaged over its children in proportion to training cover.

:func:`tree_shap` works leaf by leaf.  Along the path to a leaf, each distinct
feature ``j`` contributes a factor that is ``o_j`` (1 if the instance satisfies
every split on ``j`` along the path, else 0) when ``j`` is in the coalition and
``z_j`` (product of the cover fractions of those splits) otherwise.  The
Shapley sum over coalitions then reduces to the coefficients of the polynomial
``prod_{j != i} (z_j + o_j t)``.
:func:`brute_force_shapley` enumerates coalitions directly and is the
reference oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .datamodel import FeatureSchema, SchemaMismatchError
from .ranker import Tree, TreeEnsemble

__all__ = [
    "Attribution",
    "ImportanceReport",
    "brute_force_shapley",
    "feature_importance",
    "tree_shap",
    "tree_shap_batch",
]

MAX_BRUTE_FORCE_FEATURES = 12


@dataclass(frozen=True)
class Attribution:
    phi: np.ndarray
    base_value: float

    @property
    def prediction(self) -> float:
        return self.base_value + float(np.sum(self.phi))


@dataclass(frozen=True)
class _LeafPath:
    value: float
    weight: float  # cover(leaf) / cover(root)
    features: np.ndarray  # distinct features on the path
    zero_frac: np.ndarray  # z_j per distinct feature
    conditions: tuple  # (feature, threshold, goes_left) per split on the path


def _check_cover(tree: Tree) -> None:
    if np.any(tree.cover <= 0):
        raise ValueError("every tree node needs positive cover")


def _leaf_paths(tree: Tree) -> list[_LeafPath]:
    _check_cover(tree)
    root_cover = float(tree.cover[0])
    paths: list[_LeafPath] = []
    stack = [(0, ())]
    while stack:
        node, conds = stack.pop()
        f = int(tree.feature[node])
        if f < 0:
            feats: dict[int, float] = {}
            for feat, _, _, frac in conds:
                feats[feat] = feats.get(feat, 1.0) * frac
            keys = np.array(sorted(feats), dtype=np.intp)
            paths.append(_LeafPath(
                float(tree.value[node]),
                float(tree.cover[node]) / root_cover,
                keys,
                np.array([feats[k] for k in keys]),
                tuple((c[0], c[1], c[2]) for c in conds),
            ))
            continue
        parent = float(tree.cover[node])
        left, right = int(tree.left[node]), int(tree.right[node])
        thr = float(tree.threshold[node])
        stack.append((right, conds + ((f, thr, False, float(tree.cover[right]) / parent),)))
        stack.append((left, conds + ((f, thr, True, float(tree.cover[left]) / parent),)))
    return paths


def _shapley_weights(k: int) -> np.ndarray:
    # weight of a coalition of size s drawn from the other k - 1 features
    return np.array([math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k) for s in range(k)])


def _tree_phi(tree: Tree, x: np.ndarray, out: np.ndarray) -> float:
    """Add one tree's SHAP values for rows ``x`` into ``out``; return its expected value."""
    expected = 0.0
    for leaf in _leaf_paths(tree):
        expected += leaf.value * leaf.weight
        k = leaf.features.size
        if k == 0 or leaf.value == 0.0:
            continue
        ones = np.ones((x.shape[0], k))
        col = {f: j for j, f in enumerate(leaf.features)}
        for feat, thr, goes_left, in leaf.conditions:
            ok = (x[:, feat] <= thr) if goes_left else (x[:, feat] > thr)
            ones[:, col[feat]] *= ok
        weights = _shapley_weights(k)
        for i in range(k):
            poly = np.zeros((x.shape[0], k))
            poly[:, 0] = 1.0
            deg = 0
            for j in range(k):
                if j == i:
                    continue
                z, o = leaf.zero_frac[j], ones[:, j]
                poly[:, 1:deg + 2] = poly[:, 1:deg + 2] * z + poly[:, 0:deg + 1] * o[:, None]
                poly[:, 0] *= z
                deg += 1
            out[:, leaf.features[i]] += leaf.value * (ones[:, i] - leaf.zero_frac[i]) * (poly @ weights)
    return expected


def tree_shap_batch(ensemble: TreeEnsemble, x: np.ndarray) -> tuple[np.ndarray, float]:
    """SHAP values for every row of ``x``: ``(phi of shape (n, d), base_value)``."""
    x = ensemble.check_features(x)
    phi = np.zeros(x.shape)
    expected = 0.0
    for tree in ensemble.trees:
        tree_phi = np.zeros(x.shape)
        expected += _tree_phi(tree, x, tree_phi)
        phi += tree_phi
    return ensemble.learning_rate * phi, ensemble.base_score + ensemble.learning_rate * expected


def tree_shap(ensemble: TreeEnsemble, x: np.ndarray, schema: FeatureSchema | None = None) -> Attribution:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("tree_shap explains a single feature vector; use tree_shap_batch for matrices")
    ensemble.check_features(x, schema)
    phi, base = tree_shap_batch(ensemble, x[None, :])
    return Attribution(phi[0], base)


# ---------------------------------------------------------------- oracle


def _expected_tree_value(tree: Tree, x: np.ndarray, known: frozenset[int], node: int = 0) -> float:
    f = int(tree.feature[node])
    if f < 0:
        return float(tree.value[node])
    left, right = int(tree.left[node]), int(tree.right[node])
    if f in known:
        return _expected_tree_value(tree, x, known, left if x[f] <= tree.threshold[node] else right)
    c = float(tree.cover[node])
    return (float(tree.cover[left]) / c * _expected_tree_value(tree, x, known, left)
            + float(tree.cover[right]) / c * _expected_tree_value(tree, x, known, right))


def brute_force_shapley(ensemble: TreeEnsemble, x: np.ndarray) -> Attribution:
    """Exact Shapley values by enumerating every coalition of the features the ensemble uses."""
    x = np.asarray(ensemble.check_features(x)[0], dtype=np.float64)
    for tree in ensemble.trees:
        _check_cover(tree)
    active = sorted(ensemble.used_features())
    m = len(active)
    if m > MAX_BRUTE_FORCE_FEATURES:
        raise ValueError(f"{m} active features exceed the enumeration bound of {MAX_BRUTE_FORCE_FEATURES}")

    def value(coalition: frozenset[int]) -> float:
        total = sum(_expected_tree_value(t, x, coalition) for t in ensemble.trees)
        return ensemble.base_score + ensemble.learning_rate * total

    values = {}
    for r in range(m + 1):
        for subset in itertools.combinations(active, r):
            values[frozenset(subset)] = value(frozenset(subset))

    phi = np.zeros(ensemble.n_features)
    fact = math.factorial
    for i in active:
        others = [f for f in active if f != i]
        acc = 0.0
        for r in range(m):
            w = fact(r) * fact(m - r - 1) / fact(m)
            for subset in itertools.combinations(others, r):
                s = frozenset(subset)
                acc += w * (values[s | {i}] - values[s])
        phi[i] = acc
    return Attribution(phi, values[frozenset()])


# ------------------------------------------------------------ importance


@dataclass(frozen=True)
class ImportanceReport:
    feature_names: tuple[str, ...]
    mean_abs: np.ndarray
    ranks: np.ndarray  # 1 = most important
    n_samples: int

    def rank_of(self, name: str) -> int:
        return int(self.ranks[self._index(name)])

    def value_of(self, name: str) -> float:
        return float(self.mean_abs[self._index(name)])

    def _index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise SchemaMismatchError(f"feature {name!r} not in report") from None

    def ordered(self) -> list[tuple[int, str, float]]:
        order = np.argsort(self.ranks)
        return [(int(self.ranks[j]), self.feature_names[j], float(self.mean_abs[j])) for j in order]


def feature_importance(ensemble: TreeEnsemble, sample: np.ndarray) -> ImportanceReport:
    """Mean absolute SHAP value per feature over ``sample``; ties rank by feature index."""
    x = np.atleast_2d(np.asarray(sample, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("sample must contain at least one feature vector")
    phi, _ = tree_shap_batch(ensemble, x)
    mean_abs = np.abs(phi).mean(axis=0)
    order = np.lexsort((np.arange(mean_abs.size), -mean_abs))
    ranks = np.empty(mean_abs.size, dtype=np.int64)
    ranks[order] = np.arange(1, mean_abs.size + 1)
    return ImportanceReport(tuple(ensemble.feature_names), mean_abs, ranks, x.shape[0])
