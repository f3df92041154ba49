"""Training labels: content relevance times graded engagement.

The label of a query-product pair is ``y = sigma(C) * E`` where ``C`` is a
content-relevance score in ``[0, 1]``, ``sigma`` is either the identity or a
logistic polarising transform, and ``E`` is a positive grade for the logged
engagement outcome.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .datamodel import Dataset, FeatureSchema, Outcome, SchemaMismatchError

__all__ = [
    "ContentScorerModel",
    "DegenerateTrainingWarning",
    "EngagementGrading",
    "IntervalBounds",
    "ScorerConfig",
    "SigmoidParams",
    "TrainingLabel",
    "compose_label",
    "compose_labels",
    "compute_intervals",
    "cross_entropy",
    "load_content_scores",
    "predict_content",
    "save_content_scores",
    "sigmoid_transform",
    "train_content_scorer",
]


class DegenerateTrainingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SigmoidParams:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be a positive finite number")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")


@dataclass(frozen=True)
class IntervalBounds:
    """Boundaries of the middle interval where the transform's slope exceeds 1.

    Scores below ``c1`` are flattened toward 0, scores at or above ``c2``
    toward 1.  When ``degenerate`` is set no such middle interval exists and
    ``c1 == c2 == beta``.
    """

    c1: float
    c2: float
    degenerate: bool


def _check_unit(c, name: str = "C") -> np.ndarray:
    arr = np.asarray(c, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def _logistic(z):
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_transform(c, params: SigmoidParams):
    """``1 / (1 + exp(-alpha (C - beta)))``; scalar in, scalar out."""
    arr = _check_unit(c)
    out = _logistic(params.alpha * (arr - params.beta))
    return float(out) if out.ndim == 0 else out


def sigmoid_slope(c, params: SigmoidParams):
    s = _logistic(params.alpha * (np.asarray(c, dtype=np.float64) - params.beta))
    out = params.alpha * s * (1.0 - s)
    return float(out) if out.ndim == 0 else out


def compute_intervals(params: SigmoidParams) -> IntervalBounds:
    a, b = params.alpha, params.beta
    if a <= 4.0:
        return IntervalBounds(b, b, True)
    # alpha * s * (1 - s) = 1  =>  s = (1 -+ sqrt(1 - 4/alpha)) / 2,  C = beta + logit(s) / alpha
    root = math.sqrt(1.0 - 4.0 / a)
    s_lo = (1.0 - root) / 2.0
    half_width = math.log((1.0 - s_lo) / s_lo) / a
    c1 = min(max(b - half_width, 0.0), 1.0)
    c2 = min(max(b + half_width, 0.0), 1.0)
    return IntervalBounds(c1, c2, False)


def cross_entropy(r, r_hat):
    """Binary cross-entropy between a soft target ``r`` and a prediction ``r_hat``."""
    r = _check_unit(r, "r")
    r_hat = np.asarray(r_hat, dtype=np.float64)
    if np.any(~(r_hat > 0.0)) or np.any(~(r_hat < 1.0)):
        raise ValueError("r_hat must lie strictly inside (0, 1)")
    out = -r * np.log(r_hat) - (1.0 - r) * np.log1p(-r_hat)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------- content scorer


@dataclass(frozen=True)
class ScorerConfig:
    epochs: int = 500
    learning_rate: float = 1.0


@dataclass(frozen=True)
class ContentScorerModel:
    """Logistic scorer over standardised content features.

    ``C = logistic(bias + sum_j weights[j] * (x[j] - center[j]) / scale[j])``.
    """

    feature_names: tuple[str, ...]
    weights: np.ndarray
    bias: float
    center: np.ndarray
    scale: np.ndarray
    epochs: int = 0
    final_loss: float = float("nan")
    loss_history: tuple[float, ...] = field(default=(), repr=False)
    degenerate: bool = False

    def decision(self, x: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(x) - self.center) / self.scale
        return z @ self.weights + self.bias


_EPS = 1e-15


def _clip_open(p: np.ndarray) -> np.ndarray:
    return np.clip(p, _EPS, 1.0 - _EPS)


def train_content_scorer(
    features: np.ndarray,
    r: np.ndarray,
    feature_names: tuple[str, ...],
    config: ScorerConfig = ScorerConfig(),
) -> ContentScorerModel:
    """Fit the scorer by full-batch gradient descent on mean cross-entropy.

    The step size is capped at ``1 / L`` where ``L`` bounds the curvature of
    the mean loss, which makes the loss non-increasing from epoch to epoch.
    """
    x = np.asarray(features, dtype=np.float64)
    r = _check_unit(r, "r")
    if x.ndim != 2 or x.shape[0] != r.shape[0] or x.shape[1] != len(feature_names):
        raise ValueError("features must be an (n, d) matrix matching r and feature_names")
    if x.shape[0] < 2:
        raise ValueError("at least two judged examples are required")
    n, d = x.shape
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0

    if np.all(r < 0.5) or np.all(r >= 0.5):
        warnings.warn("judged labels contain a single class; fitting a constant scorer",
                      DegenerateTrainingWarning, stacklevel=2)
        p = float(np.clip(r.mean(), 1e-6, 1.0 - 1e-6))
        bias = math.log(p / (1.0 - p))
        loss = float(np.mean(cross_entropy(r, np.full(n, p))))
        return ContentScorerModel(tuple(feature_names), np.zeros(d), bias, center, scale,
                                  0, loss, (loss,), True)

    z = (x - center) / scale
    design = np.hstack([z, np.ones((n, 1))])
    # gradient of the mean logistic loss is Lipschitz with L <= lambda_max(D'D / n) / 4
    lipschitz = np.linalg.eigvalsh(design.T @ design / n)[-1] / 4.0
    step = min(config.learning_rate, 1.0 / lipschitz)

    theta = np.zeros(d + 1)
    history = []
    for _ in range(config.epochs):
        p = _clip_open(_logistic(design @ theta))
        history.append(float(np.mean(cross_entropy(r, p))))
        theta = theta - step * (design.T @ (p - r)) / n
    p = _clip_open(_logistic(design @ theta))
    final = float(np.mean(cross_entropy(r, p)))
    history.append(final)
    return ContentScorerModel(tuple(feature_names), theta[:d].copy(), float(theta[d]), center, scale,
                              config.epochs, final, tuple(history), False)


def predict_content(model: ContentScorerModel, features: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Content scores in (0, 1) for rows of ``features`` laid out by ``schema``."""
    try:
        cols = [schema.index(name) for name in model.feature_names]
    except SchemaMismatchError as exc:
        raise SchemaMismatchError(f"content scorer needs {exc}") from None
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != len(schema):
        raise SchemaMismatchError(f"feature rows have {x.shape[1]} columns, schema has {len(schema)}")
    return _clip_open(_logistic(model.decision(x[:, cols])))


# ------------------------------------------------------------------ labels


_DEFAULT_GRADES = {Outcome.NON_ENGAGED: 1.0, Outcome.CLICKED: 2.0, Outcome.ADDED_TO_CART: 4.0, Outcome.ORDERED: 8.0}


@dataclass(frozen=True)
class EngagementGrading:
    """Positive grade per engagement outcome.

    Unengaged items keep a grade of 1 rather than 0 so their labels still
    order them by content.
    """

    grades: Mapping[Outcome, float] = field(default_factory=lambda: dict(_DEFAULT_GRADES))
    normalize_within_group: bool = False

    def __post_init__(self) -> None:
        grades = {Outcome(k): float(v) for k, v in self.grades.items()}
        if set(grades) != set(Outcome):
            raise ValueError("a grade is required for every outcome")
        values = [grades[o] for o in sorted(Outcome)]
        if values[0] <= 0 or any(a >= b for a, b in zip(values, values[1:])):
            raise ValueError("grades must be positive and strictly increasing along the funnel")
        object.__setattr__(self, "grades", grades)

    def table(self) -> np.ndarray:
        return np.array([self.grades[o] for o in sorted(Outcome)], dtype=np.float64)

    def grade(self, outcome: Outcome | int) -> float:
        return self.grades[Outcome(int(outcome))]


@dataclass(frozen=True)
class TrainingLabel:
    y: float
    content: float
    transformed: float
    engagement: float


def compose_label(
    c: float,
    outcome: Outcome,
    grading: EngagementGrading = EngagementGrading(),
    transform: SigmoidParams | None = None,
) -> TrainingLabel:
    c = float(_check_unit(c))
    sc = c if transform is None else sigmoid_transform(c, transform)
    e = grading.grade(outcome)
    return TrainingLabel(sc * e, c, sc, e)


def compose_labels(
    dataset: Dataset,
    content: list[np.ndarray],
    grading: EngagementGrading = EngagementGrading(),
    transform: SigmoidParams | None = None,
) -> list[np.ndarray]:
    """Per-group label arrays for a whole dataset; ``content`` aligns with ``dataset.groups``.

    Content scores are clamped into [0, 1] whatever their source.
    """
    if len(content) != len(dataset.groups):
        raise ValueError("need one content-score array per group")
    table = grading.table()
    labels = []
    for g, c in zip(dataset.groups, content):
        c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
        if c.shape != (len(g),):
            raise ValueError(f"group {g.group_id!r}: content scores do not match items")
        sc = c if transform is None else sigmoid_transform(c, transform)
        e = table[g.outcomes.astype(np.intp)]
        if grading.normalize_within_group:
            e = e / e.max()
        labels.append(sc * e)
    return labels


# ---------------------------------------------------------- external scores


def pair_key(query_id: str, product_id: str) -> str:
    return f"{query_id}::{product_id}"


def save_content_scores(scores: Mapping[str, float], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("pair_id,score\n")
        for key, value in scores.items():
            fh.write(f"{key},{float(value)!r}\n")


def load_content_scores(path: str | Path, dataset: Dataset) -> list[np.ndarray]:
    """Read a ``pair_id,score`` file and align it with ``dataset``; missing pairs are an error."""
    table: dict[str, float] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "pair_id,score":
            raise ValueError(f"{path}: expected header 'pair_id,score'")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.rpartition(",")
            if not sep:
                raise ValueError(f"{path}: line {lineno}: expected two columns")
            score = float(value)
            if not math.isfinite(score):
                raise ValueError(f"{path}: line {lineno}: non-finite score")
            table[key] = score
    out = []
    for g in dataset.groups:
        try:
            out.append(np.array([table[pair_key(g.query_id, p)] for p in g.product_ids]))
        except KeyError as exc:
            raise ValueError(f"{path}: no score for pair {exc.args[0]}") from None
    return out
