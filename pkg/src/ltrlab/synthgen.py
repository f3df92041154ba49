"""Synthetic search logs with known ground truth, plus user and judge simulators.

Every item gets a latent content relevance ``rho`` and an independent latent
engagement propensity ``pi``.  Observable features are noisy views of them:

* sparse-content features: distinct monotone transforms of ``rho`` plus
  ``sparse_noise`` Gaussian noise (text-match style signals);
* one xe-dense feature: ``rho`` itself plus ``xe_noise`` Gaussian noise;
* engagement features: historical engagement rates gathered while items sat
  at their position in a noisy logging ranking, so they inherit position bias.

The logged outcome of each group is one cascade session over that same
logging ranking.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .datamodel import SEGMENTS, Channel, Dataset, FeatureSchema, Outcome, QueryGroup

__all__ = [
    "GenConfig",
    "JudgeModelParams",
    "UserModelParams",
    "engagement_probabilities",
    "generate_corpus",
    "judge_pair",
    "simulate_judgment",
    "simulate_session",
    "simulate_sessions",
]

_NORMAL = NormalDist()


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class UserModelParams:
    """Cascade browsing with a click -> add-to-cart -> order funnel.

    A user examines position ``i`` (0-based) with probability
    ``persistence ** i``.  An examined item with appeal ``a = rho * pi`` is
    clicked with probability ``1 - exp(-click_slope * a)``; each later funnel
    stage is reached from the previous one with the same form and its own
    slope.  Non-negative slopes keep every probability in ``[0, 1)``.
    """

    persistence: float = 0.9
    click_slope: float = 2.5
    atc_slope: float = 2.0
    order_slope: float = 1.5

    def __post_init__(self) -> None:
        if not 0.0 < self.persistence < 1.0:
            raise ValueError("persistence must lie in (0, 1)")
        for name in ("click_slope", "atc_slope", "order_slope"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative")


@dataclass(frozen=True)
class JudgeModelParams:
    thresholds: tuple[float, float, float, float] = (0.2, 0.4, 0.6, 0.8)
    judge_noise: float = 0.05

    def __post_init__(self) -> None:
        t = tuple(float(v) for v in self.thresholds)
        object.__setattr__(self, "thresholds", t)
        if len(t) != 4 or not all(0.0 < v < 1.0 for v in t) or any(a >= b for a, b in zip(t, t[1:])):
            raise ValueError("thresholds must be 4 strictly increasing values in (0, 1)")
        if not (math.isfinite(self.judge_noise) and self.judge_noise >= 0):
            raise ValueError("judge_noise must be finite and non-negative")


# (weight, a, b) components of the Beta mixture for rho
DEFAULT_RHO_MIXTURE = ((0.25, 2.0, 8.0), (0.70, 7.0, 7.0), (0.05, 8.0, 2.0))
DEFAULT_SEGMENTS = {"head": 0.2, "torso": 0.3, "tail": 0.5}
DEFAULT_IMPRESSIONS = {"head": 6400, "torso": 1600, "tail": 400}


@dataclass(frozen=True)
class GenConfig:
    n_queries: int = 500
    items_per_group: int = 30
    n_sparse_features: int = 4
    sparse_noise: float = 0.3
    xe_noise: float = 0.27
    engagement_feature_noise: float = 0.02
    seed: int = 0
    logging_noise: float = 0.3
    id_prefix: str = ""
    segment_proportions: dict = field(default_factory=lambda: dict(DEFAULT_SEGMENTS))
    history_impressions: dict = field(default_factory=lambda: dict(DEFAULT_IMPRESSIONS))
    rho_mixture: tuple = DEFAULT_RHO_MIXTURE
    pi_beta: tuple[float, float] = (2.0, 2.0)
    user: UserModelParams = field(default_factory=UserModelParams)

    def __post_init__(self) -> None:
        for name in ("n_queries", "items_per_group", "n_sparse_features"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.items_per_group < 2:
            raise ValueError("items_per_group must be >= 2 (a group needs two items)")
        for name in ("sparse_noise", "xe_noise", "engagement_feature_noise", "logging_noise"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative")
        props = self.segment_proportions
        if set(props) - set(SEGMENTS) or any(v < 0 for v in props.values()) or sum(props.values()) <= 0:
            raise ValueError(f"segment_proportions must map a subset of {SEGMENTS} to weights")
        if any(self.history_impressions.get(s, 0) < 1 for s in props):
            raise ValueError("history_impressions must be >= 1 for every segment")
        if not self.rho_mixture or any(w < 0 or a <= 0 or b <= 0 for w, a, b in self.rho_mixture):
            raise ValueError("rho_mixture needs (weight, a, b) triples with positive shapes")

    def schema(self) -> FeatureSchema:
        names = [f"text_match_{j}" for j in range(self.n_sparse_features)]
        channels = [Channel.SPARSE] * self.n_sparse_features
        names += ["xe_score"]
        channels += [Channel.XE]
        names += list(ENGAGEMENT_FEATURES)
        channels += [Channel.ENGAGEMENT] * len(ENGAGEMENT_FEATURES)
        return FeatureSchema(tuple(names), tuple(channels))


ENGAGEMENT_FEATURES = ("hist_ctr", "hist_atc_rate", "hist_order_rate", "popularity")


# ------------------------------------------------------------------ user model


def engagement_probabilities(rho, pi, params: UserModelParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-stage conditional probabilities (click, atc | click, order | atc)."""
    a = np.asarray(rho, dtype=np.float64) * np.asarray(pi, dtype=np.float64)
    p_click = -np.expm1(-params.click_slope * a)
    p_atc = -np.expm1(-params.atc_slope * a)
    p_order = -np.expm1(-params.order_slope * a)
    return p_click, p_atc, p_order


def _outcomes_from_uniforms(examined, u_stage, probs) -> np.ndarray:
    p_click, p_atc, p_order = probs
    click = examined & (u_stage[..., 0] < p_click)
    atc = click & (u_stage[..., 1] < p_atc)
    order = atc & (u_stage[..., 2] < p_order)
    return (click.astype(np.int8) + atc + order).astype(np.int8)


def simulate_sessions(rho, pi, params: UserModelParams, rng, valid=None) -> np.ndarray:
    """Vectorised :func:`simulate_session` over a batch of rankings.

    ``rho`` and ``pi`` have shape ``(n_sessions, n_positions)`` in ranked
    order; ``valid`` masks padding positions, which are never engaged.
    """
    rng = make_rng(rng)
    rho = np.atleast_2d(np.asarray(rho, dtype=np.float64))
    pi = np.atleast_2d(np.asarray(pi, dtype=np.float64))
    n, m = rho.shape
    depth_u = rng.random(n)
    u_stage = rng.random((n, m, 3))
    exam_prob = params.persistence ** np.arange(m, dtype=np.float64)
    examined = depth_u[:, None] < exam_prob[None, :]
    if valid is not None:
        examined &= np.asarray(valid, dtype=bool)
    return _outcomes_from_uniforms(examined, u_stage, engagement_probabilities(rho, pi, params))


def simulate_session(rho, pi, params: UserModelParams, seed=None) -> list[Outcome]:
    """Outcomes of one cascade session over items given in ranked order."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.ndim != 1 or rho.size == 0:
        raise ValueError("ranking must be a non-empty sequence")
    codes = simulate_sessions(rho[None, :], np.asarray(pi)[None, :], params, seed)[0]
    return [Outcome(int(c)) for c in codes]


# ----------------------------------------------------------------- judge model


def _bucket(value: np.ndarray, thresholds) -> np.ndarray:
    return np.searchsorted(np.asarray(thresholds), value, side="right").astype(np.int64)


def simulate_judgment(rho: float, params: JudgeModelParams, seed=None) -> int:
    """One 5-point rating (0..4) of a pair with content relevance ``rho``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    noise = make_rng(seed).normal(0.0, params.judge_noise) if params.judge_noise > 0 else 0.0
    return int(_bucket(np.clip(rho + noise, 0.0, 1.0), params.thresholds))


def _pair_uniform(seed: int, query_id: str, product_id: str) -> float:
    digest = hashlib.blake2b(f"{seed}\x1f{query_id}\x1f{product_id}".encode(), digest_size=8).digest()
    # midpoint of one of 2**53 cells; never 0 or 1
    return ((int.from_bytes(digest, "little") >> 11) + 0.5) / 2.0**53


def judge_pair(rho: float, query_id: str, product_id: str, params: JudgeModelParams, seed: int) -> int:
    """Rating of one (query, product) pair that is stable for a given seed.

    The judge's noise is a pure function of ``(seed, query_id, product_id)``,
    so the same pair gets the same rating wherever and whenever it is judged.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    noise = params.judge_noise * _NORMAL.inv_cdf(_pair_uniform(seed, query_id, product_id))
    return int(_bucket(np.clip(rho + noise, 0.0, 1.0), params.thresholds))


# ----------------------------------------------------------------- corpus


def _sample_rho(rng: np.random.Generator, n: int, mixture) -> np.ndarray:
    w = np.array([c[0] for c in mixture], dtype=np.float64)
    comp = rng.choice(len(mixture), size=n, p=w / w.sum())
    a = np.array([c[1] for c in mixture])[comp]
    b = np.array([c[2] for c in mixture])[comp]
    return rng.beta(a, b)


def _sparse_transform(rho: np.ndarray, j: int) -> np.ndarray:
    # distinct strictly increasing shapes, cycling with the feature index
    power = (0.5, 1.0, 1.5, 2.0)[j % 4]
    return rho**power * (1.0 + 0.25 * (j // 4))


def _generate_group(idx: int, config: GenConfig, segments: list[str], seg_p: np.ndarray) -> QueryGroup:
    rng = np.random.default_rng([config.seed, idx])
    n = config.items_per_group
    segment = segments[int(rng.choice(len(segments), p=seg_p))]

    rho = _sample_rho(rng, n, config.rho_mixture)
    pi = rng.beta(config.pi_beta[0], config.pi_beta[1], size=n)

    sparse = np.column_stack([
        _sparse_transform(rho, j) + rng.normal(0.0, config.sparse_noise, n) if config.sparse_noise > 0
        else _sparse_transform(rho, j)
        for j in range(config.n_sparse_features)
    ])
    xe = rho + (rng.normal(0.0, config.xe_noise, n) if config.xe_noise > 0 else 0.0)

    # logging policy: a noisy production ranker; sets positions for history and for the logged event
    log_score = rho + pi + rng.normal(0.0, config.logging_noise, n)
    order = np.lexsort((np.arange(n), -log_score))
    position = np.empty(n, dtype=np.int64)
    position[order] = np.arange(n)

    user = config.user
    p_click, p_atc, p_order = engagement_probabilities(rho, pi, user)
    impressions = int(config.history_impressions[segment])
    exam = user.persistence ** position
    clicks = rng.binomial(impressions, exam * p_click)
    atcs = rng.binomial(clicks, p_atc)
    orders = rng.binomial(atcs, p_order)
    eng_noise = config.engagement_feature_noise
    denom = impressions + 1.0
    engagement = np.column_stack([
        clicks / denom,
        atcs / denom,
        orders / denom,
        pi,
    ])
    if eng_noise > 0:
        engagement = engagement + rng.normal(0.0, eng_noise, engagement.shape)

    # the logged search event itself
    outcomes = np.empty(n, dtype=np.int8)
    outcomes[order] = simulate_sessions(rho[order][None, :], pi[order][None, :], user, rng)[0]

    features = np.column_stack([sparse, xe, engagement])
    p = config.id_prefix
    return QueryGroup(
        group_id=f"{p}g{idx:05d}",
        query_id=f"{p}q{idx:05d}",
        segment=segment,
        product_ids=tuple(f"{p}p{idx:05d}_{j:03d}" for j in range(n)),
        features=features,
        outcomes=outcomes,
        rho=rho,
        pi=pi,
    )


def generate_corpus(config: GenConfig) -> Dataset:
    """Deterministic synthetic corpus; group ``i`` depends only on ``(seed, i)``."""
    segments = [s for s in SEGMENTS if config.segment_proportions.get(s, 0) > 0]
    seg_p = np.array([config.segment_proportions[s] for s in segments], dtype=np.float64)
    seg_p /= seg_p.sum()
    groups = tuple(_generate_group(i, config, segments, seg_p) for i in range(config.n_queries))
    return Dataset(groups, config.schema())
