"""Offline evaluation: NDCG, simulated human judgment of top-k results, paired t-tests."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datamodel import QueryGroup
from .ranker import TreeEnsemble, rank_by_scores
from .synthgen import JudgeModelParams, judge_pair

__all__ = [
    "EvalReport",
    "TTestResult",
    "dcg_at_k",
    "evaluate_offline",
    "ndcg_at_k",
    "paired_t_test",
    "regularized_incomplete_beta",
    "score_groups",
    "student_t_sf",
]


def _gains(ratings: np.ndarray, gain: str) -> np.ndarray:
    if gain == "exponential":
        return np.exp2(ratings) - 1.0
    if gain == "identity":
        return ratings
    raise ValueError(f"unknown gain {gain!r}")


def dcg_at_k(ratings: Sequence[float], k: int, gain: str = "exponential") -> float:
    r = np.asarray(ratings, dtype=np.float64)[:k]
    disc = 1.0 / np.log2(np.arange(r.size) + 2.0)
    return float(np.sum(_gains(r, gain) * disc))


def ndcg_at_k(
    ratings: Sequence[float],
    k: int,
    gain: str = "exponential",
    pool: Sequence[float] | None = None,
) -> float | None:
    """NDCG@k of ratings listed in ranked order, or ``None`` when the ideal DCG is 0.

    The ideal ordering is drawn from ``pool`` when given (every judged rating
    for the query), otherwise from ``ratings`` themselves.  ``gain`` is
    ``"exponential"`` (``2**r - 1``) or ``"identity"``.
    """
    r = np.asarray(ratings, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("ratings must be a non-empty sequence")
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal_src = r if pool is None else np.asarray(pool, dtype=np.float64)
    if np.any(r < 0) or np.any(ideal_src < 0):
        raise ValueError("ratings must be non-negative")
    idcg = dcg_at_k(np.sort(ideal_src)[::-1], k, gain)
    if idcg <= 0.0:
        return None
    return dcg_at_k(r, k, gain) / idcg


# ----------------------------------------------------------------- t-test


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < 1e-16:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _ibeta(a: float, b: float, x: float, y: float) -> float:
    # y = 1 - x is passed separately so callers can supply it without cancellation
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(y))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, y) / b


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    return _ibeta(a, b, x, 1.0 - x)


def student_t_sf(t: float, df: float) -> float:
    """Upper tail ``P(T > t)`` of Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * _ibeta(df / 2.0, 0.5, df / (df + t * t), t * t / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    mean: float
    zero_variance: bool = False
    unreliable: bool = False


def paired_t_test(deltas: Sequence[float]) -> TTestResult:
    """Two-sided one-sample t-test of paired differences against zero.

    With fewer than two differences, or zero variance, the p-value is 1 by
    convention and the result is flagged.
    """
    d = np.asarray(deltas, dtype=np.float64)
    n = d.size
    if n == 0:
        raise ValueError("at least one difference is required")
    mean = float(np.mean(d))
    if n < 2:
        return TTestResult(0.0, 1.0, 0, mean, zero_variance=True, unreliable=True)
    if np.all(d == d[0]):
        t = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        return TTestResult(t, 1.0, n - 1, mean, zero_variance=True)
    t = mean / (float(np.std(d, ddof=1)) / math.sqrt(n))
    p = min(1.0, 2.0 * student_t_sf(abs(t), n - 1))
    return TTestResult(t, p, n - 1, mean)


# ----------------------------------------------------------- offline protocol


@dataclass
class EvalReport:
    query_ids: list[str]
    baseline_ndcg: list[float]
    variant_ndcg: list[float]
    mean_baseline: float
    mean_variant: float
    pct_change: float
    t: float
    p: float
    n_queries: int
    n_excluded: int = 0
    flags: list[str] = field(default_factory=list)

    def per_query_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["query_id", "baseline_ndcg", "variant_ndcg"])
        for q, b, v in zip(self.query_ids, self.baseline_ndcg, self.variant_ndcg):
            w.writerow([q, f"{b:.10f}", f"{v:.10f}"])
        return buf.getvalue()

    def summary_row(self) -> dict[str, str]:
        return {
            "ndcg_baseline": f"{self.mean_baseline:.6f}",
            "ndcg_variant": f"{self.mean_variant:.6f}",
            "ndcg_pct_change": f"{100.0 * self.pct_change:+.4f}",
            "ndcg_t": f"{self.t:.4f}",
            "ndcg_p": f"{self.p:.4g}",
            "ndcg_n": str(self.n_queries),
        }


def score_groups(model, queries: Sequence[QueryGroup]) -> list[np.ndarray]:
    """Scores for every group from a :class:`TreeEnsemble` (one batched pass) or a ``group -> scores`` callable."""
    if isinstance(model, TreeEnsemble):
        if not queries:
            return []
        flat = model.predict(np.concatenate([g.features for g in queries]))
        bounds = np.cumsum([0] + [len(g) for g in queries])
        return [flat[bounds[i]:bounds[i + 1]] for i in range(len(queries))]
    if callable(model):
        return [np.asarray(model(g), dtype=np.float64) for g in queries]
    raise TypeError("expected a TreeEnsemble or a callable group -> scores")


def evaluate_offline(
    baseline,
    variant,
    queries: Sequence[QueryGroup],
    judge: JudgeModelParams,
    k: int = 10,
    seed: int = 0,
) -> EvalReport:
    """Judge both models' top-k for each query and compare mean NDCG@k.

    Each distinct (query, product) in the union of the two top-k lists gets
    one simulated rating that both models share.  The ideal DCG is taken over
    that judged pool.  Queries whose pool is rated all zero are excluded.
    """
    base_all, var_all = score_groups(baseline, queries), score_groups(variant, queries)
    qids, b_scores, v_scores = [], [], []
    excluded = 0
    for g, sb, sv in zip(queries, base_all, var_all):
        if not g.has_latent:
            raise ValueError(f"group {g.group_id!r} lacks latent relevance needed by the judge")
        top_b = rank_by_scores(sb, g.product_ids)[:k]
        top_v = rank_by_scores(sv, g.product_ids)[:k]
        pool = sorted(set(top_b) | set(top_v))
        ratings = {i: judge_pair(float(g.rho[i]), g.query_id, g.product_ids[i], judge, seed) for i in pool}
        pool_ratings = [ratings[i] for i in pool]
        nb = ndcg_at_k([ratings[i] for i in top_b], k, pool=pool_ratings)
        nv = ndcg_at_k([ratings[i] for i in top_v], k, pool=pool_ratings)
        if nb is None or nv is None:
            excluded += 1
            continue
        qids.append(g.query_id)
        b_scores.append(nb)
        v_scores.append(nv)
    if not qids:
        raise ValueError("no usable queries: every judged pool was rated all zero")
    mb, mv = float(np.mean(b_scores)), float(np.mean(v_scores))
    flags = []
    if len(qids) < 2:
        flags.append("too-few-queries")
    test = paired_t_test(np.array(v_scores) - np.array(b_scores))
    if test.zero_variance:
        flags.append("zero-variance")
    pct = (mv - mb) / mb if mb > 0 else 0.0
    return EvalReport(qids, b_scores, v_scores, mb, mv, pct, test.t, test.p, len(qids), excluded, flags)
