"""Team-draft interleaving of two rankers against simulated cascade users."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .datamodel import Outcome, QueryGroup
from .evaluation import paired_t_test, score_groups
from .ranker import rank_by_scores
from .synthgen import UserModelParams, make_rng, simulate_sessions

__all__ = ["InterleavedList", "InterleaveReport", "run_interleaving_experiment", "team_draft"]

TEAM_A, TEAM_B = "A", "B"


@dataclass(frozen=True)
class InterleavedList:
    items: tuple
    teams: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.items)


def team_draft(list_a: Sequence[Hashable], list_b: Sequence[Hashable], seed=None, *, coins=None) -> InterleavedList:
    """Merge two rankings of the same candidates by team-draft.

    Each round a fair coin picks which team drafts first; each team then
    appends its highest-ranked item not yet chosen and is credited with it.
    ``coins`` optionally supplies the per-round flips (truthy means team A
    first) instead of drawing them from ``seed``.
    """
    if len(set(list_a)) != len(list_a) or len(set(list_b)) != len(list_b):
        raise ValueError("rankings must not contain duplicates")
    if set(list_a) != set(list_b):
        raise ValueError("rankings must cover the same candidate set")
    rng = None if coins is not None else make_rng(seed)
    n = len(list_a)
    chosen: set = set()
    items, teams = [], []
    pa = pb = 0
    rnd = 0
    while len(items) < n:
        a_first = bool(coins[rnd]) if coins is not None else bool(rng.random() < 0.5)
        rnd += 1
        for team in ((TEAM_A, TEAM_B) if a_first else (TEAM_B, TEAM_A)):
            if len(items) == n:
                break
            if team == TEAM_A:
                while list_a[pa] in chosen:
                    pa += 1
                pick = list_a[pa]
            else:
                while list_b[pb] in chosen:
                    pb += 1
                pick = list_b[pb]
            chosen.add(pick)
            items.append(pick)
            teams.append(team)
    return InterleavedList(tuple(items), tuple(teams))


@dataclass
class InterleaveReport:
    n_sessions: int
    credit_a: int
    credit_b: int
    pct_change: float
    t: float
    p: float
    depth: int = 40
    flags: list[str] = field(default_factory=list)

    def summary_row(self) -> dict[str, str]:
        return {
            "atc_baseline": str(self.credit_a),
            "atc_variant": str(self.credit_b),
            "atc_pct_change": f"{100.0 * self.pct_change:+.4f}",
            "atc_t": f"{self.t:.4f}",
            "atc_p": f"{self.p:.4g}",
            "atc_sessions": str(self.n_sessions),
        }


def _session_weights(queries: Sequence[QueryGroup], segment_weights: dict[str, float] | None) -> np.ndarray:
    if not segment_weights:
        return np.full(len(queries), 1.0 / len(queries))
    counts: dict[str, int] = {}
    for g in queries:
        counts[g.segment] = counts.get(g.segment, 0) + 1
    w = np.array([segment_weights.get(g.segment, 0.0) / counts[g.segment] for g in queries])
    if w.sum() <= 0:
        raise ValueError("segment weights give zero probability to every query")
    return w / w.sum()


def run_interleaving_experiment(
    ranker_a,
    ranker_b,
    queries: Sequence[QueryGroup],
    user: UserModelParams,
    n_sessions: int,
    seed: int = 0,
    depth: int = 40,
    segment_weights: dict[str, float] | None = None,
) -> InterleaveReport:
    """Interleave ``ranker_a`` (baseline) with ``ranker_b`` (variant) over simulated sessions.

    Every session samples a query, team-drafts the two rankings, keeps the
    first ``depth`` positions and simulates one cascade user.  Each
    add-to-cart or order is credited to the team that contributed the item.
    All randomness derives from ``seed`` alone, so two experiments sharing a
    seed and query pool see the same queries, coins and users.
    """
    if n_sessions < 1:
        raise ValueError("n_sessions must be >= 1")
    if not queries:
        raise ValueError("query pool is empty")
    if any(not g.has_latent for g in queries):
        raise ValueError("every query group needs latent rho/pi for the user simulator")
    rank_a = [rank_by_scores(s, g.product_ids) for s, g in zip(score_groups(ranker_a, queries), queries)]
    rank_b = [rank_by_scores(s, g.product_ids) for s, g in zip(score_groups(ranker_b, queries), queries)]

    rng = make_rng(seed)
    picks = rng.choice(len(queries), size=n_sessions, p=_session_weights(queries, segment_weights))
    n_max = max(len(g) for g in queries)
    m = min(depth, n_max)
    coins = rng.random((n_sessions, (n_max + 1) // 2)) < 0.5

    rho = np.zeros((n_sessions, m))
    pi = np.zeros((n_sessions, m))
    is_b = np.zeros((n_sessions, m), dtype=bool)
    valid = np.zeros((n_sessions, m), dtype=bool)
    for s, qi in enumerate(picks):
        g = queries[qi]
        merged = team_draft(rank_a[qi], rank_b[qi], coins=coins[s])
        idx = np.array(merged.items[:m], dtype=np.intp)
        w = idx.size
        rho[s, :w] = g.rho[idx]
        pi[s, :w] = g.pi[idx]
        is_b[s, :w] = np.array(merged.teams[:m]) == TEAM_B
        valid[s, :w] = True

    outcomes = simulate_sessions(rho, pi, user, rng, valid=valid)
    atc = outcomes >= Outcome.ADDED_TO_CART
    credit_b = (atc & is_b).sum(axis=1)
    credit_a = (atc & ~is_b).sum(axis=1)
    test = paired_t_test(credit_b - credit_a)
    total_a, total_b = int(credit_a.sum()), int(credit_b.sum())
    pct = (total_b - total_a) / total_a if total_a > 0 else 0.0
    flags = []
    if test.unreliable:
        flags.append("unreliable-p")
    if test.zero_variance:
        flags.append("zero-variance")
    return InterleaveReport(n_sessions, total_a, total_b, pct, test.t, test.p, depth, flags)
