import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ltrlab.datamodel import Channel, Outcome
from ltrlab.synthgen import (
    GenConfig,
    JudgeModelParams,
    UserModelParams,
    engagement_probabilities,
    generate_corpus,
    judge_pair,
    simulate_judgment,
    simulate_session,
    simulate_sessions,
)


def test_noiseless_content_features_are_monotone_in_rho():
    ds = generate_corpus(GenConfig(n_queries=5, items_per_group=20, sparse_noise=0, xe_noise=0, seed=3))
    cols = ds.schema.indices(Channel.content())
    for g in ds.groups:
        for j in cols:
            assert stats.spearmanr(g.features[:, j], g.rho).statistic == pytest.approx(1.0)


def test_corpus_is_deterministic_and_prefix_stable():
    a = generate_corpus(GenConfig(n_queries=6, items_per_group=8, seed=11))
    b = generate_corpus(GenConfig(n_queries=6, items_per_group=8, seed=11))
    c = generate_corpus(GenConfig(n_queries=3, items_per_group=8, seed=11))
    assert all(x == y for x, y in zip(a.groups, b.groups))
    assert all(x == y for x, y in zip(a.groups[:3], c.groups))
    d = generate_corpus(GenConfig(n_queries=6, items_per_group=8, seed=12))
    assert not np.array_equal(a.groups[0].rho, d.groups[0].rho)


def test_corpus_shape_and_latent_structure():
    cfg = GenConfig(n_queries=200, items_per_group=30, seed=0)
    ds = generate_corpus(cfg)
    assert len(ds) == 200 and ds.n_items == 6000 and ds.has_latent
    rho = np.concatenate([g.rho for g in ds.groups])
    pi = np.concatenate([g.pi for g in ds.groups])
    assert rho.mean() < 0.45 and np.mean(rho > 0.69) < 0.1  # mid/low heavy, sparse top
    assert abs(np.corrcoef(rho, pi)[0, 1]) < 0.05
    assert {g.segment for g in ds.groups} == {"head", "torso", "tail"}
    assert len(ds.schema.indices([Channel.XE])) == 1


def test_default_xe_feature_is_cleaner_than_sparse_features():
    cfg = GenConfig()
    assert cfg.xe_noise < cfg.sparse_noise


def test_segment_proportions_are_respected():
    ds = generate_corpus(GenConfig(n_queries=50, items_per_group=4, segment_proportions={"tail": 1.0}))
    assert {g.segment for g in ds.groups} == {"tail"}


@pytest.mark.parametrize("kwargs", [dict(n_queries=0), dict(items_per_group=1), dict(xe_noise=-1),
                                    dict(segment_proportions={"middle": 1.0}), dict(rho_mixture=())])
def test_gen_config_validation(kwargs):
    with pytest.raises(ValueError):
        GenConfig(**kwargs)


def test_saturated_users_order_everything_they_examine():
    user = UserModelParams(persistence=0.999, click_slope=60, atc_slope=60, order_slope=60)
    out = simulate_sessions(np.ones((200, 10)), np.ones((200, 10)), user, 0)
    for row in out:
        examined = np.flatnonzero(row > 0)
        assert np.all(row[: examined.size] == Outcome.ORDERED)  # examined set is a prefix
    assert np.mean(out == Outcome.ORDERED) > 0.98


def test_position_engagement_matches_cascade_oracle():
    user = UserModelParams()
    rho = np.linspace(0.9, 0.1, 12)
    pi = np.linspace(0.3, 0.8, 12)
    n = 10_000
    out = simulate_sessions(np.tile(rho, (n, 1)), np.tile(pi, (n, 1)), user, 42)
    p_click, p_atc, p_order = engagement_probabilities(rho, pi, user)
    exam = user.persistence ** np.arange(12)
    for level, p in ((Outcome.CLICKED, p_click), (Outcome.ADDED_TO_CART, p_click * p_atc),
                     (Outcome.ORDERED, p_click * p_atc * p_order)):
        expected = exam * p
        observed = np.mean(out >= level, axis=0)
        sigma = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(observed - expected) <= 3 * sigma + 1e-12)


def test_padding_is_never_engaged():
    valid = np.zeros((50, 5), dtype=bool)
    valid[:, :2] = True
    out = simulate_sessions(np.ones((50, 5)), np.ones((50, 5)), UserModelParams(), 1, valid=valid)
    assert np.all(out[:, 2:] == 0)


def test_single_session_api():
    out = simulate_session([0.5, 0.2], [0.5, 0.5], UserModelParams(), seed=3)
    assert len(out) == 2 and all(isinstance(o, Outcome) for o in out)
    with pytest.raises(ValueError):
        simulate_session([], [], UserModelParams())


@given(st.floats(0, 1), st.floats(0, 1))
def test_engagement_probabilities_are_probabilities(rho, pi):
    for p in engagement_probabilities(rho, pi, UserModelParams()):
        assert 0.0 <= p < 1.0


def test_user_params_validation():
    with pytest.raises(ValueError):
        UserModelParams(persistence=1.0)
    with pytest.raises(ValueError):
        UserModelParams(click_slope=-1)


def test_noiseless_judge_buckets_rho():
    judge = JudgeModelParams(judge_noise=0.0)
    assert [simulate_judgment(r, judge) for r in (0.0, 0.2, 0.39, 0.4, 0.79, 0.8, 1.0)] == [0, 1, 1, 2, 3, 4, 4]


def test_judge_pair_is_stable_and_noisy():
    judge = JudgeModelParams(judge_noise=0.1)
    assert judge_pair(0.5, "q1", "p1", judge, 7) == judge_pair(0.5, "q1", "p1", judge, 7)
    ratings = [judge_pair(0.5, "q1", f"p{i}", judge, 7) for i in range(400)]
    assert set(ratings) >= {1, 2, 3}
    assert abs(np.mean(ratings) - 2.0) < 0.2


def test_judge_ratings_increase_with_rho():
    judge = JudgeModelParams()
    means = [np.mean([simulate_judgment(r, judge, s) for s in range(300)]) for r in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert means == sorted(means)


@pytest.mark.parametrize("kwargs", [dict(thresholds=(0.2, 0.2, 0.6, 0.8)), dict(thresholds=(0.2, 0.4)),
                                    dict(judge_noise=-0.1)])
def test_judge_params_validation(kwargs):
    with pytest.raises(ValueError):
        JudgeModelParams(**kwargs)
