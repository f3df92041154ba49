import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltrlab.datamodel import Outcome
from ltrlab.labelforge import (
    DegenerateTrainingWarning,
    EngagementGrading,
    ScorerConfig,
    SigmoidParams,
    compose_label,
    compose_labels,
    compute_intervals,
    cross_entropy,
    load_content_scores,
    pair_key,
    predict_content,
    save_content_scores,
    sigmoid_slope,
    sigmoid_transform,
    train_content_scorer,
)
from ltrlab.synthgen import GenConfig, generate_corpus


def bisect_unit_slope(params, lo, hi):
    """Root of slope(C) - 1 on [lo, hi] by plain bisection; independent of the closed form."""
    f = lambda c: params.alpha * math.exp(-params.alpha * (c - params.beta)) / (
        1 + math.exp(-params.alpha * (c - params.beta))) ** 2 - 1
    flo = f(lo)
    for _ in range(200):
        mid = (lo + hi) / 2
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return (lo + hi) / 2


def test_fixed_point_is_exactly_half():
    for alpha, beta in [(12, 0.5), (10, 0.7), (10, 0.3), (4.5, 0.123)]:
        assert sigmoid_transform(beta, SigmoidParams(alpha, beta)) == 0.5


def test_reference_interval():
    iv = compute_intervals(SigmoidParams(12, 0.5))
    # frozen from bisect_unit_slope; agrees with the 0.3090 / 0.6910 quoted to 4 places
    assert iv.c1 == pytest.approx(0.3089640275365686, abs=1e-12)
    assert iv.c2 == pytest.approx(0.6910359724634314, abs=1e-12)
    assert not iv.degenerate


def test_intervals_match_bisection_on_random_params():
    rng = np.random.default_rng(3)
    for alpha, beta in zip(rng.uniform(4.01, 50, 50), rng.uniform(0.05, 0.95, 50)):
        p = SigmoidParams(alpha, beta)
        iv = compute_intervals(p)
        lo = bisect_unit_slope(p, beta - 5, beta)
        hi = bisect_unit_slope(p, beta, beta + 5)
        assert iv.c1 == pytest.approx(min(max(lo, 0), 1), abs=1e-9)
        assert iv.c2 == pytest.approx(min(max(hi, 0), 1), abs=1e-9)


@pytest.mark.parametrize("alpha", [0.5, 2.0, 4.0])
def test_shallow_transform_has_no_middle_interval(alpha):
    iv = compute_intervals(SigmoidParams(alpha, 0.4))
    assert iv.degenerate and iv.c1 == iv.c2 == 0.4
    grid = np.linspace(0, 1, 1001)
    assert np.all(sigmoid_slope(grid, SigmoidParams(alpha, 0.4)) <= 1.0 + 1e-12)


def test_slope_exceeds_one_only_inside_interval():
    p = SigmoidParams(12, 0.5)
    iv = compute_intervals(p)
    grid = np.linspace(0, 1, 2001)
    inside = (grid > iv.c1) & (grid < iv.c2)
    slope = sigmoid_slope(grid, p)
    assert np.all(slope[inside] > 1) and np.all(slope[~inside] <= 1 + 1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 60), st.floats(0.01, 0.99), st.lists(st.floats(0, 1), min_size=2, max_size=20))
def test_transform_is_monotone_and_bounded(alpha, beta, cs):
    p = SigmoidParams(alpha, beta)
    c = np.sort(np.array(cs))
    out = sigmoid_transform(c, p)
    assert np.all((out >= 0) & (out <= 1))
    assert np.all(np.diff(out) >= 0)


@pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
def test_transform_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        sigmoid_transform(bad, SigmoidParams(12, 0.5))


@pytest.mark.parametrize("alpha,beta", [(0, 0.5), (-1, 0.5), (10, 0.0), (10, 1.0), (math.inf, 0.5)])
def test_sigmoid_params_validation(alpha, beta):
    with pytest.raises(ValueError):
        SigmoidParams(alpha, beta)


def test_extreme_alpha_does_not_overflow():
    p = SigmoidParams(1e6, 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = sigmoid_transform(np.array([0.0, 0.5, 1.0]), p)
    assert out.tolist() == [0.0, 0.5, 1.0]


def test_cross_entropy_values():
    assert cross_entropy(1.0, 0.5) == pytest.approx(math.log(2))
    assert cross_entropy(0.25, 0.25) == pytest.approx(-(0.25 * math.log(0.25) + 0.75 * math.log(0.75)))
    with pytest.raises(ValueError):
        cross_entropy(0.5, 1.0)


def test_compose_label_examples():
    lab = compose_label(0.5, Outcome.ORDERED, transform=SigmoidParams(12, 0.5))
    assert lab.y == 4.0 and lab.transformed == 0.5 and lab.engagement == 8.0
    assert compose_label(0.3, Outcome.CLICKED).y == pytest.approx(0.6)


@given(st.floats(0, 1), st.floats(0, 1), st.sampled_from(list(Outcome)))
def test_label_monotone_in_content(c1, c2, outcome):
    lo, hi = sorted((c1, c2))
    t = SigmoidParams(10, 0.7)
    assert compose_label(lo, outcome, transform=t).y <= compose_label(hi, outcome, transform=t).y


@given(st.floats(0, 1), st.sampled_from(list(Outcome)), st.sampled_from(list(Outcome)))
def test_label_monotone_in_engagement(c, o1, o2):
    lo, hi = sorted((o1, o2))
    assert compose_label(c, lo).y <= compose_label(c, hi).y


def test_grading_validation():
    with pytest.raises(ValueError):
        EngagementGrading({Outcome.NON_ENGAGED: 1, Outcome.CLICKED: 1, Outcome.ADDED_TO_CART: 2, Outcome.ORDERED: 3})
    with pytest.raises(ValueError):
        EngagementGrading({Outcome.NON_ENGAGED: 0, Outcome.CLICKED: 1, Outcome.ADDED_TO_CART: 2, Outcome.ORDERED: 3})
    with pytest.raises(ValueError):
        EngagementGrading({Outcome.NON_ENGAGED: 1})


def test_compose_labels_normalization_and_clamping():
    ds = generate_corpus(GenConfig(n_queries=3, items_per_group=6, seed=1))
    content = [np.linspace(-0.5, 1.5, len(g)) for g in ds.groups]
    labels = compose_labels(ds, content)
    for g, y in zip(ds.groups, labels):
        assert y[0] == 0.0 and y.max() <= 8.0
    norm = compose_labels(ds, content, EngagementGrading(normalize_within_group=True))
    for y in norm:
        assert y.max() <= 1.0
    with pytest.raises(ValueError):
        compose_labels(ds, content[:2])


def test_scorer_recovers_logistic_target():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2000, 2))
    r = 1 / (1 + np.exp(-(1.5 * x[:, 0] - 0.5 * x[:, 1] + 0.2)))
    model = train_content_scorer(x, r, ("a", "b"), ScorerConfig(epochs=3000))
    z = (x - model.center) / model.scale
    assert np.allclose(z @ model.weights + model.bias, 1.5 * x[:, 0] - 0.5 * x[:, 1] + 0.2, atol=0.05)


def test_scorer_loss_is_non_increasing():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(500, 3)) * [1, 10, 0.1]
    r = (x[:, 0] + rng.normal(size=500) > 0).astype(float)
    model = train_content_scorer(x, r, ("a", "b", "c"), ScorerConfig(epochs=200, learning_rate=50.0))
    assert np.all(np.diff(model.loss_history) <= 1e-12)


def test_scorer_single_class_warns_and_is_constant():
    x = np.arange(20, dtype=float).reshape(10, 2)
    with pytest.warns(DegenerateTrainingWarning):
        model = train_content_scorer(x, np.full(10, 0.25), ("a", "b"))
    assert model.degenerate and np.all(model.weights == 0)


def test_predict_content_selects_columns_by_name():
    ds = generate_corpus(GenConfig(n_queries=20, items_per_group=10, seed=2))
    x = ds.stacked_features()
    cols = [ds.schema.index("xe_score")]
    r = np.clip(np.concatenate([g.rho for g in ds.groups]), 0, 1)
    model = train_content_scorer(x[:, cols], r, ("xe_score",), ScorerConfig(epochs=50))
    c = predict_content(model, x, ds.schema)
    assert c.shape == (ds.n_items,) and np.all((c > 0) & (c < 1))


def test_content_score_file_roundtrip(tmp_path):
    ds = generate_corpus(GenConfig(n_queries=4, items_per_group=5, seed=3))
    scores = {pair_key(g.query_id, p): (i + 1) / 30 for g in ds.groups for i, p in enumerate(g.product_ids)}
    path = tmp_path / "scores.csv"
    save_content_scores(scores, path)
    back = load_content_scores(path, ds)
    for g, arr in zip(ds.groups, back):
        assert arr.tolist() == [scores[pair_key(g.query_id, p)] for p in g.product_ids]
    scores.pop(next(iter(scores)))
    save_content_scores(scores, path)
    with pytest.raises(ValueError):
        load_content_scores(path, ds)
