import numpy as np
import pytest

from ltrlab.datamodel import Channel, FeatureSchema, SchemaMismatchError
from ltrlab.explain import brute_force_shapley, feature_importance, tree_shap, tree_shap_batch
from ltrlab.ranker import Tree, TreeEnsemble, fit_tree


def random_ensemble(rng, d, n_trees=3, depth=3, n=200):
    x = rng.normal(size=(n, d))
    trees = []
    for _ in range(n_trees):
        g = rng.normal(size=n) + x[:, rng.integers(d)]
        trees.append(fit_tree(x, g, rng.uniform(0.5, 1.5, n), list(range(d)), depth, min_leaf_count=5))
    names = tuple(f"f{i}" for i in range(d))
    return TreeEnsemble(trees, 0.3, 0.7, names, "fp"), x


def stump(value_left, value_right, cover_left, cover_right, feature=0, threshold=0.5):
    return Tree(np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]), np.array([1, -1, -1]),
                np.array([2, -1, -1]), np.array([0.0, value_left, value_right]),
                np.array([cover_left + cover_right, cover_left, cover_right], dtype=float))


def test_stump_attribution_by_hand():
    ens = TreeEnsemble([stump(2.0, -1.0, 3, 1)], 1.0, 0.0, ("a", "b"), "fp")
    # expectation 0.75 * 2 + 0.25 * -1 = 1.25 ; x goes left so phi_a = 2 - 1.25
    att = tree_shap(ens, np.array([0.0, 9.0]))
    assert att.base_value == pytest.approx(1.25)
    assert att.phi.tolist() == pytest.approx([0.75, 0.0])


def test_interaction_splits_credit_evenly():
    # f = 1 only when both x0 and x1 go right; balanced covers; x = (1, 1)
    t = Tree(np.array([0, -1, 1, -1, -1]), np.array([0.5, 0, 0.5, 0, 0]), np.array([1, -1, 3, -1, -1]),
             np.array([2, -1, 4, -1, -1]), np.array([0, 0, 0, 0, 1.0]), np.array([4, 2, 2, 1, 1.0]))
    ens = TreeEnsemble([t], 1.0, 0.0, ("a", "b"), "fp")
    att = tree_shap(ens, np.array([1.0, 1.0]))
    assert att.base_value == pytest.approx(0.25)
    assert att.phi.tolist() == pytest.approx([0.375, 0.375])


def test_local_accuracy():
    rng = np.random.default_rng(0)
    ens, x = random_ensemble(rng, 6, n_trees=10, depth=4)
    phi, base = tree_shap_batch(ens, x)
    assert np.max(np.abs(base + phi.sum(axis=1) - ens.predict(x))) <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    ens, x = random_ensemble(rng, 5)
    for row in x[:5]:
        fast = tree_shap(ens, row)
        slow = brute_force_shapley(ens, row)
        assert np.max(np.abs(fast.phi - slow.phi)) <= 1e-9
        assert fast.base_value == pytest.approx(slow.base_value, abs=1e-12)


def test_unused_features_get_zero():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(100, 4))
    t = fit_tree(x, -x[:, 1], np.ones(100), [1, 2], max_depth=2)
    ens = TreeEnsemble([t], 1.0, 0.0, tuple("abcd"), "fp")
    phi, _ = tree_shap_batch(ens, x)
    assert not phi[:, [0, 3]].any()


def test_input_validation():
    rng = np.random.default_rng(2)
    ens, x = random_ensemble(rng, 3, n_trees=1)
    with pytest.raises(ValueError):
        tree_shap(ens, x[:2])
    with pytest.raises(SchemaMismatchError):
        tree_shap(ens, np.zeros(4))
    schema = FeatureSchema(("f0", "f1", "f2"), (Channel.SPARSE,) * 3)
    with pytest.raises(SchemaMismatchError):
        tree_shap(ens, x[0], schema)  # fingerprint differs
    zero = TreeEnsemble([stump(1, 2, 0, 1)], 1.0, 0.0, ("a",), "fp")
    with pytest.raises(ValueError):
        tree_shap(zero, np.zeros(1))


def test_brute_force_bound():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(400, 13))
    trees = [fit_tree(x, -x[:, j], np.ones(400), [j], 1) for j in range(13)]
    ens = TreeEnsemble(trees, 1.0, 0.0, tuple(f"f{j}" for j in range(13)), "fp")
    with pytest.raises(ValueError, match="enumeration bound"):
        brute_force_shapley(ens, x[0])


def test_importance_ranks_and_ties():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(300, 4))
    t = fit_tree(x, -3 * x[:, 2] - x[:, 0], np.ones(300), [0, 2], max_depth=3)
    ens = TreeEnsemble([t], 1.0, 0.0, ("a", "b", "c", "d"), "fp")
    rep = feature_importance(ens, x)
    assert rep.rank_of("c") == 1 and rep.rank_of("a") == 2
    assert rep.rank_of("b") == 3 and rep.rank_of("d") == 4  # zero-importance tie broken by index
    phi, _ = tree_shap_batch(ens, x)
    assert rep.value_of("c") == pytest.approx(np.abs(phi[:, 2]).mean())
    assert [r for r, _, _ in rep.ordered()] == [1, 2, 3, 4]
    with pytest.raises(SchemaMismatchError):
        rep.rank_of("zz")
    with pytest.raises(ValueError):
        feature_importance(ens, np.empty((0, 4)))
