import json
import math
import warnings

import numpy as np
import pytest

import oracles
from conftest import hand_tree, survival_data
from landmark_forest.ensemble import (
    HAZARD_AVERAGE,
    MARTINGALE,
    AllZeroWeightWarning,
    Ensemble,
    fit,
    oob_survival,
    predict_from_weights,
    predict_survival,
    subject_weights,
)
from landmark_forest.model import BundleVersionError, LandmarkForest
from landmark_forest.tree import grow

SQUARE = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
SQUARE_T = np.array([1.0, 2.0, 3.0, 4.0])
SQUARE_E = np.array([1, 1, 0, 1], bool)


@pytest.fixture
def twin():
    """Two stumps on the unit square: one cuts the first column, one the second."""
    inbag = np.array([[1, 2, 0, 1], [2, 0, 1, 1]])
    trees = [
        hand_tree(SQUARE, SQUARE_T, SQUARE_E, [0, -1, -1], [0.5, np.nan, np.nan], [1, -1, -1], [2, -1, -1],
                  inbag[0]),
        hand_tree(SQUARE, SQUARE_T, SQUARE_E, [1, -1, -1], [0.5, np.nan, np.nan], [1, -1, -1], [2, -1, -1],
                  inbag[1]),
    ]
    for tree in trees:
        tree.node_weight = np.array([tree.weight[tree.members(k)].sum() for k in range(3)])
    return Ensemble(trees, inbag, SQUARE, SQUARE_T, SQUARE_E, np.arange(4), 4)


def test_twin_weights_by_hand(twin):
    # query (0, 0): tree 1 leaf {0, 1} counts (1, 2); tree 2 leaf {0, 2} counts (2, 1)
    w = subject_weights(twin, [[0.0, 0.0]])
    np.testing.assert_allclose(w, [[1.5, 1.0, 0.5, 0.0]])
    w = subject_weights(twin, [[1.0, 1.0]])  # leaves {2, 3} and {1, 3}
    np.testing.assert_allclose(w, [[0.0, 0.0, 0.0, 1.0]])


def test_twin_martingale_is_pooled_nelson_aalen(twin):
    q = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    curves = predict_survival(twin, q)
    W = subject_weights(twin, q)
    for r in range(3):
        for t in (0.5, 1.0, 2.0, 3.5, 5.0):
            got = curves.evaluate([t])[r, 0]
            assert got == pytest.approx(oracles.nelson_aalen_survival(SQUARE_T, SQUARE_E, t, W[r]), rel=1e-14)


def test_twin_out_of_bag_uses_second_tree_only(twin):
    # subject 1 is in bag in tree 1 and out of bag in tree 2, where it shares a leaf with subject 3
    oob = oob_survival(twin)
    assert oob.n_trees_used.tolist() == [0, 1, 1, 0]
    assert oob.valid.tolist() == [False, True, True, False]
    assert oob.n_excluded == 2
    expect = predict_from_weights(twin, [[0, 0, 0, 1.0]])
    np.testing.assert_allclose(oob.curves.values[1], expect.values[0])
    assert np.all(oob.curves.values[0] == 1.0)


def test_weighted_pair_example():
    tree = hand_tree(np.zeros((2, 1)), [1.0, 2.0], [1, 1], [-1], [np.nan], [-1], [-1], [2.0, 1.0])
    tree.node_weight = np.array([3.0])
    ens = Ensemble([tree], np.array([[2, 1]]), np.zeros((2, 1)), np.array([1.0, 2.0]), np.ones(2, bool),
                   np.arange(2), 2)
    s = predict_survival(ens, np.zeros((1, 1))).evaluate([0.5, 1.0, 2.0])[0]
    np.testing.assert_allclose(s, [1.0, math.exp(-2 / 3), math.exp(-2 / 3 - 1)], rtol=1e-15)


def test_single_unbootstrapped_tree_reduces_to_the_tree(rng):
    X, t, e = survival_data(rng, 80, ties=True)
    ens = fit(X, t, e, B=1, min_node_size=8, mtry=3, seed=3, bootstrap=False)
    tree = grow(X, t, e, np.ones(80), min_node_size=8, mtry=3, seed=np.random.default_rng(
        np.random.SeedSequence(3).spawn(1)[0]))
    assert ens.trees[0].structure_equal(tree)
    Q = rng.normal(size=(30, 3))
    grid = np.linspace(0, t.max() + 0.5, 40)
    a = predict_survival(ens, Q).evaluate(grid)
    b = tree.node_survival(Q).evaluate(grid)
    np.testing.assert_allclose(a, b, rtol=1e-13)
    np.testing.assert_allclose(predict_survival(ens, Q, HAZARD_AVERAGE).evaluate(grid), a, rtol=1e-13)


def test_root_only_weights_are_event_indicators_of_the_at_risk(rng):
    X, t, e = survival_data(rng, 20)
    ens = fit(X, t, e, B=1, min_node_size=20, bootstrap=False, rows=np.arange(0, 40, 2), n_total=40)
    w = subject_weights(ens, X[:3])
    expect = np.zeros(40)
    expect[::2] = 1.0
    np.testing.assert_array_equal(w, np.tile(expect, (3, 1)))


class TestBootstrap:
    def test_counts_sum_to_sample_size(self, rng):
        X, t, e = survival_data(rng, 57)
        ens = fit(X, t, e, B=40, min_node_size=57, seed=0)
        assert np.all(ens.inbag.sum(axis=1) == 57)
        assert ens.inbag.sum() == 40 * 57

    def test_out_of_bag_fraction(self, rng):
        X, t, e = survival_data(rng, 400)
        ens = fit(X, t, e, B=500, min_node_size=400, seed=1)  # stumps keep this fast
        frac = np.mean(ens.inbag == 0)
        assert frac == pytest.approx((1 - 1 / 400) ** 400, abs=0.02)

    def test_same_seed_same_forest(self, rng):
        X, t, e = survival_data(rng, 100, p=4)
        a = fit(X, t, e, B=6, min_node_size=5, seed=9)
        b = fit(X, t, e, B=6, min_node_size=5, seed=9, n_jobs=2)
        np.testing.assert_array_equal(a.inbag, b.inbag)
        assert all(ta.structure_equal(tb) for ta, tb in zip(a.trees, b.trees))
        c = fit(X, t, e, B=6, min_node_size=5, seed=10)
        assert not np.array_equal(a.inbag, c.inbag)

    def test_rejects_empty_forest(self, rng):
        X, t, e = survival_data(rng, 10)
        with pytest.raises(ValueError):
            fit(X, t, e, B=0)
        with pytest.raises(ValueError):
            fit(X[:0], t[:0], e[:0], B=3)


@pytest.fixture(scope="module")
def forest():
    rng = np.random.default_rng(4)
    X, t, e = survival_data(rng, 150, p=4)
    return fit(X, t, e, B=25, min_node_size=6, seed=2), rng.normal(size=(40, 4))


class TestPrediction:
    def test_martingale_equals_explicit_weights(self, forest):
        ens, Q = forest
        a = predict_survival(ens, Q).values
        b = predict_from_weights(ens, subject_weights(ens, Q)).values
        np.testing.assert_allclose(a, b, rtol=1e-12)

    @pytest.mark.parametrize("mode", [MARTINGALE, HAZARD_AVERAGE])
    def test_curves_are_valid(self, forest, mode):
        ens, Q = forest
        v = predict_survival(ens, Q, mode).values
        assert np.all(v > 0) and np.all(v <= 1) and np.all(np.diff(v, axis=1) <= 1e-15)

    def test_jumps_only_at_event_times(self, forest):
        ens, Q = forest
        curves = predict_survival(ens, Q)
        assert set(curves.times.tolist()) <= set(ens.time[ens.event].tolist())

    def test_weight_grows_with_co_membership(self, forest):
        ens, Q = forest
        tree = ens.trees[0]
        i = int(np.flatnonzero(tree.train_node == tree.apply(Q[:1])[0])[0])
        before = subject_weights(ens, Q[:1])[0, i]
        bumped = Ensemble(ens.trees, ens.inbag.copy(), ens.X, ens.time, ens.event, ens.rows, ens.n_total)
        bumped.inbag[0, i] += 1
        assert subject_weights(bumped, Q[:1])[0, i] > before

    def test_out_of_bag_excludes_in_bag_trees(self, forest):
        ens, _ = forest
        oob = oob_survival(ens)
        np.testing.assert_array_equal(oob.n_trees_used, (ens.inbag == 0).sum(axis=0))
        W = subject_weights(ens, ens.X, oob_only=True)
        for i in np.flatnonzero(oob.valid)[:10]:
            expect = predict_from_weights(ens, W[i:i + 1]).values[0]
            np.testing.assert_allclose(oob.curves.values[i], expect, rtol=1e-12)

    def test_unknown_mode(self, forest):
        ens, Q = forest
        with pytest.raises(ValueError):
            predict_survival(ens, Q, "median")

    def test_serialization_round_trip(self, forest):
        ens, Q = forest
        back = Ensemble.from_dict(json.loads(json.dumps(ens.to_dict())))
        for mode in (MARTINGALE, HAZARD_AVERAGE):
            np.testing.assert_array_equal(predict_survival(back, Q, mode).values,
                                          predict_survival(ens, Q, mode).values)


def test_all_zero_weights_fall_back_to_one(twin):
    lonely = Ensemble(twin.trees, np.array([[1, 1, 0, 0], [1, 1, 0, 0]]), SQUARE, SQUARE_T, SQUARE_E,
                      np.arange(4), 4)
    lonely.trees = [hand_tree(SQUARE, SQUARE_T, SQUARE_E, [0, -1, -1], [0.5, np.nan, np.nan], [1, -1, -1],
                              [2, -1, -1], [1, 1, 0, 0])]
    lonely.trees[0].node_weight = np.array([2.0, 2.0, 0.0])
    lonely.inbag = lonely.inbag[:1]
    with pytest.warns(AllZeroWeightWarning):
        curves = predict_survival(lonely, [[1.0, 0.0]])
    assert np.all(curves.values == 1.0)


@pytest.fixture(scope="module")
def trained(sim_cohort):
    cfg, sim = sim_cohort
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model, _ = LandmarkForest.train(sim.cohort, cfg.landmark(), B=8, seed=5)
    return model, sim.cohort


class TestBundle:
    def test_round_trip(self, trained, tmp_path):
        model, cohort = trained
        model.save(tmp_path / "m.json")
        back = LandmarkForest.load(tmp_path / "m.json")
        assert back.kept_features == model.kept_features and back.big_m == model.big_m
        np.testing.assert_array_equal(back.predict(cohort)[1].values, model.predict(cohort)[1].values)

    def test_version_mismatch_refused(self, trained):
        model, _ = trained
        d = model.to_dict()
        with pytest.raises(BundleVersionError, match="version"):
            LandmarkForest.from_dict({**d, "version": 2})
        with pytest.raises(BundleVersionError):
            LandmarkForest.from_dict({**d, "format": "other"})
        with pytest.raises(BundleVersionError):
            LandmarkForest.from_dict({**d, "ensemble": {**d["ensemble"], "version": 0}})

    def test_only_at_risk_subjects_carry_weight(self, trained):
        model, cohort = trained
        design = model.design(cohort)
        W = subject_weights(model.ensemble, design.X[np.ix_(design.at_risk[:5], model.columns)])
        outside = np.setdiff1d(np.arange(design.n), design.at_risk)
        assert outside.size and np.all(W[:, outside] == 0)
        assert model.ensemble.boot_weights[:, outside].sum() == 0
