import json
import math

import numpy as np
import pytest

import oracles
from conftest import hand_tree, survival_data
from landmark_forest.tree import (
    SurvivalTree,
    alpha_sequence,
    grow,
    logrank_split_statistic,
    logrank_statistic,
    prune,
    prune_at,
)


class TestLogrank:
    def test_identical_children_give_zero(self):
        t = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
        e = np.array([1, 0, 1, 1, 0, 1], bool)
        assert logrank_statistic(t, e, np.arange(6) < 3) == pytest.approx(0.0, abs=1e-15)

    def test_fully_separated_six_subjects(self):
        # O - E = 3 - (1/2 + 2/5 + 1/4), V = 1/4 + 6/25 + 3/16
        t = np.arange(1.0, 7.0)
        got = logrank_statistic(t, np.ones(6, bool), np.arange(6) < 3)
        assert got == pytest.approx(1.85 / math.sqrt(0.6775), rel=1e-13)

    def test_single_event(self):
        t = np.array([1.0, 2.0, 3.0])
        got = logrank_statistic(t, np.array([1, 0, 0], bool), np.array([1, 0, 0], bool))
        assert got == pytest.approx(math.sqrt(2.0), rel=1e-13)

    def test_matches_loop_oracle_with_ties(self, rng):
        for _ in range(50):
            X, t, e = survival_data(rng, int(rng.integers(4, 30)), ties=True)
            left = rng.random(t.size) < 0.5
            assert logrank_statistic(t, e, left) == pytest.approx(oracles.logrank(t, e, left), rel=1e-10, abs=1e-12)

    def test_integer_weights_equal_replication(self, rng):
        X, t, e = survival_data(rng, 15, ties=True)
        w = rng.integers(0, 3, size=15)
        left = rng.random(15) < 0.5
        rep = np.repeat(np.arange(15), w)
        assert logrank_statistic(t, e, left, w.astype(float)) == pytest.approx(
            oracles.logrank(t[rep], e[rep], left[rep]), rel=1e-10, abs=1e-12)

    def test_split_statistic_feasibility(self):
        X = np.arange(6.0)[:, None]
        t = np.arange(1.0, 7.0)
        e = np.ones(6, bool)
        assert logrank_split_statistic(X, t, e, np.arange(6), 0, 2.5, min_node_size=3) == pytest.approx(
            1.85 / math.sqrt(0.6775))
        assert logrank_split_statistic(X, t, e, np.arange(6), 0, 0.5, min_node_size=2) is None


class TestGrow:
    def test_root_split_is_exhaustive_maximum(self, rng):
        for _ in range(30):
            X, t, e = survival_data(rng, int(rng.integers(12, 40)), p=3)
            tree = grow(X, t, e, min_node_size=3, mtry=3, seed=0)
            stat, f, c = oracles.best_split(X, t, e, 3)
            if f is None:
                assert tree.n_splits == 0
                continue
            assert tree.feature[0] == f
            assert tree.threshold[0] == pytest.approx(c)
            assert tree.statistic[0] == pytest.approx(stat, rel=1e-9)

    def test_binary_feature_separating_early_and_late(self, rng):
        n = 40
        noise = rng.normal(size=(n, 2))
        flag = (np.arange(n) % 2).astype(float)
        t = np.where(flag == 1, 10 + rng.random(n), rng.random(n))
        X = np.column_stack([noise[:, 0], flag, noise[:, 1]])
        tree = grow(X, t, np.ones(n, bool), min_node_size=5, mtry=3, seed=1)
        assert tree.feature[0] == 1 and tree.threshold[0] == 0.5

    def test_size_bound_gives_root(self, rng):
        X, t, e = survival_data(rng, 15)
        assert grow(X, t, e, min_node_size=15).n_splits == 0

    def test_deterministic_given_seed(self, rng):
        X, t, e = survival_data(rng, 120, p=6)
        a = grow(X, t, e, min_node_size=5, mtry=2, seed=7)
        b = grow(X, t, e, min_node_size=5, mtry=2, seed=7)
        assert a.structure_equal(b)

    def test_leaves_partition_and_respect_size(self, rng):
        X, t, e = survival_data(rng, 200, p=5)
        w = rng.multinomial(200, np.full(200, 1 / 200)).astype(float)
        tree = grow(X, t, e, w, min_node_size=8, mtry=2, seed=3)
        members = np.concatenate([tree.members(leaf) for leaf in tree.leaves])
        assert np.array_equal(np.sort(members), np.flatnonzero(w > 0))
        for leaf in tree.leaves:
            assert w[tree.members(leaf)].sum() >= 8
        np.testing.assert_array_equal(tree.apply(X), tree.train_node)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            grow(np.zeros((0, 2)), np.zeros(0), np.zeros(0, bool))

    def test_missing_and_ratio_rules_reachable(self, rng):
        # risk group = marker above 0.3 or unmeasured; the sentinel pair lets one cut find it
        n = 60
        w = rng.uniform(-1, 1, n)
        w[rng.random(n) < 0.3] = np.nan
        high = np.isnan(w) | (w > 0.3)
        t = np.where(high, rng.uniform(0, 1, n), rng.uniform(5, 6, n))
        M = 20.0
        X = np.column_stack([np.where(np.isnan(w), M, w), np.where(np.isnan(w), -M, w)])
        tree = grow(X, t, np.ones(n, bool), min_node_size=1, mtry=2, seed=0)
        left = X[:, tree.feature[0]] <= tree.threshold[0]
        assert np.array_equal(~left, high)


class TestNodeSurvival:
    def test_leaf_without_events_is_constant_one(self):
        tree = hand_tree(np.zeros((3, 1)), [1.0, 2.0, 3.0], [0, 0, 0], [-1], [np.nan], [-1], [-1])
        curves = tree.node_survival(np.zeros((1, 1)))
        assert np.all(curves.evaluate([0.5, 5.0]) == 1.0)

    def test_three_events(self):
        tree = hand_tree(np.zeros((3, 1)), [1.0, 2.0, 3.0], [1, 1, 1], [-1], [np.nan], [-1], [-1])
        s = tree.node_survival(np.zeros((1, 1))).evaluate([0.5, 1.0, 2.5, 3.0, 9.0])[0]
        np.testing.assert_allclose(s, [1, math.exp(-1 / 3), math.exp(-1 / 3 - 1 / 2), math.exp(-11 / 6),
                                       math.exp(-11 / 6)], rtol=1e-15)

    def test_censored_member(self):
        tree = hand_tree(np.zeros((2, 1)), [1.0, 2.0], [1, 0], [-1], [np.nan], [-1], [-1])
        c = tree.node_survival(np.zeros((1, 1)))
        assert c.evaluate([0.99, 1.0, 3.0])[0].tolist() == [1.0, math.exp(-0.5), math.exp(-0.5)]

    def test_root_equals_direct_nelson_aalen(self, rng):
        X, t, e = survival_data(rng, 25, ties=True)
        tree = grow(X, t, e, min_node_size=25)
        c = tree.node_survival(X[:1])
        for s in np.linspace(0, t.max() + 1, 17):
            assert c.evaluate([s])[0, 0] == pytest.approx(oracles.nelson_aalen_survival(t, e, s), rel=1e-13)

    def test_queries_in_one_leaf_share_a_curve(self, rng):
        X, t, e = survival_data(rng, 150)
        tree = grow(X, t, e, min_node_size=10, mtry=3, seed=2)
        Q = rng.normal(size=(60, 3))
        leaf = tree.apply(Q)
        curves = tree.node_survival(Q)
        for node in np.unique(leaf):
            rows = curves.values[leaf == node]
            assert np.all(rows == rows[0])
        assert np.all(np.diff(curves.values, axis=1) <= 0) and np.all(curves.values > 0)


class TestPruning:
    @pytest.fixture
    def tree_data(self, rng):
        X, t, e = survival_data(rng, 160, p=4, censor=0.2)
        return X, t, e, grow(X, t, e, min_node_size=10, mtry=4, seed=5)

    def test_zero_penalty_keeps_full_tree(self, tree_data):
        X, *_, tree = tree_data
        full = prune_at(tree, 0.0)  # renumbered in preorder, same tree
        assert full.n_splits == tree.n_splits
        np.testing.assert_array_equal(full.node_survival(X).values, tree.node_survival(X).values)
        a, b = full.apply(X), tree.apply(X)
        pairs = set(zip(a.tolist(), b.tolist()))
        assert len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))

    def test_infinite_penalty_gives_root(self, tree_data):
        *_, tree = tree_data
        assert prune_at(tree, np.inf).n_splits == 0

    def test_matches_subtree_enumeration(self, rng):
        for seed in range(8):
            X, t, e = survival_data(rng, 80, p=3, censor=0.2)
            tree = grow(X, t, e, min_node_size=10, mtry=3, seed=seed)
            if tree.n_splits > 9:
                continue
            choices = oracles.subtree_choices(tree)
            for alpha in (0.5, 2.0, 4.0, 9.0, 25.0):
                scores = [sum(tree.statistic[k] ** 2 for k in s) - alpha * len(s) for s in choices]
                best = max(scores)
                # ties favour the smaller tree
                size = min(len(s) for s, sc in zip(choices, scores) if sc >= best - 1e-9)
                assert prune_at(tree, alpha).n_splits == size

    def test_two_split_tree_drops_weak_split(self):
        X = np.array([[0.0, 0], [0, 1], [1, 0], [1, 1]])
        tree = hand_tree(X, [1.0, 2, 3, 4], [1, 1, 1, 1], [0, -1, 1, -1, -1], [0.5, np.nan, 0.5, np.nan, np.nan],
                         [1, -1, 3, -1, -1], [2, -1, 4, -1, -1])
        tree.statistic = np.array([3.0, 0.0, 1.0, 0.0, 0.0])
        pruned = prune_at(tree, 2.0)  # split gains 9 and 1 against penalty 2
        assert pruned.n_splits == 1 and pruned.feature[0] == 0
        np.testing.assert_array_equal(pruned.apply(X), pruned.train_node)

    def test_alpha_sequence_is_nested(self, tree_data):
        *_, tree = tree_data
        alphas = alpha_sequence(tree)
        assert alphas[0] == 0 and np.all(np.diff(alphas) > 0)
        sizes = [prune_at(tree, a).n_splits for a in alphas]
        assert sizes[-1] == 0 and all(a > b for a, b in zip(sizes, sizes[1:]))

    def test_cross_validated_prune_is_a_subtree(self, tree_data):
        X, t, e, tree = tree_data
        pruned = prune(tree, X, t, e, folds=5, seed=0)
        assert 0 <= pruned.n_splits <= tree.n_splits
        assert pruned.structure_equal(prune_at(tree, pruned.complexity))
        assert prune(tree, X, t, e, folds=5, seed=0).structure_equal(pruned)

    def test_fold_count_checked(self, tree_data):
        X, t, e, tree = tree_data
        with pytest.raises(ValueError, match="folds"):
            prune(tree, X, t, e, folds=1)


def test_serialization_round_trip(rng):
    X, t, e = survival_data(rng, 90)
    tree = grow(X, t, e, min_node_size=5, mtry=2, seed=4)
    back = SurvivalTree.from_dict(json.loads(json.dumps(tree.to_dict())))
    assert back.structure_equal(tree)
    np.testing.assert_array_equal(back.node_survival(X).values, tree.node_survival(X).values)
    with pytest.raises(ValueError, match="version"):
        SurvivalTree.from_dict({**tree.to_dict(), "version": 99})
