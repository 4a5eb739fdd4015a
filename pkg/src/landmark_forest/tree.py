"""Risk-set survival trees grown with the log-rank splitting rule.

A tree is grown on the subjects at risk at the landmark, using the residual
time ``Y - Y_L`` and the event indicator as the outcome. Each internal node
sends ``x[feature] <= threshold`` to the left child. Subjects carry integer
frequency weights so a bootstrap sample needs no row duplication.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .curves import SurvivalCurves, hazard_increments, risk_tables

TREE_FORMAT_VERSION = 1


def logrank_statistic(time, event, left, weight=None) -> float:
    """Standardized two-sample log-rank statistic ``|U| / sqrt(V)``.

    ``left`` marks membership of the first group. Ties between events and
    censorings are resolved with events first; the variance is the
    hypergeometric form with the ties correction. Returns 0 when ``V = 0``.
    """
    time = np.asarray(time, float)
    event = np.asarray(event, bool)
    left = np.asarray(left, bool)
    weight = np.ones_like(time) if weight is None else np.asarray(weight, float)
    grid = np.unique(time[event & (weight > 0)])
    if grid.size == 0:
        return 0.0
    num, den = risk_tables(time, event, np.stack([weight, weight * left]), grid)
    d, n = num[0], den[0]
    d_l, n_l = num[1], den[1]
    u = np.sum(d_l - n_l * d / n)
    with np.errstate(invalid="ignore", divide="ignore"):
        v_terms = np.where(n > 1, n_l / n * (1 - n_l / n) * (n - d) / (n - 1) * d, 0.0)
    v = float(np.sum(v_terms))
    return abs(float(u)) / math.sqrt(v) if v > 0 else 0.0


def logrank_split_statistic(X, time, event, members, feature: int, cutoff: float,
                            weight=None, min_node_size: int = 1) -> float | None:
    """Log-rank statistic of splitting ``members`` at ``X[:, feature] <= cutoff``.

    Returns None when a child would hold less than ``min_node_size`` weight.
    """
    members = np.asarray(members)
    w = np.ones(len(members)) if weight is None else np.asarray(weight, float)[members]
    left = np.asarray(X, float)[members, feature] <= cutoff
    if w[left].sum() < min_node_size or w[~left].sum() < min_node_size:
        return None
    return logrank_statistic(np.asarray(time)[members], np.asarray(event)[members], left, w)


def _split_search(x_node, t, e, w, features, min_node_size):
    """Best (feature, threshold, statistic) among ``features`` for one node."""
    grid = np.unique(t[e])
    if grid.size == 0:
        return None
    m, d_n = t.size, grid.size
    pos = np.searchsorted(grid, t, side="right")
    at_risk = (np.arange(d_n)[None, :] < pos[:, None]) * w[:, None]
    n_d = at_risk.sum(axis=0)
    d_d = np.zeros(d_n)
    np.add.at(d_d, pos[e] - 1, w[e])
    rate = d_d / n_d
    with np.errstate(invalid="ignore", divide="ignore"):
        var_coef = np.where(n_d > 1, d_d * (n_d - d_d) / ((n_d - 1) * n_d * n_d), 0.0)
    expected = at_risk @ rate
    observed = w * e
    total = w.sum()

    best = None
    for f in features:
        x = x_node[:, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cw = np.cumsum(w[order])[:-1]
        ok = (xs[:-1] < xs[1:]) & (cw >= min_node_size) & (total - cw >= min_node_size)
        if not ok.any():
            continue
        cut = np.flatnonzero(ok)
        u = (np.cumsum(observed[order]) - np.cumsum(expected[order]))[cut]
        left = np.cumsum(at_risk[order], axis=0)[cut]
        v = (left * (n_d - left)) @ var_coef
        with np.errstate(invalid="ignore", divide="ignore"):
            stat = np.where(v > 0, np.abs(u) / np.sqrt(np.where(v > 0, v, 1.0)), 0.0)
        k = int(np.argmax(stat))
        if best is None or stat[k] > best[2]:
            c = cut[k]
            best = (int(f), 0.5 * (xs[c] + xs[c + 1]), float(stat[k]))
    return best


@dataclass(eq=False)
class SurvivalTree:
    """Binary partition with leaf membership of the training rows.

    Node arrays are indexed by node id (root is 0); ``feature == -1`` marks a
    leaf. ``statistic`` holds the log-rank statistic of each split.
    ``train_node`` gives the leaf reached by every training row; rows with
    zero ``weight`` (out of bag) are routed but do not count as members.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    statistic: np.ndarray
    node_weight: np.ndarray
    time: np.ndarray
    event: np.ndarray
    weight: np.ndarray
    train_node: np.ndarray
    min_node_size: int = 15
    mtry: int | None = None
    complexity: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    @property
    def n_splits(self) -> int:
        return int(np.sum(~self.is_leaf))

    def apply(self, X) -> np.ndarray:
        """Leaf node id reached by each row of ``X``."""
        X = np.asarray(X, float)
        node = np.zeros(X.shape[0], dtype=int)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def members(self, leaf: int) -> np.ndarray:
        """Training rows with positive weight in ``leaf``."""
        return np.flatnonzero((self.train_node == leaf) & (self.weight > 0))

    def event_grid(self) -> np.ndarray:
        return np.unique(self.time[self.event & (self.weight > 0)])

    def leaf_tables(self, grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-leaf weighted event counts and at-risk sums on ``grid``.

        Returns ``(leaf_row, num, den)``; ``leaf_row[node]`` is the table row of
        a leaf node (-1 for internal nodes).
        """
        leaves = self.leaves
        leaf_row = np.full(self.n_nodes, -1)
        leaf_row[leaves] = np.arange(leaves.size)
        W = np.zeros((leaves.size, self.time.size))
        inbag = self.weight > 0
        W[leaf_row[self.train_node[inbag]], np.flatnonzero(inbag)] = self.weight[inbag]
        num, den = risk_tables(self.time, self.event, W, grid)
        return leaf_row, num, den

    def node_survival(self, X, grid=None) -> SurvivalCurves:
        """Leaf Nelson-Aalen survival curves for the query rows of ``X``."""
        grid = self.event_grid() if grid is None else grid
        leaf_row, num, den = self.leaf_tables(grid)
        rows = leaf_row[self.apply(X)]
        return SurvivalCurves.from_increments(grid, hazard_increments(num[rows], den[rows]))

    def to_dict(self) -> dict:
        return {
            "version": TREE_FORMAT_VERSION,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "statistic": self.statistic.tolist(),
            "node_weight": self.node_weight.tolist(),
            "min_node_size": self.min_node_size,
            "mtry": self.mtry,
            "complexity": self.complexity,
            "leaf_members": {
                str(leaf): {
                    "rows": self.members(leaf).tolist(),
                    "time": self.time[self.members(leaf)].tolist(),
                    "event": self.event[self.members(leaf)].astype(int).tolist(),
                    "weight": self.weight[self.members(leaf)].tolist(),
                }
                for leaf in self.leaves
            },
            "train_node": self.train_node.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, time=None, event=None, weight=None) -> "SurvivalTree":
        """Rebuild a tree; training outcomes come from the leaf member lists
        unless supplied (as the ensemble bundle does)."""
        if d.get("version") != TREE_FORMAT_VERSION:
            raise ValueError(f"unsupported tree format version {d.get('version')!r}")
        train_node = np.array(d["train_node"], dtype=int)
        if time is None:
            n = train_node.size
            time, event, weight = np.zeros(n), np.zeros(n, bool), np.zeros(n)
            for leaf in d["leaf_members"].values():
                rows = np.array(leaf["rows"], dtype=int)
                time[rows] = leaf["time"]
                event[rows] = np.array(leaf["event"], bool)
                weight[rows] = leaf["weight"]
        return cls(
            feature=np.array(d["feature"], dtype=int),
            threshold=np.array(d["threshold"], dtype=float),
            left=np.array(d["left"], dtype=int),
            right=np.array(d["right"], dtype=int),
            statistic=np.array(d["statistic"], dtype=float),
            node_weight=np.array(d["node_weight"], dtype=float),
            time=np.asarray(time, float),
            event=np.asarray(event, bool),
            weight=np.asarray(weight, float),
            train_node=train_node,
            min_node_size=int(d["min_node_size"]),
            mtry=d.get("mtry"),
            complexity=float(d.get("complexity", 0.0)),
        )

    def structure_equal(self, other: "SurvivalTree") -> bool:
        return (np.array_equal(self.feature, other.feature) and np.array_equal(self.threshold, other.threshold, equal_nan=True)
                and np.array_equal(self.left, other.left) and np.array_equal(self.right, other.right))


def grow(X, time, event, weight=None, min_node_size: int = 15, mtry: int | None = None,
         seed=None) -> SurvivalTree:
    """Grow an unpruned tree by recursive log-rank splitting.

    At each node ``mtry`` candidate features are drawn without replacement
    (all features when ``mtry`` is None or >= p); cutoffs are midpoints of
    consecutive distinct values. Ties in the statistic go to the lowest
    feature index, then the smallest cutoff. A node is split only if both
    children keep ``min_node_size`` weight and the statistic is positive.
    """
    X = np.asarray(X, float)
    time = np.asarray(time, float)
    event = np.asarray(event, bool)
    n, p = X.shape
    weight = np.ones(n) if weight is None else np.asarray(weight, float)
    if n == 0 or weight.sum() <= 0:
        raise ValueError("cannot grow a tree on an empty at-risk sample")
    if min_node_size < 1:
        raise ValueError("min_node_size must be positive")
    rng = np.random.default_rng(seed)
    use_all = mtry is None or mtry >= p
    inbag = np.flatnonzero(weight > 0)

    feature, threshold, left, right, stat, node_w = [-1], [np.nan], [-1], [-1], [0.0], [float(weight.sum())]
    rows_of = {0: inbag}
    stack = [0]
    while stack:
        node = stack.pop()
        rows = rows_of.pop(node)
        w = weight[rows]
        if w.sum() < 2 * min_node_size:
            continue
        feats = np.arange(p) if use_all else np.sort(rng.choice(p, size=mtry, replace=False))
        best = _split_search(X[rows], time[rows], event[rows], w, feats, min_node_size)
        if best is None or not best[2] > 0:
            continue
        f, c, s = best
        go_left = X[rows, f] <= c
        lid, rid = len(feature), len(feature) + 1
        feature[node], threshold[node], left[node], right[node], stat[node] = f, c, lid, rid, s
        for child_rows in (rows[go_left], rows[~go_left]):
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            stat.append(0.0)
            node_w.append(float(weight[child_rows].sum()))
        rows_of[lid], rows_of[rid] = rows[go_left], rows[~go_left]
        stack.extend([rid, lid])

    tree = SurvivalTree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        statistic=np.array(stat, dtype=float),
        node_weight=np.array(node_w, dtype=float),
        time=time,
        event=event,
        weight=weight,
        train_node=np.zeros(n, dtype=int),
        min_node_size=min_node_size,
        mtry=None if use_all else int(mtry),
    )
    tree.train_node = tree.apply(X)
    return tree


# ---------------------------------------------------------------------------
# split-complexity pruning


def _split_gain(tree: SurvivalTree) -> np.ndarray:
    return np.where(tree.is_leaf, 0.0, tree.statistic ** 2)


def _optimal_keep(tree: SurvivalTree, alpha: float, gain=None) -> np.ndarray:
    """Internal nodes kept by the subtree maximizing ``sum G(h) - alpha * #splits``.

    Ties favour the smaller subtree.
    """
    gain = _split_gain(tree) if gain is None else gain
    best = np.zeros(tree.n_nodes)
    split_here = np.zeros(tree.n_nodes, bool)
    for node in range(tree.n_nodes - 1, -1, -1):  # children have larger ids
        if tree.is_leaf[node]:
            continue
        value = gain[node] - alpha + best[tree.left[node]] + best[tree.right[node]]
        if value > 0:
            best[node] = value
            split_here[node] = True
    keep = np.zeros(tree.n_nodes, bool)
    stack = [0]
    while stack:
        node = stack.pop()
        if split_here[node]:
            keep[node] = True
            stack.extend([tree.left[node], tree.right[node]])
    return keep


def _collapse(tree: SurvivalTree, keep: np.ndarray, complexity: float) -> SurvivalTree:
    """Subtree holding the internal nodes in ``keep``; others become leaves."""
    new_id = {}
    order = []
    stack = [0]
    while stack:
        node = stack.pop()
        new_id[node] = len(order)
        order.append(node)
        if keep[node]:
            stack.extend([tree.right[node], tree.left[node]])
    ids = np.full(tree.n_nodes, -1)
    for old, new in new_id.items():
        ids[old] = new
    feature = np.array([tree.feature[o] if keep[o] else -1 for o in order], dtype=int)
    threshold = np.array([tree.threshold[o] if keep[o] else np.nan for o in order])
    left = np.array([ids[tree.left[o]] if keep[o] else -1 for o in order], dtype=int)
    right = np.array([ids[tree.right[o]] if keep[o] else -1 for o in order], dtype=int)
    stat = np.array([tree.statistic[o] if keep[o] else 0.0 for o in order])
    node_w = tree.node_weight[order]
    # old nodes map to their deepest ancestor-or-self that survives
    parent = np.full(tree.n_nodes, -1)
    internal = np.flatnonzero(~tree.is_leaf)
    parent[tree.left[internal]] = internal
    parent[tree.right[internal]] = internal
    target = ids.copy()
    for node in range(tree.n_nodes):  # parents precede children
        if target[node] < 0:
            target[node] = target[parent[node]]
    return SurvivalTree(feature, threshold, left, right, stat, node_w, tree.time, tree.event, tree.weight,
                        target[tree.train_node], tree.min_node_size, tree.mtry, complexity)


def prune_at(tree: SurvivalTree, alpha: float) -> SurvivalTree:
    """Subtree maximizing the split-complexity ``G(T) - alpha * |splits|``,
    with ``G`` the sum of squared split statistics."""
    if alpha < 0:
        raise ValueError("complexity penalty must be nonnegative")
    return _collapse(tree, _optimal_keep(tree, alpha), alpha)


def alpha_sequence(tree: SurvivalTree) -> np.ndarray:
    """Critical penalties of the weakest-link nested subtree sequence (starts at 0)."""
    gain = _split_gain(tree)
    keep = ~tree.is_leaf
    alphas = [0.0]
    while keep[0]:
        g_branch = np.zeros(tree.n_nodes)
        s_branch = np.zeros(tree.n_nodes)
        for node in range(tree.n_nodes - 1, -1, -1):
            if keep[node]:
                g_branch[node] = gain[node] + g_branch[tree.left[node]] + g_branch[tree.right[node]]
                s_branch[node] = 1 + s_branch[tree.left[node]] + s_branch[tree.right[node]]
        nodes = np.flatnonzero(keep)
        ratio = g_branch[nodes] / s_branch[nodes]
        a = float(ratio.min())
        alphas.append(max(a, alphas[-1]))
        for node in nodes[ratio <= a * (1 + 1e-12)]:
            stack = [node]
            while stack:
                nd = stack.pop()
                if keep[nd]:
                    keep[nd] = False
                    stack.extend([tree.left[nd], tree.right[nd]])
    return np.array(alphas)


def _validation_gain(tree: SurvivalTree, keep, X, time, event) -> float:
    """Sum of squared log-rank statistics of the kept splits on held-out rows."""
    total = 0.0
    stack = [(0, np.arange(len(time)))]
    while stack:
        node, rows = stack.pop()
        if not keep[node] or rows.size == 0:
            continue
        go_left = X[rows, tree.feature[node]] <= tree.threshold[node]
        if go_left.any() and (~go_left).any():
            total += logrank_statistic(time[rows], event[rows], go_left) ** 2
        stack.append((tree.left[node], rows[go_left]))
        stack.append((tree.right[node], rows[~go_left]))
    return total


def prune(tree: SurvivalTree, X, time, event, folds: int = 10, seed=None, alpha_c: float = 4.0) -> SurvivalTree:
    """Choose the subtree size by cross-validated split-complexity.

    Trees are regrown on each training fold with the original settings. For
    every candidate penalty (geometric midpoints of the full-data critical
    penalties, plus infinity) the fold subtrees are scored on their held-out
    folds and the statistics averaged over folds, so each held-out statistic
    is compared against ``alpha_c`` on its own scale. The candidate
    maximizing ``G_cv - alpha_c * |splits|`` wins, where ``|splits|`` counts
    the splits of the matching full-data subtree; ties go to the smaller
    subtree.
    """
    if folds < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    X = np.asarray(X, float)
    time = np.asarray(time, float)
    event = np.asarray(event, bool)
    alphas = alpha_sequence(tree)
    if alphas.size == 1:
        return prune_at(tree, 0.0)
    # representative penalty of each interval [alpha_k, alpha_k+1); the last is open
    mids = np.append(np.sqrt(alphas[:-1] * alphas[1:]), np.inf)
    rng = np.random.default_rng(seed)
    fold_of = rng.permutation(len(time)) % folds
    gain = np.zeros(mids.size)
    used = 0
    for v in range(folds):
        train = fold_of != v
        test = ~train
        if train.sum() < 2 * tree.min_node_size:
            continue
        fold_tree = grow(X[train], time[train], event[train], min_node_size=tree.min_node_size,
                         mtry=tree.mtry, seed=rng.integers(2**63))
        used += 1
        for k, a in enumerate(mids):
            keep = _optimal_keep(fold_tree, a)
            gain[k] += _validation_gain(fold_tree, keep, X[test], time[test], event[test])
    gain /= max(used, 1)
    sizes = np.array([_optimal_keep(tree, a).sum() for a in alphas])
    scores = gain - alpha_c * sizes
    k_best = int(np.flatnonzero(scores >= scores.max() - 1e-12 * max(1.0, abs(scores.max())))[-1])
    return prune_at(tree, float(alphas[k_best]))
