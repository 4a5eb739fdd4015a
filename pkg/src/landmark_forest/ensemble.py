"""Bootstrap ensembles of unpruned survival trees.

Two aggregation modes are offered. ``martingale`` pools the leaf members of
every tree into one weighted Nelson-Aalen estimator, each training subject
weighted by its bootstrap count times its co-membership with the query.
``hazard`` averages the per-tree leaf cumulative hazards.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .curves import SurvivalCurves, hazard_increments, risk_tables, weighted_nelson_aalen
from ._seeding import seed_sequence
from .tree import SurvivalTree, grow

MARTINGALE = "martingale"
HAZARD_AVERAGE = "hazard"
MODES = (MARTINGALE, HAZARD_AVERAGE)
ENSEMBLE_FORMAT_VERSION = 1


class AllZeroWeightWarning(RuntimeWarning):
    """A query shares no leaf with any positively weighted training subject."""


def default_mtry(p: int) -> int:
    return max(1, math.ceil(math.sqrt(p)))


@dataclass(eq=False)
class Ensemble:
    """Fitted forest over the at-risk training subjects.

    ``X``, ``time`` and ``event`` hold the at-risk sample (``time`` is the
    residual time). ``inbag[b, i]`` is the bootstrap count of at-risk subject
    ``i`` in tree ``b``. ``rows`` locates the at-risk subjects among the
    ``n_total`` subjects of the full training cohort.
    """

    trees: list[SurvivalTree]
    inbag: np.ndarray
    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    rows: np.ndarray
    n_total: int
    params: dict = field(default_factory=dict)
    _tables: list | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def grid(self) -> np.ndarray:
        """Distinct residual event times of the at-risk sample."""
        return np.unique(self.time[self.event])

    @property
    def boot_weights(self) -> np.ndarray:
        """``B x n_total`` bootstrap counts, zero for subjects not at risk."""
        w = np.zeros((self.n_trees, self.n_total), dtype=self.inbag.dtype)
        w[:, self.rows] = self.inbag
        return w

    def tables(self):
        """Per-tree ``(leaf_row, num, den, leaf_weight)`` on the common grid."""
        if self._tables is None:
            grid = self.grid
            out = []
            for tree in self.trees:
                leaf_row, num, den = tree.leaf_tables(grid)
                out.append((leaf_row, num, den, tree.node_weight[tree.leaves]))
            self._tables = out
        return self._tables

    def to_dict(self) -> dict:
        return {
            "version": ENSEMBLE_FORMAT_VERSION,
            "params": self.params,
            "inbag": self.inbag.tolist(),
            "X": self.X.tolist(),
            "time": self.time.tolist(),
            "event": self.event.astype(int).tolist(),
            "rows": self.rows.tolist(),
            "n_total": self.n_total,
            "trees": [
                {k: v for k, v in t.to_dict().items() if k != "leaf_members"} for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        if d.get("version") != ENSEMBLE_FORMAT_VERSION:
            raise ValueError(f"unsupported ensemble format version {d.get('version')!r}")
        inbag = np.array(d["inbag"], dtype=np.int64).reshape(len(d["trees"]), -1)
        time = np.array(d["time"], float)
        event = np.array(d["event"], bool)
        X = np.array(d["X"], float).reshape(time.size, -1)
        trees = []
        for b, td in enumerate(d["trees"]):
            td = dict(td, leaf_members={})
            trees.append(SurvivalTree.from_dict(td, time=time, event=event, weight=inbag[b].astype(float)))
        return cls(trees, inbag, X, time, event, np.array(d["rows"], dtype=int), int(d["n_total"]),
                   dict(d.get("params", {})))


def _grow_one(X, time, event, m, bootstrap, min_node_size, mtry, seed_seq):
    rng = np.random.default_rng(seed_seq)
    counts = rng.multinomial(m, np.full(m, 1.0 / m)) if bootstrap else np.ones(m, dtype=np.int64)
    tree = grow(X, time, event, counts.astype(float), min_node_size=min_node_size, mtry=mtry, seed=rng)
    return counts, tree


def fit(X, time, event, B: int = 500, min_node_size: int = 15, mtry: int | None = None, seed=None,
        bootstrap: bool = True, rows=None, n_total: int | None = None, n_jobs: int = 1) -> Ensemble:
    """Grow ``B`` trees on with-replacement bootstrap samples of the at-risk rows.

    Every tree gets its own seed spawned from ``seed``, so the fit does not
    depend on ``n_jobs``. ``mtry`` defaults to ``ceil(sqrt(p))``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    X = np.asarray(X, float)
    time = np.asarray(time, float)
    event = np.asarray(event, bool)
    m, p = X.shape
    if m == 0:
        raise ValueError("cannot fit an ensemble on an empty at-risk sample")
    mtry = default_mtry(p) if mtry is None else int(mtry)
    seqs = seed_sequence(seed).spawn(B)
    args = (X, time, event, m, bootstrap, min_node_size, mtry)
    if n_jobs == 1:
        results = [_grow_one(*args, s) for s in seqs]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_grow_one)(*args, s) for s in seqs)
    inbag = np.stack([r[0] for r in results]).astype(np.int64)
    rows = np.arange(m) if rows is None else np.asarray(rows, dtype=int)
    params = {"B": B, "min_node_size": min_node_size, "mtry": mtry, "seed": seed, "bootstrap": bootstrap}
    return Ensemble([r[1] for r in results], inbag, X, time, event, rows,
                    m if n_total is None else int(n_total), params)


def subject_weights(ens: Ensemble, Xq, oob_only: bool = False) -> np.ndarray:
    """Forest weights ``(1/B) sum_b w_bi I(i shares the query's leaf in tree b)``.

    Returns a ``(q, n_total)`` matrix; subjects not at risk get 0. With
    ``oob_only`` the query rows are the at-risk training subjects themselves
    and tree ``b`` contributes only when the subject is out of bag in it.
    """
    Xq = np.asarray(Xq, float)
    q = Xq.shape[0]
    W = np.zeros((q, ens.inbag.shape[1]))
    for b, tree in enumerate(ens.trees):
        same = tree.apply(Xq)[:, None] == tree.train_node[None, :]
        contrib = same * ens.inbag[b][None, :]
        if oob_only:
            contrib = contrib * (ens.inbag[b] == 0)[:, None]
        W += contrib
    W /= ens.n_trees
    out = np.zeros((q, ens.n_total))
    out[:, ens.rows] = W
    return out


def _accumulate(ens: Ensemble, Xq, mode: str, use=None, tree_ids=None):
    """Sum per-tree leaf tables for the query rows.

    ``use`` (B x q) masks trees per query; ``tree_ids`` restricts the sum to
    a subset of trees.
    """
    grid = ens.grid
    q = Xq.shape[0]
    acc_num = np.zeros((q, grid.size))
    acc_den = np.zeros((q, grid.size))
    acc_haz = np.zeros((q, grid.size))
    total = np.zeros(q)
    n_used = np.zeros(q, dtype=int)
    tables = ens.tables()
    for b in range(ens.n_trees) if tree_ids is None else tree_ids:
        tree, (leaf_row, num, den, leaf_w) = ens.trees[b], tables[b]
        rows = leaf_row[tree.apply(Xq)]
        idx = np.arange(q) if use is None else np.flatnonzero(use[b])
        r = rows[idx]
        total[idx] += leaf_w[r]
        n_used[idx] += 1
        if mode == MARTINGALE:
            acc_num[idx] += num[r]
            acc_den[idx] += den[r]
        else:
            acc_haz[idx] += np.cumsum(hazard_increments(num[r], den[r]), axis=1)
    return grid, acc_num, acc_den, acc_haz, total, n_used


def _finish(grid, acc_num, acc_den, acc_haz, total, n_used, mode) -> SurvivalCurves:
    if mode == MARTINGALE:
        return SurvivalCurves.from_increments(grid, hazard_increments(acc_num, acc_den))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_haz = np.where(n_used[:, None] > 0, acc_haz / np.maximum(n_used, 1)[:, None], 0.0)
    return SurvivalCurves(grid, np.exp(-mean_haz))


def predict_survival(ens: Ensemble, Xq, mode: str = MARTINGALE) -> SurvivalCurves:
    """Ensemble survival curves (residual-time scale) for the query rows."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    Xq = np.atleast_2d(np.asarray(Xq, float))
    if Xq.shape[0] == 0:
        return SurvivalCurves(ens.grid, np.ones((0, ens.grid.size)))
    parts = _accumulate(ens, Xq, mode)
    zero = parts[4] <= 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} queries have all-zero forest weights; returning S(t)=1",
                      AllZeroWeightWarning, stacklevel=2)
    return _finish(*parts, mode)


@dataclass(eq=False)
class OOBPrediction:
    """Out-of-bag curves for the at-risk training subjects.

    ``valid[i]`` is False for subjects in bag in every tree; their rows are
    the constant-1 curve and they are counted in ``n_excluded``.
    """

    curves: SurvivalCurves
    valid: np.ndarray
    n_trees_used: np.ndarray

    @property
    def n_excluded(self) -> int:
        return int(np.sum(~self.valid))


def oob_survival(ens: Ensemble, X=None, mode: str = MARTINGALE) -> OOBPrediction:
    """Curves for each at-risk training subject using only trees where it was out of bag.

    ``X`` replaces the training design (used for permuted copies in variable
    importance); row ``i`` still belongs to training subject ``i``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    X = ens.X if X is None else np.asarray(X, float)
    use = ens.inbag == 0
    grid, num, den, haz, total, n_used = _accumulate(ens, X, mode, use)
    valid = n_used > 0
    zero = valid & (total <= 0)
    if zero.any():
        warnings.warn(f"{int(zero.sum())} out-of-bag queries have all-zero weights; returning S(t)=1",
                      AllZeroWeightWarning, stacklevel=2)
    return OOBPrediction(_finish(grid, num, den, haz, total, n_used, mode), valid, n_used)


def predict_from_weights(ens: Ensemble, weights) -> SurvivalCurves:
    """Weighted Nelson-Aalen from explicit ``(q, n_total)`` forest weights."""
    weights = np.atleast_2d(np.asarray(weights, float))[:, ens.rows]
    grid = ens.grid
    num, den = risk_tables(ens.time, ens.event, weights, grid)
    return SurvivalCurves.from_increments(grid, hazard_increments(num, den))


__all__ = [
    "MARTINGALE", "HAZARD_AVERAGE", "AllZeroWeightWarning", "Ensemble", "OOBPrediction", "default_mtry",
    "fit", "subject_weights", "predict_survival", "oob_survival", "predict_from_weights",
    "weighted_nelson_aalen",
]
