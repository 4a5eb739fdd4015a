"""Out-of-bag permutation importance with landmark-aware shuffling.

A variable is shuffled only among subjects for whom its value is
comparable at the landmark:

* landmark time and baseline covariates: every subject at risk;
* intermediate events: their ratio to the landmark time, among subjects at
  risk, so a permuted event time never falls after the landmark;
* marker values at an occasion: subjects at risk whose occasion had
  already been reached by their landmark.

Importance is the drop in out-of-bag integrated concordance.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ._seeding import seed_sequence
from .ensemble import MARTINGALE, Ensemble, _accumulate, _finish
from .evaluate import EQUAL, DEFAULT_FLOOR, CensoringModel, fit_censoring, integrated_concordance, residual_quantile
from .preprocess import LandmarkDesign, Variable

SCHEMES = {
    "landmark": "risk-set",
    "baseline": "risk-set",
    "event": "ratio",
    "marker": "measured-by-landmark",
}
NOT_ESTIMABLE = "not-estimable"


def implied_event_time(ratio, landmark_time, big_m: float) -> np.ndarray:
    """Event time encoded by a ratio feature; NaN for the "not yet" sentinel."""
    ratio = np.asarray(ratio, float)
    return np.where(ratio >= big_m, np.nan, ratio * np.asarray(landmark_time, float))


@dataclass(eq=False)
class VimpEntry:
    """Importance of one variable or group.

    ``drops[k]`` is baseline minus permuted OOB concordance for permutation k.
    """

    name: str
    drops: np.ndarray
    scheme: str
    n_eligible: int
    estimable: bool = True

    @property
    def mean(self) -> float:
        return float(np.mean(self.drops)) if self.estimable and self.drops.size else float("nan")

    @property
    def sd(self) -> float:
        return float(np.std(self.drops, ddof=1)) if self.estimable and self.drops.size > 1 else float("nan")

    @property
    def se(self) -> float:
        return self.sd / np.sqrt(self.drops.size)


@dataclass(eq=False)
class VimpReport:
    baseline: float
    entries: list[VimpEntry] = field(default_factory=list)
    interval: tuple[float, float] = (0.0, 0.0)

    def sorted(self) -> list[VimpEntry]:
        """Descending mean drop; ties and not-estimable entries by name."""
        est = [e for e in self.entries if e.estimable]
        rest = [e for e in self.entries if not e.estimable]
        return sorted(est, key=lambda e: (-e.mean, e.name)) + sorted(rest, key=lambda e: e.name)

    def rows(self):
        for e in self.sorted():
            yield {
                "variable": e.name,
                "mean_drop": e.mean if e.estimable else None,
                "sd_drop": e.sd if e.estimable else None,
                "n_eligible": e.n_eligible,
                "scheme": e.scheme if e.estimable else NOT_ESTIMABLE,
            }


@dataclass(eq=False)
class _OOBContext:
    ens: Ensemble
    design: LandmarkDesign
    columns: np.ndarray
    X_full: np.ndarray  # at-risk rows, every design column
    valid: np.ndarray
    data: LandmarkDesign
    cens: CensoringModel
    interval: tuple[float, float]
    grid_size: int
    weighting: str
    tau0: float
    floor: float
    mode: str
    base_parts: tuple
    tree_features: list

    def score(self, parts) -> float | None:
        curves = _finish(*parts, self.mode).subset(self.valid)
        rep = integrated_concordance(curves, self.data, self.cens, self.interval, self.grid_size,
                                     self.weighting, self.tau0, self.floor)
        return rep.integrated

    def permuted_parts(self, X_perm_full, changed_cols):
        """OOB accumulators with only the trees splitting on changed columns recomputed."""
        sel = np.flatnonzero(np.isin(self.columns, changed_cols))
        trees = [b for b, used in enumerate(self.tree_features) if np.isin(sel, used).any()]
        if not trees:
            return self.base_parts
        use = self.ens.inbag == 0
        X_old = self.X_full[:, self.columns]
        X_new = X_perm_full[:, self.columns]
        _, n0, d0, h0, t0, _ = _accumulate(self.ens, X_old, self.mode, use, trees)
        _, n1, d1, h1, t1, _ = _accumulate(self.ens, X_new, self.mode, use, trees)
        g, num, den, haz, tot, n_used = self.base_parts
        return g, num - n0 + n1, den - d0 + d1, haz - h0 + h1, tot - t0 + t1, n_used


def oob_context(ens: Ensemble, design: LandmarkDesign, columns, cens: CensoringModel | None = None,
                interval=None, grid_size: int = 50, weighting: str = EQUAL, tau0: float = np.inf,
                floor: float = DEFAULT_FLOOR, mode: str = MARTINGALE) -> _OOBContext:
    """Shared state for scoring permutations against one fitted ensemble."""
    columns = np.asarray(columns, dtype=int)
    at_risk = design.at_risk
    X_full = design.X[at_risk]
    use = ens.inbag == 0
    base_parts = _accumulate(ens, X_full[:, columns], mode, use)
    valid = base_parts[5] > 0
    data = design.subset(at_risk[valid])
    if cens is None:
        cens = fit_censoring(design)
    cens = cens.bind(data.z)
    if interval is None:
        res = design.residual[at_risk]
        interval = (0.0, residual_quantile(res, design.delta[at_risk], 0.9))
    tree_features = [np.unique(t.feature[t.feature >= 0]) for t in ens.trees]
    return _OOBContext(ens, design, columns, X_full, valid, data, cens, (float(interval[0]), float(interval[1])),
                       grid_size, weighting, tau0, floor, mode, base_parts, tree_features)


def permute_rows(X, columns, rows, order) -> np.ndarray:
    """Copy of ``X`` with ``X[rows, columns]`` replaced by ``X[rows[order], columns]``."""
    X = np.array(X, copy=True)
    cols = np.asarray(columns, dtype=int)
    rows = np.asarray(rows, dtype=int)
    X[np.ix_(rows, cols)] = X[np.ix_(rows[np.asarray(order)], cols)]
    return X


def _eligible_rows(ctx: _OOBContext, var: Variable) -> np.ndarray:
    """Eligible subjects as row indices into the at-risk sample."""
    return np.flatnonzero(ctx.design.eligible(var)[ctx.design.at_risk])


def _group_importance(ctx: _OOBContext, variables: Sequence[Variable], n_perm: int, seed,
                      name: str, baseline: float | None, n_jobs: int = 1) -> VimpEntry:
    # one shared permutation per distinct eligible set
    blocks: list[tuple[np.ndarray, list[int]]] = []
    for var in variables:
        rows = _eligible_rows(ctx, var)
        for r, cols in blocks:
            if np.array_equal(r, rows):
                cols.extend(var.columns)
                break
        else:
            blocks.append((rows, list(var.columns)))
    scheme = "+".join(sorted({SCHEMES[v.kind] for v in variables}))
    n_elig = min(r.size for r, _ in blocks)
    if n_elig < 2 or baseline is None:
        return VimpEntry(name, np.empty(0), scheme, int(n_elig), estimable=False)
    changed = np.concatenate([np.asarray(c) for _, c in blocks])
    seqs = seed_sequence(seed).spawn(n_perm)

    def one(ss):
        rng = np.random.default_rng(ss)
        X = ctx.X_full
        for rows, cols in blocks:
            X = permute_rows(X, cols, rows, rng.permutation(rows.size))
        score = ctx.score(ctx.permuted_parts(X, changed))
        return np.nan if score is None else baseline - score

    if n_jobs == 1:
        drops = [one(s) for s in seqs]
    else:
        from joblib import Parallel, delayed

        drops = Parallel(n_jobs=n_jobs)(delayed(one)(s) for s in seqs)
    return VimpEntry(name, np.array(drops, float), scheme, int(n_elig))


def baseline_concordance(ctx: _OOBContext) -> float | None:
    return ctx.score(ctx.base_parts)


def permutation_importance(ctx: _OOBContext, variable: str, n_perm: int = 100, seed=None,
                           n_jobs: int = 1) -> VimpEntry:
    """Mean drop in OOB integrated concordance after shuffling one variable."""
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    var = ctx.design.variable(variable)
    return _group_importance(ctx, [var], n_perm, seed, variable, baseline_concordance(ctx), n_jobs)


def grouped_importance(ctx: _OOBContext, group: Sequence[str], n_perm: int = 100, seed=None,
                       name: str | None = None, n_jobs: int = 1) -> VimpEntry:
    """Importance of shuffling several variables together.

    Members sharing an eligible subject set share one permutation; members
    with different eligible sets are shuffled within their own sets.
    """
    if not group:
        raise ValueError("group must name at least one variable")
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    variables = [ctx.design.variable(g) for g in group]
    return _group_importance(ctx, variables, n_perm, seed, name or "+".join(group),
                             baseline_concordance(ctx), n_jobs)


def marker_groups(design: LandmarkDesign) -> dict[str, list[str]]:
    """All occasions of each marker, keyed by marker name."""
    groups: dict[str, list[str]] = {}
    for v in design.variables:
        if v.kind == "marker":
            groups.setdefault(v.name.rsplit("_", 1)[0], []).append(v.name)
    return groups


def importance_report(ctx: _OOBContext, variables: Sequence[str] | None = None, n_perm: int = 100,
                      seed=None, groups: dict[str, Sequence[str]] | None = None, n_jobs: int = 1) -> VimpReport:
    """Importance of every requested variable (default: all) and group.

    Each entry draws its permutations from its own child of ``seed``.
    """
    names = [v.name for v in ctx.design.variables] if variables is None else list(variables)
    groups = dict(groups or {})
    base = baseline_concordance(ctx)
    seqs = seed_sequence(seed).spawn(len(names) + len(groups))
    entries = []
    for name, ss in zip(names, seqs):
        var = ctx.design.variable(name)
        entries.append(_group_importance(ctx, [var], n_perm, ss, name, base, n_jobs))
    for (gname, members), ss in zip(groups.items(), seqs[len(names):]):
        vars_ = [ctx.design.variable(m) for m in members]
        entries.append(_group_importance(ctx, vars_, n_perm, ss, gname, base, n_jobs))
    return VimpReport(float("nan") if base is None else base, entries, ctx.interval)
