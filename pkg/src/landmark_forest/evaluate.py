"""Landmark prediction accuracy.

Concordance at a horizon ``t`` compares a *case* (an observed event within
``t`` of its landmark) with a *control* (still event-free ``t`` after its
landmark); each pair is weighted by the inverse probability of remaining
uncensored. Truth-based metrics integrate absolute and squared errors
against the true landmark survival curve, and the Brier score against the
observed residual time.

Outcome arguments named ``data`` need the attributes ``y``, ``delta``,
``y_l``, ``delta_l`` and ``z`` (a :class:`~landmark_forest.preprocess.LandmarkDesign`
qualifies).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .curves import SurvivalCurves, weighted_nelson_aalen

KAPLAN_MEIER = "km"
FOREST = "forest"
EQUAL = "equal"
PROPORTIONAL = "denominator"
DEFAULT_FLOOR = 0.05


def kaplan_meier(time, event):
    """Kaplan-Meier jump times and survival values after each jump."""
    time = np.asarray(time, float)
    event = np.asarray(event, bool)
    grid = np.unique(time[event])
    if grid.size == 0:
        return grid, np.empty(0)
    at_risk = time.size - np.searchsorted(np.sort(time), grid, side="left")
    d = np.bincount(np.searchsorted(grid, time[event]), minlength=grid.size)
    return grid, np.cumprod(1.0 - d / at_risk)


def residual_quantile(residual, event, q: float = 0.9) -> float:
    """Smallest time at which the Kaplan-Meier curve drops to ``1 - q`` or below.

    Falls back to the largest residual when the curve never gets there.
    """
    grid, surv = kaplan_meier(residual, event)
    hit = np.flatnonzero(surv <= 1 - q + 1e-12)
    return float(grid[hit[0]]) if hit.size else float(np.max(residual))


@dataclass(eq=False)
class CensoringModel:
    """Censoring survival ``S_C(t | z)``.

    ``kind`` is ``km`` (marginal Kaplan-Meier on ``(Y, 1 - delta)``) or
    ``forest`` (martingale ensemble on the baseline covariates with censoring
    as the event).
    """

    kind: str
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    values: np.ndarray = field(default_factory=lambda: np.empty(0))
    forest: object = None
    subject_curves: SurvivalCurves | None = None

    def survival(self, t, z=None, left: bool = False) -> np.ndarray:
        """``S_C(t_i | z_i)`` for paired arrays ``t`` and rows of ``z``.

        ``left`` returns the left limit ``S_C(t_i-)``.
        """
        t = np.asarray(t, float)
        if self.kind == KAPLAN_MEIER:
            idx = np.searchsorted(self.times, t, side="left" if left else "right") - 1
            padded = np.concatenate([[1.0], self.values])
            return padded[idx + 1]
        from .ensemble import predict_survival

        curves = predict_survival(self.forest, np.asarray(z, float).reshape(t.size, -1))
        return curves.evaluate_each(t, left=left)

    def bind(self, z) -> "CensoringModel":
        """Copy with the forest curves of the subjects ``z`` computed once.

        The bound model answers :meth:`at` by row index into ``z``, so
        repeated concordance evaluations on the same subjects skip the
        forest. Kaplan-Meier models are returned unchanged.
        """
        if self.kind == KAPLAN_MEIER:
            return self
        from .ensemble import predict_survival

        z = np.asarray(z, float)
        curves = predict_survival(self.forest, z.reshape(z.shape[0], -1))
        return CensoringModel(self.kind, self.times, self.values, self.forest, curves)

    def at(self, rows, t, z, left: bool = False) -> np.ndarray:
        """``S_C`` of subjects ``rows`` (indices into ``z``) at paired times ``t``."""
        rows = np.asarray(rows, dtype=int)
        if self.subject_curves is not None:
            return self.subject_curves.subset(rows).evaluate_each(t, left=left)
        return self.survival(t, None if z is None else np.asarray(z)[rows], left=left)


def fit_censoring(data, kind: str = KAPLAN_MEIER, B: int = 200, min_node_size: int = 15, mtry=None,
                  seed=None, n_jobs: int = 1) -> CensoringModel:
    """Fit the censoring distribution on all subjects (time ``Y``, event ``1 - delta``)."""
    y = np.asarray(data.y, float)
    cens = ~np.asarray(data.delta, bool)
    if y.size == 0:
        raise ValueError("cannot fit a censoring model on no subjects")
    if kind == KAPLAN_MEIER:
        times, values = kaplan_meier(y, cens)
        return CensoringModel(KAPLAN_MEIER, times, values)
    if kind == FOREST:
        from .ensemble import fit

        z = np.asarray(data.z, float).reshape(y.size, -1)
        if z.shape[1] == 0:
            raise ValueError("the forest censoring model needs baseline covariates")
        ens = fit(z, y, cens, B=B, min_node_size=min_node_size, mtry=mtry, seed=seed, n_jobs=n_jobs)
        return CensoringModel(FOREST, forest=ens)
    raise ValueError(f"unknown censoring model kind {kind!r}")


@dataclass(frozen=True)
class PairConcordance:
    """Concordance at one horizon; ``con`` is None when no pair is comparable."""

    t: float
    con: float | None
    denominator: float
    n_pairs: int
    excluded_pairs: int


def concordance_detail(scores, data, cens: CensoringModel, t: float, tau0: float = np.inf,
                       floor: float = DEFAULT_FLOOR) -> PairConcordance:
    """Inverse-probability-weighted concordance of ``scores`` at horizon ``t``.

    Higher scores mean higher risk. Cases are subjects at risk at their
    landmark with an observed event within ``t`` of it; controls are still
    under observation ``t`` after their landmark. Both must have landmark
    times at most ``tau0``. A pair scores 1 when the case has the higher
    score and 1/2 on a tie. Pairs whose censoring survival falls below
    ``floor`` (or is zero) are dropped and counted.
    """
    if not t > 0:
        raise ValueError("horizon t must be positive")
    scores = np.asarray(scores, float)
    y = np.asarray(data.y, float)
    y_l = np.asarray(data.y_l, float)
    delta = np.asarray(data.delta, bool)
    base = np.asarray(data.delta_l, bool) & (y_l <= tau0)
    r = y - y_l
    case = base & delta & (r <= t) & (r >= 0)
    ctrl = base & (r > t)
    z = np.asarray(data.z, float).reshape(y.size, -1)
    sc_case = cens.at(np.flatnonzero(case), y[case], z, left=True)
    sc_ctrl = cens.at(np.flatnonzero(ctrl), y_l[ctrl] + t, z)
    ok_case = (sc_case > 0) & (sc_case >= floor)
    ok_ctrl = (sc_ctrl > 0) & (sc_ctrl >= floor)
    n_pairs_all = int(case.sum()) * int(ctrl.sum())
    n_pairs = int(ok_case.sum()) * int(ok_ctrl.sum())
    excluded = n_pairs_all - n_pairs
    if n_pairs == 0:
        return PairConcordance(float(t), None, 0.0, 0, excluded)
    g_case, w_case = scores[case][ok_case], 1.0 / sc_case[ok_case]
    g_ctrl, w_ctrl = scores[ctrl][ok_ctrl], 1.0 / sc_ctrl[ok_ctrl]
    order = np.argsort(g_ctrl, kind="stable")
    g_sorted = g_ctrl[order]
    cw = np.concatenate([[0.0], np.cumsum(w_ctrl[order])])
    below = cw[np.searchsorted(g_sorted, g_case, side="left")]
    at_or_below = cw[np.searchsorted(g_sorted, g_case, side="right")]
    num = float(np.sum(w_case * (below + 0.5 * (at_or_below - below))))
    den = float(w_case.sum() * w_ctrl.sum())
    return PairConcordance(float(t), num / den, den, n_pairs, excluded)


def concordance_t(scores, data, cens: CensoringModel, t: float, tau0: float = np.inf,
                  floor: float = DEFAULT_FLOOR) -> float | None:
    """Weighted concordance at ``t``; None marks "no comparable pairs"."""
    return concordance_detail(scores, data, cens, t, tau0, floor).con


@dataclass(eq=False)
class ConcordanceReport:
    times: np.ndarray
    con: np.ndarray  # NaN where not comparable
    denominators: np.ndarray
    n_pairs: np.ndarray
    integrated: float | None
    weighting: str
    tau0: float
    excluded_pairs: int

    @property
    def empty(self) -> bool:
        return self.integrated is None

    def rows(self):
        for t, c, n in zip(self.times, self.con, self.n_pairs):
            yield float(t), (None if np.isnan(c) else float(c)), int(n)

    def summary(self) -> dict:
        return {
            "integrated": self.integrated,
            "weighting": self.weighting,
            "tau0": None if np.isinf(self.tau0) else self.tau0,
            "excluded_pairs": self.excluded_pairs,
            "grid_size": int(self.times.size),
            "comparable_points": int(np.sum(~np.isnan(self.con))),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def combine_concordance(con, denominators, weighting: str = EQUAL) -> float | None:
    """Average comparable concordances equally or in proportion to their denominators."""
    con = np.asarray(con, float)
    den = np.asarray(denominators, float)
    ok = ~np.isnan(con)
    if not ok.any():
        return None
    if weighting == EQUAL:
        return float(np.mean(con[ok]))
    if weighting == PROPORTIONAL:
        return float(np.sum(con[ok] * den[ok]) / np.sum(den[ok]))
    raise ValueError(f"unknown weighting {weighting!r}")


def time_grid(t_lo: float, t_hi: float, grid_size: int) -> np.ndarray:
    """``t_j = t_lo + (t_hi - t_lo) j / grid_size`` for ``j = 1..grid_size``."""
    if not t_lo < t_hi:
        raise ValueError("interval must satisfy t_lo < t_hi")
    if grid_size < 1:
        raise ValueError("grid_size must be at least 1")
    return t_lo + (t_hi - t_lo) * np.arange(1, grid_size + 1) / grid_size


def integrated_concordance(curves, data, cens: CensoringModel, interval, grid_size: int = 50,
                           weighting: str = EQUAL, tau0: float = np.inf,
                           floor: float = DEFAULT_FLOOR) -> ConcordanceReport:
    """Concordance averaged over an equally spaced horizon grid.

    ``curves`` has one predicted curve per row of ``data``; the risk score at
    horizon ``t`` is ``1 - S(t)``.
    """
    if weighting not in (EQUAL, PROPORTIONAL):
        raise ValueError(f"unknown weighting {weighting!r}")
    times = time_grid(float(interval[0]), float(interval[1]), grid_size)
    risk = 1.0 - curves.evaluate(times)
    if cens.subject_curves is None:
        cens = cens.bind(data.z)
    details = [concordance_detail(risk[:, k], data, cens, t, tau0, floor) for k, t in enumerate(times)]
    con = np.array([np.nan if d.con is None else d.con for d in details])
    den = np.array([d.denominator for d in details])
    return ConcordanceReport(
        times=times,
        con=con,
        denominators=den,
        n_pairs=np.array([d.n_pairs for d in details]),
        integrated=combine_concordance(con, den, weighting),
        weighting=weighting,
        tau0=float(tau0),
        excluded_pairs=int(sum(d.excluded_pairs for d in details)),
    )


# ---------------------------------------------------------------------------
# truth-based metrics


@dataclass(frozen=True)
class TruthMetrics:
    imae: float
    imse: float
    ibs: float


def _nodes(pred, t0: float, grid_size: int) -> np.ndarray:
    nodes = np.linspace(0.0, t0, grid_size + 1)
    if isinstance(pred, SurvivalCurves):
        jumps = pred.times[(pred.times > 0) & (pred.times < t0)]
        nodes = np.union1d(nodes, jumps)
    return nodes


def _segment_values(curves, nodes):
    """Values at the left end (right limit) and right end (left limit) of each segment."""
    if isinstance(curves, SurvivalCurves):
        return curves.evaluate(nodes[:-1]), curves.evaluate(nodes[1:], left=True)
    v = curves.evaluate(nodes)
    return v[:, :-1], v[:, 1:]


def _sq_integral(a, b, h):
    """Exact integral of the square of a linear function going from a to b over length h."""
    return h * (a * a + a * b + b * b) / 3.0


def _abs_integral(a, b, h):
    """Exact integral of ``|f|`` for linear f from a to b over length h."""
    same = a * b >= 0
    s = np.abs(a) + np.abs(b)
    with np.errstate(invalid="ignore", divide="ignore"):
        cross = np.where(s > 0, (a * a + b * b) / (2 * np.where(s > 0, s, 1.0)), 0.0)
    return h * np.where(same, 0.5 * s, cross)


def truth_metrics(pred, truth, residual, t0: float, grid_size: int = 200,
                  normalize: bool = False) -> TruthMetrics:
    """Mean integrated absolute and squared error against the true curves, and
    the integrated Brier score against the observed residual times, on ``[0, t0]``.

    ``pred`` and ``truth`` are curve batches (step :class:`SurvivalCurves` or
    piecewise-linear :class:`GridCurves`) with one row per test subject. The
    integration nodes are a ``grid_size`` mesh plus every predicted jump, so
    each segment carries a linear integrand and is integrated exactly.
    ``normalize`` divides every integral by ``t0`` (time-averaged errors).
    """
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    residual = np.asarray(residual, float)
    nodes = _nodes(pred, t0, grid_size)
    h = np.diff(nodes)
    p_lo, p_hi = _segment_values(pred, nodes)
    s_lo, s_hi = _segment_values(truth, nodes)
    imae = _abs_integral(p_lo - s_lo, p_hi - s_hi, h).sum(axis=1)
    imse = _sq_integral(p_lo - s_lo, p_hi - s_hi, h).sum(axis=1)

    # Brier: (S-1)^2 while still event-free, S^2 afterwards
    cut = np.minimum(np.maximum(residual, 0.0), t0)
    before_full = np.cumsum(_sq_integral(p_lo - 1, p_hi - 1, h), axis=1)
    after_full = np.cumsum(_sq_integral(p_lo, p_hi, h), axis=1)
    k = np.clip(np.searchsorted(nodes, cut, side="right") - 1, 0, h.size - 1)
    rows = np.arange(residual.size)
    frac = (cut - nodes[k]) / h[k]
    a_lo, a_hi = p_lo[rows, k], p_hi[rows, k]
    v_cut = a_lo + (a_hi - a_lo) * frac
    part = cut - nodes[k]
    prev_before = np.where(k > 0, before_full[rows, k - 1], 0.0)
    prev_after = np.where(k > 0, after_full[rows, k - 1], 0.0)
    before = prev_before + _sq_integral(a_lo - 1, v_cut - 1, part)
    after_to_cut = prev_after + _sq_integral(a_lo, v_cut, part)
    ibs = before + after_full[:, -1] - after_to_cut
    scale = 1.0 / t0 if normalize else 1.0
    return TruthMetrics(float(imae.mean() * scale), float(imse.mean() * scale), float(ibs.mean() * scale))


__all__ = [
    "KAPLAN_MEIER", "FOREST", "EQUAL", "PROPORTIONAL", "CensoringModel", "ConcordanceReport",
    "PairConcordance", "TruthMetrics", "combine_concordance", "concordance_detail", "concordance_t",
    "fit_censoring", "integrated_concordance", "kaplan_meier", "residual_quantile", "time_grid",
    "truth_metrics", "weighted_nelson_aalen",
]
