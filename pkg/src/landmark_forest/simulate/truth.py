"""True landmark survival curves for simulated test subjects.

For the piecewise-hazard models the conditional survival is
``exp{-(L(T_L + t) - L(T_L))}`` with ``L`` the cumulative hazard, available
in closed form because the marker history identifies every hazard
parameter. For the illness-death models the quantities unknown at the
landmark (the frailty, and whatever the markers have not yet revealed) are
integrated out by Monte Carlo with draws weighted by their likelihood given
the landmark information. The residual-time noise is integrated exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .._seeding import seed_sequence
from ..curves import GridCurves
from .models import (
    N_ACTIVE,
    SimConfig,
    SimData,
    disease_probability,
    frailty_shape_scale,
    piecewise_cumhaz,
    piecewise_exponents,
    residual_exponent,
    residual_location,
    residual_scale,
)

NUMERICAL = "numerical"
MONTE_CARLO = "monte-carlo"
MIN_MC_REPS = 100


@dataclass(eq=False)
class TruthOracle:
    """True curves on a time grid (linear between grid points).

    ``stderr`` is present for Monte Carlo truths.
    """

    curves: GridCurves
    method: str
    mc_reps: int | None = None

    @property
    def times(self) -> np.ndarray:
        return self.curves.times

    @property
    def values(self) -> np.ndarray:
        return self.curves.values


def piecewise_truth(config: SimConfig, data: SimData, times) -> np.ndarray:
    """Closed-form conditional survival at ``times`` (residual scale), ``(n, G)``."""
    eta = piecewise_exponents(config.model, data.z, data.a, data.b, config.n_occasions)
    a = config.landmark().a
    times = np.asarray(times, float)
    n = data.z.shape[0]
    at = piecewise_cumhaz(config.model, eta, np.full(n, a))
    later = piecewise_cumhaz(config.model, eta, a + np.broadcast_to(times, (n, times.size)))
    return np.exp(-(later - at[:, None]))


def residual_survival(config: SimConfig, s, a3, z3, d, gamma) -> np.ndarray:
    """``P(R >= s)`` given onset time, marker slopes, covariates and frailty.

    Arguments broadcast; ``s <= 0`` gives 1.
    """
    s = np.asarray(s, float)
    pos = s > 0
    safe = np.where(pos, s, 1.0)
    if config.model == "V":
        eta = residual_exponent(a3, z3, d)
        out = np.exp(-np.exp(eta) * safe ** 3 / 3.0)
    else:
        mu = residual_location(a3, z3, d, gamma)
        sd = residual_scale(config, z3[..., 0])
        out = np.exp(log_ndtr((mu - np.log(safe)) / sd))
    return np.where(pos, out, 1.0)


def _ratio(num, den):
    """Ratio-of-means estimate and its delta-method standard error, per grid column."""
    m = num.shape[0]
    n_bar = num.mean(axis=0)
    d_bar = den.mean()
    est = n_bar / d_bar
    resid = num - est[None, :] * den[:, None]
    se = resid.std(axis=0, ddof=1) / (np.sqrt(m) * d_bar)
    return est, se


def _subject_mc(config: SimConfig, times, z, a, d, pi_seen, case: str, rng, reps: int):
    """Monte Carlo curve for one test subject.

    ``case``: ``onset`` (landmark at observed disease onset, slopes known),
    ``onset-hidden`` (same, slopes unknown), ``before`` (fixed landmark,
    onset observed before it) or ``none`` (fixed landmark, no onset yet).
    """
    shape, scale = frailty_shape_scale(config)
    gamma = rng.gamma(shape, scale, size=reps)
    z3 = np.broadcast_to(z[:N_ACTIVE], (reps, N_ACTIVE))
    if case in ("onset-hidden", "none"):
        a3 = rng.uniform(-1.0, 1.0, size=(reps, N_ACTIVE))
    else:
        a3 = np.broadcast_to(a[:N_ACTIVE], (reps, N_ACTIVE))
    if case == "none":
        lm = config.landmark().a
        dd = rng.uniform(lm, 5.0, size=reps)
        p = disease_probability(a3, z3, dd, gamma)
        s = lm + times[None, :] - dd[:, None]
        surv = residual_survival(config, s, a3[:, None, :], z3[:, None, :], dd[:, None], gamma[:, None])
        num = (1 - p)[:, None] * (dd[:, None] >= lm + times[None, :]) + p[:, None] * surv
        return _ratio(num, np.ones(reps))
    dd = np.full(reps, d)
    p = disease_probability(a3, z3, dd, gamma)
    offset = config.landmark().a - d if case == "before" else 0.0
    surv = residual_survival(config, offset + times[None, :], a3[:, None, :], z3[:, None, :], dd[:, None],
                             gamma[:, None])
    if case == "before":
        den = p * residual_survival(config, np.full(reps, offset), a3, z3, dd, gamma)
    else:
        den = p
    return _ratio(p[:, None] * surv, den)


def truth_case(config: SimConfig, data: SimData, i: int) -> str:
    lm = config.landmark()
    if lm.kind == "event":
        if config.scenario == "A" and data.d[i] < 1.0:
            return "onset-hidden"
        return "onset"
    return "before" if bool(data.pi[i]) and data.d[i] <= lm.a else "none"


def monte_carlo_truth(config: SimConfig, data: SimData, times, mc_reps: int = 10_000, seed=0):
    """Monte Carlo conditional survival and standard errors, each ``(n, G)``."""
    if mc_reps < MIN_MC_REPS:
        raise ValueError(f"mc_reps must be at least {MIN_MC_REPS}")
    times = np.asarray(times, float)
    n = data.z.shape[0]
    seqs = seed_sequence(seed).spawn(n)
    est = np.empty((n, times.size))
    se = np.empty((n, times.size))
    for i in range(n):
        rng = np.random.default_rng(seqs[i])
        est[i], se[i] = _subject_mc(config, times, data.z[i], data.a[i], data.d[i], data.pi[i],
                                    truth_case(config, data, i), rng, mc_reps)
    return np.minimum(est, 1.0), se


def truth(config: SimConfig, data: SimData, times, mc_reps: int = 10_000, seed=0) -> TruthOracle:
    """True landmark survival of every subject in ``data`` on ``times``.

    ``data`` must hold subjects at risk at the landmark (as test sets do).
    """
    times = np.asarray(times, float)
    if config.piecewise:
        vals = piecewise_truth(config, data, times)
        return TruthOracle(GridCurves(times, vals), NUMERICAL)
    est, se = monte_carlo_truth(config, data, times, mc_reps, seed)
    # enforce a valid survival curve: start at 1, nonincreasing
    est = np.minimum.accumulate(np.where(times[None, :] <= 0, 1.0, est), axis=1)
    return TruthOracle(GridCurves(times, est, se), MONTE_CARLO, mc_reps)
