"""Data-generating models for landmark prediction benchmarks.

Models ``I`` and ``II`` have piecewise hazards that depend on marker values
measured at ``t_k = 1, ..., K``; the landmark is fixed at ``t = 2``.
Models ``III``-``V`` are illness-death processes: a first transition at
``D ~ U[0, 5]`` goes to disease (probability from a logistic model with a
gamma frailty) or to death; diseased subjects then survive a residual time
``R``. Scenarios set the landmark and marker schedule:

* ``A``: landmark at disease onset, markers at ``t_k = 1, ..., 5``;
* ``B``: landmark fixed at ``a`` (default 2), markers at disease onset;
* ``C``: landmark at disease onset, markers at disease onset.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .._seeding import seed_sequence
from ..data import Cohort, LandmarkSpec, SubjectRecord

MODELS = ("I", "II", "III", "IV", "V")
SCENARIOS = ("A", "B", "C")
N_BASELINE = 10
N_MARKERS = 10
N_ACTIVE = 3  # covariates 1..3 carry signal
BASE = -5.0
SCENARIO_A_OCCASIONS = 5
PIECEWISE_OCCASIONS = 3
CALIBRATION_DRAWS = 200_000
CALIBRATION_SEED = 314159
EVENT_NAME = "U"


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``scenario`` is required for the illness-death models and must be None
    for ``I``/``II``. ``K`` defaults to 3 marker occasions for ``I``/``II``,
    5 for scenario ``A`` and 1 (disease onset) for ``B``/``C``.
    """

    model: str
    scenario: str | None = None
    n: int = 200
    censor_target: float = 0.2
    seed: int = 0
    K: int | None = None
    fixed_landmark_a: float = 2.0
    frailty_var: float = 0.5
    noise_sd: float = 1.0
    noise_sd_pos: float = 1.0
    noise_sd_neg: float = 0.5
    n_test: int = 500

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.piecewise:
            if self.scenario is not None:
                raise ValueError(f"model {self.model} takes no scenario")
        elif self.scenario not in SCENARIOS:
            raise ValueError(f"model {self.model} needs a scenario in {SCENARIOS}")
        if not 0 <= self.censor_target < 1:
            raise ValueError("censor_target must lie in [0, 1)")
        if self.n < 1 or self.n_test < 1:
            raise ValueError("sample sizes must be positive")
        if self.frailty_var <= 0:
            raise ValueError("frailty variance must be positive")
        if self.K is not None and self.K < 1:
            raise ValueError("K must be positive")
        if self.scenario in ("B", "C") and self.K not in (None, 1):
            raise ValueError("markers are measured once (at disease onset) in scenarios B and C")

    @property
    def piecewise(self) -> bool:
        return self.model in ("I", "II")

    @property
    def n_occasions(self) -> int:
        if self.K is not None:
            return self.K
        if self.piecewise:
            return PIECEWISE_OCCASIONS
        return SCENARIO_A_OCCASIONS if self.scenario == "A" else 1

    @property
    def n_events(self) -> int:
        return 0 if self.piecewise else 1

    @property
    def label(self) -> str:
        return self.model if self.piecewise else f"{self.model}-{self.scenario}"

    def landmark(self) -> LandmarkSpec:
        if self.piecewise:
            return LandmarkSpec.fixed(2.0)
        if self.scenario == "B":
            return LandmarkSpec.fixed(self.fixed_landmark_a)
        return LandmarkSpec.at_event(0)

    def occasions(self) -> tuple:
        if self.piecewise or self.scenario == "A":
            return tuple(float(k) for k in range(1, self.n_occasions + 1))
        return (EVENT_NAME,)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(eq=False)
class SimData:
    """A simulated cohort with the latent quantities that generated it."""

    config: SimConfig
    cohort: Cohort
    z: np.ndarray
    a: np.ndarray
    t: np.ndarray
    c: np.ndarray
    b: np.ndarray | None = None
    d: np.ndarray | None = None
    pi: np.ndarray | None = None
    gamma: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        return np.minimum(self.t, self.c)

    def subset(self, rows) -> "SimData":
        rows = np.asarray(rows)
        pick = lambda v: None if v is None else v[rows]  # noqa: E731
        records = [self.cohort[i] for i in rows]
        cohort = replace(self.cohort, records=records)
        return SimData(self.config, cohort, self.z[rows], self.a[rows], self.t[rows], self.c[rows],
                       pick(self.b), pick(self.d), pick(self.pi), pick(self.gamma))


# ---------------------------------------------------------------------------
# models I and II


def piecewise_marker(a, b, t):
    """``a F(b t) / t`` with ``F(x) = 1 - exp(-x^2)``."""
    t = np.asarray(t, float)
    return a * (-np.expm1(-(b * t) ** 2)) / t


def piecewise_coefficient(model: str, k: int) -> float:
    """Marker coefficient on ``(t_k, t_k+1)``; 0 before the first occasion."""
    if k == 0:
        return 0.0
    if model == "I":
        return 2.0 if k == 1 else 4.0
    return 1.0 if k == 1 else 2.0


def piecewise_exponents(model: str, z, a, b, K: int) -> np.ndarray:
    """Linear predictor on each interval ``(t_k, t_k+1)``, ``k = 0..K``; shape ``(n, K+1)``."""
    z = np.atleast_2d(z)
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    zs = z[:, :N_ACTIVE]
    eta = np.empty((z.shape[0], K + 1))
    eta[:, 0] = BASE + np.sum(zs ** 2, axis=1)
    for k in range(1, K + 1):
        w = piecewise_marker(a[:, :N_ACTIVE], b[:, :N_ACTIVE], float(k))
        eta[:, k] = BASE + piecewise_coefficient(model, k) * np.sum(w * (1 + zs), axis=1) + np.sum(zs ** 2, axis=1)
    return eta


def piecewise_cumhaz(model: str, eta, t) -> np.ndarray:
    """Cumulative hazard at ``t`` for exponents ``eta`` (n x (K+1)).

    ``t`` broadcasts against subjects: shape ``(n,)`` or ``(n, G)``.
    Model I: ``t^2 exp(eta_k)``; model II: ``0.1 t^2 + exp(eta_k)``.
    """
    eta = np.atleast_2d(eta)
    t = np.asarray(t, float)
    squeeze = t.ndim == 1
    tt = t[:, None] if squeeze else t
    K = eta.shape[1] - 1
    knots = np.append(np.arange(K + 1, dtype=float), np.inf)
    out = 0.1 * tt ** 3 / 3.0 if model == "II" else np.zeros_like(tt)
    for k in range(K + 1):
        lo, hi = knots[k], knots[k + 1]
        c = np.clip(tt, lo, hi)
        scale = np.exp(eta[:, k])[:, None]
        out = out + scale * ((c ** 3 - lo ** 3) / 3.0 if model == "I" else (c - lo))
    return out[:, 0] if squeeze else out


def invert_cumhaz(cumhaz, target, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Solve ``cumhaz(t) = target`` for each subject by bisection.

    ``cumhaz`` maps an ``(n,)`` time vector to cumulative hazards.
    """
    target = np.asarray(target, float)
    lo = np.zeros_like(target)
    hi = np.ones_like(target)
    for _ in range(200):
        short = cumhaz(hi) < target
        if not short.any():
            break
        hi = np.where(short, hi * 2.0, hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = cumhaz(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, hi)):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# models III to V


def onset_marker(a, t):
    """``a (1 - exp(-0.04 t^2))``."""
    return a * (-np.expm1(-0.04 * np.asarray(t, float) ** 2))


def disease_probability(a3, z3, d, gamma):
    """P(disease at D) given the first three marker slopes and covariates."""
    w = onset_marker(a3, np.asarray(d)[..., None])
    return expit(np.sum(w, axis=-1) + np.sum(z3, axis=-1) + gamma)


def residual_coefficient(d):
    """Model V multiplier: 0 before 1, 2 on [1, 2), 4 from 2 on."""
    d = np.asarray(d, float)
    return np.where(d >= 2, 4.0, np.where(d >= 1, 2.0, 0.0))


def residual_location(a3, z3, d, gamma):
    """Log-scale location of the residual time in models III and IV."""
    w = onset_marker(a3, np.asarray(d)[..., None])
    return BASE + np.sum(w, axis=-1) + np.sum(z3 ** 2, axis=-1) + np.sum(w * z3, axis=-1) + np.log1p(d) + gamma


def residual_exponent(a3, z3, d):
    """Model V exponent ``-5 + c(D) sum_j (W_j + W_j Z_j + Z_j^2)``."""
    w = onset_marker(a3, np.asarray(d)[..., None])
    return BASE + residual_coefficient(d) * np.sum(w + w * z3 + z3 ** 2, axis=-1)


def residual_scale(config: SimConfig, z1) -> np.ndarray:
    z1 = np.asarray(z1, float)
    if config.model == "IV":
        return np.where(z1 > 0, config.noise_sd_pos, config.noise_sd_neg)
    return np.full(z1.shape, config.noise_sd)


def frailty_shape_scale(config: SimConfig) -> tuple[float, float]:
    """Gamma frailty with mean 1 and the configured variance."""
    return 1.0 / config.frailty_var, config.frailty_var


# ---------------------------------------------------------------------------
# event times


def draw_latent(config: SimConfig, n: int, rng: np.random.Generator) -> dict:
    """Covariates, marker parameters and event times for ``n`` subjects."""
    z = rng.normal(1.0, 1.0, size=(n, N_BASELINE))
    if config.piecewise:
        a = rng.uniform(0.0, 1.0, size=(n, N_MARKERS))
        b = rng.uniform(0.0, 1.0, size=(n, N_MARKERS))
        eta = piecewise_exponents(config.model, z, a, b, config.n_occasions)
        e = rng.exponential(1.0, size=n)
        t = invert_cumhaz(lambda s: piecewise_cumhaz(config.model, eta, s), e)
        return {"z": z, "a": a, "b": b, "t": t}
    a = rng.uniform(-1.0, 1.0, size=(n, N_MARKERS))
    d = rng.uniform(0.0, 5.0, size=n)
    shape, scale = frailty_shape_scale(config)
    gamma = rng.gamma(shape, scale, size=n)
    a3, z3 = a[:, :N_ACTIVE], z[:, :N_ACTIVE]
    pi = rng.random(n) < disease_probability(a3, z3, d, gamma)
    if config.model == "V":
        eta = residual_exponent(a3, z3, d)
        r = np.cbrt(3.0 * rng.exponential(1.0, size=n) * np.exp(-eta))
    else:
        eps = rng.normal(0.0, 1.0, size=n)
        r = np.exp(residual_location(a3, z3, d, gamma) + residual_scale(config, z[:, 0]) * eps)
    t = np.where(pi, d + r, d)
    return {"z": z, "a": a, "d": d, "pi": pi, "gamma": gamma, "t": t}


def _calibration_key(config: SimConfig):
    return (config.model, config.n_occasions, config.frailty_var, config.noise_sd, config.noise_sd_pos,
            config.noise_sd_neg)


@functools.lru_cache(maxsize=64)
def _calibration_times(key) -> np.ndarray:
    model, K, frailty_var, sd, sd_pos, sd_neg = key
    scenario = None if model in ("I", "II") else "C"
    cfg = SimConfig(model, scenario, K=K if scenario is None else None, frailty_var=frailty_var,
                    noise_sd=sd, noise_sd_pos=sd_pos, noise_sd_neg=sd_neg)
    rng = np.random.default_rng(np.random.SeedSequence([CALIBRATION_SEED, MODELS.index(model)]))
    return draw_latent(cfg, CALIBRATION_DRAWS, rng)["t"]


def censoring_fraction(rate: float, t) -> float:
    """Expected share censored, ``mean(1 - exp(-rate T))``, for exponential censoring."""
    return float(np.mean(-np.expm1(-rate * np.asarray(t))))


def calibrate_censoring(config: SimConfig) -> float:
    """Exponential censoring rate giving the target baseline censoring share.

    Solved by root finding on a fixed large Monte Carlo sample of event
    times, so the rate is a deterministic function of the model settings.
    """
    target = config.censor_target
    if target == 0:
        return 0.0
    if not 0 < target < 1:
        raise ValueError(f"censor_target {target} outside (0, 1)")
    t = _calibration_times(_calibration_key(config))
    lo, hi = 1e-12, 1.0
    while censoring_fraction(hi, t) < target:
        hi *= 4.0
        if hi > 1e12:
            raise ValueError(f"censoring target {target} unattainable (max {censoring_fraction(hi, t):.3f})")
    return float(brentq(lambda c: censoring_fraction(c, t) - target, lo, hi, xtol=1e-14, rtol=1e-12))


# ---------------------------------------------------------------------------
# records


def _ids(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i + 1:05d}" for i in range(n)]


def build_records(config: SimConfig, latent: dict, c, prefix: str = "s") -> Cohort:
    """Observed records (censored at ``min(T, C)``) from latent draws."""
    z, t = latent["z"], latent["t"]
    n = t.size
    y = np.minimum(t, c)
    delta = t <= c
    K = config.n_occasions
    occasions = config.occasions()
    records = []
    for i, rid in enumerate(_ids(prefix, n)):
        if config.piecewise or config.scenario == "A":
            times = np.arange(1, K + 1, dtype=float)
            if config.piecewise:
                vals = piecewise_marker(latent["a"][i][None, :], latent["b"][i][None, :], times[:, None])
            else:
                vals = onset_marker(latent["a"][i][None, :], times[:, None])
            vals = np.where((times <= y[i])[:, None], vals, np.nan)
        if config.piecewise:
            u = np.empty(0)
        else:
            seen = bool(latent["pi"][i]) and latent["d"][i] <= y[i]
            u = np.array([latent["d"][i] if seen else np.nan])
            if config.scenario != "A":
                times = np.array([latent["d"][i] if seen else np.inf])
                vals = (onset_marker(latent["a"][i], latent["d"][i]) if seen
                        else np.full(N_MARKERS, np.nan))[None, :]
        records.append(SubjectRecord(rid, float(y[i]), bool(delta[i]), z[i], vals, times, u))
    return Cohort(records, tuple(f"Z{j + 1}" for j in range(N_BASELINE)),
                  tuple(f"W{j + 1}" for j in range(N_MARKERS)),
                  () if config.piecewise else (EVENT_NAME,), occasions)


def _sim_data(config, latent, c, prefix) -> SimData:
    cohort = build_records(config, latent, c, prefix)
    return SimData(config, cohort, latent["z"], latent["a"], latent["t"], np.asarray(c, float),
                   latent.get("b"), latent.get("d"), latent.get("pi"), latent.get("gamma"))


def at_risk_uncensored(config: SimConfig, latent: dict) -> np.ndarray:
    """Who reaches the landmark when nobody is censored."""
    lm = config.landmark()
    if lm.kind == "fixed":
        return latent["t"] >= lm.a
    return latent["pi"].astype(bool)


def simulate_training(config: SimConfig, rng: np.random.Generator, rate: float | None = None) -> SimData:
    """``config.n`` subjects with exponential censoring."""
    rate = calibrate_censoring(config) if rate is None else rate
    latent = draw_latent(config, config.n, rng)
    c = rng.exponential(1.0 / rate, size=config.n) if rate > 0 else np.full(config.n, np.inf)
    return _sim_data(config, latent, c, "s")


def simulate_test(config: SimConfig, rng: np.random.Generator) -> SimData:
    """``config.n_test`` uncensored subjects, all at risk at the landmark."""
    parts: dict[str, list] = {}
    have = 0
    while have < config.n_test:
        latent = draw_latent(config, max(2 * config.n_test, 1000), rng)
        keep = at_risk_uncensored(config, latent)
        for k, v in latent.items():
            parts.setdefault(k, []).append(v[keep])
        have += int(keep.sum())
    latent = {k: np.concatenate(v)[: config.n_test] for k, v in parts.items()}
    return _sim_data(config, latent, np.full(config.n_test, np.inf), "test")


def generate(config: SimConfig) -> tuple[SimData, SimData]:
    """Training cohort and an independent uncensored at-risk test cohort."""
    train_ss, test_ss = seed_sequence(config.seed).spawn(2)
    return simulate_training(config, np.random.default_rng(train_ss)), simulate_test(
        config, np.random.default_rng(test_ss))
