"""Replicated comparison of a pruned single tree and the two ensemble modes.

Every replicate draws a fresh training cohort; all replicates share one
uncensored test cohort of subjects at risk at the landmark, its true
curves and the horizon ``t0`` (90% quantile of the true test residuals).
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .._seeding import seed_int, seed_sequence
from ..ensemble import HAZARD_AVERAGE, MARTINGALE, predict_survival
from ..evaluate import EQUAL, CensoringModel, KAPLAN_MEIER, integrated_concordance, truth_metrics
from ..model import LandmarkForest
from ..preprocess import LandmarkDesign, build_design
from ..tree import grow, prune
from .models import SimConfig, SimData, calibrate_censoring, simulate_test, simulate_training
from .truth import TruthOracle, truth

TREE = "Tr"
E1 = "E1"
E2 = "E2"
METHODS = (TREE, E1, E2)
METRICS = ("imae", "imse", "ibs", "icon")
SCALE = 1000.0


@dataclass(frozen=True)
class BenchmarkSettings:
    B: int = 200
    mtry: int | None = None
    min_node_size: int = 15
    folds: int = 10
    alpha_c: float = 4.0
    mc_reps: int = 10_000
    truth_grid_size: int = 100
    metric_grid_size: int = 200
    icon_grid_size: int = 50
    t0_quantile: float = 0.9


@dataclass(eq=False)
class TestBed:
    """Shared test cohort, its design-independent truth and horizon."""

    data: SimData
    residual: np.ndarray
    t0: float
    oracle: TruthOracle


@dataclass(eq=False)
class BenchmarkResult:
    config: SimConfig
    methods: tuple[str, ...]
    values: np.ndarray  # replicates x methods x metrics
    t0: float
    censoring_rate: float
    extra: dict = field(default_factory=dict)

    @property
    def n_replicates(self) -> int:
        return self.values.shape[0]

    def mean(self, method: str, metric: str) -> float:
        return float(np.mean(self.values[:, self.methods.index(method), METRICS.index(metric)]))

    def se(self, method: str, metric: str) -> float:
        col = self.values[:, self.methods.index(method), METRICS.index(metric)]
        return float(np.std(col, ddof=1) / np.sqrt(col.size)) if col.size > 1 else float("nan")

    def table(self) -> list[dict]:
        """One row per method with means and Monte Carlo standard errors, scaled by 1000."""
        rows = []
        for m in self.methods:
            row = {"scenario": self.config.label, "n": self.config.n,
                   "censoring": self.config.censor_target, "method": m, "replicates": self.n_replicates}
            for metric in METRICS:
                row[metric] = SCALE * self.mean(m, metric)
                row[f"{metric}_se"] = SCALE * self.se(m, metric)
            rows.append(row)
        return rows

    def write_csv(self, path) -> None:
        rows = self.table()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            wr.writeheader()
            for r in rows:
                wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def landmark_times(config: SimConfig, data: SimData) -> np.ndarray:
    lm = config.landmark()
    return np.full(data.t.size, lm.a) if lm.kind == "fixed" else data.d.astype(float)


def make_testbed(config: SimConfig, settings: BenchmarkSettings, seed) -> TestBed:
    test_ss, truth_ss = seed_sequence(seed).spawn(2)
    data = simulate_test(config, np.random.default_rng(test_ss))
    residual = data.t - landmark_times(config, data)
    t0 = float(np.quantile(residual, settings.t0_quantile))
    grid = np.linspace(0.0, t0, settings.truth_grid_size + 1)
    oracle = truth(config, data, grid, settings.mc_reps, seed=seed_int(truth_ss))
    return TestBed(data, residual, t0, oracle)


def _uncensored() -> CensoringModel:
    return CensoringModel(KAPLAN_MEIER)


def score(curves, bed: TestBed, design: LandmarkDesign, settings: BenchmarkSettings) -> np.ndarray:
    """``(imae, imse, ibs, icon)`` of one set of test predictions (time-averaged errors)."""
    tm = truth_metrics(curves, bed.oracle.curves, bed.residual, bed.t0, settings.metric_grid_size, normalize=True)
    rep = integrated_concordance(curves, design, _uncensored(), (0.0, bed.t0), settings.icon_grid_size, EQUAL)
    icon = np.nan if rep.integrated is None else rep.integrated
    return np.array([tm.imae, tm.imse, tm.ibs, icon])


def run_replicate(config: SimConfig, settings: BenchmarkSettings, bed: TestBed, rate: float, seed,
                  methods=METHODS) -> np.ndarray:
    data_ss, forest_ss, tree_ss = seed_sequence(seed).spawn(3)
    train = simulate_training(config, np.random.default_rng(data_ss), rate)
    out = np.full((len(methods), len(METRICS)), np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model, design = LandmarkForest.train(train.cohort, config.landmark(), B=settings.B, mtry=settings.mtry,
                                             min_node_size=settings.min_node_size, seed=seed_int(forest_ss))
        test_design = build_design(bed.data.cohort, config.landmark(), big_m=model.big_m)
    X_test = test_design.X[:, model.columns]
    for k, method in enumerate(methods):
        if method in (E1, E2):
            mode = MARTINGALE if method == E1 else HAZARD_AVERAGE
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                curves = predict_survival(model.ensemble, X_test, mode)
        elif method == TREE:
            ens = model.ensemble
            grow_ss, cv_ss = tree_ss.spawn(2)
            tree = grow(ens.X, ens.time, ens.event, min_node_size=settings.min_node_size, mtry=None,
                        seed=seed_int(grow_ss))
            pruned = prune(tree, ens.X, ens.time, ens.event, folds=settings.folds, seed=seed_int(cv_ss),
                           alpha_c=settings.alpha_c)
            curves = pruned.node_survival(X_test)
        else:
            raise ValueError(f"unknown method {method!r}")
        out[k] = score(curves, bed, test_design, settings)
    return out


def benchmark(config: SimConfig, methods=METHODS, replicates: int = 50,
              settings: BenchmarkSettings | None = None, n_jobs: int = 1, progress=None) -> BenchmarkResult:
    """Mean metrics of each method over ``replicates`` training draws.

    Results depend only on ``config.seed``; ``n_jobs`` parallelizes
    replicates without changing any number.
    """
    methods = tuple(methods)
    if not methods:
        raise ValueError("at least one method is required")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    settings = settings or BenchmarkSettings()
    test_ss, train_ss = seed_sequence(config.seed).spawn(2)
    bed = make_testbed(config, settings, test_ss)
    rate = calibrate_censoring(config)
    seeds = train_ss.spawn(replicates)
    if n_jobs == 1:
        values = []
        for r, ss in enumerate(seeds):
            values.append(run_replicate(config, settings, bed, rate, ss, methods))
            if progress is not None:
                progress(r + 1, replicates)
    else:
        from joblib import Parallel, delayed

        values = Parallel(n_jobs=n_jobs)(
            delayed(run_replicate)(config, settings, bed, rate, ss, methods) for ss in seeds)
    return BenchmarkResult(config, methods, np.stack(values), bed.t0, rate)
