"""Command-line front end: simulate, train, predict, evaluate, vimp, benchmark.

Every command writes into an output directory together with
``run_config.json``, the resolved parameters (seed included) that produced
the outputs. Re-running with the same parameters reproduces every output
byte for byte, whatever ``--jobs`` is.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._seeding import seed_int, seed_sequence
from .data import DataError, LandmarkSpec, Schema, cohort_files, ingest_csv, write_csv
from .ensemble import HAZARD_AVERAGE, MARTINGALE, AllZeroWeightWarning, default_mtry, oob_survival
from .evaluate import (
    DEFAULT_FLOOR,
    EQUAL,
    FOREST,
    KAPLAN_MEIER,
    PROPORTIONAL,
    fit_censoring,
    integrated_concordance,
    residual_quantile,
    truth_metrics,
)
from .model import BundleVersionError, LandmarkForest

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RUN_CONFIG = "run_config.json"
MODES = {"E1": MARTINGALE, "E2": HAZARD_AVERAGE}
# parameters that never change a number and so stay out of the echoed config
NOT_ECHOED = ("config", "jobs", "out", "figures", "handler", "verbose")

log = logging.getLogger("landmark_forest")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# small helpers


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if np.isnan(x) else repr(float(x))
    return str(x)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _name_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def run_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in NOT_ECHOED}
    cfg["version"] = __version__
    return cfg


def _start(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / RUN_CONFIG, run_config(args))
    return out


def _load_cohort(args):
    directory = Path(args.data)
    outcomes, longitudinal, events = cohort_files(directory, args.prefix)
    if not outcomes.exists():
        raise DataError(f"missing outcome file {outcomes}")
    schema_path = Path(args.schema) if args.schema else directory / "schema.json"
    schema = Schema.load(schema_path) if schema_path.exists() else Schema()
    return ingest_csv(outcomes, longitudinal if longitudinal.exists() else None,
                      events if events.exists() else None, schema)


def _load_model(path) -> LandmarkForest:
    try:
        return LandmarkForest.load(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: not a readable model bundle ({exc})") from None


def _interval(args, design) -> tuple[float, float]:
    if args.interval:
        lo, hi = _float_list(args.interval)
        return lo, hi
    rows = design.at_risk
    return 0.0, residual_quantile(design.residual[rows], design.delta[rows], 0.9)


def _read_truth(path, ids, times_needed=None):
    from .curves import GridCurves

    table: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            table.setdefault(row["id"], []).append((float(row["t"]), float(row["S_true"])))
    missing = [i for i in ids if i not in table]
    if missing:
        raise DataError(f"{path}: no true curve for {len(missing)} subjects (first {missing[0]!r})")
    times = np.array([t for t, _ in sorted(table[ids[0]])])
    values = np.empty((len(ids), times.size))
    for k, i in enumerate(ids):
        pts = sorted(table[i])
        if len(pts) != times.size or not np.array_equal([t for t, _ in pts], times):
            raise DataError(f"{path}: true curves must share one time grid")
        values[k] = [s for _, s in pts]
    return GridCurves(times, values)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    from .simulate.benchmark import BenchmarkSettings, make_testbed
    from .simulate.models import SimConfig, simulate_training

    config = SimConfig(args.model, args.scenario, n=args.n, censor_target=args.censoring, seed=args.seed,
                       n_test=args.n_test)
    out = _start(args)
    settings = BenchmarkSettings(mc_reps=args.mc_reps, truth_grid_size=args.truth_grid_size,
                                 t0_quantile=args.t0_quantile)
    test_ss, train_ss = seed_sequence(args.seed).spawn(2)
    bed = make_testbed(config, settings, test_ss)
    train = simulate_training(config, np.random.default_rng(train_ss))
    for prefix, data in (("train", train), ("test", bed.data)):
        write_csv(data.cohort, *cohort_files(out, prefix))
    cohort = train.cohort
    Schema(markers=cohort.markers, occasions=cohort.occasions, events=cohort.events,
           z_columns=cohort.z_names).dump(out / "schema.json")
    oracle = bed.oracle
    ids = [r.id for r in bed.data.cohort]
    _write_rows(out / "truth.csv", ("id", "t", "S_true"),
                ((i, t, s) for k, i in enumerate(ids) for t, s in zip(oracle.times, oracle.values[k])))
    lm = config.landmark()
    landmark = f"fixed:{lm.a!r}" if lm.kind == "fixed" else f"event:{cohort.events[lm.event]}"
    print(f"simulated {config.label}: {len(train.cohort)} training, {len(ids)} test subjects; "
          f"landmark {landmark}; horizon t0 = {bed.t0:.6g}; truth {oracle.method}")
    return EXIT_OK


def cmd_train(args) -> int:
    cohort = _load_cohort(args)
    landmark = LandmarkSpec.parse(args.landmark, cohort.events)
    out = _start(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AllZeroWeightWarning)
        model, design = LandmarkForest.train(cohort, landmark, B=args.B, mtry=args.mtry,
                                             min_node_size=args.min_node_size, seed=args.seed, n_jobs=args.jobs)
    model.save(out / "model.json")
    ens = model.ensemble
    mtry = ens.params["mtry"] or default_mtry(len(model.columns))
    print(f"at risk: {design.at_risk.size}  events: {int(ens.event.sum())}  trees: {ens.n_trees}  "
          f"features: {len(model.columns)} of {len(model.feature_names)}  mtry: {mtry}")
    return EXIT_OK


def _predict_rows(ids, curves):
    times = np.r_[0.0, curves.times]
    for k, i in enumerate(ids):
        values = np.r_[1.0, curves.values[k]]
        for t, s in zip(times, values):
            yield i, t, s


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    cohort = _load_cohort(args)
    out = _start(args)
    header = ("id", "t", "S")
    if len(cohort) == 0:
        _write_rows(out / "predictions.csv", header, ())
        print("no query subjects")
        return EXIT_OK
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AllZeroWeightWarning)
        design, curves = model.predict(cohort, MODES[args.mode])
    ids = [design.ids[r] for r in design.at_risk]
    if args.times:
        times = np.array(_float_list(args.times))
        values = curves.evaluate(times)
        rows = ((i, t, s) for k, i in enumerate(ids) for t, s in zip(times, values[k]))
    else:
        rows = _predict_rows(ids, curves)
    _write_rows(out / "predictions.csv", header, rows)
    skipped = design.n - len(ids)
    print(f"predicted {len(ids)} subjects" + (f"; {skipped} not at risk at the landmark" if skipped else ""))
    if args.figures and ids:
        from . import plots

        plots.survival_curves(curves, ids, out / "predictions.png")
    return EXIT_OK


def _censoring(args, design):
    return fit_censoring(design, args.censoring, seed=seed_int(seed_sequence(args.seed)), n_jobs=args.jobs)


def cmd_evaluate(args) -> int:
    if args.prefix is None:
        args.prefix = "train" if args.oob else "test"
    model = _load_model(args.model)
    cohort = _load_cohort(args)
    out = _start(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AllZeroWeightWarning)
        if args.oob:
            design = model.design(cohort)
            if design.ids != model.train_ids:
                raise DataError("out-of-bag evaluation needs the training cohort")
            oob = oob_survival(model.ensemble, mode=MODES[args.mode])
            rows = design.at_risk[oob.valid]
            curves = oob.curves.subset(np.flatnonzero(oob.valid))
        else:
            design, curves = model.predict(cohort, MODES[args.mode])
            rows = design.at_risk
    if rows.size == 0:
        raise DataError("no subject is at risk at the landmark")
    data = design.subset(rows)
    cens = _censoring(args, design)
    interval = _interval(args, data)
    tau0 = np.inf if args.tau0 is None else args.tau0
    report = integrated_concordance(curves, data, cens, interval, args.grid_size, args.weighting, tau0, args.floor)
    _write_rows(out / "concordance.csv", ("t", "con_t", "n_pairs"), report.rows())
    summary = report.summary()
    summary["interval"] = list(interval)
    summary["n_subjects"] = int(rows.size)
    if args.truth:
        ids = [design.ids[r] for r in rows]
        true = _read_truth(args.truth, ids)
        tm = truth_metrics(curves, true, data.residual, float(true.times[-1]), normalize=args.normalize)
        summary.update(imae=tm.imae, imse=tm.imse, ibs=tm.ibs, t0=float(true.times[-1]))
    _write_json(out / "concordance.json", summary)
    icon = "not available" if report.integrated is None else f"{report.integrated:.4f}"
    print(f"integrated concordance on [{interval[0]:.6g}, {interval[1]:.6g}]: {icon}")
    if args.figures:
        from . import plots

        plots.concordance(report, out / "concordance.png")
    return EXIT_OK


def cmd_vimp(args) -> int:
    from .vimp import importance_report, marker_groups, oob_context

    model = _load_model(args.model)
    cohort = _load_cohort(args)
    design = model.design(cohort)
    if design.ids != model.train_ids:
        raise DataError("variable importance needs the training cohort the model was fitted on")
    out = _start(args)
    cens_ss, perm_ss = seed_sequence(args.seed).spawn(2)
    cens = fit_censoring(design, args.censoring, seed=seed_int(cens_ss), n_jobs=args.jobs)
    interval = _interval(args, design) if args.interval else None
    tau0 = np.inf if args.tau0 is None else args.tau0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AllZeroWeightWarning)
        ctx = oob_context(model.ensemble, design, model.columns, cens, interval, args.grid_size, args.weighting,
                          tau0, args.floor, MODES[args.mode])
        variables = _name_list(args.variables) if args.variables else None
        groups = marker_groups(design) if args.marker_groups else None
        try:
            report = importance_report(ctx, variables, args.n_perm, perm_ss, groups, args.jobs)
        except KeyError as exc:
            raise DataError(str(exc.args[0])) from None
    _write_rows(out / "vimp.csv", ("variable", "mean_drop", "sd_drop", "n_eligible", "scheme"),
                ((r["variable"], r["mean_drop"], r["sd_drop"], r["n_eligible"], r["scheme"]) for r in report.rows()))
    print(f"baseline out-of-bag concordance {report.baseline:.4f}; {len(report.entries)} variables scored")
    if args.figures:
        from . import plots

        plots.importance(report, out / "vimp.png")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .simulate.benchmark import METRICS, BenchmarkSettings, benchmark
    from .simulate.models import SimConfig

    config = SimConfig(args.model, args.scenario, n=args.n, censor_target=args.censoring, seed=args.seed,
                       n_test=args.n_test)
    methods = _name_list(args.methods)
    settings = BenchmarkSettings(B=args.B, mtry=args.mtry, min_node_size=args.min_node_size, folds=args.folds,
                                 alpha_c=args.alpha_c, mc_reps=args.mc_reps)
    out = _start(args)

    def progress(done, total):
        log.info("replicate %d/%d", done, total)

    result = benchmark(config, methods, args.replicates, settings, n_jobs=args.jobs, progress=progress)
    result.write_csv(out / "benchmark.csv")
    _write_rows(out / "replicates.csv", ("replicate", "method", *METRICS),
                ((r, m, *result.values[r, k]) for r in range(result.n_replicates)
                 for k, m in enumerate(result.methods)))
    for row in result.table():
        print(f"{row['method']:>3}  " + "  ".join(f"{m.upper()} {row[m]:8.1f} ({row[m + '_se']:.1f})"
                                                  for m in METRICS))
    if args.figures:
        from . import plots

        plots.benchmark_table(result, out / "benchmark.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON or TOML file of parameters; its values override flags")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (never changes results)")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="master random seed")


def _cohort_args(p: argparse.ArgumentParser, prefix: str, note: str = "") -> None:
    p.add_argument("--data", required=True, help="directory with <prefix>_outcomes.csv and companions")
    p.add_argument("--prefix", default=None if note else prefix, help=f"file prefix (default {prefix}{note})")
    p.add_argument("--schema", help="schema JSON (default <data>/schema.json if present)")


def _concordance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=sorted(MODES), default="E1", help="ensemble estimator")
    p.add_argument("--grid-size", type=int, default=50)
    p.add_argument("--interval", help="lo,hi horizon range (default 0 to the 90%% residual quantile)")
    p.add_argument("--weighting", choices=(EQUAL, PROPORTIONAL), default=EQUAL)
    p.add_argument("--censoring", choices=(KAPLAN_MEIER, FOREST), default=KAPLAN_MEIER)
    p.add_argument("--tau0", type=float, default=None, help="residual-time truncation of comparable pairs")
    p.add_argument("--floor", type=float, default=DEFAULT_FLOOR, help="lower bound on censoring survival")


def _sim_args(p: argparse.ArgumentParser) -> None:
    from .simulate.models import MODELS, SCENARIOS

    p.add_argument("--model", choices=MODELS, required=True, help="generating model")
    p.add_argument("--scenario", choices=SCENARIOS, default=None, help="marker design, required for models III-V")
    p.add_argument("--n", type=int, default=200, help="training sample size")
    p.add_argument("--censoring", type=float, default=0.2, help="target censoring fraction")
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--mc-reps", type=int, default=10_000, help="Monte Carlo draws per subject for true curves")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="landmark-forest", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate training and test cohorts with true curves")
    _sim_args(p)
    p.add_argument("--truth-grid-size", type=int, default=100)
    p.add_argument("--t0-quantile", type=float, default=0.9)
    _common(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("train", help="fit a landmark forest")
    _cohort_args(p, "train")
    p.add_argument("--landmark", required=True, help="fixed:<a> or event:<name>")
    p.add_argument("--B", type=int, default=500, help="number of trees")
    p.add_argument("--mtry", type=int, default=None, help="features tried per split (default ceil(sqrt p))")
    p.add_argument("--min-node-size", type=int, default=15)
    _common(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="landmark survival curves for query subjects")
    p.add_argument("--model", required=True, help="model bundle from train")
    _cohort_args(p, "test")
    p.add_argument("--mode", choices=sorted(MODES), default="E1", help="ensemble estimator")
    p.add_argument("--times", help="comma-separated times (default: every jump time)")
    _common(p, seed=False)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("evaluate", help="time-dependent and integrated concordance")
    p.add_argument("--model", required=True, help="model bundle from train")
    _cohort_args(p, "test", "; train with --oob")
    _concordance_args(p)
    p.add_argument("--oob", action="store_true", help="score out-of-bag predictions of the training cohort")
    p.add_argument("--truth", help="truth CSV (id, t, S_true) for error metrics")
    p.add_argument("--normalize", action="store_true", help="divide error metrics by the horizon")
    _common(p)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("vimp", help="permutation variable importance")
    p.add_argument("--model", required=True, help="model bundle from train")
    _cohort_args(p, "train")
    _concordance_args(p)
    p.add_argument("--variables", help="comma-separated variables (default all)")
    p.add_argument("--marker-groups", action="store_true", help="also permute all occasions of each marker")
    p.add_argument("--n-perm", type=int, default=100)
    _common(p)
    p.set_defaults(handler=cmd_vimp)

    p = sub.add_parser("benchmark", help="replicated comparison of Tr, E1 and E2")
    _sim_args(p)
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--methods", default="Tr,E1,E2")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--min-node-size", type=int, default=15)
    p.add_argument("--folds", type=int, default=10, help="cross-validation folds for pruning Tr")
    p.add_argument("--alpha-c", type=float, default=4.0, help="complexity penalty for choosing the Tr size")
    _common(p)
    p.set_defaults(handler=cmd_benchmark)
    return parser


# ---------------------------------------------------------------------------
# configuration files


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            data = tomllib.loads(text)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a key-value mapping")
    return data


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace, data: dict) -> None:
    """Overwrite parsed values with the file's keys (flat, or under a table named after the command)."""
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(args.command, {})
    if isinstance(section, dict):
        merged.update(section)
    for key, value in merged.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest == "handler":
            raise UsageError(f"unknown parameter {key!r} for {args.command}")
        action = actions[dest]
        if value is not None and action.type is not None and not isinstance(value, bool):
            try:
                value = action.type(value)
            except (TypeError, ValueError):
                raise UsageError(f"invalid value {value!r} for {key!r}") from None
        elif isinstance(action, argparse._StoreTrueAction) and not isinstance(value, bool):
            raise UsageError(f"{key!r} must be true or false")
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{key!r} must be one of {sorted(action.choices)}")
        setattr(args, dest, value)


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        apply_config(parser, args, read_config_file(args.config))
    missing = [a.dest for a in _subparser(parser, args.command)._actions if a.required and getattr(args, a.dest) is None]
    if missing:
        raise UsageError(f"missing required parameters: {missing}")
    if getattr(args, "jobs", 1) < 1:
        raise UsageError("--jobs must be at least 1")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            return args.handler(args)
    except (DataError, BundleVersionError, OSError, csv.Error) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
