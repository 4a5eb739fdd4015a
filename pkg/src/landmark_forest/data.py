"""Censored longitudinal survival records, landmark views, and CSV ingestion.

Three long-format files describe a cohort:

* outcomes: ``id, y, delta, <baseline covariates...>``
* longitudinal: ``id, time, marker, value`` (one row per measured marker)
* events: ``id, event, time`` (absent row = intermediate event not observed)

Marker measurement occasions are declared in a :class:`Schema`; an occasion is
either a fixed time ``t_k`` or the name of an intermediate event, in which case
the markers are measured when that event happens.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Input data violates the record schema or its invariants."""


@dataclass(frozen=True)
class Schema:
    """Column mapping and measurement design for a cohort.

    Parameters
    ----------
    markers : names of the longitudinal markers (q of them).
    occasions : measurement occasions; floats are fixed times, strings name the
        intermediate event at which the markers are measured.
    events : names of the intermediate events (J of them).
    z_columns : baseline covariate columns of the outcome file. ``None`` takes
        every column other than id/y/delta, in file order.
    categorical : baseline columns to one-hot encode at ingestion.
    """

    markers: tuple[str, ...] = ()
    occasions: tuple[float | str, ...] = ()
    events: tuple[str, ...] = ()
    z_columns: tuple[str, ...] | None = None
    categorical: tuple[str, ...] = ()
    time_tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "markers", tuple(self.markers))
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "categorical", tuple(self.categorical))
        if self.z_columns is not None:
            object.__setattr__(self, "z_columns", tuple(self.z_columns))
        occ = tuple(o if isinstance(o, str) else float(o) for o in self.occasions)
        object.__setattr__(self, "occasions", occ)
        fixed = [o for o in occ if not isinstance(o, str)]
        if any(b <= a for a, b in zip(fixed, fixed[1:])):
            raise DataError("fixed measurement occasions must be strictly increasing")
        for o in occ:
            if isinstance(o, str) and o not in self.events:
                raise DataError(f"occasion anchored to unknown event {o!r}")
        if occ and not self.markers:
            raise DataError("occasions declared without markers")

    def to_dict(self) -> dict:
        return {
            "markers": list(self.markers),
            "occasions": list(self.occasions),
            "events": list(self.events),
            "z_columns": None if self.z_columns is None else list(self.z_columns),
            "categorical": list(self.categorical),
            "time_tol": self.time_tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls(
            markers=tuple(d.get("markers", ())),
            occasions=tuple(d.get("occasions", ())),
            events=tuple(d.get("events", ())),
            z_columns=None if d.get("z_columns") is None else tuple(d["z_columns"]),
            categorical=tuple(d.get("categorical", ())),
            time_tol=float(d.get("time_tol", 1e-9)),
        )

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """One subject's censored outcome and predictor history.

    ``w`` is ``K x q``; a NaN row means the occasion fell after follow-up
    ended. ``w_times[k]`` is ``inf`` for an event-anchored occasion whose event
    never happened. ``u`` holds the J intermediate-event times with NaN for
    not-yet-observed events.
    """

    id: str
    y: float
    delta: bool
    z: np.ndarray
    w: np.ndarray
    w_times: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1)
        w_times = np.asarray(self.w_times, dtype=float).reshape(-1)
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2:
            w = w.reshape(w_times.size, -1) if w.size else np.zeros((w_times.size, 0))
        u = np.asarray(self.u, dtype=float).reshape(-1)
        for name, arr in (("z", z), ("w", w), ("w_times", w_times), ("u", u)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "delta", bool(self.delta))
        self._validate()

    def _validate(self):
        rid = self.id
        if not math.isfinite(self.y) or self.y < 0:
            raise DataError(f"subject {rid}: observed time y={self.y} must be finite and >= 0")
        if self.w.shape[0] != self.w_times.shape[0]:
            raise DataError(f"subject {rid}: {self.w.shape[0]} marker rows but {self.w_times.size} occasion times")
        finite = self.w_times[np.isfinite(self.w_times)]
        if np.any(np.diff(finite) <= 0):
            raise DataError(f"subject {rid}: measurement times are not strictly increasing")
        if np.any(np.isnan(self.w_times)):
            raise DataError(f"subject {rid}: measurement time is NaN")
        observed = ~np.all(np.isnan(self.w), axis=1) if self.w.size else np.zeros(0, bool)
        if np.any(observed & (self.w_times > self.y)):
            raise DataError(f"subject {rid}: marker measured after the observed time y={self.y}")
        partial = observed & np.any(np.isnan(self.w), axis=1)
        if np.any(partial):
            raise DataError(f"subject {rid}: occasion with some markers missing")
        obs_u = self.u[~np.isnan(self.u)]
        if np.any(obs_u < 0):
            raise DataError(f"subject {rid}: negative intermediate-event time")
        if np.any(obs_u > self.y):
            raise DataError(f"subject {rid}: intermediate event observed after y={self.y}")

    @property
    def n_occasions(self) -> int:
        return self.w.shape[0]


@dataclass
class Cohort(Sequence):
    """Validated records sharing one (K, q, J, p_z) schema."""

    records: list[SubjectRecord]
    z_names: tuple[str, ...]
    markers: tuple[str, ...] = ()
    events: tuple[str, ...] = ()
    occasions: tuple[float | str, ...] = ()
    dropped_rows: int = 0

    def __post_init__(self):
        shapes = {(r.z.size, r.w.shape, r.u.size) for r in self.records}
        if len(shapes) > 1:
            raise DataError(f"records disagree on schema shape: {sorted(shapes)}")
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate subject ids in cohort")

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __iter__(self) -> Iterator[SubjectRecord]:
        return iter(self.records)


@dataclass(frozen=True)
class LandmarkSpec:
    """Fixed landmark ``a`` or the time of intermediate event ``event`` (0-based)."""

    kind: str
    a: float | None = None
    event: int | None = None
    tau0: float | None = None

    def __post_init__(self):
        if self.kind == "fixed":
            if self.a is None or not self.a >= 0:
                raise DataError("fixed landmark needs a >= 0")
        elif self.kind == "event":
            if self.event is None or self.event < 0:
                raise DataError("event landmark needs a nonnegative event index")
        else:
            raise DataError(f"unknown landmark kind {self.kind!r}")

    @classmethod
    def fixed(cls, a: float, tau0: float | None = None) -> "LandmarkSpec":
        return cls("fixed", a=float(a), tau0=tau0)

    @classmethod
    def at_event(cls, j: int, tau0: float | None = None) -> "LandmarkSpec":
        return cls("event", event=int(j), tau0=tau0)

    @classmethod
    def parse(cls, text: str, events: Sequence[str] = ()) -> "LandmarkSpec":
        """Parse ``fixed:<a>`` or ``event:<name-or-index>``."""
        kind, _, value = text.partition(":")
        if kind == "fixed":
            return cls.fixed(float(value))
        if kind == "event":
            if value in events:
                return cls.at_event(list(events).index(value))
            try:
                return cls.at_event(int(value))
            except ValueError:
                raise DataError(f"unknown landmark event {value!r}") from None
        raise DataError(f"cannot parse landmark {text!r}; use fixed:<a> or event:<name>")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "event": self.event, "tau0": self.tau0}

    @classmethod
    def from_dict(cls, d: dict) -> "LandmarkSpec":
        return cls(d["kind"], a=d.get("a"), event=d.get("event"), tau0=d.get("tau0"))


@dataclass(frozen=True, eq=False)
class LandmarkView:
    """A record seen from its landmark time.

    For subjects not at risk (``delta_l`` false) the predictor fields are None.
    ``w`` carries NaN where ``t_k > y_l``; ``u`` carries NaN where the event is
    right-open at the landmark (``U_j(T_L) = T_L+``), flagged in ``u_open``.
    """

    id: str
    y: float
    delta: bool
    y_l: float
    delta_l: bool
    z: np.ndarray
    residual_y: float | None = None
    w: np.ndarray | None = None
    w_times: np.ndarray | None = None
    u: np.ndarray | None = None
    u_open: np.ndarray | None = field(default=None)

    @property
    def at_risk(self) -> bool:
        return self.delta_l


def landmark_view(record: SubjectRecord, spec: LandmarkSpec) -> LandmarkView:
    """Restrict a record to the information available at its landmark time.

    Ties ``T_L = Y`` count as at risk (the at-risk indicator uses ``<=``).
    """
    if spec.kind == "fixed":
        t_l = spec.a
        at_risk = record.y >= t_l
    else:
        if spec.event >= record.u.size:
            raise DataError(f"landmark event index {spec.event} out of range (J={record.u.size})")
        t_l = record.u[spec.event]
        at_risk = not math.isnan(t_l)
    if not at_risk:
        # nobody reaches the landmark after Y, so Y_L = min(T_L, Y) = Y
        return LandmarkView(record.id, record.y, record.delta, y_l=record.y, delta_l=False, z=record.z)
    w = record.w.copy()
    w[record.w_times > t_l] = np.nan
    u = record.u.copy()
    u_open = np.isnan(u) | (u > t_l)
    u[u_open] = np.nan
    return LandmarkView(record.id, record.y, record.delta, y_l=float(t_l), delta_l=True, z=record.z,
                        residual_y=record.y - float(t_l), w=w, w_times=record.w_times, u=u, u_open=u_open)


def _read_rows(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: missing header row")
        return list(reader.fieldnames), list(reader)


def _num(value: str, what: str, rid: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DataError(f"subject {rid}: {what} value {value!r} is not numeric") from None


def _parse_delta(value: str, rid: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "1.0", "true", "t", "yes"):
        return True
    if v in ("0", "0.0", "false", "f", "no"):
        return False
    raise DataError(f"subject {rid}: delta value {value!r} is not an indicator")


def ingest_csv(outcome_file, longitudinal_file=None, events_file=None, schema: Schema | None = None) -> Cohort:
    """Read the three long-format files into validated records.

    Marker rows dated after the subject's observed time are dropped and
    counted in ``Cohort.dropped_rows``. Duplicate rows, missing values at an
    occasion inside follow-up, events after ``y`` and non-monotone measurement
    times raise :class:`DataError` naming the subject.
    """
    schema = schema or Schema()
    header, rows = _read_rows(outcome_file)
    for col in ("id", "y", "delta"):
        if col not in header:
            raise DataError(f"{outcome_file}: missing column {col!r}")
    z_cols = list(schema.z_columns) if schema.z_columns is not None else [c for c in header if c not in ("id", "y", "delta")]
    missing = [c for c in z_cols if c not in header]
    if missing:
        raise DataError(f"{outcome_file}: missing covariate columns {missing}")

    categorical = set(schema.categorical)
    for c in z_cols:
        if c in categorical:
            continue
        for r in rows:
            try:
                float(r[c])
            except ValueError:
                categorical.add(c)
                break
    z_names: list[str] = []
    levels: dict[str, list[str]] = {}
    for c in z_cols:
        if c in categorical:
            levels[c] = sorted({r[c] for r in rows})
            z_names.extend(f"{c}={lv}" for lv in levels[c])
        else:
            z_names.append(c)

    outcomes: dict[str, tuple[float, bool, np.ndarray]] = {}
    order: list[str] = []
    for r in rows:
        rid = r["id"]
        if rid in outcomes:
            raise DataError(f"subject {rid}: duplicate outcome row")
        zvals: list[float] = []
        for c in z_cols:
            if c in categorical:
                zvals.extend(1.0 if r[c] == lv else 0.0 for lv in levels[c])
            else:
                zvals.append(_num(r[c], c, rid))
        outcomes[rid] = (_num(r["y"], "y", rid), _parse_delta(r["delta"], rid), np.array(zvals))
        order.append(rid)

    n_events = len(schema.events)
    u_map = {rid: np.full(n_events, np.nan) for rid in order}
    if events_file is not None and n_events:
        eh, erows = _read_rows(events_file)
        for col in ("id", "event", "time"):
            if col not in eh:
                raise DataError(f"{events_file}: missing column {col!r}")
        for r in erows:
            rid = r["id"]
            if rid not in u_map:
                raise DataError(f"subject {rid}: event row for unknown subject")
            if r["event"] not in schema.events:
                raise DataError(f"subject {rid}: unknown event {r['event']!r}")
            j = schema.events.index(r["event"])
            if not np.isnan(u_map[rid][j]):
                raise DataError(f"subject {rid}: duplicate row for event {r['event']!r}")
            t = _num(r["time"], "event time", rid)
            if t > outcomes[rid][0]:
                raise DataError(f"subject {rid}: event {r['event']!r} at {t} after y={outcomes[rid][0]}")
            u_map[rid][j] = t

    q = len(schema.markers)
    n_occ = len(schema.occasions)
    w_map = {rid: np.full((n_occ, q), np.nan) for rid in order}
    t_map = {}
    for rid in order:
        times = np.empty(n_occ)
        for k, o in enumerate(schema.occasions):
            if isinstance(o, str):
                ut = u_map[rid][schema.events.index(o)]
                times[k] = np.inf if np.isnan(ut) else ut
            else:
                times[k] = o
        t_map[rid] = times

    dropped = 0
    if longitudinal_file is not None and q:
        lh, lrows = _read_rows(longitudinal_file)
        for col in ("id", "time", "marker", "value"):
            if col not in lh:
                raise DataError(f"{longitudinal_file}: missing column {col!r}")
        seen: set[tuple[str, int, int]] = set()
        for r in lrows:
            rid = r["id"]
            if rid not in w_map:
                raise DataError(f"subject {rid}: measurement for unknown subject")
            if r["marker"] not in schema.markers:
                raise DataError(f"subject {rid}: unknown marker {r['marker']!r}")
            m = schema.markers.index(r["marker"])
            t = _num(r["time"], "measurement time", rid)
            hits = np.flatnonzero(np.abs(t_map[rid] - t) <= schema.time_tol)
            if hits.size != 1:
                raise DataError(f"subject {rid}: measurement time {t} matches no declared occasion")
            k = int(hits[0])
            if (rid, k, m) in seen:
                raise DataError(f"subject {rid}: duplicate measurement of {r['marker']!r} at t={t}")
            seen.add((rid, k, m))
            if t > outcomes[rid][0]:
                dropped += 1
                continue
            if r["value"].strip() == "":
                raise DataError(f"subject {rid}: missing value for {r['marker']!r} at t={t}")
            w_map[rid][k, m] = _num(r["value"], r["marker"], rid)
    if dropped:
        logger.warning("dropped %d measurement rows dated after the observed time", dropped)

    records = []
    for rid in order:
        y, delta, z = outcomes[rid]
        w = w_map[rid]
        inside = t_map[rid] <= y
        gaps = inside & np.any(np.isnan(w), axis=1) if q else np.zeros(n_occ, bool)
        if np.any(gaps):
            k = int(np.flatnonzero(gaps)[0])
            raise DataError(f"subject {rid}: missing marker values at occasion {k + 1} (t={t_map[rid][k]}) inside follow-up")
        records.append(SubjectRecord(rid, y, delta, z, w, t_map[rid], u_map[rid]))
    return Cohort(records, tuple(z_names), schema.markers, schema.events, schema.occasions, dropped)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(cohort: Cohort, outcome_file, longitudinal_file, events_file) -> None:
    """Write a cohort in the three-file long format (inverse of :func:`ingest_csv`)."""
    with open(outcome_file, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["id", "y", "delta", *cohort.z_names])
        for r in cohort:
            wr.writerow([r.id, _fmt(r.y), int(r.delta), *(_fmt(v) for v in r.z)])
    with open(longitudinal_file, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["id", "time", "marker", "value"])
        for r in cohort:
            for k in range(r.w.shape[0]):
                if not np.isfinite(r.w_times[k]) or np.isnan(r.w[k]).all():
                    continue
                for m, name in enumerate(cohort.markers):
                    wr.writerow([r.id, _fmt(r.w_times[k]), name, _fmt(r.w[k, m])])
    with open(events_file, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["id", "event", "time"])
        for r in cohort:
            for j, name in enumerate(cohort.events):
                if not np.isnan(r.u[j]):
                    wr.writerow([r.id, name, _fmt(r.u[j])])


def cohort_files(directory, prefix: str) -> tuple[Path, Path, Path]:
    d = Path(directory)
    return d / f"{prefix}_outcomes.csv", d / f"{prefix}_longitudinal.csv", d / f"{prefix}_events.csv"
