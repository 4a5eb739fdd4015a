"""Turn landmark views into fixed-length numeric design vectors.

Each longitudinal value ``W`` becomes a pair ``(W+, W-)``: both equal ``W``
when it was measured by the landmark, ``(M, -M)`` when it was not. A cutoff
split on ``W+`` then sends unmeasured subjects with the high values, a split
on ``W-`` sends them with the low values. Intermediate events enter as the
ratio ``U_j / T_L``, with ``M`` standing for "not yet happened".
"""
from __future__ import annotations

import csv
import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .data import Cohort, DataError, LandmarkSpec, LandmarkView, landmark_view

logger = logging.getLogger(__name__)

M_MULTIPLIER = 10.0


@dataclass(frozen=True, eq=False)
class FeatureVector:
    landmark_time: float
    z: np.ndarray
    marker_features: np.ndarray
    event_ratio_features: np.ndarray
    big_m: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.landmark_time], self.z, self.marker_features, self.event_ratio_features])


def transform(view: LandmarkView, big_m: float) -> FeatureVector:
    """Map an at-risk landmark view to its design vector.

    Markers are laid out occasion by occasion, each marker contributing its
    ``(plus, minus)`` pair; event ratios follow.
    """
    if not view.delta_l:
        raise DataError(f"subject {view.id}: not at risk at the landmark")
    a = view.y_l
    flat = view.w.reshape(-1)
    pairs = np.empty(2 * flat.size)
    na = np.isnan(flat)
    pairs[0::2] = np.where(na, big_m, flat)
    pairs[1::2] = np.where(na, -big_m, flat)
    if view.u.size and a <= 0:
        raise DataError(f"subject {view.id}: landmark time 0 leaves the event ratio undefined")
    ratios = np.where(view.u_open, big_m, view.u / a if a > 0 else 0.0)
    return FeatureVector(a, np.asarray(view.z, float), pairs, ratios, float(big_m))


def _finite_magnitudes(view: LandmarkView) -> float:
    vals = [abs(view.y_l)]
    vals.extend(np.abs(view.z).tolist())
    obs = view.w[~np.isnan(view.w)]
    vals.extend(np.abs(obs).tolist())
    if view.u.size and view.y_l > 0:
        vals.extend(np.abs(view.u[~view.u_open] / view.y_l).tolist())
    return max(vals)


def choose_big_m(views: Sequence[LandmarkView]) -> float:
    """Sentinel ``M = 10 * (1 + max |finite feature value|)`` over at-risk views."""
    at_risk = [v for v in views if v.delta_l]
    if not at_risk:
        raise DataError("no subject is at risk at the landmark; cannot choose M")
    return M_MULTIPLIER * (1.0 + max(_finite_magnitudes(v) for v in at_risk))


@dataclass(frozen=True)
class Variable:
    """A raw predictor and the design columns that encode it.

    ``kind`` is one of ``landmark``, ``baseline``, ``marker`` or ``event``;
    ``occasion`` indexes the measurement occasion of a marker variable.
    """

    name: str
    kind: str
    columns: tuple[int, ...]
    occasion: int | None = None


@dataclass(eq=False)
class LandmarkDesign:
    """Landmark outcomes and design matrix for every subject of a cohort.

    Rows of ``X`` for subjects not at risk are NaN. ``residual`` is
    ``Y - Y_L`` (NaN when not at risk).
    """

    ids: list[str]
    y: np.ndarray
    delta: np.ndarray
    y_l: np.ndarray
    delta_l: np.ndarray
    z: np.ndarray
    X: np.ndarray
    w_times: np.ndarray
    feature_names: list[str]
    variables: list[Variable]
    big_m: float
    landmark: LandmarkSpec

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def residual(self) -> np.ndarray:
        return np.where(self.delta_l, self.y - self.y_l, np.nan)

    @property
    def at_risk(self) -> np.ndarray:
        return np.flatnonzero(self.delta_l)

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(f"unknown variable {name!r}")

    def eligible(self, var: Variable) -> np.ndarray:
        """Subjects among whom the variable may be permuted."""
        mask = self.delta_l.copy()
        if var.kind == "marker":
            with np.errstate(invalid="ignore"):
                mask &= self.w_times[:, var.occasion] <= self.y_l
        return mask

    def subset(self, rows) -> "LandmarkDesign":
        rows = np.asarray(rows)
        return LandmarkDesign([self.ids[i] for i in rows], self.y[rows], self.delta[rows], self.y_l[rows],
                              self.delta_l[rows], self.z[rows], self.X[rows], self.w_times[rows],
                              self.feature_names, self.variables, self.big_m, self.landmark)


def feature_layout(z_names: Sequence[str], markers: Sequence[str], n_occasions: int,
                   events: Sequence[str]) -> tuple[list[str], list[Variable]]:
    """Feature names and raw-variable column map for the design layout."""
    names = ["landmark_time"]
    variables = [Variable("landmark_time", "landmark", (0,))]
    for zn in z_names:
        variables.append(Variable(zn, "baseline", (len(names),)))
        names.append(zn)
    for k in range(n_occasions):
        for m in markers:
            var = f"{m}_{k + 1}"
            variables.append(Variable(var, "marker", (len(names), len(names) + 1), occasion=k))
            names.extend([f"{var}_plus", f"{var}_minus"])
    for e in events:
        variables.append(Variable(e, "event", (len(names),)))
        names.append(f"{e}_ratio")
    return names, variables


def build_design(cohort: Cohort, spec: LandmarkSpec, big_m: float | None = None) -> LandmarkDesign:
    """Landmark every record and transform the at-risk ones.

    With ``big_m`` None the sentinel is chosen from this cohort (training);
    otherwise finite values beyond ``M`` are clamped to ``[-M, M]`` with a
    warning (prediction).
    """
    views = [landmark_view(r, spec) for r in cohort]
    if big_m is None:
        big_m = choose_big_m(views)
    k = cohort[0].w.shape[0] if len(cohort) else len(cohort.occasions)
    names, variables = feature_layout(cohort.z_names, cohort.markers, k, cohort.events)
    n, p = len(views), len(names)
    X = np.full((n, p), np.nan)
    clamped = 0
    for i, v in enumerate(views):
        if not v.delta_l:
            continue
        row = transform(v, big_m).as_array()
        finite_big = (np.abs(row) > big_m)
        if finite_big.any():
            clamped += int(finite_big.sum())
            row = np.clip(row, -big_m, big_m)
        X[i] = row
    if clamped:
        warnings.warn(f"{clamped} feature values exceeded the sentinel M={big_m:g} and were clamped", stacklevel=2)
    return LandmarkDesign(
        ids=[v.id for v in views],
        y=np.array([v.y for v in views], float),
        delta=np.array([v.delta for v in views], bool),
        y_l=np.array([v.y_l for v in views], float),
        delta_l=np.array([v.delta_l for v in views], bool),
        z=np.array([r.z for r in cohort], float).reshape(n, len(cohort.z_names)),
        X=X,
        w_times=np.array([r.w_times for r in cohort], float).reshape(n, k),
        feature_names=names,
        variables=variables,
        big_m=float(big_m),
        landmark=spec,
    )


def select_columns(X: np.ndarray) -> np.ndarray:
    """Indices of columns left after dropping constant and duplicate columns.

    ``X`` holds the at-risk rows. The first of a group of identical columns
    is kept; neither removal changes the partitions a tree can reach.
    """
    keep: list[int] = []
    seen: dict[bytes, int] = {}
    for j in range(X.shape[1]):
        col = np.ascontiguousarray(X[:, j])
        if col.size == 0 or np.all(col == col[0]):
            continue
        key = col.tobytes()
        if key in seen:
            continue
        seen[key] = j
        keep.append(j)
    return np.array(keep, dtype=int)


def dump_design(design: LandmarkDesign, path, columns=None) -> None:
    """Write the processed at-risk design matrix as CSV (debugging aid)."""
    cols = np.arange(len(design.feature_names)) if columns is None else np.asarray(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["id", "residual", "delta", *(design.feature_names[j] for j in cols)])
        for i in design.at_risk:
            wr.writerow([design.ids[i], repr(float(design.y[i] - design.y_l[i])), int(design.delta[i]),
                         *(repr(float(v)) for v in design.X[i, cols])])
