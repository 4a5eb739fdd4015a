"""A trained landmark forest: design metadata plus the fitted ensemble.

The bundle is a versioned JSON document; loading a bundle written by a
different format version is refused.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .curves import SurvivalCurves
from .data import Cohort, DataError, LandmarkSpec
from .ensemble import MARTINGALE, Ensemble, fit, predict_survival
from .preprocess import LandmarkDesign, build_design, select_columns

BUNDLE_FORMAT = "landmark-forest-bundle"
BUNDLE_VERSION = 1


class BundleVersionError(ValueError):
    """The bundle was written by an incompatible format version."""


@dataclass(eq=False)
class LandmarkForest:
    ensemble: Ensemble
    landmark: LandmarkSpec
    big_m: float
    feature_names: list[str]
    columns: np.ndarray
    z_names: tuple[str, ...]
    markers: tuple[str, ...]
    events: tuple[str, ...]
    n_occasions: int
    train_ids: list[str]

    @property
    def kept_features(self) -> list[str]:
        return [self.feature_names[j] for j in self.columns]

    @classmethod
    def train(cls, cohort: Cohort, landmark: LandmarkSpec, B: int = 500, mtry: int | None = None,
              min_node_size: int = 15, seed=None, n_jobs: int = 1) -> tuple["LandmarkForest", LandmarkDesign]:
        """Landmark the cohort, drop uninformative columns and fit the ensemble."""
        design = build_design(cohort, landmark)
        rows = design.at_risk
        if rows.size == 0:
            raise DataError("no subject is at risk at the landmark")
        columns = select_columns(design.X[rows])
        if columns.size == 0:
            columns = np.array([0])  # a single constant column still gives root-only trees
        ens = fit(design.X[np.ix_(rows, columns)], design.residual[rows], design.delta[rows], B=B,
                  min_node_size=min_node_size, mtry=mtry, seed=seed, rows=rows, n_total=design.n, n_jobs=n_jobs)
        k = len(cohort.occasions) if not len(cohort) else cohort[0].w.shape[0]
        model = cls(ens, landmark, design.big_m, list(design.feature_names), columns, tuple(cohort.z_names),
                    tuple(cohort.markers), tuple(cohort.events), k, list(design.ids))
        return model, design

    def design(self, cohort: Cohort) -> LandmarkDesign:
        """Query design with the training sentinel and column layout."""
        k = len(cohort.occasions) if not len(cohort) else cohort[0].w.shape[0]
        if (tuple(cohort.z_names), tuple(cohort.markers), tuple(cohort.events), k) != (
                self.z_names, self.markers, self.events, self.n_occasions):
            raise DataError("query data do not match the training schema")
        return build_design(cohort, self.landmark, big_m=self.big_m)

    def predict(self, cohort: Cohort, mode: str = MARTINGALE) -> tuple[LandmarkDesign, SurvivalCurves]:
        """Curves for the at-risk subjects of ``cohort`` (rows follow ``design.at_risk``)."""
        design = self.design(cohort)
        X = design.X[np.ix_(design.at_risk, self.columns)]
        return design, predict_survival(self.ensemble, X, mode)

    def to_dict(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "landmark": self.landmark.to_dict(),
            "big_m": self.big_m,
            "feature_names": self.feature_names,
            "columns": self.columns.tolist(),
            "z_names": list(self.z_names),
            "markers": list(self.markers),
            "events": list(self.events),
            "n_occasions": self.n_occasions,
            "train_ids": self.train_ids,
            "ensemble": self.ensemble.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LandmarkForest":
        if d.get("format") != BUNDLE_FORMAT:
            raise BundleVersionError("not a landmark forest bundle")
        if d.get("version") != BUNDLE_VERSION:
            raise BundleVersionError(
                f"bundle format version {d.get('version')!r} is not supported (expected {BUNDLE_VERSION})")
        try:
            ens = Ensemble.from_dict(d["ensemble"])
        except ValueError as exc:
            raise BundleVersionError(str(exc)) from None
        return cls(ens, LandmarkSpec.from_dict(d["landmark"]), float(d["big_m"]), list(d["feature_names"]),
                   np.array(d["columns"], dtype=int), tuple(d["z_names"]), tuple(d["markers"]),
                   tuple(d["events"]), int(d["n_occasions"]), list(d["train_ids"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LandmarkForest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
