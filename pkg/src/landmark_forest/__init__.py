"""Dynamic landmark risk prediction with survival tree ensembles."""
from .curves import GridCurves, StepSurvivalCurve, SurvivalCurves, weighted_nelson_aalen
from .data import Cohort, DataError, LandmarkSpec, Schema, SubjectRecord, ingest_csv, landmark_view, write_csv
from .ensemble import HAZARD_AVERAGE, MARTINGALE, Ensemble, fit, oob_survival, predict_survival, subject_weights
from .evaluate import (
    CensoringModel,
    concordance_t,
    fit_censoring,
    integrated_concordance,
    kaplan_meier,
    truth_metrics,
)
from .model import BundleVersionError, LandmarkForest
from .preprocess import LandmarkDesign, build_design, transform
from .tree import SurvivalTree, grow, prune, prune_at
from .vimp import grouped_importance, importance_report, oob_context, permutation_importance

__version__ = "0.1.0"

__all__ = [
    "BundleVersionError", "CensoringModel", "Cohort", "DataError", "Ensemble", "GridCurves", "HAZARD_AVERAGE",
    "LandmarkDesign", "LandmarkForest", "LandmarkSpec", "MARTINGALE", "Schema", "StepSurvivalCurve",
    "SubjectRecord", "SurvivalCurves", "SurvivalTree", "build_design", "concordance_t", "fit", "fit_censoring",
    "grouped_importance", "grow", "importance_report", "ingest_csv", "integrated_concordance", "kaplan_meier",
    "landmark_view", "oob_context", "oob_survival", "permutation_importance", "predict_survival", "prune",
    "prune_at", "subject_weights", "transform", "truth_metrics", "weighted_nelson_aalen", "write_csv",
]
