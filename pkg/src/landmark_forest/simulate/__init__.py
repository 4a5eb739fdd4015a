"""Simulation models, true landmark curves and the replicated benchmark."""
from .benchmark import METHODS, METRICS, BenchmarkResult, BenchmarkSettings, benchmark, make_testbed
from .models import MODELS, SCENARIOS, SimConfig, SimData, calibrate_censoring, generate
from .truth import TruthOracle, truth

__all__ = [
    "METHODS", "METRICS", "MODELS", "SCENARIOS", "BenchmarkResult", "BenchmarkSettings", "SimConfig", "SimData",
    "TruthOracle", "benchmark", "calibrate_censoring", "generate", "make_testbed", "truth",
]
