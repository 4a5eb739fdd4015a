import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from landmark_forest.data import Cohort, LandmarkSpec, SubjectRecord  # noqa: E402
from landmark_forest.tree import SurvivalTree  # noqa: E402


def survival_data(rng, n, p=3, censor=0.3, ties=False):
    """Random residual times, events and features."""
    X = rng.normal(size=(n, p))
    t = rng.exponential(np.exp(-0.7 * X[:, 0]))
    if ties:
        t = np.round(t, 1) + 0.1
    e = rng.random(n) > censor
    return X, t, e


def hand_tree(X, time, event, feature, threshold, left, right, weight=None):
    """A SurvivalTree with a given structure, members routed by the rules."""
    feature = np.asarray(feature, int)
    n = len(time)
    tree = SurvivalTree(feature, np.asarray(threshold, float), np.asarray(left, int), np.asarray(right, int),
                        np.zeros(feature.size), np.zeros(feature.size), np.asarray(time, float),
                        np.asarray(event, bool), np.ones(n) if weight is None else np.asarray(weight, float),
                        np.zeros(n, int), min_node_size=1)
    tree.train_node = tree.apply(X)
    return tree


def figure_cohort():
    """The three illustrated subjects: weight at age 7 and chronic infection onset."""
    recs = [
        SubjectRecord("1", 9.7, True, [], [[19.7]], [7.0], [4.8]),
        SubjectRecord("2", 11.7, True, [], [[21.5]], [7.0], [10.2]),
        SubjectRecord("3", 5.7, True, [], [[np.nan]], [7.0], [np.nan]),
    ]
    return Cohort(recs, (), ("weight",), ("cPA",), (7.0,))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def fig_cohort():
    return figure_cohort()


@pytest.fixture
def fixed7():
    return LandmarkSpec.fixed(7.0)


@pytest.fixture
def at_cpa():
    return LandmarkSpec.at_event(0)


@pytest.fixture(scope="session")
def sim_cohort():
    """A small simulated Model I training cohort shared by integration tests."""
    from landmark_forest.simulate.models import SimConfig, simulate_training

    cfg = SimConfig("I", n=600, seed=1)
    return cfg, simulate_training(cfg, np.random.default_rng(11))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
