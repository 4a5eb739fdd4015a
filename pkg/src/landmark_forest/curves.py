"""Step survival curves and the weighted Nelson-Aalen estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class StepSurvivalCurve:
    """Right-continuous nonincreasing step function equal to 1 before the first jump.

    Times are on the residual scale (time since the landmark).
    """

    jump_times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "jump_times", np.asarray(self.jump_times, float))
        object.__setattr__(self, "values", np.asarray(self.values, float))

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        return np.where(idx >= 0, self.values[np.maximum(idx, 0)] if self.values.size else 1.0, 1.0)

    def left(self, t) -> np.ndarray:
        """Left limit ``S(t-)``."""
        idx = np.searchsorted(self.jump_times, t, side="left") - 1
        return np.where(idx >= 0, self.values[np.maximum(idx, 0)] if self.values.size else 1.0, 1.0)

    def is_valid(self) -> bool:
        t, v = self.jump_times, self.values
        return bool(
            t.shape == v.shape
            and np.all(np.diff(t) > 0)
            and np.all(t >= 0)
            and np.all(v > 0)
            and np.all(v <= 1)
            and np.all(np.diff(np.concatenate([[1.0], v])) <= 0)
        )

    @classmethod
    def constant(cls) -> "StepSurvivalCurve":
        return cls(np.empty(0), np.empty(0))


def weighted_nelson_aalen(residual, event, weight=None, grid=None):
    """Cumulative-hazard increments of the weighted Nelson-Aalen estimator.

    Returns ``(grid, increments)`` where ``grid`` defaults to the distinct
    event times; at each grid time the increment is
    ``sum w_i dN_i / sum w_i I(r_i >= t)`` (0 when nobody is at risk).
    """
    residual = np.asarray(residual, float)
    event = np.asarray(event, bool)
    weight = np.ones_like(residual) if weight is None else np.asarray(weight, float)
    if grid is None:
        grid = np.unique(residual[event & (weight > 0)])
    num, den = risk_tables(residual, event, weight[None, :], grid)
    return grid, hazard_increments(num[0], den[0])


def risk_tables(residual, event, weights, grid):
    """Weighted event counts and at-risk sums on ``grid`` for each weight row.

    ``weights`` is ``(q, n)``; returns two ``(q, len(grid))`` arrays.
    """
    residual = np.asarray(residual, float)
    event = np.asarray(event, bool)
    weights = np.atleast_2d(np.asarray(weights, float))
    grid = np.asarray(grid, float)
    pos = np.searchsorted(grid, residual, side="right")  # grid points <= r_i
    q, d = weights.shape[0], grid.size
    # at-risk sum at grid[g] = sum of weights with pos_i > g
    by_pos = np.zeros((q, d + 1))
    np.add.at(by_pos.T, pos, weights.T)
    den = np.cumsum(by_pos[:, ::-1], axis=1)[:, ::-1][:, 1:]
    num = np.zeros((q, d))
    hit = event & (pos > 0)
    if hit.any():
        exact = grid[pos[hit] - 1] == residual[hit]
        idx = np.flatnonzero(hit)[exact]
        np.add.at(num.T, pos[idx] - 1, weights[:, idx].T)
    return num, den


def hazard_increments(num, den):
    num = np.asarray(num, float)
    den = np.asarray(den, float)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass(eq=False)
class SurvivalCurves:
    """A batch of step survival curves sharing one time grid.

    ``values[i, g]`` is curve i at ``times[g]`` (right-continuous, 1 before
    ``times[0]``).
    """

    times: np.ndarray
    values: np.ndarray

    @classmethod
    def from_increments(cls, times, increments) -> "SurvivalCurves":
        return cls(np.asarray(times, float), np.exp(-np.cumsum(increments, axis=1)))

    def __len__(self) -> int:
        return self.values.shape[0]

    def _index(self, t, left):
        return np.searchsorted(self.times, t, side="left" if left else "right") - 1

    def evaluate(self, t, left: bool = False) -> np.ndarray:
        """All curves at the common times ``t``; returns ``(n_curves, len(t))``."""
        idx = self._index(np.asarray(t, float), left)
        padded = np.concatenate([np.ones((len(self), 1)), self.values], axis=1)
        return padded[:, idx + 1]

    def evaluate_each(self, t, left: bool = False) -> np.ndarray:
        """Curve ``i`` at its own time ``t[i]``."""
        idx = self._index(np.asarray(t, float), left)
        padded = np.concatenate([np.ones((len(self), 1)), self.values], axis=1)
        return padded[np.arange(len(self)), idx + 1]

    def curve(self, i: int) -> StepSurvivalCurve:
        v = self.values[i]
        prev = np.concatenate([[1.0], v[:-1]])
        jumps = v < prev
        return StepSurvivalCurve(self.times[jumps], v[jumps])

    def subset(self, rows) -> "SurvivalCurves":
        return SurvivalCurves(self.times, self.values[rows])


@dataclass(eq=False)
class GridCurves:
    """Curves known on a grid and linearly interpolated between grid points."""

    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None

    def __len__(self) -> int:
        return self.values.shape[0]

    def evaluate(self, t, left: bool = False) -> np.ndarray:
        t = np.asarray(t, float)
        return np.stack([np.interp(t, self.times, row) for row in self.values])

    def subset(self, rows) -> "GridCurves":
        se = None if self.stderr is None else self.stderr[rows]
        return GridCurves(self.times, self.values[rows], se)
