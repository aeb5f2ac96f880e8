"""Plan-quality metrics: wall-collision artifact ratio, realism score, dynamic MSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..diffusion import Trajectory
from ..errors import ParameterError, ShapeError
from .env import PointMassEnv
from .maze import MazeSpec, wall_collision_oracle

REALISM_CAP = 1e6
_CHUNK = 2048


def artifact_ratio(plans, maze: MazeSpec) -> float:
    """Fraction of plans whose state path passes through a wall."""
    plans = list(plans)
    if not plans:
        raise ParameterError("artifact ratio of an empty batch is undefined")
    return float(np.mean([wall_collision_oracle(p, maze) for p in plans]))


@dataclass(frozen=True)
class RealismResult:
    scores: np.ndarray
    mean: float
    radii: np.ndarray
    zero_radius: np.ndarray

    @property
    def degenerate(self) -> bool:
        return bool(self.zero_radius.all())


def knn_radii(dataset, k_nn: int) -> np.ndarray:
    """Distance from each row to its ``k_nn``-th nearest other row."""
    data = np.asarray(dataset, dtype=float)
    radii = np.empty(len(data))
    for lo in range(0, len(data), _CHUNK):
        d = cdist(data[lo:lo + _CHUNK], data)
        rows = np.arange(lo, min(lo + _CHUNK, len(data)))
        d[rows - lo, rows] = np.inf
        radii[rows] = np.partition(d, k_nn - 1, axis=1)[:, k_nn - 1]
    return radii


def realism_score(samples, dataset, k_nn: int = 3, cap: float = REALISM_CAP,
                  radii: np.ndarray | None = None) -> RealismResult:
    """``max_j radius_j / ||x - x_j||`` over dataset rows, clamped at ``cap``.

    Rows whose radius is zero (duplicates) define no hypersphere and contribute 0;
    they are reported in ``zero_radius``. A sample that coincides with a row of
    positive radius has an unbounded ratio and receives ``cap``.
    """
    data = np.atleast_2d(np.asarray(dataset, dtype=float))
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if k_nn < 1:
        raise ParameterError("k_nn must be at least 1")
    if len(data) <= k_nn:
        raise ParameterError(f"dataset size {len(data)} must exceed k_nn = {k_nn}")
    if x.shape[1] != data.shape[1]:
        raise ShapeError("samples and dataset disagree on dimension")
    if radii is None:
        radii = knn_radii(data, k_nn)
    zero = radii == 0
    scores = np.empty(len(x))
    for lo in range(0, len(x), _CHUNK):
        d = cdist(x[lo:lo + _CHUNK], data)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d > 0, radii / d, np.inf)
        ratio[:, zero] = 0.0
        scores[lo:lo + _CHUNK] = np.minimum(ratio.max(axis=1), cap)
    return RealismResult(scores, float(scores.mean()), radii, zero)


def _states_actions(trajectory):
    if isinstance(trajectory, Trajectory):
        return trajectory.states, trajectory.actions
    states, actions = trajectory
    return np.asarray(states, dtype=float), np.asarray(actions, dtype=float)


def dynamic_mse(trajectory, env: PointMassEnv) -> float:
    """Mean over t of ``||f(s_t, a_t) - s_{t+1}||^2`` with the simulator as ``f``."""
    states, actions = _states_actions(trajectory)
    if states.ndim != 2 or len(states) < 2:
        raise ParameterError("dynamic MSE needs a horizon of at least 2")
    if actions.shape[0] != states.shape[0] or actions.shape[1] != env.action_dim:
        raise ShapeError("actions must be (T, action_dim) aligned with states")
    pred = env.dynamics(states[:-1], actions[:-1])
    return float(np.mean(np.sum((pred - states[1:]) ** 2, axis=1)))
