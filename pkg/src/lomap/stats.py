"""Two-sample energy-distance permutation test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class EnergyTest:
    statistic: float
    p_value: float
    permutations: int

    def rejects(self, alpha: float = 0.01) -> bool:
        return self.p_value < alpha


def _energy_from_distances(D: np.ndarray, in_x: np.ndarray) -> float:
    nx = int(in_x.sum())
    ny = len(in_x) - nx
    dxy = D[np.ix_(in_x, ~in_x)].mean()
    dxx = D[np.ix_(in_x, in_x)].sum() / (nx * nx)
    dyy = D[np.ix_(~in_x, ~in_x)].sum() / (ny * ny)
    return float(2.0 * dxy - dxx - dyy)


def energy_distance(x, y) -> float:
    """V-statistic ``2 E|X - Y| - E|X - X'| - E|Y - Y'|``."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    Z = np.concatenate([x, y])
    mask = np.zeros(len(Z), dtype=bool)
    mask[: len(x)] = True
    return _energy_from_distances(cdist(Z, Z), mask)


def energy_test(x, y, permutations: int = 200, seed: int = 0) -> EnergyTest:
    """Permutation p-value ``(1 + #{E_perm >= E_obs}) / (1 + permutations)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ShapeError("samples must share a dimension")
    if len(x) < 2 or len(y) < 2:
        raise ParameterError("each sample needs at least two points")
    if permutations < 1:
        raise ParameterError("need at least one permutation")
    Z = np.concatenate([x, y])
    D = cdist(Z, Z)
    mask = np.zeros(len(Z), dtype=bool)
    mask[: len(x)] = True
    observed = _energy_from_distances(D, mask)
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(permutations):
        exceed += _energy_from_distances(D, rng.permutation(mask)) >= observed
    return EnergyTest(observed, (1 + exceed) / (1 + permutations), permutations)
