"""Local manifold approximation and projection.

For a noisy sample at step ``j``: denoise it, retrieve the ``k`` most similar clean
trajectories, diffuse them to step ``j``, fit a PCA basis on that neighbourhood and
project the sample onto it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, tweedie_from_noise
from .errors import ParameterError, ShapeError
from .index import AnnIndex, knn

MODES = ("affine", "literal")


@dataclass(frozen=True)
class ProjectionSchedule:
    """Steps on which projection runs (inclusive) and the local-PCA settings."""

    i_lo: int
    i_hi: int
    k: int = 10
    lam: float = 0.99
    mode: str = "affine"
    n_probe: int | None = None
    deterministic: bool = False

    def __post_init__(self):
        if not 1 <= self.i_lo <= self.i_hi:
            raise ParameterError(f"active range [{self.i_lo}, {self.i_hi}] is invalid")
        if self.k < 2:
            raise ParameterError("k must be at least 2")
        if not 0.0 < self.lam <= 1.0:
            raise ParameterError("lambda must lie in (0, 1]")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")

    @classmethod
    def default(cls, M: int, **kw) -> "ProjectionSchedule":
        return cls(1, math.ceil(0.6 * M), **kw)

    def active(self, step: int) -> bool:
        return self.i_lo <= step <= self.i_hi

    def check(self, M: int) -> None:
        if self.i_hi > M:
            raise ParameterError(f"active range ends at {self.i_hi} > M = {M}")


@dataclass(frozen=True)
class LocalBasis:
    U: np.ndarray
    mean: np.ndarray
    r: int
    captured_variance_fraction: float
    mode: str = "affine"

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.mode == "literal":
            return (x @ self.U) @ self.U.T
        return self.mean + ((x - self.mean) @ self.U) @ self.U.T


def _rank_for(sv: np.ndarray, lam: float, cap: int, shape) -> tuple[int, float]:
    var = sv ** 2
    tol = sv[0] * max(shape) * np.finfo(float).eps if sv.size else 0.0
    nonzero = int(np.sum(sv > tol))
    total = var[:nonzero].sum()
    if nonzero == 0 or total <= 0:
        return 0, 1.0
    frac = np.cumsum(var[:nonzero]) / total
    r = int(np.searchsorted(frac, lam - 1e-12) + 1)
    r = min(r, nonzero, cap)
    return r, float(frac[r - 1])


def local_basis(neighbors, lam: float = 0.99, mode: str = "affine") -> LocalBasis:
    """Principal directions explaining at least ``lam`` of the neighbourhood variance.

    Affine mode centres on the neighbourhood mean and caps the rank at ``k - 1``;
    literal mode uses raw second moments and no offset.
    """
    X = np.asarray(neighbors, dtype=float)
    if X.ndim != 2:
        raise ShapeError("neighbors must be a (k, d) matrix")
    k, d = X.shape
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}")
    if mode == "affine" and k < 2:
        raise ParameterError("affine mode needs at least two neighbors")
    if k < 1:
        raise ParameterError("need at least one neighbor")
    if not 0.0 < lam <= 1.0:
        raise ParameterError("lambda must lie in (0, 1]")
    mean = X.mean(axis=0) if mode == "affine" else np.zeros(d)
    _, sv, vt = np.linalg.svd(X - mean, full_matrices=False)
    cap = min(k - 1, d) if mode == "affine" else min(k, d)
    r, frac = _rank_for(sv, lam, cap, X.shape)
    return LocalBasis(vt[:r].T.copy(), mean, r, frac, mode)


@dataclass
class LomapContext:
    """Retrieval side of the projection: index over clean trajectories in model space.

    ``key`` selects what retrieval compares: the full flattened trajectory or only
    the columns listed in ``key_columns``.
    """

    index: AnnIndex
    dataset: np.ndarray
    key_columns: np.ndarray | None = None

    def __post_init__(self):
        self.dataset = np.asarray(self.dataset, dtype=float)
        if self.index.size != len(self.dataset):
            raise ShapeError("index and dataset disagree on row count")
        want = self.dataset.shape[1] if self.key_columns is None else len(self.key_columns)
        if self.index.dim != want:
            raise ShapeError(f"index dimension {self.index.dim} != retrieval key dimension {want}")

    def key(self, x: np.ndarray) -> np.ndarray:
        return x if self.key_columns is None else x[..., self.key_columns]


def lomap_project(tau, step: int, context: LomapContext, denoiser, schedule: NoiseSchedule,
                  config: ProjectionSchedule, rng: np.random.Generator, return_basis: bool = False):
    """Project one noisy sample (or a batch) living at diffusion step ``step``.

    Steps outside ``config``'s active range return the input unchanged.
    """
    tau = np.asarray(tau, dtype=float)
    single = tau.ndim == 1
    batch = tau[None, :] if single else tau
    if batch.shape[1] != context.dataset.shape[1]:
        raise ShapeError(f"sample dim {batch.shape[1]} != dataset dim {context.dataset.shape[1]}")
    if not config.active(step):
        out = batch.copy()
        bases = [None] * len(batch)
    else:
        schedule.check_step(step)
        a = schedule.alpha_bars[step]
        denoised = tweedie_from_noise(batch, step, denoiser.predict_noise(batch, step), schedule)
        keys = context.key(denoised)
        n_probe = config.n_probe if config.n_probe is not None else context.index.n_list
        n_probe = min(n_probe, context.index.n_list)
        k = min(config.k, len(context.dataset))
        out = np.empty_like(batch)
        bases = []
        for b in range(len(batch)):
            ids = knn(context.index, keys[b], k, n_probe).ids
            clean = context.dataset[ids]
            if config.deterministic:
                noisy = math.sqrt(a) * clean
            else:
                noisy = math.sqrt(a) * clean + math.sqrt(1.0 - a) * rng.standard_normal(clean.shape)
            basis = local_basis(noisy, config.lam, config.mode)
            out[b] = basis.project(batch[b])
            bases.append(basis)
    result = out[0] if single else out
    if return_basis:
        return result, (bases[0] if single else bases)
    return result
