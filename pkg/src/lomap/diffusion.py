"""Noise schedules, forward diffusion, Tweedie denoising and the reverse transition.

Step index convention: ``i = 0`` is clean data (``alpha_bar[0] == 1``) and
``i = M`` is the terminal, almost pure-noise level. Every array indexed by step
has length ``M + 1`` so that ``schedule.alpha_bars[i]`` reads naturally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import NumericalGuardError, ParameterError, ScheduleValidationError, ShapeError

TERMINAL_ALPHA = 0.01
TWEEDIE_ALPHA_FLOOR = 1e-8


class Denoiser(Protocol):
    def predict_noise(self, x: np.ndarray, i: int) -> np.ndarray: ...


@dataclass(frozen=True)
class TrajectoryLayout:
    """Flattened (s_0, a_0, s_1, a_1, ...) layout of a horizon-T trajectory."""

    horizon: int
    state_dim: int
    action_dim: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.state_dim < 1 or self.action_dim < 0:
            raise ParameterError(f"invalid layout {self}")

    @property
    def step_dim(self) -> int:
        return self.state_dim + self.action_dim

    @property
    def dim(self) -> int:
        return self.horizon * self.step_dim

    def state_index(self, t: int, j: int = 0) -> int:
        return t * self.step_dim + j

    def state_slice(self, t: int) -> slice:
        start = t * self.step_dim
        return slice(start, start + self.state_dim)

    def state_columns(self, steps) -> np.ndarray:
        """Flat column indices of the state blocks at ``steps`` (negative counts from the end)."""
        cols = []
        for t in steps:
            t = int(t) + self.horizon if int(t) < 0 else int(t)
            if not 0 <= t < self.horizon:
                raise ParameterError(f"timestep {t} outside [0, {self.horizon - 1}]")
            cols.extend(range(t * self.step_dim, t * self.step_dim + self.state_dim))
        return np.array(sorted(set(cols)), dtype=int)

    def action_slice(self, t: int) -> slice:
        start = t * self.step_dim + self.state_dim
        return slice(start, start + self.action_dim)

    def unflatten(self, x: np.ndarray) -> np.ndarray:
        """(..., d) -> (..., T, state_dim + action_dim)."""
        x = np.asarray(x)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"expected last axis {self.dim}, got {x.shape[-1]}")
        return x.reshape(x.shape[:-1] + (self.horizon, self.step_dim))

    def flatten(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return x.reshape(x.shape[:-2] + (self.dim,))

    def states(self, x: np.ndarray) -> np.ndarray:
        return self.unflatten(x)[..., : self.state_dim]

    def actions(self, x: np.ndarray) -> np.ndarray:
        return self.unflatten(x)[..., self.state_dim :]


@dataclass(frozen=True)
class Trajectory:
    data: np.ndarray
    layout: TrajectoryLayout

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.layout.dim,):
            raise ShapeError(f"trajectory data must have shape ({self.layout.dim},), got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_arrays(cls, states: np.ndarray, actions: np.ndarray | None = None) -> "Trajectory":
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if actions is None:
            actions = np.zeros((states.shape[0], 0))
        actions = np.asarray(actions, dtype=float).reshape(states.shape[0], -1)
        layout = TrajectoryLayout(states.shape[0], states.shape[1], actions.shape[1])
        return cls(np.concatenate([states, actions], axis=1).ravel(), layout)

    @property
    def horizon(self) -> int:
        return self.layout.horizon

    @property
    def states(self) -> np.ndarray:
        return self.layout.states(self.data)

    @property
    def actions(self) -> np.ndarray:
        return self.layout.actions(self.data)


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable variance schedule over ``M`` diffusion steps.

    ``betas[i]``, ``alpha_bars[i]`` and ``posterior_var[i]`` are indexed by step,
    with ``betas[0] = 0`` and ``alpha_bars[0] = 1`` as placeholders for clean data.
    ``posterior_var[i]`` is the reverse-step variance
    ``beta_i * (1 - alpha_{i-1}) / (1 - alpha_i)``, which vanishes at ``i = 1``.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray
    posterior_var: np.ndarray
    kind: str = "custom"
    beta_min: float = float("nan")
    beta_max: float = float("nan")
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def M(self) -> int:
        return len(self.betas) - 1

    @classmethod
    def from_betas(cls, betas, *, kind: str = "custom", force: bool = False, **meta) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=float)
        if betas.ndim != 1 or betas.size < 1:
            raise ParameterError("betas must be a nonempty vector")
        if not np.all((betas > 0) & (betas < 1)):
            raise ParameterError("every beta must lie in (0, 1)")
        full = np.concatenate([[0.0], betas])
        alpha_bars = np.cumprod(1.0 - full)
        if not force and alpha_bars[-1] >= TERMINAL_ALPHA:
            raise ScheduleValidationError(
                f"alpha_M = {alpha_bars[-1]:.4g} >= {TERMINAL_ALPHA}; pass force=True to accept"
            )
        post = np.zeros_like(full)
        post[1:] = full[1:] * (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:])
        for arr in (full, alpha_bars, post):
            arr.setflags(write=False)
        return cls(full, alpha_bars, post, kind, meta.pop("beta_min", float("nan")),
                   meta.pop("beta_max", float("nan")), meta)

    def alpha(self, i: int) -> float:
        self.check_step(i, lo=0)
        return float(self.alpha_bars[i])

    def check_step(self, i: int, lo: int = 1) -> None:
        if not (lo <= i <= self.M):
            raise ParameterError(f"step {i} outside [{lo}, {self.M}]")

    def describe(self) -> dict:
        return {"kind": self.kind, "M": self.M, "beta_min": self.beta_min, "beta_max": self.beta_max}


def build_schedule(M: int, kind: str = "cosine", beta_min: float = 1e-4, beta_max: float = 0.999,
                   force: bool = False) -> NoiseSchedule:
    """Linear or cosine schedule with ``M`` steps.

    For ``cosine`` the betas follow the squared-cosine alpha curve and are clipped
    to ``[beta_min, beta_max]``.
    """
    if not isinstance(M, (int, np.integer)) or M < 1:
        raise ParameterError(f"M must be a positive integer, got {M!r}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ParameterError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, M) if M > 1 else np.array([beta_min])
    elif kind == "cosine":
        s = 0.008
        t = np.arange(M + 1) / M
        f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], beta_min, beta_max)
    else:
        raise ParameterError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule.from_betas(betas, kind=kind, force=force, beta_min=beta_min, beta_max=beta_max)


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")


def forward_diffuse(tau0, i: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """tau^i = sqrt(alpha_i) tau^0 + sqrt(1 - alpha_i) eps. Broadcasts over leading axes."""
    tau0 = np.asarray(tau0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    _check_dims(tau0, eps)
    schedule.check_step(i, lo=0)
    if i == 0:
        return tau0.copy()
    a = schedule.alpha_bars[i]
    return math.sqrt(a) * tau0 + math.sqrt(1.0 - a) * eps


def tweedie_from_noise(tau_i, i: int, eps_hat, schedule: NoiseSchedule) -> np.ndarray:
    a = schedule.alpha_bars[i]
    if a < TWEEDIE_ALPHA_FLOOR:
        raise NumericalGuardError(f"alpha_{i} = {a:.3g} is below {TWEEDIE_ALPHA_FLOOR}; denoised estimate undefined")
    return (tau_i - math.sqrt(1.0 - a) * eps_hat) / math.sqrt(a)


def tweedie_denoise(tau_i, i: int, denoiser: Denoiser, schedule: NoiseSchedule) -> np.ndarray:
    """Posterior-mean estimate of clean data from a noisy sample at step ``i``."""
    tau_i = np.asarray(tau_i, dtype=float)
    schedule.check_step(i)
    eps_hat = denoiser.predict_noise(tau_i, i)
    _check_dims(tau_i, eps_hat)
    return tweedie_from_noise(tau_i, i, eps_hat, schedule)


def reverse_mean(tau_i, i: int, denoiser: Denoiser, schedule: NoiseSchedule) -> np.ndarray:
    """DDPM posterior mean (tau^i - beta_i / sqrt(1 - alpha_i) eps) / sqrt(1 - beta_i)."""
    tau_i = np.asarray(tau_i, dtype=float)
    schedule.check_step(i)
    eps_hat = denoiser.predict_noise(tau_i, i)
    _check_dims(tau_i, eps_hat)
    b = schedule.betas[i]
    a = schedule.alpha_bars[i]
    return (tau_i - b / math.sqrt(1.0 - a) * eps_hat) / math.sqrt(1.0 - b)


def sample_transition(mean, i: int, schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(mean, Sigma^i); the final step (i = 1) returns the mean."""
    mean = np.asarray(mean, dtype=float)
    if i <= 1:
        return mean.copy()
    z = rng.standard_normal(mean.shape)
    return mean + math.sqrt(schedule.posterior_var[i]) * z


def reverse_step(tau_i, i: int, denoiser: Denoiser, schedule: NoiseSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    return sample_transition(reverse_mean(tau_i, i, denoiser, schedule), i, schedule, rng)


def sample_unguided(denoiser: Denoiser, schedule: NoiseSchedule, dim: int, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Plain ancestral sampling of ``n`` vectors, tau^M ~ N(0, I)."""
    x = rng.standard_normal((n, dim))
    for i in range(schedule.M, 0, -1):
        x = reverse_step(x, i, denoiser, schedule, rng)
    return x
