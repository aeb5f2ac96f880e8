"""Noise predictors: the exact Gaussian-mixture denoiser and a trainable MLP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .diffusion import NoiseSchedule
from .errors import DivergenceError, ParameterError, ShapeError
from .mlp import MLP, Adam, iterate_epochs, sinusoidal_table


@dataclass(frozen=True)
class GmmSpec:
    """Isotropic Gaussian mixture: weights (C,), means (C, d), variances (C,)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if not (w.shape[0] == m.shape[0] == v.shape[0]):
            raise ShapeError("weights, means and variances must agree on component count")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError("weights must be nonnegative and sum to 1")
        if np.any(v <= 0):
            raise ParameterError("component variances must be positive")
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            object.__setattr__(self, name, arr)

    @classmethod
    def single(cls, mean, variance: float) -> "GmmSpec":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(np.ones(1), mean[None, :], np.array([float(variance)]))

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def analytic_gmm_predict_noise(tau_i, i: int, gmm: GmmSpec, schedule: NoiseSchedule) -> np.ndarray:
    """Exact ``-sqrt(1 - alpha_i) * grad log p_i(tau_i)`` for mixture data.

    The noised marginal is a mixture with means ``sqrt(alpha_i) m_c`` and
    variances ``alpha_i s_c^2 + 1 - alpha_i``; responsibilities use log-sum-exp.
    """
    x = np.asarray(tau_i, dtype=float)
    if x.shape[-1] != gmm.dim:
        raise ShapeError(f"input dim {x.shape[-1]} != mixture dim {gmm.dim}")
    schedule.check_step(i)
    a = schedule.alpha_bars[i]
    var = a * gmm.variances + (1.0 - a)
    centers = math.sqrt(a) * gmm.means
    diff = x[..., None, :] - centers
    sq = np.einsum("...cd,...cd->...c", diff, diff)
    with np.errstate(divide="ignore"):  # zero-weight components get log 0 = -inf
        logw = np.log(gmm.weights)
    logp = logw - 0.5 * gmm.dim * np.log(var) - 0.5 * sq / var
    resp = np.exp(logp - logsumexp(logp, axis=-1, keepdims=True))
    score = -np.einsum("...c,...cd->...d", resp / var, diff)
    return -math.sqrt(1.0 - a) * score


@dataclass
class AnalyticGmmDenoiser:
    gmm: GmmSpec
    schedule: NoiseSchedule

    def predict_noise(self, x, i):
        return analytic_gmm_predict_noise(x, i, self.gmm, self.schedule)


@dataclass
class TrainConfig:
    steps: int = 10_000
    batch_size: int = 64
    lr: float = 1e-3
    hidden: tuple = (128, 128)
    embed_dim: int = 32
    activation: str = "silu"
    gaussian_skip: bool = True

    def describe(self) -> dict:
        return {"steps": self.steps, "batch_size": self.batch_size, "lr": self.lr,
                "hidden": list(self.hidden), "embed_dim": self.embed_dim, "activation": self.activation,
                "gaussian_skip": self.gaussian_skip}


class StepConditionedNet:
    """MLP on ``[x, embedding(i)]`` shared by the denoiser and the return guide."""

    def __init__(self, net: MLP, embedding: np.ndarray, dim: int):
        if net.widths[0] != dim + embedding.shape[1]:
            raise ShapeError("network input width must equal dim + embedding width")
        self.net = net
        self.embedding = np.asarray(embedding, dtype=float)
        self.dim = dim
        self.loss_history: list[float] = []

    @property
    def M(self) -> int:
        return self.embedding.shape[0] - 1

    def _inputs(self, x, i):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"input dim {x.shape[-1]} != {self.dim}")
        steps = np.broadcast_to(np.asarray(i), x.shape[:-1])
        if np.any(steps < 0) or np.any(steps > self.M):
            raise ParameterError(f"step index outside [0, {self.M}]")
        return np.concatenate([x, self.embedding[steps]], axis=-1)

    def forward(self, x, i, keep: bool = False):
        return self.net.forward(self._inputs(x, i), keep=keep)


class MlpDenoiser(StepConditionedNet):
    """Noise predictor ``skip(x, i) + net([x, emb(i)])``.

    The optional skip term is the exact noise prediction for a diagonal Gaussian
    fitted to the data (per-feature ``skip_mean`` and ``skip_var``). Near pure noise
    the optimal predictor is almost linear in ``x``, which a small MLP fits poorly;
    with the skip the network only learns the non-Gaussian residual.
    """

    def __init__(self, net, embedding, dim, skip_mean=None, skip_var=None):
        super().__init__(net, embedding, dim)
        if (skip_mean is None) != (skip_var is None):
            raise ParameterError("skip mean and variance must be given together")
        self.skip_mean = None if skip_mean is None else np.asarray(skip_mean, dtype=float).reshape(dim)
        self.skip_var = None if skip_var is None else np.asarray(skip_var, dtype=float).reshape(dim)
        self._alpha_bars = None

    def attach_schedule(self, alpha_bars) -> None:
        alpha_bars = np.asarray(alpha_bars, dtype=float)
        if len(alpha_bars) != self.M + 1:
            raise ShapeError("schedule length does not match the step embedding")
        self._alpha_bars = alpha_bars

    def skip(self, x, i) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.skip_mean is None:
            return np.zeros_like(x)
        if self._alpha_bars is None:
            raise ParameterError("denoiser with a skip term needs attach_schedule() first")
        a = self._alpha_bars[np.asarray(i)]
        a = a[..., None] if np.ndim(a) else a
        return np.sqrt(1.0 - a) * (x - np.sqrt(a) * self.skip_mean) / (a * self.skip_var + 1.0 - a)

    def predict_noise(self, x, i):
        return self.forward(x, i) + self.skip(x, i)


def mlp_predict_noise(denoiser: MlpDenoiser, tau_i, i) -> np.ndarray:
    return denoiser.predict_noise(tau_i, i)


def init_mlp_denoiser(dim: int, M: int, config: TrainConfig, rng: np.random.Generator,
                      skip_mean=None, skip_var=None) -> MlpDenoiser:
    widths = [dim + config.embed_dim, *config.hidden, dim]
    return MlpDenoiser(MLP(widths, config.activation, rng=rng), sinusoidal_table(M, config.embed_dim), dim,
                       skip_mean, skip_var)


def denoiser_loss_and_grads(model: MlpDenoiser, noisy, steps, eps, mask=None):
    """Mean over the batch of ||eps - eps_theta(noisy, i)||^2 and its parameter gradients.

    ``mask`` (length d, 0/1) drops features from the squared error.
    """
    pred, cache = model.forward(noisy, steps, keep=True)
    resid = pred + model.skip(noisy, steps) - eps
    if mask is not None:
        resid = resid * mask
    n = noisy.shape[0]
    loss = float(np.sum(resid * resid) / n)
    grads = model.net.backward(cache, 2.0 * resid / n)
    return loss, grads


def _check_finite(loss: float, step: int, what: str) -> None:
    if not math.isfinite(loss):
        raise DivergenceError(f"{what} training diverged at step {step} (loss={loss})")


def _clean_mask(columns, dim: int):
    if columns is None:
        return None, None
    cols = np.unique(np.asarray(columns, dtype=int).ravel())
    if cols.size == 0:
        return None, None
    if cols[0] < 0 or cols[-1] >= dim:
        raise ParameterError(f"clean columns must lie in [0, {dim})")
    if cols.size == dim:
        raise ParameterError("clean columns cover every feature, nothing left to learn")
    mask = np.ones(dim)
    mask[cols] = 0.0
    return cols, mask


def train_mlp_denoiser(dataset, schedule: NoiseSchedule, config: TrainConfig | None = None,
                       rng: np.random.Generator | None = None, model: MlpDenoiser | None = None,
                       clean_columns=None) -> MlpDenoiser:
    """Fit the noise-prediction objective with uniform step sampling over 1..M.

    ``clean_columns`` lists features the sampler will pin by inpainting (typically
    the start and goal states). They are fed to the network un-noised and left out
    of the loss, so the model learns to continue from exact endpoint values instead
    of being surprised by them at sampling time.

    ``model.loss_history`` receives the mean loss of every epoch
    (one epoch = ceil(N / batch_size) optimizer steps).
    """
    config = config or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ParameterError("dataset must be a nonempty (N, d) matrix")
    if model is None:
        skip = (data.mean(axis=0), np.maximum(data.var(axis=0), 1e-6)) if config.gaussian_skip else (None, None)
        model = init_mlp_denoiser(data.shape[1], schedule.M, config, rng, *skip)
    elif model.dim != data.shape[1]:
        raise ShapeError("model dimension does not match the dataset")
    model.attach_schedule(schedule.alpha_bars)
    cols, mask = _clean_mask(clean_columns, data.shape[1])
    opt = Adam(model.net.params, lr=config.lr)
    sqrt_a = np.sqrt(schedule.alpha_bars)
    sqrt_1ma = np.sqrt(1.0 - schedule.alpha_bars)
    epoch_losses: list[list[float]] = []
    for epoch, step in iterate_epochs(len(data), config.batch_size, config.steps):
        rows = data[rng.integers(0, len(data), size=config.batch_size)]
        steps = rng.integers(1, schedule.M + 1, size=config.batch_size)
        eps = rng.standard_normal(rows.shape)
        noisy = sqrt_a[steps, None] * rows + sqrt_1ma[steps, None] * eps
        if cols is not None:
            noisy[:, cols] = rows[:, cols]
        loss, grads = denoiser_loss_and_grads(model, noisy, steps, eps, mask)
        _check_finite(loss, step, "denoiser")
        opt.step(model.net.params, grads)
        if epoch == len(epoch_losses):
            epoch_losses.append([])
        epoch_losses[-1].append(loss)
    model.loss_history = [float(np.mean(e)) for e in epoch_losses]
    return model
