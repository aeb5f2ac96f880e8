"""Return functions, the MSE-trained return guide, and the guidance-gap laboratory.

The Monte-Carlo estimators work on the Gaussian posterior of the forward process,
``q(tau0 | tau_i) = N(tau_i / sqrt(a), (1 - a) / a I)``, whose score with respect to
``tau_i`` is ``-eps / sqrt(1 - a)`` with ``eps = (tau_i - sqrt(a) tau0) / sqrt(1 - a)``.

* MSE guidance ``E_q[J grad log q]`` is estimated with plain posterior samples and a
  sample-mean baseline (the score has zero mean, so the baseline adds no bias).
* Exact guidance ``E_q[e^J grad log q] / E_q[e^J]`` is a self-normalized importance
  estimate. Sampling straight from ``q`` collapses the effective sample size once
  ``J`` varies by more than a few units across the posterior, so the proposal is a
  diagonal Gaussian adapted to ``q e^J`` by tempered moment matching first.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .denoisers import StepConditionedNet, TrainConfig, _check_finite
from .diffusion import NoiseSchedule, TrajectoryLayout
from .errors import DegenerateEstimateError, ParameterError, ShapeError
from .mlp import MLP, Adam, iterate_epochs, sinusoidal_table


@dataclass(frozen=True)
class ReturnFunction:
    """Deterministic return of clean trajectories; ``evaluate`` maps (n, d) -> (n,)."""

    evaluate: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    gamma: float = 1.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.evaluate(np.atleast_2d(x)), dtype=float)
        return out if x.ndim > 1 else out.reshape(())


def constant_return(c: float = 0.0) -> ReturnFunction:
    return ReturnFunction(lambda x: np.full(x.shape[0], float(c)), "constant")


def linear_return(a) -> ReturnFunction:
    a = np.asarray(a, dtype=float)
    return ReturnFunction(lambda x: x @ a, "linear")


def quadratic_return(normalized: bool = False) -> ReturnFunction:
    """``-||x||^2 / 2``, or ``-||x||^2 / (2 d)`` when normalized."""
    if normalized:
        return ReturnFunction(lambda x: -0.5 * np.einsum("nd,nd->n", x, x) / x.shape[1], "quadratic")
    return ReturnFunction(lambda x: -0.5 * np.einsum("nd,nd->n", x, x), "quadratic")


def discounted_reward_return(reward: Callable[[np.ndarray, np.ndarray], np.ndarray],
                             layout: TrajectoryLayout, gamma: float = 0.99) -> ReturnFunction:
    """sum_t gamma^t r(s_t, a_t); ``reward`` maps (n, T, sd), (n, T, ad) -> (n, T)."""
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError("gamma must lie in [0, 1]")
    disc = gamma ** np.arange(layout.horizon)

    def evaluate(x):
        r = reward(layout.states(x), layout.actions(x))
        return r @ disc

    return ReturnFunction(evaluate, "discounted_reward_sum", gamma)


# -- learned guide ---------------------------------------------------------------------


class MseGuide(StepConditionedNet):
    """Scalar return regressor on noisy trajectories; targets are standardized internally."""

    def __init__(self, net, embedding, dim, y_mean: float = 0.0, y_scale: float = 1.0):
        super().__init__(net, embedding, dim)
        if net.widths[-1] != 1:
            raise ShapeError("guide network must have scalar output")
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)

    def predict(self, x, i) -> np.ndarray:
        return self.forward(x, i)[..., 0] * self.y_scale + self.y_mean

    def gradient(self, x, i) -> np.ndarray:
        """grad_x J_phi(x, i), row-wise for batched x."""
        inp = self._inputs(x, i)
        out, cache = self.net.forward(inp, keep=True)
        _, g = self.net.backward(cache, np.full(out.shape, self.y_scale), need_input=True)
        return g[..., : self.dim]


def init_mse_guide(dim: int, M: int, config: TrainConfig, rng, y_mean=0.0, y_scale=1.0) -> MseGuide:
    widths = [dim + config.embed_dim, *config.hidden, 1]
    return MseGuide(MLP(widths, config.activation, rng=rng), sinusoidal_table(M, config.embed_dim), dim,
                    y_mean, y_scale)


def guide_loss_and_grads(guide: MseGuide, noisy, steps, targets):
    """Mean squared error in standardized units and its parameter gradients."""
    out, cache = guide.forward(noisy, steps, keep=True)
    z = (np.asarray(targets, dtype=float) - guide.y_mean) / guide.y_scale
    resid = out[:, 0] - z
    n = len(resid)
    loss = float(resid @ resid / n)
    grads = guide.net.backward(cache, (2.0 * resid / n)[:, None])
    return loss, grads


def train_mse_guide(trajectories, returns, schedule: NoiseSchedule, config: TrainConfig | None = None,
                    rng: np.random.Generator | None = None) -> MseGuide:
    """Regress J(tau0) on (tau_i, i) with tau_i drawn from the forward process.

    Steps are drawn from 0..M so the guide can also score finished plans.
    """
    config = config or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    data = np.asarray(trajectories, dtype=float)
    y = np.asarray(returns, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0 or y.shape != (data.shape[0],):
        raise ParameterError("need a nonempty (N, d) matrix and N returns")
    if not np.all(np.isfinite(y)):
        raise ParameterError("returns must be finite")
    scale = float(y.std()) or 1.0
    guide = init_mse_guide(data.shape[1], schedule.M, config, rng, float(y.mean()), scale)
    opt = Adam(guide.net.params, lr=config.lr)
    sqrt_a = np.sqrt(schedule.alpha_bars)
    sqrt_1ma = np.sqrt(1.0 - schedule.alpha_bars)
    epoch_losses: list[list[float]] = []
    for epoch, step in iterate_epochs(len(data), config.batch_size, config.steps):
        idx = rng.integers(0, len(data), size=config.batch_size)
        steps = rng.integers(0, schedule.M + 1, size=config.batch_size)
        noisy = sqrt_a[steps, None] * data[idx] + sqrt_1ma[steps, None] * rng.standard_normal((len(idx), data.shape[1]))
        loss, grads = guide_loss_and_grads(guide, noisy, steps, y[idx])
        _check_finite(loss, step, "guide")
        opt.step(guide.net.params, grads)
        if epoch == len(epoch_losses):
            epoch_losses.append([])
        epoch_losses[-1].append(loss)
    guide.loss_history = [float(np.mean(e)) for e in epoch_losses]
    return guide


def apply_guidance(mu, i: int, guide, omega: float, schedule: NoiseSchedule) -> np.ndarray:
    """mu + omega * Sigma^i * grad J_phi evaluated at mu."""
    if omega < 0:
        raise ParameterError("guidance scale must be nonnegative")
    mu = np.asarray(mu, dtype=float)
    if omega == 0 or guide is None:
        return mu.copy()
    return mu + omega * schedule.posterior_var[i] * guide.gradient(mu, i)


# -- Monte-Carlo guidance estimators ------------------------------------------------------


@dataclass
class McEstimate:
    value: np.ndarray
    stderr: np.ndarray
    ess: float


def posterior_params(tau_i, i: int, schedule: NoiseSchedule):
    """Mean and per-coordinate std of q(tau0 | tau_i)."""
    schedule.check_step(i)
    a = schedule.alpha_bars[i]
    return np.asarray(tau_i, dtype=float) / math.sqrt(a), math.sqrt((1.0 - a) / a)


def _score(tau_i, x, a: float) -> np.ndarray:
    eps = (tau_i - math.sqrt(a) * x) / math.sqrt(1.0 - a)
    return -eps / math.sqrt(1.0 - a)


def _eval_returns(J: ReturnFunction, x) -> np.ndarray:
    out = np.asarray(J.evaluate(x), dtype=float)
    if out.shape != (x.shape[0],):
        raise ShapeError("return function must map (n, d) to (n,)")
    if not np.all(np.isfinite(out)):
        raise DegenerateEstimateError("return function produced non-finite values")
    return out


def _log_gauss(x, mean, sd) -> np.ndarray:
    return -0.5 * np.sum(((x - mean) / sd) ** 2, axis=1) - np.sum(np.log(np.broadcast_to(sd, mean.shape)))


def _ess_fraction(logw: np.ndarray) -> float:
    w = np.exp(logw - logw.max())
    return float(w.sum() ** 2 / (w @ w) / len(w))


def tilted_proposal(mean, sd: float, J: ReturnFunction, rng, pilot: int, target_ess: float = 0.5,
                    max_stages: int = 200, polish: int = 2):
    """Diagonal Gaussian approximating q e^J, found by tempering e^{beta J} from beta = 0 to 1."""
    mean = np.asarray(mean, dtype=float)
    q_sd = np.full(mean.shape, sd)
    mu, sig = mean.copy(), q_sd.copy()
    beta, remaining_polish = 0.0, polish
    for _ in range(max_stages):
        x = mu + sig * rng.standard_normal((pilot, mean.size))
        base = _log_gauss(x, mean, q_sd) - _log_gauss(x, mu, sig)
        jx = _eval_returns(J, x)
        if _ess_fraction(base + jx) >= target_ess:
            new_beta = 1.0
        elif _ess_fraction(base + beta * jx) < target_ess:
            new_beta = beta
        else:
            lo, hi = beta, 1.0
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if _ess_fraction(base + mid * jx) >= target_ess else (lo, mid)
            new_beta = lo
        logw = base + new_beta * jx
        w = np.exp(logw - logw.max())
        w /= w.sum()
        mu = w @ x
        sig = np.sqrt(np.maximum(w @ (x - mu) ** 2, 1e-300))
        beta = new_beta
        if beta == 1.0:
            if remaining_polish == 0:
                break
            remaining_polish -= 1
    return mu, sig


def _pilot_size(n: int) -> int:
    return int(min(n, max(1000, min(5000, n // 4))))


def exact_guidance_mc(tau_i, i: int, J: ReturnFunction, schedule: NoiseSchedule, n: int,
                      rng: np.random.Generator) -> McEstimate:
    """Self-normalized estimate of grad log E_q[exp J] with per-coordinate standard errors."""
    if n < 2:
        raise ParameterError("need at least two samples")
    tau_i = np.asarray(tau_i, dtype=float)
    m, s = posterior_params(tau_i, i, schedule)
    a = schedule.alpha_bars[i]
    mu, sig = tilted_proposal(m, s, J, rng, _pilot_size(n))
    x = mu + sig * rng.standard_normal((n, tau_i.size))
    logw = _log_gauss(x, m, np.full(m.shape, s)) - _log_gauss(x, mu, sig) + _eval_returns(J, x)
    if not np.isfinite(logw.max()):
        raise DegenerateEstimateError("importance weights underflowed")
    w = np.exp(logw - logw.max())
    total = w.sum()
    if not (total > 0 and np.isfinite(total)):
        raise DegenerateEstimateError("total importance weight is zero or non-finite")
    w /= total
    f = _score(tau_i, x, a)
    est = w @ f
    se = np.sqrt((w * w) @ (f - est) ** 2)
    return McEstimate(est, se, float(1.0 / (w @ w)))


def mse_guidance_mc(tau_i, i: int, J: ReturnFunction, schedule: NoiseSchedule, n: int,
                    rng: np.random.Generator) -> McEstimate:
    """Estimate of grad E_q[J] = E_q[J grad log q] from posterior samples."""
    if n < 2:
        raise ParameterError("need at least two samples")
    tau_i = np.asarray(tau_i, dtype=float)
    m, s = posterior_params(tau_i, i, schedule)
    a = schedule.alpha_bars[i]
    x = m + s * rng.standard_normal((n, tau_i.size))
    jx = _eval_returns(J, x)
    f = (jx - jx.mean())[:, None] * _score(tau_i, x, a)
    return McEstimate(f.mean(axis=0), f.std(axis=0, ddof=1) / math.sqrt(n), float(n))


def mse_value_mc(tau_i, i, J, schedule, n, rng) -> McEstimate:
    """E_q[J], the value an MSE-optimal guide converges to."""
    m, s = posterior_params(tau_i, i, schedule)
    jx = _eval_returns(J, m + s * rng.standard_normal((n, m.size)))
    return McEstimate(np.array(jx.mean()), np.array(jx.std(ddof=1) / math.sqrt(n)), float(n))


def exact_value_mc(tau_i, i, J, schedule, n, rng) -> McEstimate:
    """log E_q[exp J] with a delta-method standard error."""
    m, s = posterior_params(tau_i, i, schedule)
    mu, sig = tilted_proposal(m, s, J, rng, _pilot_size(n))
    x = mu + sig * rng.standard_normal((n, m.size))
    logw = _log_gauss(x, m, np.full(m.shape, s)) - _log_gauss(x, mu, sig) + _eval_returns(J, x)
    w = np.exp(logw - logw.max())
    value = logsumexp(logw) - math.log(n)
    se = w.std(ddof=1) / (w.mean() * math.sqrt(n))
    return McEstimate(np.array(value), np.array(se), float(w.sum() ** 2 / (w @ w)))


@dataclass
class GapReport:
    d: int
    i: int
    n: int
    exact: np.ndarray
    mse: np.ndarray
    delta: float
    stderr: float
    exact_stderr: np.ndarray = field(repr=False, default=None)
    mse_stderr: np.ndarray = field(repr=False, default=None)


def guidance_gap(tau_i, i: int, J: ReturnFunction, schedule: NoiseSchedule, n: int,
                 rng: np.random.Generator) -> GapReport:
    """Euclidean distance between exact and MSE guidance at tau_i.

    ``stderr`` is the RMS norm of the combined estimation noise,
    ``sqrt(sum_k se_exact_k^2 + se_mse_k^2)``: the scale of ``delta`` when the true gap
    is zero, and an upper bound on the delta-method error otherwise.
    """
    exact = exact_guidance_mc(tau_i, i, J, schedule, n, rng)
    mse = mse_guidance_mc(tau_i, i, J, schedule, n, rng)
    diff = exact.value - mse.value
    se = math.sqrt(float(np.sum(exact.stderr ** 2) + np.sum(mse.stderr ** 2)))
    return GapReport(len(diff), i, n, exact.value, mse.value, float(np.linalg.norm(diff)), se,
                     exact.stderr, mse.stderr)


GAP_FAMILIES = ("quadratic", "quadratic_normalized", "linear", "constant")


def family_return(family: str, d: int) -> ReturnFunction:
    if family == "quadratic":
        return quadratic_return()
    if family == "quadratic_normalized":
        return quadratic_return(normalized=True)
    if family == "linear":
        return linear_return(np.ones(d) / math.sqrt(d))
    if family == "constant":
        return constant_return(1.0)
    raise ParameterError(f"unknown return family {family!r}")


@dataclass
class GapRow:
    d: int
    i: int
    n: int
    delta_mean: float
    delta_stderr: float
    mc_stderr: float


@dataclass
class GapScaling:
    rows: list
    slope: float | None
    intercept: float | None
    degenerate: bool
    family: str


def loglog_fit(x, y):
    """Least-squares slope and intercept of log y against log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise ParameterError("a log-log fit needs at least three points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ParameterError("log-log fit needs positive values")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def _gap_trial(d, i, family, schedule, n, seed):
    rng = np.random.default_rng(seed)
    a = schedule.alpha_bars[i]
    # tau_i from the forward marginal of standard-normal clean data
    tau_i = math.sqrt(a) * rng.standard_normal(d) + math.sqrt(1.0 - a) * rng.standard_normal(d)
    return guidance_gap(tau_i, i, family_return(family, d), schedule, n, rng)


def gap_scaling_experiment(dims, i: int, family: str, schedule: NoiseSchedule, n: int, trials: int,
                           rng: np.random.Generator, threads: int = 1) -> GapScaling:
    """Mean guidance gap per dimension and the fitted log-log slope.

    The slope is withheld (``degenerate=True``) when any dimension's gap is within
    three standard errors of zero.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 3:
        raise ParameterError("need at least three dimensions")
    if max(dims) < 10 * min(dims):
        raise ParameterError("dimensions must span at least one decade")
    if family not in GAP_FAMILIES:
        raise ParameterError(f"unknown return family {family!r}")
    if trials < 1:
        raise ParameterError("need at least one trial")
    schedule.check_step(i)
    seeds = rng.integers(0, 2**63 - 1, size=(len(dims), trials))
    jobs = [(d, i, family, schedule, n, int(seeds[a, b])) for a, d in enumerate(dims) for b in range(trials)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = list(pool.map(lambda job: _gap_trial(*job), jobs))
    rows, degenerate = [], False
    for a, d in enumerate(dims):
        chunk = reports[a * trials:(a + 1) * trials]
        deltas = np.array([r.delta for r in chunk])
        mc_se = float(np.mean([r.stderr for r in chunk]))
        spread = deltas.std(ddof=1) / math.sqrt(trials) if trials > 1 else mc_se
        rows.append(GapRow(d, i, n, float(deltas.mean()), float(spread), mc_se))
        if deltas.mean() <= 3.0 * mc_se:
            degenerate = True
    if degenerate:
        return GapScaling(rows, None, None, True, family)
    slope, intercept = loglog_fit([r.d for r in rows], [r.delta_mean for r in rows])
    return GapScaling(rows, slope, intercept, False, family)
