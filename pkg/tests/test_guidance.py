import math

import numpy as np
import pytest

from lomap.denoisers import TrainConfig
from lomap.diffusion import TrajectoryLayout
from lomap.errors import ParameterError, ShapeError
from lomap.guidance import (GAP_FAMILIES, MseGuide, apply_guidance, constant_return, discounted_reward_return,
                            exact_guidance_mc, exact_value_mc, family_return, gap_scaling_experiment,
                            guidance_gap, guide_loss_and_grads, init_mse_guide, linear_return, loglog_fit,
                            mse_guidance_mc, mse_value_mc, posterior_params, quadratic_return, train_mse_guide)

from .test_denoisers import assert_grad_close, central_difference


def quadratic_oracles(tau, a):
    """Closed forms for J = -||x||^2 / 2 under the Gaussian posterior of the forward process."""
    m, s2 = tau / math.sqrt(a), (1 - a) / a
    mse = -m / math.sqrt(a)
    exact = -m / ((1 + s2) * math.sqrt(a))
    return exact, mse


def test_posterior_params(cosine20):
    a = cosine20.alpha_bars[4]
    m, s = posterior_params(np.ones(3), 4, cosine20)
    np.testing.assert_allclose(m, 1 / math.sqrt(a))
    assert s == pytest.approx(math.sqrt((1 - a) / a))


def test_quadratic_guidance_matches_closed_form(cosine20, rng):
    i, d, n = 10, 8, 100_000
    tau = rng.standard_normal(d)
    exact, mse = quadratic_oracles(tau, cosine20.alpha_bars[i])
    e = exact_guidance_mc(tau, i, quadratic_return(), cosine20, n, rng)
    q = mse_guidance_mc(tau, i, quadratic_return(), cosine20, n, rng)
    assert np.all(np.abs(e.value - exact) <= 5 * e.stderr + 1e-3)
    assert np.all(np.abs(q.value - mse) <= 5 * q.stderr)
    gap = np.linalg.norm(exact - mse)
    rep = guidance_gap(tau, i, quadratic_return(), cosine20, n, rng)
    assert abs(rep.delta - gap) <= 5 * rep.stderr


def test_linear_and_constant_returns_have_zero_gap(cosine20, rng):
    i, d = 10, 6
    a = cosine20.alpha_bars[i]
    w = rng.standard_normal(d)
    tau = rng.standard_normal(d)
    rep = guidance_gap(tau, i, linear_return(w), cosine20, 50_000, rng)
    np.testing.assert_allclose(rep.mse, w / math.sqrt(a), atol=6 * np.max(rep.mse_stderr))
    np.testing.assert_allclose(rep.exact, w / math.sqrt(a), atol=6 * np.max(rep.exact_stderr) + 1e-9)
    assert rep.delta <= 3 * rep.stderr
    rep = guidance_gap(tau, i, constant_return(2.0), cosine20, 20_000, rng)
    assert rep.delta <= 3 * rep.stderr + 1e-12


def test_value_estimators(cosine20, rng):
    i, tau = 5, rng.standard_normal(3)
    a = cosine20.alpha_bars[i]
    m, s2 = tau / math.sqrt(a), (1 - a) / a
    mv = mse_value_mc(tau, i, quadratic_return(), cosine20, 200_000, rng)
    assert float(mv.value) == pytest.approx(-(m @ m + 3 * s2) / 2, abs=5 * float(mv.stderr))
    ev = exact_value_mc(tau, i, quadratic_return(), cosine20, 200_000, rng)
    want = -(m @ m) / (2 * (1 + s2)) - 1.5 * math.log(1 + s2)
    assert float(ev.value) == pytest.approx(want, abs=5 * float(ev.stderr) + 1e-3)


def test_estimators_need_two_samples(cosine20):
    with pytest.raises(ParameterError):
        mse_guidance_mc(np.zeros(2), 3, quadratic_return(), cosine20, 1, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        exact_guidance_mc(np.zeros(2), 3, quadratic_return(), cosine20, 1, np.random.default_rng(0))


def test_return_functions():
    x = np.array([[1.0, 2.0], [0.0, -1.0]])
    np.testing.assert_allclose(quadratic_return()(x), [-2.5, -0.5])
    np.testing.assert_allclose(quadratic_return(normalized=True)(x), [-1.25, -0.25])
    np.testing.assert_allclose(linear_return([1.0, 1.0])(x), [3.0, -1.0])
    assert constant_return(4.0)(x[0]) == 4.0
    for fam in GAP_FAMILIES:
        assert family_return(fam, 2)(x).shape == (2,)
    with pytest.raises(ParameterError):
        family_return("cubic", 2)


def test_discounted_reward_return():
    lay = TrajectoryLayout(3, 1, 1)
    J = discounted_reward_return(lambda s, a: s[..., 0], lay, gamma=0.5)
    x = np.array([1.0, 0, 2.0, 0, 4.0, 0])
    assert float(J(x)) == pytest.approx(1 + 0.5 * 2 + 0.25 * 4)
    with pytest.raises(ParameterError):
        discounted_reward_return(lambda s, a: s, lay, gamma=1.5)


def test_apply_guidance_formula(linear20, rng):
    guide = init_mse_guide(3, 20, TrainConfig(hidden=(8,), embed_dim=4), rng)
    mu = rng.standard_normal(3)
    out = apply_guidance(mu, 7, guide, 2.0, linear20)
    np.testing.assert_allclose(out, mu + 2.0 * linear20.posterior_var[7] * guide.gradient(mu, 7))
    np.testing.assert_array_equal(apply_guidance(mu, 7, guide, 0.0, linear20), mu)
    with pytest.raises(ParameterError):
        apply_guidance(mu, 7, guide, -1.0, linear20)


def test_guide_gradients_match_finite_differences(rng):
    guide = init_mse_guide(3, 10, TrainConfig(hidden=(8, 8), embed_dim=4), rng, y_mean=0.5, y_scale=2.0)
    x, steps, y = rng.standard_normal((5, 3)), rng.integers(0, 11, 5), rng.standard_normal(5)
    _, grads = guide_loss_and_grads(guide, x, steps, y)

    def f(theta):
        guide.net.set_flat(theta)
        return guide_loss_and_grads(guide, x, steps, y)[0]

    theta = guide.net.get_flat()
    assert_grad_close(np.concatenate([g.ravel() for g in grads]), central_difference(f, theta))
    guide.net.set_flat(theta)
    x0 = rng.standard_normal(3)
    numeric = central_difference(lambda v: float(guide.predict(v, 4)), x0)
    assert_grad_close(guide.gradient(x0, 4), numeric)


def test_guide_requires_scalar_output(rng):
    from lomap.mlp import MLP, sinusoidal_table
    with pytest.raises(ShapeError):
        MseGuide(MLP([6, 4, 2], rng=rng), sinusoidal_table(5, 4), 2)


def test_guide_training_learns_linear_return(linear20):
    g = np.random.default_rng(0)
    X = g.standard_normal((512, 4))
    y = X @ np.array([1.0, -1.0, 0.5, 0.0])
    guide = train_mse_guide(X, y, linear20, TrainConfig(steps=800, batch_size=64, hidden=(32,), embed_dim=8), g)
    # noisy steps keep an irreducible floor, so only a clear decrease is required
    assert guide.loss_history[-1] < 0.8 * guide.loss_history[0]
    # at step 0 the guide sees clean data
    pred = guide.predict(X[:100], 0)
    assert np.corrcoef(pred, y[:100])[0, 1] > 0.9


def test_guide_training_validation(linear20):
    with pytest.raises(ParameterError):
        train_mse_guide(np.zeros((3, 2)), np.zeros(2), linear20)
    with pytest.raises(ParameterError):
        train_mse_guide(np.zeros((2, 2)), np.array([0.0, np.inf]), linear20)


def test_loglog_fit_recovers_power_law():
    x = np.array([2.0, 8.0, 32.0])
    slope, intercept = loglog_fit(x, 3.0 * x ** 0.5)
    assert slope == pytest.approx(0.5) and math.exp(intercept) == pytest.approx(3.0)
    with pytest.raises(ParameterError):
        loglog_fit([1, 2], [1, 2])
    with pytest.raises(ParameterError):
        loglog_fit([1, 2, 3], [1, 0, 2])


def test_gap_experiment_contract(cosine20):
    res = gap_scaling_experiment([4, 16, 64], 10, "quadratic", cosine20, 2000, 2, np.random.default_rng(0))
    assert [r.d for r in res.rows] == [4, 16, 64]
    const = gap_scaling_experiment([4, 16, 64], 10, "constant", cosine20, 500, 2, np.random.default_rng(0))
    assert const.degenerate and const.slope is None
    with pytest.raises(ParameterError):
        gap_scaling_experiment([4, 16], 10, "quadratic", cosine20, 100, 1, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        gap_scaling_experiment([4, 5, 6], 10, "quadratic", cosine20, 100, 1, np.random.default_rng(0))


def test_gap_experiment_threads_do_not_change_results(cosine20):
    a = gap_scaling_experiment([4, 16, 64], 10, "quadratic", cosine20, 1000, 2, np.random.default_rng(3), threads=1)
    b = gap_scaling_experiment([4, 16, 64], 10, "quadratic", cosine20, 1000, 2, np.random.default_rng(3), threads=3)
    assert [r.delta_mean for r in a.rows] == [r.delta_mean for r in b.rows]
