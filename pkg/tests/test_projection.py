import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lomap.denoisers import AnalyticGmmDenoiser, GmmSpec
from lomap.diffusion import build_schedule, forward_diffuse
from lomap.errors import ParameterError, ShapeError
from lomap.index import build_index
from lomap.projection import LomapContext, ProjectionSchedule, local_basis, lomap_project
from lomap.synthworld import SubspaceSpec, sample_subspace_dataset


def test_basis_is_orthonormal_and_idempotent(rng):
    X = rng.standard_normal((10, 15))
    b = local_basis(X, 0.99)
    assert np.abs(b.U.T @ b.U - np.eye(b.r)).max() <= 1e-8
    x = rng.standard_normal(15)
    np.testing.assert_allclose(b.project(b.project(x)), b.project(x), atol=1e-12)


def test_rank_rule_captures_lambda(rng):
    X = rng.standard_normal((20, 6)) * np.array([5, 3, 1, 0.3, 0.1, 0.01])
    for lam in (0.5, 0.9, 0.99, 1.0):
        b = local_basis(X, lam)
        sv = np.linalg.svd(X - X.mean(0), compute_uv=False)
        frac = np.cumsum(sv ** 2) / np.sum(sv ** 2)
        assert b.captured_variance_fraction >= lam - 1e-12
        # r is the smallest rank that reaches lambda
        assert b.r == int(np.argmax(frac >= lam - 1e-12)) + 1


def test_affine_rank_capped_by_neighbors(rng):
    b = local_basis(rng.standard_normal((4, 30)), 1.0)
    assert b.r == 3
    lit = local_basis(rng.standard_normal((4, 30)), 1.0, mode="literal")
    assert lit.r == 4 and np.all(lit.mean == 0)


def test_in_subspace_points_are_fixed(rng):
    X = rng.standard_normal((8, 10))
    b = local_basis(X, 1.0)
    inside = b.mean + b.U @ rng.standard_normal(b.r)
    np.testing.assert_allclose(b.project(inside), inside, atol=1e-10)
    for row in X:
        np.testing.assert_allclose(b.project(row), row, atol=1e-10)


def test_affine_projection_is_contraction(rng):
    b = local_basis(rng.standard_normal((6, 9)), 0.9)
    for _ in range(20):
        x, y = rng.standard_normal((2, 9)) * 3
        assert np.linalg.norm(b.project(x) - b.project(y)) <= np.linalg.norm(x - y) + 1e-12
        assert np.linalg.norm(b.project(x) - b.mean) <= np.linalg.norm(x - b.mean) + 1e-12


def test_affine_residual_is_orthogonal(rng):
    X = rng.standard_normal((7, 12))
    b = local_basis(X, 0.99)
    x = rng.standard_normal(12)
    res = x - b.project(x)
    assert np.abs(b.U.T @ res).max() <= 1e-8 * np.linalg.norm(x)


def test_identical_neighbors_give_rank_zero():
    b = local_basis(np.ones((5, 3)), 0.99)
    assert b.r == 0
    np.testing.assert_allclose(b.project(np.array([3.0, 0.0, 1.0])), np.ones(3))


def test_local_basis_validation(rng):
    with pytest.raises(ShapeError):
        local_basis(np.ones(3))
    with pytest.raises(ParameterError):
        local_basis(np.ones((1, 3)))
    with pytest.raises(ParameterError):
        local_basis(np.ones((3, 3)), lam=0.0)
    with pytest.raises(ParameterError):
        local_basis(np.ones((3, 3)), mode="tangent")


def test_projection_schedule():
    p = ProjectionSchedule.default(20)
    assert (p.i_lo, p.i_hi) == (1, 12) and p.active(1) and p.active(12) and not p.active(13)
    with pytest.raises(ParameterError):
        ProjectionSchedule(0, 3)
    with pytest.raises(ParameterError):
        ProjectionSchedule(4, 3)
    with pytest.raises(ParameterError):
        ProjectionSchedule(1, 3, k=1)
    with pytest.raises(ParameterError):
        ProjectionSchedule(1, 30).check(20)


def _subspace_setup(seed=0):
    spec = SubspaceSpec.random(20, 3, seed=seed, coef_scale=1.0, offset_scale=0.5)
    data = sample_subspace_dataset(spec, 2000, seed=seed)
    sch = build_schedule(20)
    gmm = GmmSpec.single(spec.offset, 1.0)
    ctx = LomapContext(build_index(data, 16, seed=0), data)
    return spec, data, sch, AnalyticGmmDenoiser(gmm, sch), ctx


def test_inactive_step_is_identity(rng):
    spec, data, sch, den, ctx = _subspace_setup()
    x = rng.standard_normal(20)
    np.testing.assert_array_equal(lomap_project(x, 15, ctx, den, sch, ProjectionSchedule(1, 12), rng), x)


def test_projection_moves_noisy_samples_toward_scaled_subspace(rng):
    spec, data, sch, den, ctx = _subspace_setup()
    proj = ProjectionSchedule(1, 20, k=20, deterministic=True)
    step = 4
    a = sch.alpha_bars[step]
    before, after = [], []
    for _ in range(30):
        x = forward_diffuse(data[rng.integers(len(data))], step, rng.standard_normal(20), sch)
        p, basis = lomap_project(x, step, ctx, den, sch, proj, rng, return_basis=True)
        # distance to the subspace scaled by sqrt(alpha)
        before.append(spec.distance(x / np.sqrt(a)) * np.sqrt(a))
        after.append(spec.distance(p / np.sqrt(a)) * np.sqrt(a))
        assert np.abs(basis.U.T @ (p - basis.project(p))).max() <= 1e-8 * np.linalg.norm(x)
    assert np.mean(after) <= 0.1 * np.mean(before)


def test_context_validation(rng):
    data = rng.standard_normal((20, 4))
    with pytest.raises(ShapeError):
        LomapContext(build_index(data[:10], 2), data)
    with pytest.raises(ShapeError):
        LomapContext(build_index(data, 2), data, key_columns=np.array([0, 1]))
    ctx = LomapContext(build_index(data[:, :2], 2), data, key_columns=np.array([0, 1]))
    np.testing.assert_array_equal(ctx.key(data[0]), data[0, :2])


@given(seed=st.integers(0, 10**6), k=st.integers(2, 12), d=st.integers(1, 12), lam=st.floats(0.05, 1.0))
def test_projection_properties(seed, k, d, lam):
    g = np.random.default_rng(seed)
    X = g.standard_normal((k, d)) * g.uniform(0.1, 3.0, d)
    b = local_basis(X, lam)
    assert b.r <= min(k - 1, d)
    if b.r:
        assert np.abs(b.U.T @ b.U - np.eye(b.r)).max() <= 1e-8
        assert b.captured_variance_fraction >= lam - 1e-9
    x = g.standard_normal(d) * 4
    px = b.project(x)
    np.testing.assert_allclose(b.project(px), px, atol=1e-9 * max(1.0, np.linalg.norm(x)))
