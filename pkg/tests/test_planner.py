import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lomap.denoisers import AnalyticGmmDenoiser, GmmSpec
from lomap.diffusion import TrajectoryLayout, sample_unguided
from lomap.errors import ConfigurationError, ParameterError, ShapeError
from lomap.index import build_index
from lomap.planner import (PlannerConfig, apply_conditioning, guided_sample, guided_sample_batch,
                           hierarchical_plan, plan_episode, select_plan)
from lomap.projection import LomapContext, ProjectionSchedule
from lomap.stats import energy_test
from lomap.synthworld import Normalizer, PointMassEnv, sample_gmm_dataset


class LinearGuide:
    """J(x) = a . x, so the guidance gradient is the constant vector a."""

    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)

    def predict(self, x, i):
        return np.asarray(x) @ self.a

    def gradient(self, x, i):
        return np.broadcast_to(self.a, np.shape(x)).copy()


def gmm_2mode(dim):
    means = np.stack([np.full(dim, -1.0), np.full(dim, 1.0)])
    return GmmSpec(np.array([0.5, 0.5]), means, np.array([0.05, 0.05]))


def test_conditioning_is_bit_exact(linear20):
    layout = TrajectoryLayout(5, 2, 1)
    den = AnalyticGmmDenoiser(GmmSpec.single(np.zeros(layout.dim), 1.0), linear20)
    s0, sT = np.array([0.123456789, -0.5]), np.array([0.7, 0.3333333333])
    cfg = PlannerConfig(conditioning={0: s0, 4: sT})
    x = guided_sample_batch(den, None, linear20, cfg, layout, n=7)
    st_ = layout.states(x)
    assert np.all(st_[:, 0] == s0) and np.all(st_[:, 4] == sT)


def test_partial_and_batched_conditioning():
    layout = TrajectoryLayout(3, 4, 2)
    x = np.zeros((2, layout.dim))
    apply_conditioning(x, {1: np.array([[1.0, 2.0], [3.0, 4.0]])}, layout)
    np.testing.assert_array_equal(layout.states(x)[:, 1], [[1, 2, 0, 0], [3, 4, 0, 0]])


def test_planner_errors(linear20):
    layout = TrajectoryLayout(4, 2, 0)
    den = AnalyticGmmDenoiser(GmmSpec.single(np.zeros(8), 1.0), linear20)
    with pytest.raises(ConfigurationError):
        guided_sample_batch(den, None, linear20, PlannerConfig(omega=1.0), layout)
    with pytest.raises(ConfigurationError):
        guided_sample_batch(den, None, linear20, PlannerConfig(projection=ProjectionSchedule(1, 5)), layout)
    with pytest.raises(ParameterError):
        guided_sample_batch(den, None, linear20, PlannerConfig(projection=ProjectionSchedule(1, 25)), layout)
    with pytest.raises(ParameterError):
        guided_sample_batch(den, None, linear20, PlannerConfig(conditioning={4: np.zeros(2)}), layout)
    with pytest.raises(ShapeError):
        guided_sample_batch(den, None, linear20, PlannerConfig(conditioning={0: np.zeros(3)}), layout)
    with pytest.raises(ParameterError):
        PlannerConfig(omega=-1.0)
    with pytest.raises(ParameterError):
        PlannerConfig(num_candidate_plans=0)


def test_sampling_is_deterministic(linear20):
    layout = TrajectoryLayout(4, 2, 0)
    den = AnalyticGmmDenoiser(gmm_2mode(8), linear20)
    data = sample_gmm_dataset(den.gmm, 200, seed=0)
    ctx = LomapContext(build_index(data, 4, seed=0), data)
    cfg = PlannerConfig(omega=0.5, projection=ProjectionSchedule(1, 12), seed=11)
    guide = LinearGuide(np.ones(8))
    a = guided_sample(den, guide, linear20, cfg, layout, ctx)
    b = guided_sample(den, guide, linear20, cfg, layout, ctx)
    assert a.data.tobytes() == b.data.tobytes()


def test_omega_zero_reduces_to_unguided(linear20):
    dim = 3
    den = AnalyticGmmDenoiser(gmm_2mode(dim), linear20)
    layout = TrajectoryLayout(1, dim, 0)
    cfg = PlannerConfig(omega=0.0)
    a = guided_sample_batch(den, LinearGuide(np.ones(dim)), linear20, cfg, layout,
                            rng=np.random.default_rng(5), n=400)
    b = sample_unguided(den, linear20, dim, 400, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    ref = sample_gmm_dataset(den.gmm, 400, seed=9)
    assert not energy_test(a, ref, permutations=199, seed=0).rejects(0.01)


def test_guidance_shifts_plans(linear20):
    dim = 2
    den = AnalyticGmmDenoiser(GmmSpec.single(np.zeros(dim), 1.0), linear20)
    layout = TrajectoryLayout(1, dim, 0)
    guide = LinearGuide(np.array([1.0, 0.0]))
    base = guided_sample_batch(den, guide, linear20, PlannerConfig(), layout, rng=np.random.default_rng(0), n=2000)
    pushed = guided_sample_batch(den, guide, linear20, PlannerConfig(omega=2.0), layout,
                                 rng=np.random.default_rng(0), n=2000)
    assert pushed[:, 0].mean() > base[:, 0].mean() + 0.5
    assert abs(pushed[:, 1].mean() - base[:, 1].mean()) < 0.1


def test_select_plan_argmax_first_on_ties():
    plans = np.array([[0.0, 1.0], [2.0, 0.0], [1.0, 1.0], [0.0, 0.5]])
    guide = LinearGuide(np.ones(2))
    # plans 1 and 2 tie at J = 2; the first one wins
    assert select_plan(plans, guide) == 1
    assert select_plan(plans, None) == 0


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_select_plan_property(values):
    plans = np.array(values)[:, None]
    j = select_plan(plans, LinearGuide([1.0]))
    assert plans[j, 0] == max(values) and j == values.index(max(values))


def _episode_parts(maze, linear20, horizon=6):
    layout = TrajectoryLayout(horizon, 4, 2)
    den = AnalyticGmmDenoiser(GmmSpec.single(np.zeros(layout.dim), 0.1), linear20)
    norm = Normalizer(np.array([0.0, 0.0, -3.0, -3.0, -30.0, -30.0]),
                      np.array([maze.extent[0], maze.extent[1], 3.0, 3.0, 30.0, 30.0]))
    return layout, den, norm


def test_start_at_goal_succeeds_immediately(corridor, linear20):
    layout, den, norm = _episode_parts(corridor, linear20)
    env = PointMassEnv(corridor)
    res = plan_episode(env, den, None, linear20, PlannerConfig(), layout, norm, start=corridor.goal_position)
    assert res.success and res.steps == 0 and res.total_return == 0.0 and len(res.states) == 1


def test_episode_respects_step_cap(corridor, linear20):
    layout, den, norm = _episode_parts(corridor, linear20)
    env = PointMassEnv(corridor)
    res = plan_episode(env, den, None, linear20, PlannerConfig(num_candidate_plans=2), layout, norm,
                       keep_plans=True, max_steps=3)
    assert res.steps == 3 and res.states.shape == (4, 4) and res.actions.shape == (3, 2)
    assert len(res.plans) == 3 and 0 <= res.plan_collisions <= 3
    assert set(res.row()) == {"success", "return", "steps", "collision", "plan_collisions"}


def _hier_parts(schedule, K, H):
    hi = TrajectoryLayout(H, 2, 0)
    lo = TrajectoryLayout(K + 1, 2, 1)
    return (hi, lo, AnalyticGmmDenoiser(GmmSpec.single(np.zeros(hi.dim), 1.0), schedule),
            AnalyticGmmDenoiser(GmmSpec.single(np.zeros(lo.dim), 1.0), schedule))


@pytest.mark.parametrize("K,H", [(1, 3), (4, 5), (3, 2)])
def test_hierarchical_stitching(linear20, K, H):
    hi, lo, dh, dl = _hier_parts(linear20, K, H)
    s0, g = np.array([0.1, 0.2]), np.array([-0.4, 0.9])
    cfg_hi = PlannerConfig(conditioning={0: s0, H - 1: g})
    res = hierarchical_plan(dh, dl, K, linear20, linear20, cfg_hi, PlannerConfig(), hi, lo,
                            rng=np.random.default_rng(0))
    traj = res.trajectory
    assert traj.horizon == K * (H - 1) + 1 and traj.layout.action_dim == 1
    # every K-th state is exactly the matching subgoal
    np.testing.assert_array_equal(traj.states[::K], res.subgoals)
    assert np.all(res.subgoals[0] == s0) and np.all(res.subgoals[-1] == g)


def test_hierarchical_errors(linear20):
    hi, lo, dh, dl = _hier_parts(linear20, 2, 3)
    cfg = PlannerConfig()
    with pytest.raises(ParameterError):
        hierarchical_plan(dh, dl, 0, linear20, linear20, cfg, cfg, hi, lo)
    with pytest.raises(ShapeError):
        hierarchical_plan(dh, dl, 3, linear20, linear20, cfg, cfg, hi, lo)
    with pytest.raises(ShapeError):
        hierarchical_plan(dh, dl, 2, linear20, linear20, cfg, cfg, TrajectoryLayout(3, 2, 1), lo)
    with pytest.raises(ShapeError):
        hierarchical_plan(dh, dl, 2, linear20, linear20, cfg, cfg, hi, TrajectoryLayout(3, 3, 1))
    with pytest.raises(ParameterError):
        hierarchical_plan(dh, dl, 2, linear20, linear20, cfg, cfg, TrajectoryLayout(1, 2, 0), lo)


def test_inverse_action_mode(corridor, linear20):
    layout, den, norm = _episode_parts(corridor, linear20)
    res = plan_episode(PointMassEnv(corridor), den, None, linear20, PlannerConfig(), layout, norm, max_steps=2,
                       keep_plans=True, action_mode="inverse")
    env = PointMassEnv(corridor)
    first = layout.states(res.plans[0])
    np.testing.assert_allclose(res.actions[0], env.inverse_action(first[0], first[1]))
    with pytest.raises(ParameterError):
        plan_episode(PointMassEnv(corridor), den, None, linear20, PlannerConfig(), layout, norm, action_mode="x")
