"""Guided reverse-diffusion planning with optional manifold projection.

All sampling happens in the model (normalized) space. Conditioning constraints are
clean state values written over the matching blocks after every reverse step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, Trajectory, TrajectoryLayout, reverse_mean, sample_transition
from .errors import ConfigurationError, ParameterError, ShapeError
from .guidance import apply_guidance
from .projection import LomapContext, ProjectionSchedule, lomap_project


ACTION_MODES = ("plan", "inverse")


@dataclass
class PlannerConfig:
    """Guidance scale, optional projection, state constraints and candidate count.

    ``conditioning`` maps a timestep to a state vector (or a per-sample batch of
    them). A vector shorter than the state width constrains only its leading
    components, e.g. the position of a goal.
    """

    omega: float = 0.0
    projection: ProjectionSchedule | None = None
    conditioning: dict = field(default_factory=dict)
    num_candidate_plans: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.omega < 0:
            raise ParameterError("omega must be nonnegative")
        if self.num_candidate_plans < 1:
            raise ParameterError("need at least one candidate plan")
        self.conditioning = {int(t): np.asarray(v, dtype=float) for t, v in dict(self.conditioning).items()}

    def with_conditioning(self, conditioning: dict) -> "PlannerConfig":
        return PlannerConfig(self.omega, self.projection, conditioning, self.num_candidate_plans, self.seed)

    def validate(self, layout: TrajectoryLayout, schedule: NoiseSchedule, guide=None) -> None:
        if self.omega > 0 and guide is None:
            raise ConfigurationError("omega > 0 requires a guide")
        if self.projection is not None:
            self.projection.check(schedule.M)
        for t, v in self.conditioning.items():
            if not 0 <= t < layout.horizon:
                raise ParameterError(f"conditioning timestep {t} outside [0, {layout.horizon - 1}]")
            if v.shape[-1] > layout.state_dim or v.ndim > 2:
                raise ShapeError(f"conditioning value at t={t} is wider than the state")

    def describe(self) -> dict:
        proj = None
        if self.projection is not None:
            p = self.projection
            proj = {"i_lo": p.i_lo, "i_hi": p.i_hi, "k": p.k, "lam": p.lam, "mode": p.mode,
                    "n_probe": p.n_probe, "deterministic": p.deterministic}
        return {"omega": self.omega, "projection": proj, "num_candidate_plans": self.num_candidate_plans,
                "conditioned_steps": sorted(self.conditioning)}


def apply_conditioning(x: np.ndarray, conditioning: dict, layout: TrajectoryLayout) -> np.ndarray:
    """Overwrite the constrained state blocks in place and return ``x``."""
    for t, v in conditioning.items():
        start = layout.state_index(t)
        x[..., start:start + v.shape[-1]] = v
    return x


def guided_sample_batch(denoiser, guide, schedule: NoiseSchedule, config: PlannerConfig,
                        layout: TrajectoryLayout, lomap: LomapContext | None = None,
                        rng: np.random.Generator | None = None, n: int = 1) -> np.ndarray:
    """``n`` independent plans as an (n, d) array in model space."""
    config.validate(layout, schedule, guide)
    if config.projection is not None and lomap is None:
        raise ConfigurationError("projection configured without a retrieval context")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    cond = {t: (v if v.ndim == 1 else np.broadcast_to(v, (n, v.shape[-1]))) for t, v in config.conditioning.items()}
    x = apply_conditioning(rng.standard_normal((n, layout.dim)), cond, layout)
    proj = config.projection
    for i in range(schedule.M, 0, -1):
        mu = reverse_mean(x, i, denoiser, schedule)
        if config.omega > 0:
            mu = apply_guidance(mu, i, guide, config.omega, schedule)
        x = sample_transition(mu, i, schedule, rng)
        if proj is not None and i - 1 >= 1 and proj.active(i - 1):
            x = lomap_project(x, i - 1, lomap, denoiser, schedule, proj, rng)
        x = apply_conditioning(x, cond, layout)
    return x


def guided_sample(denoiser, guide, schedule: NoiseSchedule, config: PlannerConfig, layout: TrajectoryLayout,
                  lomap: LomapContext | None = None, rng: np.random.Generator | None = None) -> Trajectory:
    """One plan ``tau^0`` as a :class:`Trajectory` in model space."""
    return Trajectory(guided_sample_batch(denoiser, guide, schedule, config, layout, lomap, rng, 1)[0], layout)


def select_plan(plans: np.ndarray, guide) -> int:
    """Index of the best plan by guide value at step 0; first one wins ties."""
    if guide is None or len(plans) == 1:
        return 0
    return int(np.argmax(guide.predict(plans, 0)))


@dataclass
class EpisodeResult:
    states: np.ndarray
    actions: np.ndarray
    success: bool
    total_return: float
    collision: bool
    steps: int
    plans: list | None = None
    plan_collisions: int = 0

    def row(self) -> dict:
        return {"success": int(self.success), "return": self.total_return, "steps": self.steps,
                "collision": int(self.collision), "plan_collisions": self.plan_collisions}


def plan_episode(env, denoiser, guide, schedule: NoiseSchedule, config: PlannerConfig, layout: TrajectoryLayout,
                 normalizer, lomap: LomapContext | None = None, rng: np.random.Generator | None = None,
                 start=None, goal=None, condition_goal: bool = True, keep_plans: bool = False,
                 max_steps: int | None = None, action_mode: str = "plan") -> EpisodeResult:
    """Receding-horizon control: replan from the observed state, execute the first action.

    Each decision conditions ``t = 0`` on the current state and, with
    ``condition_goal``, the last timestep on the goal at rest. ``collision`` records
    whether the mass ever stopped against a wall; ``plan_collisions`` counts chosen
    plans whose path crosses a wall.

    ``action_mode="plan"`` executes the planned action ``a_0``; ``"inverse"`` executes
    the action that realizes the planned transition ``s_0 -> s_1`` under the
    environment's own dynamics (``env.inverse_action``).
    """
    from .synthworld.maze import wall_collision_oracle

    if action_mode not in ACTION_MODES:
        raise ParameterError(f"action_mode must be one of {ACTION_MODES}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    state = env.reset(start, goal)
    cap = env.max_steps if max_steps is None else min(max_steps, env.max_steps)
    goal_state = np.concatenate([env.goal, np.zeros(layout.state_dim - 2)])
    cols = np.arange(layout.state_dim)
    goal_model = normalizer.normalize(goal_state, columns=cols)
    states, actions, plans = [state.copy()], [], []
    total, disc, plan_hits = 0.0, 1.0, 0
    success = env.at_goal(state)
    while not success and env.steps < cap:
        cond = {0: normalizer.normalize(state, columns=cols)}
        if condition_goal:
            cond[layout.horizon - 1] = goal_model
        step_cfg = config.with_conditioning(cond)
        batch = guided_sample_batch(denoiser, guide, schedule, step_cfg, layout, lomap, rng,
                                    config.num_candidate_plans)
        plan = normalizer.unnormalize(batch[select_plan(batch, guide)])
        plan_states = layout.states(plan)
        plan_hits += int(wall_collision_oracle(plan_states, env.maze))
        if keep_plans:
            plans.append(plan)
        if action_mode == "plan":
            action = layout.actions(plan)[0]
        else:
            action = env.inverse_action(plan_states[0], plan_states[1])
        state, r, done = env.step(action)
        total += disc * r
        disc *= env.gamma
        states.append(state.copy())
        actions.append(np.clip(action, -env.action_bound, env.action_bound))
        success = r > 0
        if done:
            break
    return EpisodeResult(np.array(states), np.array(actions).reshape(-1, layout.action_dim), bool(success),
                         float(total), env.contacts > 0, env.steps, plans if keep_plans else None, plan_hits)


@dataclass
class HierarchicalResult:
    trajectory: Trajectory
    subgoals: np.ndarray
    segments: np.ndarray


def hierarchical_plan(high_denoiser, low_denoiser, K: int, schedule_hi: NoiseSchedule, schedule_lo: NoiseSchedule,
                      config_hi: PlannerConfig, config_lo: PlannerConfig, layout_hi: TrajectoryLayout,
                      layout_lo: TrajectoryLayout, lomap_hi: LomapContext | None = None,
                      lomap_lo: LomapContext | None = None, rng: np.random.Generator | None = None,
                      guide_hi=None, guide_lo=None) -> HierarchicalResult:
    """Two-level planning in a shared normalized state space.

    The high level samples ``H_hi`` state-only subgoals spaced ``K`` steps apart
    (``config_hi`` carries start/goal constraints). The low level fills every gap
    with a ``K + 1`` step plan whose ends are pinned to consecutive subgoals; all
    gaps are sampled as one batch. Junction states appear once in the stitched
    output, which has ``K (H_hi - 1) + 1`` steps.
    """
    if K < 1:
        raise ParameterError("stride K must be at least 1")
    if layout_hi.action_dim != 0:
        raise ShapeError("high-level plans are state-only")
    if layout_lo.state_dim != layout_hi.state_dim:
        raise ShapeError("high and low levels disagree on the state dimension")
    if layout_lo.horizon != K + 1:
        raise ShapeError(f"low-level horizon must be K + 1 = {K + 1}, got {layout_lo.horizon}")
    if layout_hi.horizon < 2:
        raise ParameterError("high-level horizon must be at least 2")
    rng = rng if rng is not None else np.random.default_rng(config_hi.seed)
    hi = guided_sample_batch(high_denoiser, guide_hi, schedule_hi, config_hi, layout_hi, lomap_hi, rng, 1)[0]
    subgoals = layout_hi.states(hi)
    lo_cfg = config_lo.with_conditioning({0: subgoals[:-1], K: subgoals[1:]})
    segs = guided_sample_batch(low_denoiser, guide_lo, schedule_lo, lo_cfg, layout_lo, lomap_lo, rng,
                               len(subgoals) - 1)
    blocks = layout_lo.unflatten(segs)
    stitched = np.concatenate([blocks[0]] + [b[1:] for b in blocks[1:]], axis=0)
    out_layout = TrajectoryLayout(len(stitched), layout_lo.state_dim, layout_lo.action_dim)
    return HierarchicalResult(Trajectory(stitched.ravel(), out_layout), subgoals, segs)
