"""Offline dataset generation, normalization, windowing and verification worlds."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..denoisers import GmmSpec
from ..diffusion import TrajectoryLayout
from ..errors import GenerationError, ParameterError, ShapeError
from .env import ACTION_DIM, STATE_DIM, PointMassEnv
from .maze import MazeSpec, collision_flags

GOAL_MODES = ("random", "fixed")


@dataclass
class WaypointController:
    """Speed-limited proportional tracking of cell-centre waypoints.

    The desired velocity ``clip(kp (w - p), vmax)`` is reached in one step when the
    action bound allows it, so there is no overshoot at the final waypoint.
    """

    env: PointMassEnv
    kp: float = 5.0
    vmax: float = 3.0
    switch_radius: float = 0.35

    def action(self, state, waypoint) -> np.ndarray:
        p, v = state[:2], state[2:]
        v_des = self.kp * (waypoint - p)
        speed = np.linalg.norm(v_des)
        if speed > self.vmax:
            v_des *= self.vmax / speed
        a = (v_des - self.env.damping * v) / self.env.dt
        return np.clip(a, -self.env.action_bound, self.env.action_bound)


@dataclass
class OfflineDataset:
    """Trajectories in world units, flattened per ``layout``, with discounted returns."""

    trajectories: np.ndarray
    returns: np.ndarray
    layout: TrajectoryLayout
    goals: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trajectories = np.asarray(self.trajectories, dtype=float)
        self.returns = np.asarray(self.returns, dtype=float)
        if self.trajectories.ndim != 2 or self.trajectories.shape[1] != self.layout.dim:
            raise ShapeError("trajectories must be (N, layout.dim)")
        if self.returns.shape != (len(self.trajectories),):
            raise ShapeError("need one return per trajectory")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def states(self) -> np.ndarray:
        return self.layout.states(self.trajectories)

    @property
    def actions(self) -> np.ndarray:
        return self.layout.actions(self.trajectories)

    def step_lengths(self) -> np.ndarray:
        """Per-step position displacement of every trajectory, flattened."""
        pos = self.states[..., :2]
        return np.linalg.norm(np.diff(pos, axis=1), axis=-1).ravel()


def _cell_distances(maze: MazeSpec, source) -> dict:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        c = queue.popleft()
        for nb in maze.neighbors(c):
            if nb not in dist:
                dist[nb] = dist[c] + 1
                queue.append(nb)
    return dist


def _episode(env, ctrl, maze, start, goal_cell, horizon, noise, rng):
    route = maze.route(maze.cell_of(start), goal_cell)
    waypoints = [maze.cell_center(c) for c in route[1:]] or [maze.cell_center(goal_cell)]
    state = np.concatenate([start, np.zeros(2)])
    states, actions = [], []
    w = 0
    for _ in range(horizon):
        while w < len(waypoints) - 1 and np.linalg.norm(waypoints[w] - state[:2]) < ctrl.switch_radius:
            w += 1
        a = ctrl.action(state, waypoints[w])
        if noise > 0:
            a = a + noise * env.action_bound * rng.standard_normal(ACTION_DIM)
        a = np.clip(a, -env.action_bound, env.action_bound)
        states.append(state)
        actions.append(a)
        state = env.dynamics(state, a)
    return np.array(states), np.array(actions)


def generate_offline_dataset(maze: MazeSpec, episodes: int, horizon: int = 32, noise: float = 0.05,
                             seed: int = 0, goal_mode: str = "random", env: PointMassEnv | None = None,
                             controller: WaypointController | None = None, max_path_cells: int | None = None,
                             max_attempts: int | None = None) -> OfflineDataset:
    """Scripted waypoint-following episodes with discounted sparse goal reward.

    Start positions are jittered inside a random free cell; in ``random`` mode each
    episode also draws its own goal cell, in ``fixed`` mode the maze goal is used.
    Goals are kept within ``max_path_cells`` grid steps so the horizon suffices.
    Colliding trajectories are discarded and redrawn.
    """
    if episodes < 1:
        raise ParameterError("episodes must be at least 1")
    if horizon < 2:
        raise ParameterError("horizon must be at least 2")
    if noise < 0:
        raise ParameterError("noise level must be nonnegative")
    if goal_mode not in GOAL_MODES:
        raise ParameterError(f"goal_mode must be one of {GOAL_MODES}")
    env = env or PointMassEnv(maze)
    ctrl = controller or WaypointController(env)
    if max_path_cells is None:
        max_path_cells = max(1, int(0.7 * horizon * env.dt * ctrl.vmax / maze.cell_size))
    max_attempts = max_attempts or 50 * episodes
    rng = np.random.default_rng(seed)
    cs = maze.cell_size
    layout = TrajectoryLayout(horizon, STATE_DIM, ACTION_DIM)
    disc = env.gamma ** np.arange(horizon)

    if goal_mode == "fixed":
        dist = _cell_distances(maze, maze.goal)
        if len(dist) < 2:
            raise GenerationError("goal cell has no reachable neighbours")
        starts = sorted(c for c, k in dist.items() if 1 <= k <= max_path_cells)
        if not starts:
            raise GenerationError("no start cell within reach of the goal for this horizon")
    else:
        free = maze.free_cells()
        pairs = {}
        for c in free:
            dist = _cell_distances(maze, c)
            pairs[c] = sorted(g for g, k in dist.items() if 1 <= k <= max_path_cells)
        starts = sorted(c for c in free if pairs[c])
        if not starts:
            raise GenerationError("no reachable goal for any start cell")

    rows, rets, goals = [], [], []
    attempts = 0
    while len(rows) < episodes:
        attempts += 1
        if attempts > max_attempts:
            raise GenerationError(f"rejection sampling exhausted {max_attempts} attempts")
        s_cell = starts[rng.integers(len(starts))]
        if goal_mode == "fixed":
            g_cell = maze.goal
        else:
            options = pairs[s_cell]
            g_cell = options[rng.integers(len(options))]
        start = maze.cell_center(s_cell) + rng.uniform(-0.3, 0.3, size=2) * cs
        states, actions = _episode(env, ctrl, maze, start, g_cell, horizon, noise, rng)
        if collision_flags(states[None, :, :2], maze)[0]:
            continue
        goal = maze.cell_center(g_cell)
        hits = np.linalg.norm(states[:, :2] - goal, axis=1) <= maze.goal_tolerance
        rows.append(np.concatenate([states, actions], axis=1).ravel())
        rets.append(float(hits.astype(float) @ disc))
        goals.append(goal)
    meta = {"maze": maze.name, "episodes": episodes, "horizon": horizon, "noise": noise, "seed": seed,
            "goal_mode": goal_mode, "attempts": attempts, **env.metadata()}
    return OfflineDataset(np.array(rows), np.array(rets), layout, np.array(goals), meta)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature affine map of each timestep block onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, trajectories, layout: TrajectoryLayout) -> "Normalizer":
        steps = layout.unflatten(np.asarray(trajectories, dtype=float)).reshape(-1, layout.step_dim)
        return cls(steps.min(axis=0), steps.max(axis=0))

    @classmethod
    def identity(cls, step_dim: int) -> "Normalizer":
        return cls(-np.ones(step_dim), np.ones(step_dim))

    @property
    def step_dim(self) -> int:
        return len(self.lo)

    def _parts(self, x, columns):
        center = (self.lo + self.hi) / 2.0
        span = self.hi - self.lo
        scale = np.where(span > 0, span / 2.0, 1.0)
        if columns is not None:
            center, scale = center[columns], scale[columns]
        reps = x.shape[-1] // len(center)
        if reps * len(center) != x.shape[-1]:
            raise ShapeError("feature count is not a multiple of the step width")
        return np.tile(center, reps), np.tile(scale, reps)

    def normalize(self, x, columns=None) -> np.ndarray:
        """Map world-unit features to [-1, 1]; ``columns`` restricts to a sub-block of each step."""
        x = np.asarray(x, dtype=float)
        center, scale = self._parts(x, columns)
        return (x - center) / scale

    def unnormalize(self, x, columns=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        center, scale = self._parts(x, columns)
        return x * scale + center


def window_dataset(trajectories, layout: TrajectoryLayout, length: int, stride: int = 1,
                   state_only: bool = False) -> tuple[np.ndarray, TrajectoryLayout]:
    """Every window of ``length`` timesteps spaced ``stride`` apart, at all start offsets.

    Used to build the stride-K state-only high-level data and the short low-level
    segments of the two-level planner.
    """
    if length < 1 or stride < 1:
        raise ParameterError("window length and stride must be positive")
    span = stride * (length - 1)
    if span >= layout.horizon:
        raise ParameterError(f"window span {span + 1} exceeds horizon {layout.horizon}")
    blocks = layout.unflatten(np.asarray(trajectories, dtype=float))
    if state_only:
        blocks = blocks[..., : layout.state_dim]
    out = [blocks[:, o:o + span + 1:stride] for o in range(layout.horizon - span)]
    windows = np.concatenate(out, axis=0)
    new_layout = TrajectoryLayout(length, layout.state_dim, 0 if state_only else layout.action_dim)
    return windows.reshape(len(windows), -1), new_layout


# -- verification worlds ---------------------------------------------------------------


@dataclass(frozen=True)
class SubspaceSpec:
    """Affine subspace ``offset + B c`` with ``c ~ N(0, coef_cov)``."""

    basis: np.ndarray
    offset: np.ndarray
    coef_cov: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=float)
        if B.ndim != 2:
            raise ShapeError("basis must be a (d, k_intrinsic) matrix")
        d, k = B.shape
        off = np.asarray(self.offset, dtype=float).reshape(d)
        cov = np.asarray(self.coef_cov, dtype=float).reshape(k, k)
        if k > d:
            raise ParameterError("k_intrinsic cannot exceed d")
        if k and np.max(np.abs(B.T @ B - np.eye(k))) > 1e-10:
            raise ParameterError("basis columns must be orthonormal")
        if k and (not np.allclose(cov, cov.T) or np.min(np.linalg.eigvalsh(cov)) < -1e-12):
            raise ParameterError("coefficient covariance must be symmetric positive semidefinite")
        for name, arr in (("basis", B), ("offset", off), ("coef_cov", cov)):
            object.__setattr__(self, name, arr)

    @classmethod
    def random(cls, d: int, k_intrinsic: int, seed: int = 0, coef_scale: float = 1.0,
               offset_scale: float = 1.0) -> "SubspaceSpec":
        if d < 1 or not 0 <= k_intrinsic <= d:
            raise ParameterError("need d >= 1 and 0 <= k_intrinsic <= d")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((d, max(k_intrinsic, 1))))
        B = q[:, :k_intrinsic]
        return cls(B, offset_scale * rng.standard_normal(d), coef_scale ** 2 * np.eye(k_intrinsic))

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def k_intrinsic(self) -> int:
        return self.basis.shape[1]

    def distance(self, x) -> np.ndarray:
        """Euclidean distance of each row to the affine subspace."""
        r = np.asarray(x, dtype=float) - self.offset
        r = r - (r @ self.basis) @ self.basis.T
        return np.linalg.norm(r, axis=-1)


def sample_subspace_dataset(spec: SubspaceSpec, N: int, seed: int = 0) -> np.ndarray:
    if N < 1:
        raise ParameterError("N must be at least 1")
    rng = np.random.default_rng(seed)
    k = spec.k_intrinsic
    if k == 0:
        return np.tile(spec.offset, (N, 1))
    w, V = np.linalg.eigh(spec.coef_cov)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    coef = rng.standard_normal((N, k)) @ root.T
    return spec.offset + coef @ spec.basis.T


def sample_gmm_dataset(gmm: GmmSpec, N: int, seed: int = 0) -> np.ndarray:
    """Ancestral sampling: component index first, then an isotropic Gaussian draw."""
    if N < 1:
        raise ParameterError("N must be at least 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(len(gmm.weights), size=N, p=gmm.weights)
    z = rng.standard_normal((N, gmm.dim))
    return gmm.means[comp] + np.sqrt(gmm.variances[comp])[:, None] * z
