"""Point-mass navigation in a grid maze."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError
from .maze import MazeSpec, segment_box_hits

STATE_DIM = 4
ACTION_DIM = 2


@dataclass
class PointMassEnv:
    """State ``(x, y, vx, vy)``, action ``(ax, ay)``.

    One step: ``v' = damping * v + dt * clip(a)``, then ``p' = p + dt * v'``.
    If the straight move ``p -> p'`` enters a wall cell the mass stops on the first
    face it touches, that coordinate is snapped onto the face and the matching
    velocity component is zeroed (inelastic stop).
    """

    maze: MazeSpec
    dt: float = 0.1
    damping: float = 1.0
    action_bound: float = 30.0
    max_steps: int = 100
    gamma: float = 0.99
    goal: np.ndarray | None = None
    state: np.ndarray = field(default=None, repr=False)
    steps: int = 0
    contacts: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.action_bound <= 0 or self.max_steps < 1:
            raise ParameterError("dt, action bound and episode cap must be positive")
        if not 0.0 <= self.damping <= 1.0:
            raise ParameterError("damping must lie in [0, 1]")
        self.goal = self.maze.goal_position if self.goal is None else np.asarray(self.goal, dtype=float)

    @property
    def state_dim(self) -> int:
        return STATE_DIM

    @property
    def action_dim(self) -> int:
        return ACTION_DIM

    def metadata(self) -> dict:
        return {"dt": self.dt, "damping": self.damping, "action_bound": self.action_bound,
                "max_steps": self.max_steps, "gamma": self.gamma, "wall_rule": "inelastic_stop",
                "maze": self.maze.name}

    def dynamics(self, state, action) -> np.ndarray:
        """Deterministic next state for one ``(state, action)`` pair or a batch."""
        s = np.asarray(state, dtype=float)
        a = np.asarray(action, dtype=float)
        if s.shape[-1] != STATE_DIM or a.shape[-1] != ACTION_DIM:
            raise ShapeError("state must end in 4 and action in 2 components")
        lead = np.broadcast_shapes(s.shape[:-1], a.shape[:-1])
        flat_s = np.broadcast_to(s, lead + (STATE_DIM,)).reshape(-1, STATE_DIM)
        flat_a = np.broadcast_to(a, lead + (ACTION_DIM,)).reshape(-1, ACTION_DIM)
        out = np.array([self._step_one(si, ai) for si, ai in zip(flat_s, flat_a)])
        return out.reshape(lead + (STATE_DIM,))

    def _step_one(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return self._advance(s, a)[0]

    def _advance(self, s: np.ndarray, a: np.ndarray):
        """Next state and whether the move ended on a wall face."""
        a = np.clip(a, -self.action_bound, self.action_bound)
        v = self.damping * s[2:] + self.dt * a
        p = s[:2]
        q = p + self.dt * v
        hit, enter, x_axis = segment_box_hits(p, q, self.maze.wall_boxes)
        hit &= enter >= 0.0
        if not hit.any():
            return np.concatenate([q, v]), False
        idx = np.flatnonzero(hit)
        w = idx[np.argmin(enter[idx])]
        t = enter[w]
        box = self.maze.wall_boxes[w]
        new_p = p + t * (q - p)
        axis = 0 if x_axis[w] else 1
        step = q[axis] - p[axis]
        new_p[axis] = box[axis] if step > 0 else box[axis + 2]
        v = v.copy()
        v[axis] = 0.0
        return np.concatenate([new_p, v]), True

    def inverse_action(self, state, next_state) -> np.ndarray:
        """Action that moves ``state`` to the velocity of ``next_state`` in free space, clipped."""
        s = np.asarray(state, dtype=float)
        nxt = np.asarray(next_state, dtype=float)
        a = (nxt[..., 2:] - self.damping * s[..., 2:]) / self.dt
        return np.clip(a, -self.action_bound, self.action_bound)

    def reward(self, state) -> np.ndarray:
        pos = np.asarray(state, dtype=float)[..., :2]
        return (np.linalg.norm(pos - self.goal, axis=-1) <= self.maze.goal_tolerance).astype(float)

    def at_goal(self, state) -> bool:
        return bool(self.reward(state) > 0)

    def reset(self, start=None, goal=None) -> np.ndarray:
        if goal is not None:
            self.goal = np.asarray(goal, dtype=float)
        if start is None:
            start = np.concatenate([self.maze.start_position, np.zeros(2)])
        start = np.asarray(start, dtype=float)
        if start.shape == (2,):
            start = np.concatenate([start, np.zeros(2)])
        if start.shape != (STATE_DIM,):
            raise ShapeError("start must be a position or a full state")
        self.state = start.copy()
        self.steps = 0
        self.contacts = 0
        return self.state.copy()

    def step(self, action):
        if self.state is None:
            raise ParameterError("call reset() before step()")
        self.state, contact = self._advance(self.state, np.asarray(action, dtype=float))
        self.steps += 1
        self.contacts += int(contact)
        r = float(self.reward(self.state))
        done = r > 0 or self.steps >= self.max_steps
        return self.state.copy(), r, done

    def rollout(self, start, actions) -> np.ndarray:
        """States ``s_0 .. s_T`` produced by applying ``actions`` from ``start``."""
        actions = np.asarray(actions, dtype=float)
        states = [np.asarray(start, dtype=float)]
        for a in actions:
            states.append(self._step_one(states[-1], a))
        return np.array(states)
