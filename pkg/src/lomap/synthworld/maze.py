"""Grid mazes, A* routing and the exact wall-collision oracle.

Cell ``(row, col)`` covers ``x in [col*cs, (col+1)*cs]`` and ``y in [row*cs, (row+1)*cs]``.
Everything outside the grid counts as wall.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from ..errors import DataFormatError, ParameterError, ShapeError

BUILTIN_MAZES = {
    "corridor": """
#########
#S.....G#
#########
""",
    "four_room": """
#########
#S..#...#
#.......#
#...#...#
##.###.##
#...#...#
#.......#
#...#..G#
#########
""",
    "open": """
######
#S...#
#....#
#....#
#...G#
######
""",
}


@dataclass(frozen=True)
class MazeSpec:
    walls: np.ndarray
    cell_size: float = 1.0
    start: tuple = (1, 1)
    goal: tuple = (1, 1)
    goal_tolerance: float = 0.3
    name: str = "custom"
    _boxes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        walls = np.asarray(self.walls, dtype=bool)
        if walls.ndim != 2 or walls.size == 0:
            raise ParameterError("walls must be a nonempty 2-D grid")
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "start", tuple(int(v) for v in self.start))
        object.__setattr__(self, "goal", tuple(int(v) for v in self.goal))
        if self.cell_size <= 0 or self.goal_tolerance <= 0:
            raise ParameterError("cell size and goal tolerance must be positive")
        for label, cell in (("start", self.start), ("goal", self.goal)):
            if not self.in_grid(cell) or walls[cell]:
                raise ParameterError(f"{label} cell {cell} is not a free cell")
        if self.goal not in self.reachable(self.start):
            raise ParameterError("goal is not reachable from start")
        object.__setattr__(self, "_boxes", self._wall_boxes())

    @classmethod
    def from_text(cls, text: str, cell_size: float = 1.0, goal_tolerance: float = 0.3, name: str = "custom"):
        lines = [ln.rstrip("\n") for ln in text.strip("\n").splitlines() if ln.strip()]
        if not lines:
            raise DataFormatError("empty maze text")
        width = max(len(ln) for ln in lines)
        walls = np.ones((len(lines), width), dtype=bool)
        start = goal = None
        for r, ln in enumerate(lines):
            for c, ch in enumerate(ln):
                if ch not in "#.SG":
                    raise DataFormatError(f"unexpected character {ch!r} at row {r}, col {c}")
                walls[r, c] = ch == "#"
                if ch == "S":
                    start = (r, c)
                elif ch == "G":
                    goal = (r, c)
        if start is None or goal is None:
            raise DataFormatError("maze text needs one 'S' and one 'G'")
        try:
            return cls(walls, cell_size, start, goal, goal_tolerance, name)
        except ParameterError as exc:
            raise DataFormatError(str(exc)) from exc

    @classmethod
    def builtin(cls, name: str, **kw) -> "MazeSpec":
        if name not in BUILTIN_MAZES:
            raise ParameterError(f"unknown maze {name!r}; choose from {sorted(BUILTIN_MAZES)}")
        return cls.from_text(BUILTIN_MAZES[name], name=name, **kw)

    @classmethod
    def load(cls, path_or_name: str, **kw) -> "MazeSpec":
        if path_or_name in BUILTIN_MAZES:
            return cls.builtin(path_or_name, **kw)
        path = Path(path_or_name)
        if not path.exists():
            raise ParameterError(f"maze file {path} does not exist")
        return cls.from_text(path.read_text(), name=path.stem, **kw)

    def to_text(self) -> str:
        rows = []
        for r in range(self.rows):
            chars = ["#" if w else "." for w in self.walls[r]]
            if r == self.start[0]:
                chars[self.start[1]] = "S"
            if r == self.goal[0]:
                chars[self.goal[1]] = "G"
            rows.append("".join(chars))
        return "\n".join(rows) + "\n"

    @property
    def rows(self) -> int:
        return self.walls.shape[0]

    @property
    def cols(self) -> int:
        return self.walls.shape[1]

    @property
    def extent(self) -> tuple:
        return self.cols * self.cell_size, self.rows * self.cell_size

    def in_grid(self, cell) -> bool:
        return 0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols

    def free_cells(self) -> list:
        return [tuple(int(v) for v in rc) for rc in np.argwhere(~self.walls)]

    def neighbors(self, cell):
        r, c = cell
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nb = (r + dr, c + dc)
            if self.in_grid(nb) and not self.walls[nb]:
                yield nb

    def reachable(self, cell) -> set:
        """Flood fill over 4-connected free cells."""
        seen, stack = {cell}, [cell]
        while stack:
            for nb in self.neighbors(stack.pop()):
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return seen

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        for cell in self.free_cells():
            g.add_node(cell)
            for nb in self.neighbors(cell):
                g.add_edge(cell, nb)
        return g

    def route(self, a, b) -> list:
        """A* cell path from ``a`` to ``b`` (inclusive)."""
        g = self.graph()
        try:
            return nx.astar_path(g, tuple(a), tuple(b), heuristic=lambda u, v: abs(u[0] - v[0]) + abs(u[1] - v[1]))
        except (nx.NetworkXNoPath, nx.NodeNotFound) as exc:
            raise ParameterError(f"no route from {a} to {b}") from exc

    def cell_center(self, cell) -> np.ndarray:
        return (np.array([cell[1], cell[0]], dtype=float) + 0.5) * self.cell_size

    def cell_of(self, pos) -> tuple:
        x, y = pos[0], pos[1]
        return int(np.floor(y / self.cell_size)), int(np.floor(x / self.cell_size))

    def room_of(self, pos):
        cell = self.cell_of(pos)
        return cell if self.in_grid(cell) else None

    @property
    def goal_position(self) -> np.ndarray:
        return self.cell_center(self.goal)

    @property
    def start_position(self) -> np.ndarray:
        return self.cell_center(self.start)

    def _wall_boxes(self) -> np.ndarray:
        cs = self.cell_size
        cells = np.argwhere(self.walls)
        lo = np.stack([cells[:, 1] * cs, cells[:, 0] * cs], axis=1).astype(float)
        boxes = [np.concatenate([lo, lo + cs], axis=1)]
        w, h = self.extent
        big = 1e6
        boxes.append(np.array([[-big, -big, 0.0, big], [w, -big, big, big],
                               [-big, -big, big, 0.0], [-big, h, big, big]]))
        return np.concatenate(boxes, axis=0)

    @property
    def wall_boxes(self) -> np.ndarray:
        """(W, 4) array of ``[x_lo, y_lo, x_hi, y_hi]`` including the outside of the grid."""
        return self._boxes


def _slab_interval(p, d, lo, hi):
    """Open parametric interval where p + t d lies strictly between lo and hi."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - p) / d
        t2 = (hi - p) / d
    enter = np.minimum(t1, t2)
    leave = np.maximum(t1, t2)
    parallel = d == 0
    inside = (lo < p) & (p < hi)
    enter = np.where(parallel, np.where(inside, -np.inf, np.inf), enter)
    leave = np.where(parallel, np.where(inside, np.inf, -np.inf), leave)
    return enter, leave


def segment_box_hits(p, q, boxes):
    """Boolean (..., W): segment p->q passes through the open interior of each box.

    Also returns the parametric entry time into each box (``-inf`` when ``p`` is inside).
    """
    p = np.asarray(p, dtype=float)[..., None, :]
    d = np.asarray(q, dtype=float)[..., None, :] - p
    ex, lx = _slab_interval(p[..., 0], d[..., 0], boxes[:, 0], boxes[:, 2])
    ey, ly = _slab_interval(p[..., 1], d[..., 1], boxes[:, 1], boxes[:, 3])
    enter = np.maximum(ex, ey)
    leave = np.minimum(lx, ly)
    hit = np.maximum(enter, 0.0) < np.minimum(leave, 1.0)
    return hit, enter, ex >= ey


def _positions(trajectory) -> np.ndarray:
    states = getattr(trajectory, "states", trajectory)
    pos = np.asarray(states, dtype=float)
    if pos.ndim < 2 or pos.shape[-1] < 2:
        raise ShapeError("trajectory states must have at least two coordinates (x, y)")
    return pos[..., :2]


def collision_flags(positions, maze: MazeSpec) -> np.ndarray:
    """Per-trajectory verdicts for a (P, T, 2) batch of positions."""
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 3 or pos.shape[-1] != 2:
        raise ShapeError("positions must have shape (P, T, 2)")
    if pos.shape[1] == 1:
        p, q = pos, pos
    else:
        p, q = pos[:, :-1], pos[:, 1:]
    hit, _, _ = segment_box_hits(p, q, maze.wall_boxes)
    return hit.any(axis=(1, 2))


def wall_collision_oracle(trajectory, maze: MazeSpec) -> bool:
    """True iff some segment between consecutive states passes through a wall cell."""
    pos = _positions(trajectory)
    if pos.ndim != 2:
        raise ShapeError("expected a single trajectory")
    return bool(collision_flags(pos[None], maze)[0])
