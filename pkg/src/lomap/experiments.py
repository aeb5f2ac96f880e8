"""Maze experiments shared by the CLI and the acceptance suite.

A :class:`MazeSetup` bundles a generated offline dataset, its normalizer and a
trained denoiser. The comparisons below always run the baseline and the LoMAP
sampler from identical rng streams so that every difference is paired.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoisers import MlpDenoiser, TrainConfig, train_mlp_denoiser
from .diffusion import NoiseSchedule, TrajectoryLayout, build_schedule
from .errors import ParameterError
from .index import build_index
from .planner import PlannerConfig, guided_sample_batch, hierarchical_plan
from .projection import LomapContext, ProjectionSchedule
from .synthworld.data import (Normalizer, OfflineDataset, _cell_distances, generate_offline_dataset,
                              window_dataset)
from .synthworld.env import PointMassEnv
from .synthworld.maze import MazeSpec, collision_flags
from .synthworld.metrics import dynamic_mse, knn_radii, realism_score

RETRIEVAL_KEYS = ("full", "states", "positions", "endpoints")


def key_columns(layout: TrajectoryLayout, key: str) -> np.ndarray | None:
    """Columns of a flat trajectory compared during neighbor retrieval.

    ``endpoints`` keeps the first and last positions only; ``full`` returns None,
    meaning the whole vector.
    """
    if key not in RETRIEVAL_KEYS:
        raise ParameterError(f"retrieval key must be one of {RETRIEVAL_KEYS}")
    if key == "full":
        return None
    cols = np.arange(layout.dim).reshape(layout.horizon, layout.step_dim)
    if key == "states":
        return cols[:, : layout.state_dim].ravel()
    if key == "positions":
        return cols[:, :2].ravel()
    return np.r_[cols[0, :2], cols[-1, :2]]


def make_context(data: np.ndarray, layout: TrajectoryLayout, key: str = "endpoints", n_list: int = 32,
                 seed: int = 0) -> LomapContext:
    kc = key_columns(layout, key)
    index = build_index(data if kc is None else data[:, kc], n_list, seed=seed)
    return LomapContext(index, data, kc)


@dataclass
class MazeExperimentConfig:
    maze: str = "four_room"
    episodes: int = 3000
    horizon: int = 32
    noise: float = 0.05
    schedule_kind: str = "linear"
    M: int = 20
    beta_min: float = 1e-4
    beta_max: float = 0.4
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=20000, batch_size=128, hidden=(256, 256)))
    key: str = "endpoints"
    n_list: int = 32
    k: int = 10
    i_lo: int = 1
    i_hi: int = 12
    seed: int = 0
    clean_ends: bool = True

    def schedule(self) -> NoiseSchedule:
        return build_schedule(self.M, self.schedule_kind, self.beta_min, self.beta_max)

    def projection(self) -> ProjectionSchedule:
        return ProjectionSchedule(self.i_lo, self.i_hi, k=self.k)


@dataclass
class MazeSetup:
    maze: MazeSpec
    dataset: OfflineDataset
    normalizer: Normalizer
    data: np.ndarray
    schedule: NoiseSchedule
    denoiser: MlpDenoiser
    context: LomapContext
    config: MazeExperimentConfig

    @property
    def layout(self) -> TrajectoryLayout:
        return self.dataset.layout

    def condition(self, start, goal, layout: TrajectoryLayout | None = None) -> dict:
        """Start and goal positions at rest, in model space."""
        layout = layout or self.layout
        cols = np.arange(layout.state_dim)
        s = self.normalizer.normalize(np.r_[start, 0.0, 0.0], columns=cols)
        g = self.normalizer.normalize(np.r_[goal, 0.0, 0.0], columns=cols)
        return {0: s, layout.horizon - 1: g}

    def positions(self, plans: np.ndarray, layout: TrajectoryLayout | None = None) -> np.ndarray:
        layout = layout or self.layout
        return layout.states(self.normalizer.unnormalize(plans, columns=_model_columns(layout)))[..., :2]


def _model_columns(layout: TrajectoryLayout) -> np.ndarray | None:
    # state-only layouts hold the leading state_dim columns of each step
    return np.arange(layout.state_dim) if layout.action_dim == 0 else None


def end_columns(layout: TrajectoryLayout) -> np.ndarray | None:
    """State columns of the first and last step, or None when they would cover the whole layout."""
    cols = layout.state_columns([0, -1])
    return None if cols.size == layout.dim else cols


def prepare_maze_setup(config: MazeExperimentConfig | None = None) -> MazeSetup:
    """Generate data, fit the normalizer, train the denoiser and index the data."""
    config = config or MazeExperimentConfig()
    maze = MazeSpec.load(config.maze)
    ds = generate_offline_dataset(maze, config.episodes, horizon=config.horizon, noise=config.noise,
                                  seed=config.seed)
    norm = Normalizer.fit(ds.trajectories, ds.layout)
    X = norm.normalize(ds.trajectories)
    sch = config.schedule()
    clean = end_columns(ds.layout) if config.clean_ends else None
    den = train_mlp_denoiser(X, sch, config.train, np.random.default_rng(config.seed), clean_columns=clean)
    ctx = make_context(X, ds.layout, config.key, config.n_list, config.seed)
    return MazeSetup(maze, ds, norm, X, sch, den, ctx, config)


def sample_start_goal_pairs(maze: MazeSpec, n: int, seed: int = 0, min_cells: int = 2,
                            max_cells: int | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Random free start cells paired with goals ``min_cells..max_cells`` grid moves away."""
    rng = np.random.default_rng(seed)
    free = maze.free_cells()
    pairs = []
    for _ in range(100 * n):
        if len(pairs) == n:
            break
        s = free[rng.integers(len(free))]
        dist = _cell_distances(maze, s)
        opts = sorted(c for c, k in dist.items() if k >= min_cells and (max_cells is None or k <= max_cells))
        if opts:
            g = opts[rng.integers(len(opts))]
            pairs.append((np.asarray(maze.cell_center(s)), np.asarray(maze.cell_center(g))))
    if len(pairs) < n:
        raise ParameterError("maze has too few cell pairs at the requested distance")
    return pairs


def max_path_cells(maze: MazeSpec, horizon: int) -> int:
    """Longest route (in cells) a ``horizon``-step plan covers at the controller's top speed."""
    env = PointMassEnv(maze)
    return max(2, int(0.7 * (horizon - 1) * env.dt * 3.0 / maze.cell_size))


@dataclass
class PairedPlans:
    """Plans from both samplers, shape (pairs, plans, d), drawn from shared seeds."""

    baseline: np.ndarray
    lomap: np.ndarray
    pairs: list


def sample_paired_plans(setup: MazeSetup, pairs, n_plans: int, seed: int = 0,
                        projection: ProjectionSchedule | None = None) -> PairedPlans:
    projection = projection or setup.config.projection()
    out = {"baseline": [], "lomap": []}
    for j, (s, g) in enumerate(pairs):
        cond = setup.condition(s, g)
        for name, proj in (("baseline", None), ("lomap", projection)):
            rng = np.random.default_rng([seed, j])
            cfg = PlannerConfig(0.0, proj, cond)
            out[name].append(guided_sample_batch(setup.denoiser, None, setup.schedule, cfg, setup.layout,
                                                 setup.context, rng, n_plans))
    return PairedPlans(np.array(out["baseline"]), np.array(out["lomap"]), list(pairs))


@dataclass
class SweepRow:
    method: str
    plans: int
    artifact_ratio: float
    any_collision: float
    pairs: int

    def row(self) -> dict:
        return {"method": self.method, "plans": self.plans, "artifact_ratio": self.artifact_ratio,
                "any_collision": self.any_collision, "pairs": self.pairs}


def artifact_sweep(setup: MazeSetup, paired: PairedPlans, plan_counts) -> list[SweepRow]:
    """Per-plan artifact ratio and fraction of pairs with any colliding plan.

    The first ``c`` plans of each pair form the ``c``-plan cell, so every cell of
    both methods uses the same seeds.
    """
    plan_counts = sorted(int(c) for c in plan_counts)
    if not plan_counts or plan_counts[0] < 1 or plan_counts[-1] > paired.baseline.shape[1]:
        raise ParameterError("plan counts must lie in [1, plans sampled per pair]")
    rows = []
    for name, plans in (("baseline", paired.baseline), ("lomap", paired.lomap)):
        P, n, d = plans.shape
        flags = collision_flags(setup.positions(plans.reshape(P * n, d)), setup.maze).reshape(P, n)
        for c in plan_counts:
            sub = flags[:, :c]
            rows.append(SweepRow(name, c, float(sub.mean()), float(sub.any(axis=1).mean()), P))
    return rows


def plan_metrics(plans_world: np.ndarray, layout: TrajectoryLayout, reference: np.ndarray,
                 normalizer: Normalizer, env: PointMassEnv, k_nn: int = 3, radii=None):
    """Per-plan realism (model space, against ``reference``) and dynamic MSE (world units)."""
    flat = np.asarray(plans_world, dtype=float).reshape(-1, layout.dim)
    real = realism_score(normalizer.normalize(flat), reference, k_nn, radii=radii).scores
    dm = np.array([dynamic_mse((layout.states(w), layout.actions(w)), env) for w in flat])
    return real, dm


@dataclass
class MetricComparison:
    realism_baseline: float
    realism_lomap: float
    dynamic_mse_baseline: float
    dynamic_mse_lomap: float
    samples: int

    def rows(self) -> list[dict]:
        return [{"method": "baseline", "realism": self.realism_baseline,
                 "dynamic_mse": self.dynamic_mse_baseline, "samples": self.samples},
                {"method": "lomap", "realism": self.realism_lomap,
                 "dynamic_mse": self.dynamic_mse_lomap, "samples": self.samples}]


def metric_comparison(setup: MazeSetup, paired: PairedPlans, per_pair: int, k_nn: int = 3) -> MetricComparison:
    """Mean realism and dynamic MSE over the first ``per_pair`` plans of every pair."""
    env = PointMassEnv(setup.maze)
    radii = knn_radii(setup.data, k_nn)
    out = {}
    for name, plans in (("baseline", paired.baseline), ("lomap", paired.lomap)):
        world = setup.normalizer.unnormalize(plans[:, :per_pair].reshape(-1, plans.shape[-1]))
        real, dm = plan_metrics(world, setup.layout, setup.data, setup.normalizer, env, k_nn, radii)
        out[name] = (float(real.mean()), float(dm.mean()))
    return MetricComparison(out["baseline"][0], out["lomap"][0], out["baseline"][1], out["lomap"][1],
                            paired.baseline.shape[0] * min(per_pair, paired.baseline.shape[1]))


@dataclass
class HierarchicalSetup:
    K: int
    high_layout: TrajectoryLayout
    low_layout: TrajectoryLayout
    high_data: np.ndarray
    high_denoiser: MlpDenoiser
    low_denoiser: MlpDenoiser
    high_context: LomapContext
    low_context: LomapContext


def prepare_hierarchical(setup: MazeSetup, K: int = 4, high_horizon: int | None = None,
                         train: TrainConfig | None = None) -> HierarchicalSetup:
    """Train a stride-K state-only high level and a (K+1)-step low level on the maze data."""
    lay = setup.layout
    H = high_horizon or (lay.horizon - 1) // K + 1
    train = train or TrainConfig(steps=10000, batch_size=128, hidden=(256, 256))
    hi, hi_lay = window_dataset(setup.data, lay, H, stride=K, state_only=True)
    lo, lo_lay = window_dataset(setup.data, lay, K + 1, stride=1)
    rng = np.random.default_rng(setup.config.seed + 1)
    ends = setup.config.clean_ends
    hi_den = train_mlp_denoiser(hi, setup.schedule, train, rng, clean_columns=end_columns(hi_lay) if ends else None)
    lo_den = train_mlp_denoiser(lo, setup.schedule, train, rng, clean_columns=end_columns(lo_lay) if ends else None)
    hi_ctx = make_context(hi, hi_lay, _state_key(setup.config.key), setup.config.n_list, setup.config.seed)
    lo_ctx = make_context(lo, lo_lay, _state_key(setup.config.key), setup.config.n_list, setup.config.seed)
    return HierarchicalSetup(K, hi_lay, lo_lay, hi, hi_den, lo_den, hi_ctx, lo_ctx)


def _state_key(key: str) -> str:
    return "full" if key == "states" else key


@dataclass
class HierarchicalComparison:
    collision_baseline: float
    collision_lomap: float
    seeds: int
    length: int

    def rows(self) -> list[dict]:
        return [{"method": "hier_baseline", "collision_ratio": self.collision_baseline, "seeds": self.seeds,
                 "length": self.length},
                {"method": "hier_lomap", "collision_ratio": self.collision_lomap, "seeds": self.seeds,
                 "length": self.length}]


def hierarchical_comparison(setup: MazeSetup, hs: HierarchicalSetup, pairs, seed: int = 0,
                            lomap_low: bool = False) -> HierarchicalComparison:
    """Collision ratio of stitched plans with and without projection on the high level."""
    proj = setup.config.projection()
    hits = {"baseline": [], "lomap": []}
    length = 0
    for j, (s, g) in enumerate(pairs):
        cond = setup.condition(s, g, hs.high_layout)
        for name in hits:
            use = name == "lomap"
            cfg_hi = PlannerConfig(0.0, proj if use else None, cond)
            cfg_lo = PlannerConfig(0.0, proj if use and lomap_low else None)
            res = hierarchical_plan(hs.high_denoiser, hs.low_denoiser, hs.K, setup.schedule, setup.schedule,
                                    cfg_hi, cfg_lo, hs.high_layout, hs.low_layout, hs.high_context,
                                    hs.low_context, np.random.default_rng([seed, j]))
            xy = setup.positions(res.trajectory.data[None], res.trajectory.layout)
            hits[name].append(bool(collision_flags(xy, setup.maze)[0]))
            length = res.trajectory.horizon
    return HierarchicalComparison(float(np.mean(hits["baseline"])), float(np.mean(hits["lomap"])),
                                  len(pairs), length)
