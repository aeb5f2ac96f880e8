"""``lomap`` command line: gen-data, train, plan, eval, gap, plot.

Every subcommand accepts ``--seed``, ``--config``, ``--out`` and ``--threads``. A
config file holds ``key = value`` lines named like the long flags; flags given on
the command line win. Exit codes: 0 success, 2 parameter error, 3 data or format
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoints import load_model, model_checkpoint, schedule_hash
from .config import config_hash, hash_hex, load_config_file
from .denoisers import GmmSpec, TrainConfig, train_mlp_denoiser
from .diffusion import TrajectoryLayout, build_schedule
from .errors import ConfigurationError, DataFormatError, GenerationError, NumericalError, ParameterError, ShapeError
from .experiments import (RETRIEVAL_KEYS, MazeExperimentConfig, MazeSetup, key_columns, make_context,
                          max_path_cells, plan_metrics, sample_paired_plans, sample_start_goal_pairs)
from .formats import (DatasetFile, index_file, read_checkpoint, read_dataset, read_index, restore_index, write_bytes,
                      write_checkpoint, write_dataset, write_index)
from .index import build_index
from .guidance import GAP_FAMILIES, gap_scaling_experiment, train_mse_guide
from .planner import ACTION_MODES, PlannerConfig, hierarchical_plan, plan_episode
from .projection import MODES, LomapContext, ProjectionSchedule
from .synthworld.data import (GOAL_MODES, Normalizer, OfflineDataset, SubspaceSpec, generate_offline_dataset,
                              sample_gmm_dataset, sample_subspace_dataset, window_dataset)
from .synthworld.env import PointMassEnv
from .synthworld.maze import MazeSpec, collision_flags
from .synthworld.metrics import knn_radii

EXIT_OK, EXIT_PARAM, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParameterError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lomap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help, out_default):
        c = sub.add_parser(name, help=help)
        c.add_argument("--seed", type=int, default=0)
        c.add_argument("--config", default=None, help="key=value file; flags override it")
        c.add_argument("--out", default=out_default)
        c.add_argument("--threads", type=int, default=1)
        return c

    def schedule_flags(c, kind="linear", beta_max=0.4):
        c.add_argument("--schedule", choices=("linear", "cosine"), default=kind)
        c.add_argument("--M", type=int, default=20)
        c.add_argument("--beta-min", type=float, default=1e-4)
        c.add_argument("--beta-max", type=float, default=beta_max)

    def projection_flags(c):
        c.add_argument("--key", choices=RETRIEVAL_KEYS, default="endpoints")
        c.add_argument("--k", type=int, default=10)
        c.add_argument("--lam", type=float, default=0.99)
        c.add_argument("--mode", choices=MODES, default="affine")
        c.add_argument("--i-lo", type=int, default=1)
        c.add_argument("--i-hi", type=int, default=12)
        c.add_argument("--n-list", type=int, default=32)
        c.add_argument("--n-probe", type=int, default=None)
        c.add_argument("--index", default=None, help="index file: loaded if present, else built and saved")

    c = command("gen-data", "generate an offline dataset file", "data.lmpd")
    c.add_argument("--world", choices=("maze", "subspace", "gmm"), default="maze")
    c.add_argument("--maze", default="four_room", help="builtin name or path to a text grid")
    c.add_argument("--episodes", type=int, default=500)
    c.add_argument("--horizon", type=int, default=32)
    c.add_argument("--noise", type=float, default=0.05)
    c.add_argument("--goal-mode", choices=GOAL_MODES, default="random")
    c.add_argument("--dim", type=int, default=20)
    c.add_argument("--k-intrinsic", type=int, default=3)
    c.add_argument("--n", type=int, default=1000)
    c.add_argument("--components", type=int, default=2)
    c.add_argument("--variance", type=float, default=0.05)

    c = command("train", "train a denoiser and/or guide", "train_out")
    c.add_argument("--data", required=True)
    c.add_argument("--model", choices=("denoiser", "guide", "both"), default="denoiser")
    c.add_argument("--level", choices=("flat", "high", "low"), default="flat")
    c.add_argument("--stride", type=int, default=4)
    c.add_argument("--steps", type=int, default=20000)
    c.add_argument("--batch-size", type=int, default=128)
    c.add_argument("--lr", type=float, default=1e-3)
    c.add_argument("--hidden", type=_int_list, default="256,256")
    c.add_argument("--embed-dim", type=int, default=32)
    c.add_argument("--activation", choices=("silu", "tanh"), default="silu")
    c.add_argument("--no-skip", action="store_true", help="train without the Gaussian skip term")
    c.add_argument("--clean", choices=tuple(CLEAN_STEPS), default="ends",
                   help="state blocks fed un-noised and left out of the denoiser loss (match the planner's conditioning)")
    schedule_flags(c)

    c = command("plan", "run receding-horizon (or two-level) planning episodes", "plan_out")
    c.add_argument("--denoiser")
    c.add_argument("--guide")
    c.add_argument("--data", help="dataset indexed for projection")
    c.add_argument("--maze", default="four_room")
    c.add_argument("--omega", type=float, default=0.0)
    c.add_argument("--projection", dest="projection", action="store_true")
    c.add_argument("--no-projection", dest="projection", action="store_false")
    c.set_defaults(projection=False)
    c.add_argument("--candidates", type=int, default=1)
    c.add_argument("--episodes", type=int, default=20)
    c.add_argument("--max-steps", type=int, default=100)
    c.add_argument("--random-pairs", action="store_true")
    c.add_argument("--no-goal", action="store_true", help="condition on the start state only")
    c.add_argument("--action-mode", choices=ACTION_MODES, default="plan",
                   help="execute the planned a_0, or the action realizing the planned s_0 -> s_1")
    c.add_argument("--dump", action="store_true", help="write executed plans to plans.lmpd")
    c.add_argument("--hier", action="store_true", help="two-level planning from --high and --low")
    c.add_argument("--high")
    c.add_argument("--low")
    c.add_argument("--lomap-low", action="store_true", help="also project the low level")
    projection_flags(c)

    c = command("eval", "artifact ratio vs plan count, realism and dynamic MSE", "eval_out")
    c.add_argument("--dump", action="append", default=[], help="method=path of a plan dump (repeatable)")
    c.add_argument("--group", type=int, default=None, help="plans per start/goal pair in dumps")
    c.add_argument("--denoiser")
    c.add_argument("--data")
    c.add_argument("--maze", default="four_room")
    c.add_argument("--pairs", type=int, default=20)
    c.add_argument("--plan-counts", type=_int_list, default="10,20,30")
    c.add_argument("--k-nn", type=int, default=3)
    projection_flags(c)

    c = command("gap", "guidance-gap scaling experiment", "gap_out")
    c.add_argument("--dims", type=_int_list, default="4,16,64,256")
    c.add_argument("--family", choices=GAP_FAMILIES, default="quadratic")
    c.add_argument("--n", type=int, default=100000)
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--step", type=int, default=10)
    schedule_flags(c, "cosine", 0.999)

    c = command("plot", "SVG overlay of plans on a maze", "plot.svg")
    c.add_argument("--maze", default="four_room")
    c.add_argument("--dump", default=None, help="dataset-format file of trajectories in world units")
    c.add_argument("--limit", type=int, default=100)
    c.add_argument("--title", default=None)
    return p


# -- configuration -------------------------------------------------------------------------------


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        return action.choices[name]


def parse_args(argv) -> argparse.Namespace:
    """Parse flags over an optional config file; unknown config keys are rejected."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    values = load_config_file(args.config)
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    unknown = sorted(set(values) - set(actions) - {"config"})
    if unknown:
        raise ConfigurationError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    defaults = {}
    for key, text in values.items():
        if key == "config":
            continue
        act = actions[key]
        if act.nargs == 0:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigurationError(f"config key {key!r} expects a boolean, got {text!r}")
            defaults[key] = text.lower() in ("true", "1", "yes")
        elif act.dest == "dump" and isinstance(act.default, list):
            defaults[key] = [v.strip() for v in text.split(",") if v.strip()]
        else:
            defaults[key] = text
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def run_values(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())}


def run_hash(args) -> int:
    return config_hash(run_values(args))


def write_csv(path: Path, rows: list[dict], h: int, seed: int) -> None:
    if not rows:
        raise ParameterError(f"no rows to write to {path}")
    fields = list(rows[0]) + ["seed", "config_hash"]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**{k: _fmt(v) for k, v in r.items()}, "seed": seed, "config_hash": hash_hex(h)})


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ParameterError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_json(path: Path, obj) -> None:
    write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n").encode())


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


def _load_maze(name: str) -> MazeSpec:
    return MazeSpec.load(name)


def _layout(ds: DatasetFile) -> TrajectoryLayout:
    return TrajectoryLayout(ds.horizon, ds.state_dim, ds.action_dim)


# -- commands --------------------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    h = run_hash(args)
    if args.world == "maze":
        maze = _load_maze(args.maze)
        ds = generate_offline_dataset(maze, args.episodes, horizon=args.horizon, noise=args.noise, seed=args.seed,
                                      goal_mode=args.goal_mode)
        lay = ds.layout
        out = DatasetFile(ds.trajectories, ds.returns, lay.horizon, lay.state_dim, lay.action_dim, h, args.seed)
    else:
        if args.n < 1:
            raise ParameterError("n must be at least 1")
        if args.world == "subspace":
            spec = SubspaceSpec.random(args.dim, args.k_intrinsic, seed=args.seed)
            rows = sample_subspace_dataset(spec, args.n, seed=args.seed)
        else:
            rng = np.random.default_rng(args.seed)
            C = args.components
            if C < 1:
                raise ParameterError("need at least one component")
            gmm = GmmSpec(np.full(C, 1.0 / C), rng.standard_normal((C, args.dim)), np.full(C, args.variance))
            rows = sample_gmm_dataset(gmm, args.n, seed=args.seed)
        out = DatasetFile(rows, np.zeros(len(rows)), 1, args.dim, 0, h, args.seed)
    write_dataset(args.out, out)
    print(f"wrote {out.N} trajectories to {args.out} (config {hash_hex(h)})")
    return EXIT_OK


def _training_data(args, ds: DatasetFile):
    lay = _layout(ds)
    norm = Normalizer.fit(ds.trajectories, lay)
    X = norm.normalize(ds.trajectories)
    if args.level == "flat":
        return X, lay, norm
    if args.stride < 1:
        raise ParameterError("stride must be at least 1")
    if args.level == "high":
        H = (lay.horizon - 1) // args.stride + 1
        if H < 2:
            raise ParameterError(f"horizon {lay.horizon} too short for stride {args.stride}")
        X, lay = window_dataset(X, lay, H, stride=args.stride, state_only=True)
    else:
        X, lay = window_dataset(X, lay, args.stride + 1)
    return X, lay, norm


CLEAN_STEPS = {"ends": (0, -1), "start": (0,), "none": ()}


def _clean_columns(layout, which):
    cols = layout.state_columns(CLEAN_STEPS[which])
    # a layout made only of pinned blocks (horizon-1 data) has nothing to mask
    return None if cols.size in (0, layout.dim) else cols


def cmd_train(args) -> int:
    h = run_hash(args)
    ds = read_dataset(args.data)
    if args.model != "denoiser" and args.level != "flat":
        raise ParameterError("guides are trained on full-horizon (flat) data only")
    X, lay, norm = _training_data(args, ds)
    sch = build_schedule(args.M, args.schedule, args.beta_min, args.beta_max)
    cfg = TrainConfig(args.steps, args.batch_size, args.lr, tuple(args.hidden), args.embed_dim, args.activation,
                      not args.no_skip)
    out = _out_dir(args)
    extra = {"train": cfg.describe(), "level": args.level, "stride": args.stride, "data_config_hash": hash_hex(ds.config_hash)}
    clean = _clean_columns(lay, args.clean)
    rows = []
    rng = np.random.default_rng(args.seed)
    if args.model in ("denoiser", "both"):
        den = train_mlp_denoiser(X, sch, cfg, rng, clean_columns=clean)
        meta = {**extra, "clean": args.clean if clean is not None else "none"}
        write_checkpoint(out / "denoiser.lmpc", model_checkpoint(den, sch, lay, norm, meta, h, args.seed))
        rows += [{"model": "denoiser", "epoch": e, "loss": v} for e, v in enumerate(den.loss_history)]
    if args.model in ("guide", "both"):
        guide = train_mse_guide(X, ds.returns, sch, cfg, rng)
        write_checkpoint(out / "guide.lmpc", model_checkpoint(guide, sch, lay, norm, extra, h, args.seed))
        rows += [{"model": "guide", "epoch": e, "loss": v} for e, v in enumerate(guide.loss_history)]
    if not rows:
        rows = [{"model": args.model, "epoch": -1, "loss": float("nan")}]
    write_csv(out / "loss.csv", rows, h, args.seed)
    print(f"wrote checkpoints and loss.csv to {out} (config {hash_hex(h)})")
    return EXIT_OK


def _load_ckpt(path, what, kind="denoiser"):
    if not path:
        raise ParameterError(f"--{what} checkpoint is required")
    if not Path(path).is_file():
        raise DataFormatError(f"{what} checkpoint {path} does not exist")
    loaded = load_model(read_checkpoint(path))
    if loaded.meta.get("kind") != kind:
        raise ConfigurationError(f"{path} holds a {loaded.meta.get('kind')}, expected a {kind}")
    return loaded


def _same_schedule(a, b, what):
    if schedule_hash(a.schedule) != schedule_hash(b.schedule):
        raise ConfigurationError(f"{what}: checkpoints were trained with different noise schedules")


def _projection(args) -> ProjectionSchedule:
    return ProjectionSchedule(args.i_lo, args.i_hi, k=args.k, lam=args.lam, mode=args.mode, n_probe=args.n_probe)


def _context(args, loaded, key=None):
    if not args.data:
        raise ConfigurationError("projection needs --data to build the retrieval index")
    ds = read_dataset(args.data)
    full = _layout(ds)
    X = loaded.normalizer.normalize(ds.trajectories)
    lay = loaded.layout
    if lay != full:
        level, stride = loaded.meta.get("level", "flat"), int(loaded.meta.get("stride", 1))
        if level == "high":
            X, got = window_dataset(X, full, lay.horizon, stride=stride, state_only=True)
        else:
            X, got = window_dataset(X, full, lay.horizon)
        if got != lay:
            raise ShapeError("dataset layout does not match the checkpoint")
    key = key or args.key
    if not args.index:
        return make_context(X, lay, key, args.n_list, args.seed)
    kc = key_columns(lay, key)
    rows = X if kc is None else X[:, kc]
    if Path(args.index).is_file():
        index = restore_index(read_index(args.index), rows)
    else:
        index = build_index(rows, args.n_list, seed=args.seed)
        write_index(args.index, index_file(index, run_hash(args), args.seed))
    return LomapContext(index, X, kc)


def _pairs(args, maze, horizon):
    if args.random_pairs:
        return sample_start_goal_pairs(maze, args.episodes, args.seed, max_cells=max_path_cells(maze, horizon))
    return [(maze.start_position, maze.goal_position)] * args.episodes


def _parallel(fn, jobs, threads):
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(fn, jobs))


def cmd_plan(args) -> int:
    h = run_hash(args)
    if args.episodes < 1:
        raise ParameterError("episodes must be at least 1")
    maze = _load_maze(args.maze)
    out = _out_dir(args)
    if args.hier:
        return _plan_hier(args, maze, out, h)
    den = _load_ckpt(args.denoiser, "denoiser")
    guide = _load_ckpt(args.guide, "guide", "guide") if args.guide else None
    if guide is not None:
        _same_schedule(den, guide, "plan")
        if guide.layout != den.layout:
            raise ConfigurationError("guide and denoiser disagree on the trajectory layout")
    lay = den.layout
    if args.no_goal and den.meta.get("clean") == "ends":
        print("note: denoiser was trained with a clean goal block; --no-goal plans leave it noised",
              file=sys.stderr)
    env0 = PointMassEnv(maze, max_steps=args.max_steps)
    if lay.state_dim != env0.state_dim or lay.action_dim != env0.action_dim:
        raise ShapeError("denoiser layout does not match the point-mass environment")
    proj = _projection(args) if args.projection else None
    ctx = _context(args, den) if proj is not None else None
    cfg = PlannerConfig(args.omega, proj, {}, args.candidates, args.seed)
    cfg.validate(lay, den.schedule, guide.model if guide else None)
    pairs = _pairs(args, maze, lay.horizon)

    def episode(j):
        env = PointMassEnv(maze, max_steps=args.max_steps)
        s, g = pairs[j]
        return plan_episode(env, den.model, guide.model if guide else None, den.schedule, cfg, lay, den.normalizer,
                            ctx, np.random.default_rng([args.seed, j]), start=s, goal=g,
                            condition_goal=not args.no_goal, keep_plans=args.dump, action_mode=args.action_mode)

    results = _parallel(episode, range(args.episodes), args.threads)
    rows = [{"episode": j, **r.row()} for j, r in enumerate(results)]
    write_csv(out / "episodes.csv", rows, h, args.seed)
    if args.dump:
        plans = np.array([p for r in results for p in r.plans]).reshape(-1, lay.dim)
        write_dataset(out / "plans.lmpd", DatasetFile(plans, np.zeros(len(plans)), lay.horizon, lay.state_dim,
                                                      lay.action_dim, h, args.seed))
    _write_json(out / "run.json", {"config_hash": hash_hex(h), "args": run_values(args), "planner": cfg.describe(),
                                   "denoiser": den.meta})
    rate = np.mean([r.success for r in results])
    print(f"{args.episodes} episodes, success rate {rate:.3f} (config {hash_hex(h)})")
    return EXIT_OK


def _plan_hier(args, maze, out, h) -> int:
    hi = _load_ckpt(args.high, "high")
    lo = _load_ckpt(args.low, "low")
    _same_schedule(hi, lo, "hierarchical plan")
    K = int(lo.layout.horizon - 1)
    proj = _projection(args) if args.projection else None
    ctx_hi = _context(args, hi) if proj is not None else None
    ctx_lo = _context(args, lo) if proj is not None and args.lomap_low else None
    pairs = _pairs(args, maze, K * (hi.layout.horizon - 1) + 1)
    cols = np.arange(hi.layout.state_dim)
    cfg_lo = PlannerConfig(0.0, proj if args.lomap_low else None, {}, 1, args.seed)

    def episode(j):
        s, g = pairs[j]
        cond = {0: hi.normalizer.normalize(np.r_[s, 0.0, 0.0], columns=cols),
                hi.layout.horizon - 1: hi.normalizer.normalize(np.r_[g, 0.0, 0.0], columns=cols)}
        cfg_hi = PlannerConfig(0.0, proj, cond, 1, args.seed)
        res = hierarchical_plan(hi.model, lo.model, K, hi.schedule, lo.schedule, cfg_hi, cfg_lo, hi.layout,
                                lo.layout, ctx_hi, ctx_lo, np.random.default_rng([args.seed, j]))
        return lo.normalizer.unnormalize(res.trajectory.data), res.trajectory.layout

    results = _parallel(episode, range(args.episodes), args.threads)
    lay = results[0][1]
    world = np.array([w for w, _ in results])
    flags = collision_flags(lay.states(world)[..., :2], maze)
    rows = [{"episode": j, "collision": int(f), "length": lay.horizon} for j, f in enumerate(flags)]
    write_csv(out / "episodes.csv", rows, h, args.seed)
    if args.dump:
        write_dataset(out / "plans.lmpd", DatasetFile(world, np.zeros(len(world)), lay.horizon, lay.state_dim,
                                                      lay.action_dim, h, args.seed))
    _write_json(out / "run.json", {"config_hash": hash_hex(h), "args": run_values(args), "stride": K,
                                   "high": {"planner": PlannerConfig(0.0, proj).describe(), "checkpoint": hi.meta},
                                   "low": {"planner": cfg_lo.describe(), "checkpoint": lo.meta}})
    print(f"{args.episodes} two-level plans, collision ratio {flags.mean():.3f} (config {hash_hex(h)})")
    return EXIT_OK


def _sweep_rows(groups: dict, counts, maze, lay, metrics) -> list[dict]:
    rows = []
    for method, plans in groups.items():
        P, n = plans.shape[:2]
        flags = collision_flags(lay.states(plans.reshape(P * n, -1))[..., :2], maze).reshape(P, n)
        real, dm = metrics(method, plans) if metrics else (None, None)
        for c in counts:
            row = {"method": method, "plans": c, "artifact_ratio": float(flags[:, :c].mean()),
                   "any_collision": float(flags[:, :c].any(axis=1).mean()), "pairs": P}
            if real is not None:
                row["realism"] = float(real.reshape(P, n)[:, :c].mean())
                row["dynamic_mse"] = float(dm.reshape(P, n)[:, :c].mean())
            rows.append(row)
    return rows


def cmd_eval(args) -> int:
    h = run_hash(args)
    counts = sorted(set(args.plan_counts))
    if not counts or counts[0] < 1:
        raise ParameterError("plan counts must be positive")
    maze = _load_maze(args.maze)
    env = PointMassEnv(maze)
    out = _out_dir(args)
    if args.dump:
        groups, lay = {}, None
        for spec in args.dump:
            method, _, path = spec.rpartition("=")
            method = method or Path(path).stem
            ds = read_dataset(path)
            if lay is not None and _layout(ds) != lay:
                raise ShapeError("plan dumps disagree on layout")
            lay = _layout(ds)
            if ds.N == 0:
                raise ParameterError(f"plan dump {path} is empty")
            g = args.group or ds.N
            if ds.N % g:
                raise ParameterError(f"{ds.N} plans do not split into groups of {g}")
            groups[method] = ds.trajectories.reshape(ds.N // g, g, -1)
        if counts[-1] > min(v.shape[1] for v in groups.values()):
            raise ParameterError("largest plan count exceeds plans per group")
        metrics = None
        if args.data and lay.action_dim:
            ref = read_dataset(args.data)
            norm = Normalizer.fit(ref.trajectories, _layout(ref))
            X = norm.normalize(ref.trajectories)
            radii = knn_radii(X, args.k_nn)
            metrics = lambda m, p: plan_metrics(p.reshape(-1, lay.dim), lay, X, norm, env, args.k_nn, radii)  # noqa: E731
        rows = _sweep_rows(groups, counts, maze, lay, metrics)
    else:
        den = _load_ckpt(args.denoiser, "denoiser")
        if not args.data:
            raise ParameterError("on-the-fly evaluation needs --denoiser and --data")
        ds = read_dataset(args.data)
        lay = den.layout
        X = den.normalizer.normalize(ds.trajectories)
        if X.shape[1] != lay.dim:
            raise ShapeError("dataset layout does not match the denoiser")
        cfg = MazeExperimentConfig(key=args.key, n_list=args.n_list, k=args.k, i_lo=args.i_lo, i_hi=args.i_hi,
                                   seed=args.seed)
        setup = MazeSetup(maze, OfflineDataset(ds.trajectories, ds.returns, lay), den.normalizer, X, den.schedule,
                          den.model, make_context(X, lay, args.key, args.n_list, args.seed), cfg)
        pairs = sample_start_goal_pairs(maze, args.pairs, args.seed, max_cells=max_path_cells(maze, lay.horizon))
        paired = sample_paired_plans(setup, pairs, counts[-1], args.seed, _projection(args))
        radii = knn_radii(X, args.k_nn)
        groups = {"baseline": den.normalizer.unnormalize(paired.baseline),
                  "lomap": den.normalizer.unnormalize(paired.lomap)}
        metrics = lambda m, p: plan_metrics(p, lay, X, den.normalizer, env, args.k_nn, radii)  # noqa: E731
        rows = _sweep_rows(groups, counts, maze, lay, metrics)
    write_csv(out / "metrics.csv", rows, h, args.seed)
    from .plotting import sweep_svg
    write_bytes(out / "sweep.svg", sweep_svg(rows, description=f"config_hash={hash_hex(h)}"))
    print(f"wrote {len(rows)} rows to {out / 'metrics.csv'} (config {hash_hex(h)})")
    return EXIT_OK


def cmd_gap(args) -> int:
    h = run_hash(args)
    sch = build_schedule(args.M, args.schedule, args.beta_min, args.beta_max)
    res = gap_scaling_experiment(args.dims, args.step, args.family, sch, args.n, args.trials,
                                 np.random.default_rng(args.seed), threads=args.threads)
    out = _out_dir(args)
    rows = [{"kind": "dim", "d": r.d, "step": r.i, "n": r.n, "delta": r.delta_mean, "stderr": r.delta_stderr,
             "mc_stderr": r.mc_stderr, "slope": "", "intercept": "", "degenerate": ""} for r in res.rows]
    rows.append({"kind": "slope", "d": "", "step": args.step, "n": args.n, "delta": "", "stderr": "",
                 "mc_stderr": "", "slope": "" if res.slope is None else res.slope,
                 "intercept": "" if res.intercept is None else res.intercept, "degenerate": int(res.degenerate)})
    write_csv(out / "gap.csv", rows, h, args.seed)
    from .plotting import gap_scaling_svg
    svg = gap_scaling_svg([r.d for r in res.rows], [r.delta_mean for r in res.rows],
                          [r.delta_stderr for r in res.rows], res.slope, res.intercept,
                          title=f"guidance gap, {args.family} return", description=f"config_hash={hash_hex(h)}")
    write_bytes(out / "gap.svg", svg)
    slope = "degenerate" if res.degenerate else f"{res.slope:.4f}"
    print(f"slope {slope} (config {hash_hex(h)})")
    return EXIT_OK


def cmd_plot(args) -> int:
    h = run_hash(args)
    maze = _load_maze(args.maze)
    paths = []
    if args.dump:
        ds = read_dataset(args.dump)
        if ds.state_dim < 2:
            raise ShapeError("trajectories need at least two state components to overlay on a maze")
        paths = list(_layout(ds).states(ds.trajectories[: args.limit])[..., :2])
    from .plotting import maze_overlay_svg
    write_bytes(args.out, maze_overlay_svg(maze, paths, title=args.title, description=f"config_hash={hash_hex(h)}"))
    print(f"wrote {args.out} with {len(paths)} paths (config {hash_hex(h)})")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "plan": cmd_plan, "eval": cmd_eval, "gap": cmd_gap,
            "plot": cmd_plot}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        if args.threads < 1:
            raise ParameterError("threads must be at least 1")
        return COMMANDS[args.command](args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (DataFormatError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
