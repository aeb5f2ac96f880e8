"""Conversion between trained models and checkpoint files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import config_hash
from .denoisers import MlpDenoiser
from .diffusion import NoiseSchedule, TrajectoryLayout, build_schedule
from .errors import DataFormatError
from .formats import CheckpointFile
from .guidance import MseGuide
from .mlp import MLP, sinusoidal_table
from .synthworld.data import Normalizer


def schedule_meta(schedule: NoiseSchedule) -> dict:
    return {"kind": schedule.kind, "M": schedule.M, "beta_min": schedule.beta_min, "beta_max": schedule.beta_max}


def schedule_hash(schedule: NoiseSchedule) -> str:
    return f"{config_hash(schedule_meta(schedule)):016x}"


def schedule_from_meta(meta: dict) -> NoiseSchedule:
    return build_schedule(int(meta["M"]), meta["kind"], float(meta["beta_min"]), float(meta["beta_max"]), force=True)


@dataclass
class LoadedModel:
    model: object
    schedule: NoiseSchedule
    layout: TrajectoryLayout
    normalizer: Normalizer
    meta: dict


def model_checkpoint(model, schedule: NoiseSchedule, layout: TrajectoryLayout, normalizer: Normalizer,
                     extra: dict | None = None, config_hash: int = 0, seed: int = 0) -> CheckpointFile:
    """Snapshot of a denoiser or guide with everything needed to rebuild it."""
    kind = "guide" if isinstance(model, MseGuide) else "denoiser"
    meta = {
        "kind": kind,
        "widths": model.net.widths,
        "activation": model.net.activation,
        "embed_dim": int(model.embedding.shape[1]),
        "schedule": schedule_meta(schedule),
        "schedule_hash": schedule_hash(schedule),
        "layout": [layout.horizon, layout.state_dim, layout.action_dim],
        "loss_history": [float(v) for v in model.loss_history],
        **(extra or {}),
    }
    tensors = {f"p{j}": p for j, p in enumerate(model.net.params)}
    tensors["norm_lo"] = normalizer.lo
    tensors["norm_hi"] = normalizer.hi
    if kind == "guide":
        meta["y_mean"] = model.y_mean
        meta["y_scale"] = model.y_scale
    elif model.skip_mean is not None:
        tensors["skip_mean"] = model.skip_mean
        tensors["skip_var"] = model.skip_var
    return CheckpointFile(meta, tensors, config_hash, seed)


def load_model(ck: CheckpointFile) -> LoadedModel:
    meta = ck.meta
    try:
        widths = meta["widths"]
        net = MLP(widths, meta["activation"], [ck.tensors[f"p{j}"] for j in range(2 * (len(widths) - 1))])
        schedule = schedule_from_meta(meta["schedule"])
        layout = TrajectoryLayout(*meta["layout"])
        emb = sinusoidal_table(schedule.M, int(meta["embed_dim"]))
        if meta["kind"] == "guide":
            model = MseGuide(net, emb, layout.dim, meta["y_mean"], meta["y_scale"])
        else:
            skip = (ck.tensors["skip_mean"], ck.tensors["skip_var"]) if "skip_mean" in ck.tensors else (None, None)
            model = MlpDenoiser(net, emb, layout.dim, *skip)
            model.attach_schedule(schedule.alpha_bars)
        normalizer = Normalizer(ck.tensors["norm_lo"], ck.tensors["norm_hi"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"checkpoint is missing or has malformed fields: {exc}") from exc
    model.loss_history = list(meta.get("loss_history", []))
    return LoadedModel(model, schedule, layout, normalizer, meta)
