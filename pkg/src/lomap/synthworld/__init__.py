"""Desk-scale maze world, data generators and evaluation metrics."""

from .data import (GOAL_MODES, Normalizer, OfflineDataset, SubspaceSpec, WaypointController,
                   generate_offline_dataset, sample_gmm_dataset, sample_subspace_dataset, window_dataset)
from .env import ACTION_DIM, STATE_DIM, PointMassEnv
from .maze import BUILTIN_MAZES, MazeSpec, collision_flags, wall_collision_oracle
from .metrics import REALISM_CAP, RealismResult, artifact_ratio, dynamic_mse, knn_radii, realism_score

__all__ = [
    "ACTION_DIM", "BUILTIN_MAZES", "GOAL_MODES", "MazeSpec", "Normalizer", "OfflineDataset", "PointMassEnv",
    "REALISM_CAP", "RealismResult", "STATE_DIM", "SubspaceSpec", "WaypointController", "artifact_ratio",
    "collision_flags", "dynamic_mse", "generate_offline_dataset", "knn_radii", "realism_score",
    "sample_gmm_dataset", "sample_subspace_dataset", "wall_collision_oracle", "window_dataset",
]
