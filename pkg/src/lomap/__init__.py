"""Guided diffusion trajectory planning with local manifold projection.

The core pieces are importable from the package root; the desk-scale maze world
lives in :mod:`lomap.synthworld` and the command line in :mod:`lomap.cli`.
"""

from .denoisers import AnalyticGmmDenoiser, GmmSpec, MlpDenoiser, TrainConfig, train_mlp_denoiser
from .diffusion import (NoiseSchedule, Trajectory, TrajectoryLayout, build_schedule, forward_diffuse,
                        reverse_mean, reverse_step, sample_transition, sample_unguided, tweedie_denoise)
from .errors import (ConfigurationError, DataFormatError, GenerationError, LomapError, NumericalError,
                     ParameterError, ShapeError)
from .guidance import MseGuide, apply_guidance, gap_scaling_experiment, guidance_gap, train_mse_guide
from .index import AnnIndex, build_index, exact_knn, knn
from .planner import (EpisodeResult, PlannerConfig, guided_sample, guided_sample_batch, hierarchical_plan,
                      plan_episode)
from .projection import LocalBasis, LomapContext, ProjectionSchedule, local_basis, lomap_project

__version__ = "0.1.0"

__all__ = [
    "AnalyticGmmDenoiser", "AnnIndex", "ConfigurationError", "DataFormatError", "EpisodeResult",
    "GenerationError", "GmmSpec", "LocalBasis", "LomapContext", "LomapError", "MlpDenoiser", "MseGuide",
    "NoiseSchedule", "NumericalError", "ParameterError", "PlannerConfig", "ProjectionSchedule", "ShapeError",
    "TrainConfig", "Trajectory", "TrajectoryLayout", "apply_guidance", "build_index", "build_schedule",
    "exact_knn", "forward_diffuse", "gap_scaling_experiment", "guidance_gap", "guided_sample",
    "guided_sample_batch", "hierarchical_plan", "knn", "local_basis", "lomap_project", "plan_episode",
    "reverse_mean", "reverse_step", "sample_transition", "sample_unguided", "train_mlp_denoiser",
    "train_mse_guide", "tweedie_denoise",
]
