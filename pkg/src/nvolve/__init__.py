"""Voxelwise encoding models and embedding-space optimization under
programmable neural objectives, with trajectory sampling and evaluation."""

__version__ = "0.1.0"

from .embedding import Embedding, EmbeddingShape, from_grid, random_embedding
from .encoder import (
    EncoderArchitecture,
    EncoderModel,
    ResponseDataset,
    TrainConfig,
    forward,
    init_model,
    input_gradient,
    normalize_per_session,
    parameter_gradients,
    pearson_per_voxel,
    train,
)
from .objective import (
    NeuralObjective,
    ObjectiveTerm,
    RoiAtlas,
    compile_objective,
    format_objective,
    parse_objective,
    region_means,
)
from .volve import (
    AdamState,
    OptimizeConfig,
    Trajectory,
    TrajectoryPoint,
    adam_step,
    init_adam_state,
    optimize,
    progress,
    sample_at_fractions,
)
from .synthetic import SyntheticSubject, cosine, make_dataset, make_subject, oracle_response
from .evalsuite import ActivationReport, activation_report, rank_by_region_mean

__all__ = [name for name in dir() if not name.startswith("_")]
