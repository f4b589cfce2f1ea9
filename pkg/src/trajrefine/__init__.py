"""Goal-guided multimodal trajectory forecasting with coarse-to-fine granular
refinement: candidate endpoints from a pretrained causal transformer seed
straight-line proposals that a weight-shared refinement stack sharpens across
granularity levels, trained with joint position/velocity regression and
evaluated with best-of-N displacement metrics."""

__version__ = "0.1.0"

from .datasets import (RawScene, TrajectoryWindow, augment_velocity, downsample,
                       extract_windows, load_eth_ucy, load_sdd, normalize_window,
                       synthesize, synthesize_mixed)
from .errors import ConfigurationError, GranularityError, ParseError, UsageError
from .estimator import TrajectoryForecaster
from .evaluation import (MetricReport, ade, best_of_n, evaluate_checkpoint,
                         evaluate_model, fde, forecast)
from .goal import (GoalConfig, GoalPredictor, GoalTrainConfig, load_goal_checkpoint,
                   pretrain, pretrain_goal_heads, pretrain_next_frame,
                   save_goal_checkpoint)
from .granularity import GranularView, from_granularity, to_granularity, validate_levels
from .proposal import initial_proposal, proposal_batch
from .refiner import (RefinementBundle, RefinementStack, RefinerConfig,
                      count_parameters, timestep_encoding)
from .training import (TrainConfig, cosine_lr, load_checkpoint, multimodal_loss,
                       position_loss, save_checkpoint, total_loss, train_refiner,
                       velocity_loss)

__all__ = [
    "ConfigurationError", "GranularityError", "GranularView", "GoalConfig",
    "GoalPredictor", "GoalTrainConfig", "MetricReport", "ParseError", "RawScene",
    "RefinementBundle", "RefinementStack", "RefinerConfig", "TrainConfig",
    "TrajectoryForecaster", "TrajectoryWindow", "UsageError", "ade",
    "augment_velocity", "best_of_n", "cosine_lr", "count_parameters", "downsample",
    "evaluate_checkpoint", "evaluate_model", "extract_windows", "fde", "forecast",
    "from_granularity", "initial_proposal", "load_checkpoint", "load_eth_ucy",
    "load_goal_checkpoint", "load_sdd", "multimodal_loss", "normalize_window",
    "position_loss", "pretrain", "pretrain_goal_heads", "pretrain_next_frame",
    "proposal_batch", "save_checkpoint", "save_goal_checkpoint", "synthesize",
    "synthesize_mixed", "timestep_encoding", "to_granularity", "total_loss",
    "train_refiner", "validate_levels", "velocity_loss",
]
