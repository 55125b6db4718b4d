"""textpose: text-prompted keypoint localization at desk scale.

A small, fully self-verifying pipeline: a numpy-backed reverse-mode autodiff
core, deterministic pseudo-encoders for prompts and images, an attention
model that matches keypoint prompts against image patches, and a training /
evaluation harness with PCK metrics. Everything is float64 and deterministic
given a seed.
"""

from .tensor import Tensor, ShapeError, NonFiniteError, GraphError, backward, gradients
from .gradcheck import GradReport, DeterminismError, grad_check, finite_difference
from .config import AblationFlags, ConfigError, ExperimentConfig, load_config, save_config
from .dataset import SceneSample, load_dataset, save_dataset, synth_dataset
from .model import KeypointPrediction, init_model_params, predict
from .train import TrainingDiverged, TrainingResult, load_checkpoint, save_checkpoint, train
from .metrics import MetricsRow, evaluate, pck
from .experiments import run_ablation, run_noise_suite

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ShapeError", "NonFiniteError", "GraphError", "backward", "gradients",
    "GradReport", "DeterminismError", "grad_check", "finite_difference",
    "AblationFlags", "ConfigError", "ExperimentConfig", "load_config", "save_config",
    "SceneSample", "load_dataset", "save_dataset", "synth_dataset",
    "KeypointPrediction", "init_model_params", "predict",
    "TrainingDiverged", "TrainingResult", "load_checkpoint", "save_checkpoint", "train",
    "MetricsRow", "evaluate", "pck",
    "run_ablation", "run_noise_suite",
    "__version__",
]
