"""Training-free self-correction and termination control layer for
manipulation policies: trajectory quality scoring, experience-weighted
action perturbation and visual-similarity task termination, validated
against a bundled synthetic pick-and-place simulator."""

from .errors import (
    ConfigError,
    LowConfidenceWeight,
    NumericError,
    ParseError,
    TrajectoryLengthError,
    ValidationError,
)
from .evaluation import EvalParams, QualityReport, evaluate
from .geometry import CurveDerivatives, Pose, Trajectory
from .loop import (
    EpisodeTrace,
    LoopConfig,
    StepResult,
    featurize,
    run_campaign,
    run_episode,
)
from .memory import Action, MemoryEntry, MemoryStore, SuccessImage, VisualFeature
from .perturbation import LocalMoments, PerturbParams, local_moments, perturb, rbf_weights
from .termination import TermDecision, TermParams, decide, pearson_similarity, preprocess

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ConfigError",
    "CurveDerivatives",
    "EpisodeTrace",
    "EvalParams",
    "LocalMoments",
    "LoopConfig",
    "LowConfidenceWeight",
    "MemoryEntry",
    "MemoryStore",
    "NumericError",
    "ParseError",
    "PerturbParams",
    "Pose",
    "QualityReport",
    "StepResult",
    "SuccessImage",
    "TermDecision",
    "TermParams",
    "Trajectory",
    "TrajectoryLengthError",
    "ValidationError",
    "VisualFeature",
    "decide",
    "evaluate",
    "featurize",
    "local_moments",
    "pearson_similarity",
    "perturb",
    "preprocess",
    "rbf_weights",
    "run_campaign",
    "run_episode",
    "__version__",
]
