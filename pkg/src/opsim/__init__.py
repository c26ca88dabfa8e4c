"""opsim: simulation and learning suite for inventory, pricing,
recommendation, and collaborative management decisions."""

from .core import (
    ActionLayout,
    EnvAction,
    EnvObservation,
    EvalStats,
    ManagementEnv,
    SliceSpec,
    StepResult,
    Trajectory,
    evaluate,
    kde,
    run_episode,
)

__version__ = "0.1.0"

__all__ = [
    "ActionLayout",
    "EnvAction",
    "EnvObservation",
    "EvalStats",
    "ManagementEnv",
    "SliceSpec",
    "StepResult",
    "Trajectory",
    "evaluate",
    "kde",
    "run_episode",
    "__version__",
]
