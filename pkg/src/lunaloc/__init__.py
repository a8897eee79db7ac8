"""Lander-anchored rover state estimation and lunar mission simulation."""

__version__ = "0.1.0"

from .config import ConfigError, ScenarioConfig
from .geometry import Pose, Rotation
from .graph.builder import BuildOptions, Mode
from .pipeline import evaluate, run_estimator
from .scenario import simulate

__all__ = ["ConfigError", "ScenarioConfig", "Pose", "Rotation", "BuildOptions", "Mode", "evaluate",
           "run_estimator", "simulate", "__version__"]
