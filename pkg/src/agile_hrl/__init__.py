"""Hierarchical reinforcement learning with adversarially guided subgoals."""

from .config import Config, parse_config
from .estimator import HierarchicalAgent
from .harness import evaluate, run_sweep, run_training

__version__ = "0.1.0"

__all__ = ["Config", "HierarchicalAgent", "evaluate", "parse_config", "run_sweep", "run_training"]
