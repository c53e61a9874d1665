"""shiftreg: Monte Carlo digital twin of a microlens-array atom shift register."""

__version__ = "0.1.0"

from .config import ExperimentConfig
from .experiments import ExperimentRunner, RunResult, list_recipes

__all__ = ["ExperimentConfig", "ExperimentRunner", "RunResult", "list_recipes"]
