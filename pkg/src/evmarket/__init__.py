"""Simulator of a competitive EV fast-charging market with learning stations."""

from .config import (PolicyBinding, QLearnerConfig, SimConfig, StationSpec, UtilityParams,
                     load_config)
from .cssg import CssgInstance, certify_nash_stable, solve
from .kernels import BACKEND
from .market import World
from .scenarios import run_ablation, run_scenario, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CssgInstance", "PolicyBinding", "QLearnerConfig", "SimConfig", "StationSpec",
    "UtilityParams", "World", "certify_nash_stable", "load_config", "run_ablation",
    "run_scenario", "solve", "train", "__version__",
]
