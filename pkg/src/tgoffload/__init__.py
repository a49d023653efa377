"""Forecast-augmented multi-agent task offloading for mobile edge computing.

Submodules: ``physics`` (closed-form cost model), ``env`` (slot simulator),
``autodiff`` and ``nn`` (reverse-mode tensors, layers, Adam), ``timegnn``
(server-state forecaster), ``marl`` (hybrid-action actor-critic), ``baselines``,
``training`` and ``harness`` (runs, metric files, plot tables).
"""
from .config import ConfigError, EnvConfig, RunConfig, desk_preset, load_config
from .env import HybridAction, MecEnv
from .training import Runner, TrainingDiverged

__version__ = "0.1.0"

__all__ = ["ConfigError", "EnvConfig", "HybridAction", "MecEnv", "RunConfig", "Runner",
           "TrainingDiverged", "desk_preset", "load_config"]
