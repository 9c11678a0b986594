"""Simulator and learned/heuristic policies for vehicle-relayed edge task offloading."""

from .agents import MADDPGOffloader, MultihopGreedyPolicy, ReplayBuffer, SingleHopPolicy
from .config import ConfigError, ScenarioConfig, load_config, preset_config
from .env import OffloadingEnv
from .harness import RunReport, emit_plot_data, run_experiment, run_sweep
from .radio import ChannelParams, link_rate, path_loss

__all__ = [
    "ChannelParams",
    "ConfigError",
    "MADDPGOffloader",
    "MultihopGreedyPolicy",
    "OffloadingEnv",
    "ReplayBuffer",
    "RunReport",
    "ScenarioConfig",
    "SingleHopPolicy",
    "emit_plot_data",
    "link_rate",
    "load_config",
    "path_loss",
    "preset_config",
    "run_experiment",
    "run_sweep",
]
