"""Destination-selection policies."""

from .baselines import MultihopGreedyPolicy, SingleHopPolicy
from .maddpg import MADDPGOffloader, ReplayBuffer

__all__ = ["MADDPGOffloader", "MultihopGreedyPolicy", "ReplayBuffer", "SingleHopPolicy"]
