"""Backhaul resource-block allocation in a blockage-prone mmWave cell.

Subpackages: channel (link model), env (allocation MDP), agent (DQN and
tabular Q-learning), baselines (equal / myopic / brute force), harness
(configs, evaluation, sweeps, CSV).
"""

from .channel import ChannelParams, LinkState, UserChannel
from .env import (
    ActionSpaceSizeError,
    AllocationAction,
    BackhaulEnv,
    EnvConfig,
    SystemState,
    StepOutcome,
    Utility,
)

__all__ = [
    "ActionSpaceSizeError",
    "AllocationAction",
    "BackhaulEnv",
    "ChannelParams",
    "EnvConfig",
    "LinkState",
    "SystemState",
    "StepOutcome",
    "UserChannel",
    "Utility",
]

__version__ = "0.1.0"
