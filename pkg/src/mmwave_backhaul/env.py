"""Backhaul-allocation MDP: action enumeration, observations, rewards, dynamics.

The backhaul pipe is split into ``num_blocks`` equal blocks of
``block_capacity_bps`` each; an action is a composition (n_1..n_K) of the
blocks over users. A user's served rate is min(blocks * block_capacity,
achievable air rate), and the step reward is the sum of per-user utilities
of served rates. Link states and rates then advance independently of the
action taken.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .channel import (
    ChannelParams,
    LinkState,
    UserChannel,
    achievable_rate,
    advance_state,
    draw_distances,
    sample_state,
)

DEFAULT_ACTION_CAP = 20000


class Utility(Enum):
    LOG = "log"
    SQRT = "sqrt"


class ActionSpaceSizeError(Exception):
    """Enumerated action count exceeds the configured cap."""


@dataclass
class EnvConfig:
    num_users: int = 4
    num_blocks: int = 20
    block_capacity_bps: float = 0.5e9    # 10 Gbps backhaul / 20 blocks
    utility: Utility = Utility.LOG
    rate_scale_bps: float = 1.0e6        # r0 in the utility regularization
    episode_len: int = 200               # placement-refresh period, not a terminal
    cell_radius_m: float = 100.0
    action_cap: int = DEFAULT_ACTION_CAP

    def validate(self) -> None:
        if self.num_users < 1:
            raise ValueError(f"num_users must be >= 1, got {self.num_users}")
        if self.num_blocks <= self.num_users:
            raise ValueError(
                f"num_blocks must exceed num_users, got M={self.num_blocks} K={self.num_users}")
        if self.block_capacity_bps <= 0:
            raise ValueError(f"block_capacity_bps must be > 0, got {self.block_capacity_bps}")
        if self.rate_scale_bps <= 0:
            raise ValueError(f"rate_scale_bps must be > 0, got {self.rate_scale_bps}")
        if self.episode_len < 1:
            raise ValueError(f"episode_len must be >= 1, got {self.episode_len}")
        if self.cell_radius_m <= 0:
            raise ValueError(f"cell_radius_m must be > 0, got {self.cell_radius_m}")


@dataclass(frozen=True)
class AllocationAction:
    """Block counts per user; index is the position in the enumerated list."""

    n: tuple[int, ...]
    index: int | None = None

    def __post_init__(self) -> None:
        if any(v < 0 for v in self.n):
            raise ValueError(f"negative block count in {self.n}")


@dataclass(frozen=True)
class SystemState:
    """Environment state at one step.

    ``true_rates`` (C_k) is environment-private: observations are built from
    link_states and demands only (see encode_state).
    """

    link_states: tuple[LinkState, ...]
    demands: tuple[int, ...]
    true_rates: tuple[float, ...]


@dataclass(frozen=True)
class StepOutcome:
    next_state: SystemState
    reward: float
    actual_rates: tuple[float, ...]


def enumerate_actions(k: int, m: int, cap: int = DEFAULT_ACTION_CAP) -> list[AllocationAction]:
    """All compositions of m blocks over k users, lexicographic, indexed.

    Count is C(m+k-1, k-1); raises ActionSpaceSizeError (naming the count)
    when that exceeds ``cap`` since the DQN output width equals the count.
    """
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    if m < 0:
        raise ValueError(f"need m >= 0, got {m}")
    count = math.comb(m + k - 1, k - 1)
    if count > cap:
        raise ActionSpaceSizeError(
            f"action space has {count} compositions (K={k}, M={m}), cap is {cap}")
    if k == 1:
        return [AllocationAction(n=(m,), index=0)]
    actions = []
    # bars at positions c_1 < ... < c_{k-1} in a row of m + k - 1 slots
    for idx, bars in enumerate(itertools.combinations(range(m + k - 1), k - 1)):
        ext = (-1,) + bars + (m + k - 1,)
        n = tuple(ext[i + 1] - ext[i] - 1 for i in range(k))
        actions.append(AllocationAction(n=n, index=idx))
    assert len(actions) == count
    return actions


def action_matrix(actions: list[AllocationAction]) -> np.ndarray:
    """Dense (A, K) int array of block counts, for vectorized evaluation."""
    return np.array([a.n for a in actions], dtype=np.int64)


def quantize_demand(c: float, u: float) -> int:
    """Blocks needed to fully serve achievable rate c: ceil(c/u); 0 iff c == 0."""
    if u <= 0:
        raise ValueError(f"block capacity must be > 0, got {u}")
    if c < 0:
        raise ValueError(f"rate must be >= 0, got {c}")
    if c == 0.0:
        return 0
    return math.ceil(c / u)


def utility_of_rate(r: float, utility: Utility, r0: float) -> float:
    """Concave per-user utility, regularized so u(0) = 0 and u is finite."""
    if r < 0:
        raise ValueError(f"rate must be >= 0, got {r}")
    if utility is Utility.LOG:
        return math.log1p(r / r0)
    return math.sqrt(r / r0)


def compute_reward(rates, utility: Utility, r0: float) -> float:
    """Sum of per-user utilities of served rates."""
    return float(sum(utility_of_rate(r, utility, r0) for r in rates))


def rewards_for_matrix(nmat: np.ndarray, true_rates: np.ndarray,
                       utility: Utility, u: float, r0: float) -> np.ndarray:
    """compute_reward of min(u*n, C) for every row of an action matrix."""
    served = np.minimum(nmat * u, true_rates[None, :])
    if utility is Utility.LOG:
        return np.log1p(served / r0).sum(axis=1)
    return np.sqrt(served / r0).sum(axis=1)


def encode_state(state: SystemState, cfg: EnvConfig) -> np.ndarray:
    """Observation features: per user one-hot(LOS, NLOS, OUTAGE) + D_k / M."""
    k = len(state.link_states)
    x = np.zeros(4 * k)
    for i, (s, d) in enumerate(zip(state.link_states, state.demands)):
        x[4 * i + s.value] = 1.0
        x[4 * i + 3] = d / cfg.num_blocks
    return x


def _served_rates(action: AllocationAction, state: SystemState, u: float) -> tuple[float, ...]:
    return tuple(min(u * n, c) for n, c in zip(action.n, state.true_rates))


def step(state: SystemState, action: AllocationAction, channels: list[UserChannel],
         cfg: EnvConfig, chan: ChannelParams, rng: np.random.Generator) -> StepOutcome:
    """Apply an allocation to the current state, then advance every link.

    Serves R_k = min(U*n_k, C_k) against the rates in effect when the action
    was applied; mutates ``channels`` in place with the advanced link states
    and returns the rebuilt next state.
    """
    if len(action.n) != len(state.true_rates) or len(channels) != len(state.true_rates):
        raise ValueError(
            f"user-count mismatch: action {len(action.n)}, state {len(state.true_rates)}, "
            f"channels {len(channels)}")
    if sum(action.n) != cfg.num_blocks:
        raise ValueError(f"allocation {action.n} does not sum to M={cfg.num_blocks}")
    actual = _served_rates(action, state, cfg.block_capacity_bps)
    reward = compute_reward(actual, cfg.utility, cfg.rate_scale_bps)
    for uc in channels:
        uc.state = advance_state(uc, chan, rng)
    next_state = snapshot(channels, cfg, chan, rng)
    return StepOutcome(next_state=next_state, reward=reward, actual_rates=actual)


def snapshot(channels: list[UserChannel], cfg: EnvConfig, chan: ChannelParams,
             rng: np.random.Generator) -> SystemState:
    """Redraw achievable rates for the current link states and quantize demands."""
    rates = tuple(achievable_rate(uc, chan, rng) for uc in channels)
    demands = tuple(quantize_demand(c, cfg.block_capacity_bps) for c in rates)
    states = tuple(uc.state for uc in channels)
    return SystemState(link_states=states, demands=demands, true_rates=rates)


class BackhaulEnv:
    """Stateful wrapper around the functional dynamics for training loops.

    Placements (user distances) are redrawn every ``episode_len`` steps; the
    task itself is continuing, so there is no terminal flag anywhere.
    """

    def __init__(self, cfg: EnvConfig, chan: ChannelParams, seed: int | np.random.Generator = 0):
        cfg.validate()
        chan.validate()
        self.cfg = cfg
        self.chan = chan
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.actions = enumerate_actions(cfg.num_users, cfg.num_blocks, cfg.action_cap)
        self.action_matrix = action_matrix(self.actions)
        self.channels: list[UserChannel] = []
        self.state: SystemState | None = None
        self._t = 0

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def reset(self) -> SystemState:
        """New placement: redraw distances, stationary states, and rates."""
        dists = draw_distances(self.cfg.num_users, self.cfg.cell_radius_m, self.rng)
        self.channels = [
            UserChannel(distance_m=float(d), state=sample_state(float(d), self.chan, self.rng))
            for d in dists
        ]
        self.state = snapshot(self.channels, self.cfg, self.chan, self.rng)
        self._t = 0
        return self.state

    def step(self, action: AllocationAction) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        outcome = step(self.state, action, self.channels, self.cfg, self.chan, self.rng)
        self._t += 1
        if self._t % self.cfg.episode_len == 0:
            # placement refresh; the transition stays a normal continuing-task one
            fresh = self.reset()
            outcome = StepOutcome(next_state=fresh, reward=outcome.reward,
                                  actual_rates=outcome.actual_rates)
        else:
            self.state = outcome.next_state
        return outcome

    def observe(self) -> np.ndarray:
        if self.state is None:
            raise RuntimeError("call reset() before observe()")
        return encode_state(self.state, self.cfg)
