"""Reference schedulers: equal split, myopic utility maximizer, brute force.

The myopic scheduler solves the instantaneous problem exactly: per-user
utility is concave in the block count, so assigning blocks one at a time to
the largest marginal gain is optimal. Brute force over the enumerated action
list is kept as the independent check.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .env import (
    AllocationAction,
    EnvConfig,
    SystemState,
    rewards_for_matrix,
    utility_of_rate,
)


class BaselineKind(Enum):
    EQUAL = "equal"
    MYOPIC = "myopic"
    BRUTE_FORCE = "brute_force"


def equal_alloc(k: int, m: int) -> AllocationAction:
    """floor(M/K) blocks each; the remainder goes to the lowest indices."""
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    base, rem = divmod(m, k)
    return AllocationAction(n=tuple(base + 1 if i < rem else base for i in range(k)))


def _spread_remainder(n: list[int], surplus: int) -> None:
    k = len(n)
    base, rem = divmod(surplus, k)
    for i in range(k):
        n[i] += base + (1 if i < rem else 0)


def myopic_alloc(state: SystemState, cfg: EnvConfig) -> AllocationAction:
    """Exact instantaneous sum-utility maximizer (greedy on concave gains).

    Blocks beyond a user's achievable rate add nothing, so the greedy phase
    stops once every marginal gain is zero; leftover blocks are spread by the
    equal-allocation remainder rule (utility-equivalent, fairness-friendly).
    Ties go to the lowest user index.
    """
    k = cfg.num_users
    u = cfg.block_capacity_bps
    r0 = cfg.rate_scale_bps
    rates = state.true_rates
    n = [0] * k

    def marginal(i: int) -> float:
        cur = min(u * n[i], rates[i])
        nxt = min(u * (n[i] + 1), rates[i])
        if nxt <= cur:
            return 0.0
        return utility_of_rate(nxt, cfg.utility, r0) - utility_of_rate(cur, cfg.utility, r0)

    gains = [marginal(i) for i in range(k)]
    remaining = cfg.num_blocks
    while remaining > 0:
        best = max(range(k), key=lambda i: (gains[i], -i))
        if gains[best] <= 0.0:
            break
        n[best] += 1
        gains[best] = marginal(best)
        remaining -= 1
    if remaining > 0:
        _spread_remainder(n, remaining)
    return AllocationAction(n=tuple(n))


def brute_force_alloc(state: SystemState, cfg: EnvConfig,
                      actions: list[AllocationAction],
                      nmat: np.ndarray | None = None) -> AllocationAction:
    """argmax of the instantaneous reward over the full action list.

    Ties resolve to the lowest index. ``nmat`` may pass a precomputed
    action matrix to avoid rebuilding it per call.
    """
    if nmat is None:
        nmat = np.array([a.n for a in actions], dtype=np.int64)
    rewards = rewards_for_matrix(nmat, np.asarray(state.true_rates, dtype=float),
                                 cfg.utility, cfg.block_capacity_bps, cfg.rate_scale_bps)
    return actions[int(np.argmax(rewards))]
