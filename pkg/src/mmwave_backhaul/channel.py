"""mmWave access-link model: Markov blockage states, path loss, achievable rate.

Each user's link is in one of three regimes (LOS / NLOS / outage) whose
stationary probabilities depend on the BS-user distance. The per-step state
evolution is a resampling chain: with probability ``dwell_lambda`` the state
is redrawn from the stationary distribution, otherwise it is kept. The
achievable downlink rate is Shannon capacity from a dBm link budget, with a
spectral-efficiency ceiling standing in for modulation limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class LinkState(Enum):
    LOS = 0
    NLOS = 1
    OUTAGE = 2


@dataclass
class ChannelParams:
    """Blockage, path-loss and link-budget constants (73 GHz urban defaults).

    ``a_out``/``b_out``/``a_los`` shape the distance-dependent state
    probabilities; alpha/beta pairs are the fitted floating-intercept
    path-loss models (dB, with beta the 10*log10(d) slope factor);
    the remaining fields are link-budget plumbing.
    """

    a_out: float = 1.0 / 30.0          # 1/m, outage growth rate
    b_out: float = 2.0                 # dimensionless outage offset (see README)
    a_los: float = 1.0 / 67.1          # 1/m, LOS decay rate
    los_alpha: float = 69.8            # dB
    los_beta: float = 2.0
    nlos_alpha: float = 82.7           # dB
    nlos_beta: float = 2.69
    nlos_sigma: float = 7.7            # dB lognormal shadowing std
    bandwidth_hz: float = 1.0e9
    tx_power_dbm: float = 30.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 7.0
    antenna_gain_db: float = 30.0      # combined TX+RX beamforming gain
    se_cap_bps_hz: float = 8.0         # spectral-efficiency ceiling
    dwell_lambda: float = 0.2          # per-step resampling probability

    def validate(self) -> None:
        if self.a_out <= 0:
            raise ValueError(f"a_out must be > 0, got {self.a_out}")
        if self.a_los <= 0:
            raise ValueError(f"a_los must be > 0, got {self.a_los}")
        if self.bandwidth_hz <= 0:
            raise ValueError(f"bandwidth_hz must be > 0, got {self.bandwidth_hz}")
        if self.nlos_sigma < 0:
            raise ValueError(f"nlos_sigma must be >= 0, got {self.nlos_sigma}")
        if not 0.0 <= self.dwell_lambda <= 1.0:
            raise ValueError(f"dwell_lambda must be in [0,1], got {self.dwell_lambda}")
        if self.se_cap_bps_hz <= 0:
            raise ValueError(f"se_cap_bps_hz must be > 0, got {self.se_cap_bps_hz}")


@dataclass
class UserChannel:
    distance_m: float
    state: LinkState

    def __post_init__(self) -> None:
        if self.distance_m <= 0:
            raise ValueError(f"distance_m must be > 0, got {self.distance_m}")


def steady_probs(d: float, p: ChannelParams) -> tuple[float, float, float]:
    """Stationary (p_los, p_nlos, p_out) of the link-state chain at distance d.

    p_out(d) = max(0, 1 - exp(-a_out*d + b_out)),
    p_los(d) = (1 - p_out(d)) * exp(-a_los*d),
    p_nlos   = remainder.

    Total by construction: the three values are nonnegative and sum to 1.
    d = 0 is allowed (p_out clamps to 0 for b_out >= 0).
    """
    p_out = max(0.0, 1.0 - math.exp(-p.a_out * d + p.b_out))
    p_los = (1.0 - p_out) * math.exp(-p.a_los * d)
    p_nlos = 1.0 - p_out - p_los
    return p_los, max(0.0, p_nlos), p_out


def sample_state(d: float, p: ChannelParams, rng: np.random.Generator) -> LinkState:
    """Draw a link state from the stationary distribution at distance d."""
    p_los, p_nlos, _ = steady_probs(d, p)
    u = rng.random()
    if u < p_los:
        return LinkState.LOS
    if u < p_los + p_nlos:
        return LinkState.NLOS
    return LinkState.OUTAGE


def advance_state(u: UserChannel, p: ChannelParams, rng: np.random.Generator) -> LinkState:
    """One step of the blockage chain; returns the new state (no mutation).

    With probability 1 - dwell_lambda the state is kept, otherwise it is
    resampled from steady_probs(d). Any dwell_lambda in (0, 1] leaves the
    stationary distribution equal to steady_probs.
    """
    if rng.random() < p.dwell_lambda:
        return sample_state(u.distance_m, p, rng)
    return u.state


def path_loss_db(d: float, s: LinkState, p: ChannelParams,
                 rng: np.random.Generator | None = None) -> float:
    """Path loss in dB; math.inf for an outage link.

    LOS/NLOS: PL = alpha + 10*beta*log10(d) (+ N(0, sigma^2) shadowing for
    NLOS). The shadowing draw is skipped when nlos_sigma == 0 so the
    zero-shadowing pipeline is a deterministic function of (d, state).
    """
    if d <= 0:
        raise ValueError(f"path loss undefined for d <= 0 (got {d})")
    if s is LinkState.OUTAGE:
        return math.inf
    if s is LinkState.LOS:
        return p.los_alpha + 10.0 * p.los_beta * math.log10(d)
    pl = p.nlos_alpha + 10.0 * p.nlos_beta * math.log10(d)
    if p.nlos_sigma > 0.0:
        if rng is None:
            raise ValueError("rng required when nlos_sigma > 0")
        pl += p.nlos_sigma * rng.standard_normal()
    return pl


def noise_power_dbm(p: ChannelParams) -> float:
    return p.noise_psd_dbm_hz + 10.0 * math.log10(p.bandwidth_hz) + p.noise_figure_db


def achievable_rate(u: UserChannel, p: ChannelParams,
                    rng: np.random.Generator | None = None) -> float:
    """Achievable mmWave downlink rate C_k in bit/s.

    Shannon capacity min(log2(1 + SNR), se_cap) * bandwidth, with SNR from
    the dBm link budget. Zero exactly when the link is in outage.
    """
    pl = path_loss_db(u.distance_m, u.state, p, rng)
    if math.isinf(pl):
        return 0.0
    snr_db = p.tx_power_dbm + p.antenna_gain_db - pl - noise_power_dbm(p)
    se = min(math.log2(1.0 + 10.0 ** (snr_db / 10.0)), p.se_cap_bps_hz)
    return se * p.bandwidth_hz


def draw_distances(k: int, cell_radius_m: float, rng: np.random.Generator) -> np.ndarray:
    """k BS-user distances, area-uniform over the disk of the given radius."""
    return cell_radius_m * np.sqrt(rng.random(k))
