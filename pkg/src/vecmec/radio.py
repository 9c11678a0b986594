"""Path loss, Shannon link rates and proportional spectrum sharing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Coincident nodes would make the log term unbounded.
MIN_DISTANCE_KM = 1e-3


@dataclass(frozen=True)
class ChannelParams:
    """Radio constants shared by every link type."""

    antenna_height: float = 1.5  # m
    carrier_mhz: float = 2800.0
    tx_power: float = 1.0  # W
    noise_power: float = 5e-13  # W
    bandwidth: float = 5e6  # Hz, system-wide

    def __post_init__(self):
        for name in ("antenna_height", "carrier_mhz", "tx_power", "noise_power", "bandwidth"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value!r}")


DEFAULT_CHANNEL = ChannelParams()


def path_loss(d_km, params: ChannelParams = DEFAULT_CHANNEL):
    """Path loss in dB at distance ``d_km`` (scalar or array, kilometres)."""
    d = np.asarray(d_km, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("path loss is undefined for distances <= 0")
    h = params.antenna_height
    loss = (
        40.0 * (1.0 - 4e-3 * h) * np.log10(d)
        - 18.0 * math.log10(h)
        + 21.0 * math.log10(params.carrier_mhz)
        + 80.0
    )
    return float(loss) if loss.ndim == 0 else loss


def snr(d_km, params: ChannelParams = DEFAULT_CHANNEL):
    """Linear received signal-to-noise ratio."""
    return params.tx_power * 10.0 ** (-np.asarray(path_loss(d_km, params)) / 10.0) / params.noise_power


def spectral_efficiency(d_km, params: ChannelParams = DEFAULT_CHANNEL):
    """Shannon efficiency log2(1 + SNR) in bit/s/Hz."""
    eff = np.log2(1.0 + snr(d_km, params))
    return float(eff) if np.ndim(eff) == 0 else eff


def link_rate(d_km, bandwidth_hz, params: ChannelParams = DEFAULT_CHANNEL):
    """Achievable rate in bit/s over ``bandwidth_hz`` at distance ``d_km``."""
    b = np.asarray(bandwidth_hz, dtype=float)
    if np.any(b < 0):
        raise ValueError("bandwidth must be >= 0")
    rate = b * np.asarray(spectral_efficiency(d_km, params))
    return float(rate) if rate.ndim == 0 else rate


def clamp_distance_km(d_m: float) -> float:
    """Metres to kilometres, clamped below at 1 m."""
    return max(d_m / 1000.0, MIN_DISTANCE_KM)


def allocate_bandwidth(active_tasks, total_bandwidth: float) -> dict:
    """Split ``total_bandwidth`` across ``(task_id, size_bits)`` pairs in proportion to size."""
    active_tasks = list(active_tasks)
    if not active_tasks:
        return {}
    sizes = np.array([w for _, w in active_tasks], dtype=float)
    if np.any(sizes <= 0):
        raise ValueError("task sizes must be > 0")
    shares = total_bandwidth * (sizes / sizes.sum())
    return {tid: float(b) for (tid, _), b in zip(active_tasks, shares)}
