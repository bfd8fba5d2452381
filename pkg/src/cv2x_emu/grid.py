"""Sidelink time-frequency geometry: subframes, subchannels and candidate resources.

Time is integer milliseconds; one subframe is one millisecond, so a subframe
index doubles as the simulation clock.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict, field, fields
from typing import List

import numpy as np

TOTAL_RBS = {10: 50, 20: 100}
RB_BANDWIDTH_HZ = 180e3


class ConfigError(ValueError):
    """Raised for inconsistent or out-of-range run parameters."""


@dataclass(frozen=True)
class SimParams:
    bandwidth_mhz: int = 10
    packet_size_bytes: int = 190
    mcs: int = 5
    tx_rate_hz: int = 10
    tx_power_dbm: float = 20.0
    rri_ms: int = 100
    slrrc_min: int = 5
    slrrc_max: int = 15
    p_resel: float = 0.8
    sim_duration_ms: int = 40_000
    rbs_per_subchannel: int = 10
    packet_subchannels: int = 2
    noise_figure_db: float = 9.0
    channel_model: str = "Fowlerville"
    rng_seed: int = 1
    latency_ms: int = 100
    sps_threshold_dbm: float = -110.0
    threshold_step_db: float = 3.0
    sensing_window_ms: int = 1000
    sinr_mode: str = "min"

    def __post_init__(self):
        validate_params(self)

    def replace(self, **changes) -> "SimParams":
        data = asdict(self)
        data.update(changes)
        return SimParams(**data)

    @classmethod
    def from_dict(cls, data: dict) -> "SimParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown simulation parameters: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def num_subchannels(self) -> int:
        return num_subchannels(self)


def validate_params(p: SimParams) -> None:
    if p.bandwidth_mhz not in TOTAL_RBS:
        raise ConfigError(f"bandwidth_mhz must be 10 or 20, got {p.bandwidth_mhz}")
    total = TOTAL_RBS[p.bandwidth_mhz]
    if p.rbs_per_subchannel <= 0 or p.rbs_per_subchannel > total:
        raise ConfigError(
            f"rbs_per_subchannel must be in [1, {total}] at {p.bandwidth_mhz} MHz, "
            f"got {p.rbs_per_subchannel}"
        )
    n = total // p.rbs_per_subchannel
    if not 1 <= p.packet_subchannels <= n:
        raise ConfigError(f"packet_subchannels must be in [1, {n}], got {p.packet_subchannels}")
    if p.tx_rate_hz <= 0 or p.rri_ms * p.tx_rate_hz != 1000:
        raise ConfigError(f"rri_ms ({p.rri_ms}) must equal 1000 / tx_rate_hz ({p.tx_rate_hz})")
    if not 0 <= p.slrrc_min <= p.slrrc_max:
        raise ConfigError(f"need 0 <= slrrc_min <= slrrc_max, got [{p.slrrc_min}, {p.slrrc_max}]")
    if not 0.0 <= p.p_resel <= 1.0:
        raise ConfigError(f"p_resel must lie in [0, 1], got {p.p_resel}")
    if p.sim_duration_ms < 0:
        raise ConfigError("sim_duration_ms must be non-negative")
    if p.latency_ms <= 0 or p.threshold_step_db <= 0:
        raise ConfigError("latency_ms and threshold_step_db must be positive")
    if p.sensing_window_ms <= 0 or p.sensing_window_ms % p.rri_ms:
        raise ConfigError("sensing_window_ms must be a positive multiple of rri_ms")
    if p.channel_model not in ("Fowlerville", "WinnerB1"):
        raise ConfigError(f"channel_model must be Fowlerville or WinnerB1, got {p.channel_model!r}")
    if p.sinr_mode not in ("mean", "min"):
        raise ConfigError(f"sinr_mode must be 'mean' or 'min', got {p.sinr_mode!r}")


@dataclass(frozen=True, order=True)
class Csr:
    """One candidate single-subframe resource. Ordering is the canonical
    (subframe, subchannel_start) order used for every tie-break."""

    subframe: int
    subchannel_start: int
    subchannel_len: int = field(default=1, compare=False)

    @property
    def subchannels(self) -> range:
        return range(self.subchannel_start, self.subchannel_start + self.subchannel_len)

    def overlaps(self, start: int, length: int) -> bool:
        return self.subchannel_start < start + length and start < self.subchannel_start + self.subchannel_len

    def shifted(self, dt: int) -> "Csr":
        return Csr(self.subframe + dt, self.subchannel_start, self.subchannel_len)


@dataclass(frozen=True)
class SelectionWindow:
    start_subframe: int
    end_subframe: int

    def __post_init__(self):
        if self.end_subframe < self.start_subframe:
            raise ValueError(f"empty selection window [{self.start_subframe}, {self.end_subframe}]")

    @classmethod
    def after(cls, t_ms: int, latency_ms: int = 100) -> "SelectionWindow":
        """Window [t+1, t+latency] opened by a selection at time t."""
        return cls(t_ms + 1, t_ms + latency_ms)

    def __len__(self) -> int:
        return self.end_subframe - self.start_subframe + 1

    def __contains__(self, subframe: int) -> bool:
        return self.start_subframe <= subframe <= self.end_subframe

    def subframes(self) -> range:
        return range(self.start_subframe, self.end_subframe + 1)


def num_subchannels(params: SimParams) -> int:
    total = TOTAL_RBS.get(params.bandwidth_mhz)
    if total is None:
        raise ConfigError(f"bandwidth_mhz must be 10 or 20, got {params.bandwidth_mhz}")
    if params.rbs_per_subchannel <= 0 or params.rbs_per_subchannel > total:
        raise ConfigError(f"rbs_per_subchannel out of range: {params.rbs_per_subchannel}")
    return total // params.rbs_per_subchannel


def candidate_starts(params: SimParams) -> List[int]:
    n = num_subchannels(params)
    return list(range(n - params.packet_subchannels + 1))


def enumerate_csrs(window: SelectionWindow, params: SimParams) -> List[Csr]:
    """All contiguous placements in every window subframe, in canonical order."""
    starts = candidate_starts(params)
    L = params.packet_subchannels
    return [Csr(s, j, L) for s in window.subframes() for j in starts]


def csr_arrays(window: SelectionWindow, params: SimParams):
    """Array form of :func:`enumerate_csrs`: (subframes, starts), same order."""
    starts = np.asarray(candidate_starts(params), dtype=np.int64)
    subs = np.arange(window.start_subframe, window.end_subframe + 1, dtype=np.int64)
    return np.repeat(subs, len(starts)), np.tile(starts, len(subs))


def subchannel_bandwidth_hz(params: SimParams) -> float:
    return params.rbs_per_subchannel * RB_BANDWIDTH_HZ
