"""Large-scale channel: path loss, log-normal shadowing and thermal noise."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels
from .grid import ConfigError, SimParams, subchannel_bandwidth_hz

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0
D_MIN_M = 1.0

# RNG stream ids for keyed draws; distinct per quantity so draws never alias.
STREAM_SHADOW = 1
STREAM_DECODE = 2


@dataclass(frozen=True)
class FowlervilleParams:
    """Dual-slope log-distance loss referenced to free space at ``d0_m``.

    Defaults are calibrated, not measured: a slightly sub-free-space near
    exponent (highway waveguiding) keeps the 600 m link well above noise.
    """

    pl0_db: float = 47.86
    d0_m: float = 1.0
    exponent_near: float = 1.8
    exponent_far: float = 2.0
    breakpoint_m: float = 200.0


@dataclass(frozen=True)
class WinnerB1Params:
    """LOS street-canyon coefficients; beyond the breakpoint the 40 dB/decade branch applies."""

    a: float = 22.7
    b: float = 41.0
    c: float = 20.0
    use_breakpoint: bool = True
    antenna_height_m: float = 1.5
    effective_env_height_m: float = 1.0


@dataclass(frozen=True)
class ChannelModelConfig:
    model: str = "Fowlerville"
    carrier_ghz: float = 5.9
    shadowing_sigma_db: float | None = None
    fowlerville: FowlervilleParams = field(default_factory=FowlervilleParams)
    winner: WinnerB1Params = field(default_factory=WinnerB1Params)

    def __post_init__(self):
        if self.model not in ("Fowlerville", "WinnerB1"):
            raise ConfigError(f"unknown channel model {self.model!r}")
        f = self.fowlerville
        if f.exponent_near <= 0 or f.exponent_far <= 0 or f.breakpoint_m <= 0 or f.d0_m <= 0:
            raise ConfigError("Fowlerville exponents, breakpoint and reference distance must be positive")
        if self.sigma_db < 0:
            raise ConfigError("shadowing sigma must be non-negative")
        w = self.winner
        if w.use_breakpoint and w.antenna_height_m - w.effective_env_height_m <= 0:
            raise ConfigError("WinnerB1 effective antenna height must be positive")

    @property
    def sigma_db(self) -> float:
        if self.shadowing_sigma_db is not None:
            return self.shadowing_sigma_db
        return 3.0 if self.model == "WinnerB1" else 5.6

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelModelConfig":
        data = dict(data)
        fw = FowlervilleParams(**data.pop("fowlerville", {}))
        wb = WinnerB1Params(**data.pop("winner", {}))
        return cls(fowlerville=fw, winner=wb, **data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shadowing_sigma_db"] = self.sigma_db
        return d


def winner_breakpoint_m(cfg: ChannelModelConfig) -> float:
    h = cfg.winner.antenna_height_m - cfg.winner.effective_env_height_m
    return 4.0 * h * h * cfg.carrier_ghz * 1e9 / SPEED_OF_LIGHT


def _winner_los(cfg: ChannelModelConfig, d):
    w = cfg.winner
    return w.a * np.log10(d) + w.b + w.c * math.log10(cfg.carrier_ghz / 5.0)


def _winner_far(cfg: ChannelModelConfig, d):
    h = cfg.winner.antenna_height_m - cfg.winner.effective_env_height_m
    return (40.0 * np.log10(d) + 9.45 - 2 * 17.3 * math.log10(h)
            + 2.7 * math.log10(cfg.carrier_ghz / 5.0))


def path_loss_db(cfg: ChannelModelConfig, distance_m):
    """Path loss in dB; scalar in, scalar out, array in, array out."""
    scalar = np.ndim(distance_m) == 0
    d = np.asarray(distance_m, dtype=float)
    if np.any(~np.isfinite(d)):
        raise ValueError("distance must be finite")
    d = np.maximum(d, D_MIN_M)
    if cfg.model == "WinnerB1":
        pl = _winner_los(cfg, d)
        if cfg.winner.use_breakpoint:
            dbp = winner_breakpoint_m(cfg)
            # the far branch meets the LOS branch within ~0.01 dB; max() keeps PL monotone
            far = np.maximum(_winner_far(cfg, d), _winner_los(cfg, dbp))
            pl = np.where(d > dbp, far, pl)
    else:
        f = cfg.fowlerville
        dd = np.maximum(d, f.d0_m)
        near = f.pl0_db + 10.0 * f.exponent_near * np.log10(dd / f.d0_m)
        at_bp = f.pl0_db + 10.0 * f.exponent_near * math.log10(max(f.breakpoint_m, f.d0_m) / f.d0_m)
        far = at_bp + 10.0 * f.exponent_far * np.log10(np.maximum(dd, f.breakpoint_m) / f.breakpoint_m)
        pl = np.where(dd <= f.breakpoint_m, near, far)
    return float(pl) if scalar else pl


def shadowing_sample(cfg: ChannelModelConfig, rng: np.random.Generator, size=None):
    """Zero-mean Gaussian shadowing deviate(s) in dB from a numpy generator."""
    if cfg.sigma_db == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, cfg.sigma_db, size)


def shadowing_keyed(cfg: ChannelModelConfig, seed: int, tx_id, rx_id, key):
    """Shadowing deviates reproducible per (seed, tx, rx, key) link identity."""
    tx = np.asarray(tx_id, dtype=np.int64)
    shape = np.broadcast(tx, np.asarray(rx_id), np.asarray(key)).shape
    if cfg.sigma_db == 0:
        return np.zeros(shape)
    z = kernels.keyed_normal(seed, STREAM_SHADOW,
                             np.broadcast_to(tx, shape),
                             np.broadcast_to(np.asarray(rx_id, dtype=np.int64), shape),
                             np.broadcast_to(np.asarray(key, dtype=np.int64), shape))
    return cfg.sigma_db * z


def noise_power_dbm(params: SimParams, bandwidth_hz: float | None = None) -> float:
    """Thermal noise plus receiver noise figure; defaults to the packet's occupied bandwidth."""
    if bandwidth_hz is None:
        bandwidth_hz = params.packet_subchannels * subchannel_bandwidth_hz(params)
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + params.noise_figure_db


def subchannel_noise_dbm(params: SimParams) -> float:
    return noise_power_dbm(params, subchannel_bandwidth_hz(params))


def channel_noise_floor_dbm(params: SimParams) -> float:
    """Noise over the full channel bandwidth, the floor drawn on RSSI scatter plots."""
    return noise_power_dbm(params, params.bandwidth_mhz * 1e6)


def received_power_dbm(cfg: ChannelModelConfig, tx_power_dbm, distance_m, shadow_db=0.0):
    return tx_power_dbm - path_loss_db(cfg, distance_m) + shadow_db
