"""Abstracted receiver: subchannel-level batch SINR, BLER lookup and Bernoulli decode.

Power is treated as flat across the RBs of a subchannel, so a transmission
contributes ``rx_power / L`` to each of its L subchannels and interference is
summed per subchannel. Full reception outcomes are produced for the host
vehicle only; remote vehicles get MAC-level sensing entries.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import kernels
from .channel import STREAM_DECODE, noise_power_dbm, subchannel_noise_dbm
from .grid import ConfigError, Csr, SimParams, num_subchannels


def dbm_to_mw(dbm):
    return np.power(10.0, np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(mw)


class LossCause(enum.Enum):
    NONE = "none"
    HALF_DUPLEX = "half_duplex"
    PROPAGATION = "propagation"
    COLLISION = "collision"


@dataclass
class Transmission:
    tx_id: int
    csr: Csr
    gen_time_ms: int
    seq: int = 0
    rx_power_dbm: Dict[int, float] = field(default_factory=dict)
    payload: object = None

    @property
    def subframe(self) -> int:
        return self.csr.subframe


@dataclass(frozen=True)
class ReceptionOutcome:
    tx_id: int
    rx_id: int
    subframe: int
    sinr_db: float
    rssi_dbm: float  # received power of this packet at the receiver
    decoded: bool
    loss_cause: LossCause
    seq: int = 0

    def __post_init__(self):
        if self.decoded and self.loss_cause is not LossCause.NONE:
            raise ValueError("a decoded packet cannot carry a loss cause")


@dataclass(frozen=True)
class SensedEntry:
    subframe: int
    csr: Csr
    rsrp_dbm: float
    rssi_dbm: float
    decoded: bool
    source_id: int


class BlerTable:
    def __init__(self, sinr_db: Sequence[float], bler: Sequence[float], mcs: int = 5):
        s = np.asarray(sinr_db, dtype=float)
        b = np.asarray(bler, dtype=float)
        if s.size == 0:
            raise ConfigError("BLER table is empty")
        if s.shape != b.shape:
            raise ConfigError("BLER table columns differ in length")
        if np.any(np.diff(s) <= 0):
            raise ConfigError("BLER table SINR column must be strictly increasing")
        if np.any((b < 0) | (b > 1)):
            raise ConfigError("BLER values must lie in [0, 1]")
        if np.any(np.diff(b) > 0):
            raise ConfigError("BLER must be non-increasing in SINR")
        self.mcs = mcs
        self.sinr_db = s
        self.bler = b

    @classmethod
    def from_csv(cls, path, mcs: int = 5) -> "BlerTable":
        s, b = [], []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            if header != ["sinr_db", "bler"]:
                raise ConfigError(f"{path}: expected header 'sinr_db,bler', got {header}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    s.append(float(row[0]))
                    b.append(float(row[1]))
                except (ValueError, IndexError):
                    raise ConfigError(f"{path}:{lineno}: malformed row {row}") from None
        return cls(s, b, mcs)

    @classmethod
    def default(cls, mcs: int = 5) -> "BlerTable":
        if mcs != 5:
            raise ConfigError(f"no bundled BLER table for MCS {mcs}; pass bler_table_path")
        ref = resources.files("cv2x_emu") / "data" / "bler_mcs5.csv"
        with resources.as_file(ref) as path:
            return cls.from_csv(path, mcs)

    def __call__(self, sinr_db):
        return bler(self, sinr_db)


def bler(table: BlerTable, sinr_db):
    """Piecewise-linear BLER, 1 below the first point and 0 above the last."""
    s = np.asarray(sinr_db, dtype=float)
    out = np.interp(s, table.sinr_db, table.bler, left=1.0, right=0.0)
    out = np.where(np.isnan(s), 1.0, out)
    return float(out) if np.ndim(sinr_db) == 0 else out


def decode(bler_value, uniform):
    """Success iff the uniform draw lands in the (1 - bler) mass."""
    return np.asarray(uniform) < 1.0 - np.asarray(bler_value)


def decode_uniforms(seed: int, tx_id, rx_id, key):
    return kernels.keyed_uniform(seed, STREAM_DECODE, tx_id, rx_id, key)


def batch_sinr(rx_power_dbm, subchannel_starts, params: SimParams, noise_mw: Optional[float] = None):
    """Packet SINR (dB) for transmissions sharing one subframe at one receiver."""
    p = np.atleast_1d(np.asarray(rx_power_dbm, dtype=float))
    starts = np.atleast_1d(np.asarray(subchannel_starts, dtype=np.int64))
    if noise_mw is None:
        noise_mw = float(dbm_to_mw(subchannel_noise_dbm(params)))
    sinr, _ = kernels.sinr_grouped(
        np.zeros(len(p), dtype=np.int64), dbm_to_mw(p), starts, params.packet_subchannels,
        num_subchannels(params), 1, noise_mw, params.sinr_mode == "min",
    )
    return sinr


def half_duplex_filter(hv_tx_subframes, subframe: int) -> bool:
    return subframe in hv_tx_subframes


@dataclass
class LinkBatch:
    """Vectorised per-link results for one receiver over one or more subframes."""

    sinr_db: np.ndarray
    snr_db: np.ndarray
    bler: np.ndarray
    uniform: np.ndarray
    decoded: np.ndarray
    rsrp_dbm: np.ndarray
    rssi_dbm: np.ndarray
    total_mw: np.ndarray


def evaluate_links(group, rx_power_dbm, starts, tx_ids, keys, rx_id: int, n_groups: int,
                   params: SimParams, table: BlerTable, seed: int) -> LinkBatch:
    """SINR, BLER and decode for transmissions at one receiver, grouped by subframe.

    ``group`` indexes the subframe of each transmission (0..n_groups-1);
    interference is only summed within a group. RSRP is the received power per
    occupied subchannel; RSSI is the mean per-subchannel total power (all
    transmissions plus noise) over the transmission's span.
    """
    L = params.packet_subchannels
    n_sub = num_subchannels(params)
    noise_sc_mw = float(dbm_to_mw(subchannel_noise_dbm(params)))
    rx_dbm = np.asarray(rx_power_dbm, dtype=float)
    rx_mw = dbm_to_mw(rx_dbm)
    starts = np.asarray(starts, dtype=np.int64)
    group = np.asarray(group, dtype=np.int64)
    sinr, total = kernels.sinr_grouped(group, rx_mw, starts, L, n_sub, n_groups,
                                       noise_sc_mw, params.sinr_mode == "min")
    snr = rx_dbm - noise_power_dbm(params)
    b = bler(table, sinr)
    u = decode_uniforms(seed, tx_ids, rx_id, keys)
    ok = decode(b, u)
    rsrp = rx_dbm - 10.0 * math.log10(L)
    span = np.zeros(len(rx_dbm))
    for l in range(L):
        span = span + total[group, starts + l]
    rssi = mw_to_dbm(span / L + noise_sc_mw)
    return LinkBatch(sinr, snr, b, u, ok, rsrp, rssi, total)


def receive(transmissions: Sequence[Transmission], rx_id: int, params: SimParams,
            table: BlerTable, seed: int, rx_transmitting: bool = False) -> List[ReceptionOutcome]:
    """Full reception outcomes at one receiver for a single subframe."""
    txs = [t for t in transmissions if t.tx_id != rx_id]
    if not txs:
        return []
    subframes = {t.subframe for t in txs}
    if len(subframes) != 1:
        raise ValueError("receive() expects transmissions from a single subframe")
    sf = subframes.pop()
    if rx_transmitting:
        return [ReceptionOutcome(t.tx_id, rx_id, sf, -math.inf, t.rx_power_dbm[rx_id], False,
                                 LossCause.HALF_DUPLEX, t.seq) for t in txs]
    res = evaluate_links(
        np.zeros(len(txs), dtype=np.int64), [t.rx_power_dbm[rx_id] for t in txs],
        [t.csr.subchannel_start for t in txs], [t.tx_id for t in txs], [t.seq for t in txs],
        rx_id, 1, params, table, seed,
    )
    return [
        ReceptionOutcome(t.tx_id, rx_id, sf, float(res.sinr_db[i]), t.rx_power_dbm[rx_id],
                         bool(res.decoded[i]), classify_loss(res, i, table), t.seq)
        for i, t in enumerate(txs)
    ]


def classify_loss(res: LinkBatch, i: int, table: BlerTable) -> LossCause:
    if res.decoded[i]:
        return LossCause.NONE
    # would the same draw have decoded without interference?
    if res.uniform[i] < 1.0 - bler(table, float(res.snr_db[i])):
        return LossCause.COLLISION
    return LossCause.PROPAGATION


def loss_causes(res: LinkBatch, table: BlerTable) -> np.ndarray:
    """Vectorised :func:`classify_loss`: 0 none, 2 propagation, 3 collision."""
    clean = res.uniform < 1.0 - bler(table, res.snr_db)
    return np.where(res.decoded, 0, np.where(clean, 3, 2))


def sensing_feed(transmissions: Sequence[Transmission], receivers: Iterable[int], params: SimParams,
                 table: BlerTable, seed: int, transmitting: Iterable[int] = ()) -> Dict[int, List[SensedEntry]]:
    """MAC-level sensing entries for each receiver for one subframe.

    Receivers in ``transmitting`` are deaf this subframe and get no entries.
    """
    deaf = set(transmitting) | {t.tx_id for t in transmissions}
    out: Dict[int, List[SensedEntry]] = {}
    for rx in receivers:
        if rx in deaf:
            out[rx] = []
            continue
        txs = [t for t in transmissions if rx in t.rx_power_dbm]
        if not txs:
            out[rx] = []
            continue
        res = evaluate_links(
            np.zeros(len(txs), dtype=np.int64), [t.rx_power_dbm[rx] for t in txs],
            [t.csr.subchannel_start for t in txs], [t.tx_id for t in txs], [t.seq for t in txs],
            rx, 1, params, table, seed,
        )
        out[rx] = [
            SensedEntry(t.subframe, t.csr, float(res.rsrp_dbm[i]), float(res.rssi_dbm[i]),
                        bool(res.decoded[i]), t.tx_id)
            for i, t in enumerate(txs)
        ]
    return out
