"""Sensing-based semi-persistent scheduling (SB-SPS) for sidelink mode 4.

Pipeline for one reservation decision at time T:

1. every contiguous placement in the selection window [T+1, T+latency] is a
   candidate (M of them);
2. set A drops candidates in subframes the vehicle could not monitor (its own
   past transmissions, projected forward by the RRI) and candidates overlapping
   a decoded reservation whose RSRP exceeds the threshold; the threshold rises
   in fixed steps until at least ceil(M/5) candidates survive;
3. set B keeps the ceil(M/5) members of set A with the lowest linear-average
   RSSI over their periodic occurrences in the sensing window;
4. the transmission resource is drawn uniformly from set B.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set

import numpy as np

from . import kernels
from .channel import subchannel_noise_dbm
from .grid import Csr, SelectionWindow, SimParams, candidate_starts, num_subchannels
from .phy import SensedEntry, dbm_to_mw

# set-B ranking resolution; keeps ties exact despite summation-order rounding
RSSI_RANK_RESOLUTION_DB = 1e-6


class SchedulingError(RuntimeError):
    pass


def required_size(m: int) -> int:
    """ceil(0.2 * m) in exact integer arithmetic."""
    return (m + 4) // 5


class SensingWindow:
    """Trailing record of what one vehicle heard and when it was deaf.

    Entries arrive one at a time via :meth:`record_sensed` or in columnar
    batches via :meth:`extend`; both feed the same queries.
    """

    _COLS = ("subframe", "start", "length", "rsrp", "rssi", "decoded", "source")

    def __init__(self, owner_id: int, horizon_ms: int = 1000):
        self.owner_id = owner_id
        self.horizon_ms = horizon_ms
        self.entries: List[SensedEntry] = []
        self.own_tx_subframes: Set[int] = set()
        self.rssi_rows: Dict[int, np.ndarray] = {}
        self._batches: List[dict] = []
        self._rssi_blocks: List[tuple] = []

    def __len__(self) -> int:
        return len(self.entries) + sum(len(b["subframe"]) for b in self._batches)

    def record_sensed(self, entry: SensedEntry) -> None:
        self.entries.append(entry)

    def extend(self, subframe, start, length, rsrp_dbm, rssi_dbm, decoded, source_id) -> None:
        cols = (np.asarray(subframe, dtype=np.int64), np.asarray(start, dtype=np.int64),
                np.broadcast_to(np.asarray(length, dtype=np.int64), np.shape(subframe)),
                np.asarray(rsrp_dbm, dtype=float), np.asarray(rssi_dbm, dtype=float),
                np.asarray(decoded, dtype=bool), np.asarray(source_id, dtype=np.int64))
        self._batches.append(dict(zip(self._COLS, cols)))

    def record_own_tx(self, subframe: int) -> None:
        self.own_tx_subframes.add(subframe)

    def record_rssi(self, subframe: int, per_subchannel_mw) -> None:
        """Exact per-subchannel RSSI (mW, noise included) measured in a subframe."""
        self.rssi_rows[subframe] = np.asarray(per_subchannel_mw, dtype=float)

    def record_rssi_block(self, first_subframe: int, offsets, rows_mw) -> None:
        """Bulk :meth:`record_rssi` for subframes ``first_subframe + offsets``."""
        self._rssi_blocks.append((first_subframe, np.asarray(offsets, dtype=np.int64),
                                  np.asarray(rows_mw, dtype=float)))

    def _measured_subframes(self) -> Set[int]:
        out = set(self.rssi_rows)
        for first, offs, _ in self._rssi_blocks:
            out.update((first + offs).tolist())
        return out

    def evict(self, t_ms: int) -> None:
        lo = t_ms - self.horizon_ms
        self.entries = [e for e in self.entries if e.subframe >= lo]
        self.own_tx_subframes = {s for s in self.own_tx_subframes if s >= lo}
        self.rssi_rows = {s: r for s, r in self.rssi_rows.items() if s >= lo}
        blocks = []
        for first, offs, rows in self._rssi_blocks:
            m = first + offs >= lo
            if m.any():
                blocks.append((first, offs[m], rows[m]))
        self._rssi_blocks = blocks
        kept = []
        for b in self._batches:
            m = b["subframe"] >= lo
            if m.all():
                kept.append(b)
            elif m.any():
                kept.append({k: v[m] for k, v in b.items()})
        self._batches = kept

    def arrays(self, t_ms: int) -> dict:
        """Columnar view of every entry sensed in [t - horizon, t)."""
        self.evict(t_ms)
        parts = list(self._batches)
        if self.entries:
            parts.append(dict(zip(self._COLS, (
                np.array([e.subframe for e in self.entries], dtype=np.int64),
                np.array([e.csr.subchannel_start for e in self.entries], dtype=np.int64),
                np.array([e.csr.subchannel_len for e in self.entries], dtype=np.int64),
                np.array([e.rsrp_dbm for e in self.entries], dtype=float),
                np.array([e.rssi_dbm for e in self.entries], dtype=float),
                np.array([e.decoded for e in self.entries], dtype=bool),
                np.array([e.source_id for e in self.entries], dtype=np.int64),
            ))))
        if not parts:
            return {k: np.zeros(0, dtype=float if k in ("rsrp", "rssi") else bool if k == "decoded" else np.int64)
                    for k in self._COLS}
        out = {k: np.concatenate([p[k] for p in parts]) for k in self._COLS}
        m = out["subframe"] < t_ms
        return {k: v[m] for k, v in out.items()}

    def visible(self, t_ms: int) -> List[SensedEntry]:
        a = self.arrays(t_ms)
        return [
            SensedEntry(int(a["subframe"][i]), Csr(int(a["subframe"][i]), int(a["start"][i]), int(a["length"][i])),
                        float(a["rsrp"][i]), float(a["rssi"][i]), bool(a["decoded"][i]), int(a["source"][i]))
            for i in range(len(a["subframe"]))
        ]

    def own_visible(self, t_ms: int) -> List[int]:
        lo = t_ms - self.horizon_ms
        return sorted(s for s in self.own_tx_subframes if lo <= s < t_ms)


def record_sensed(win: SensingWindow, entry: SensedEntry) -> None:
    win.record_sensed(entry)


def record_own_tx(win: SensingWindow, subframe: int) -> None:
    win.record_own_tx(subframe)


class SpsDecision(enum.Enum):
    KEEP_CSR = "keep"
    RESELECT = "reselect"


@dataclass
class SpsState:
    slrrc: int = -1
    reserved_csr: Optional[Csr] = None


@dataclass
class CandidateSet:
    window: SelectionWindow
    subframes: np.ndarray
    starts: np.ndarray
    length: int
    in_a: np.ndarray
    threshold_db: float
    b_index: Optional[np.ndarray] = None
    avg_rssi_dbm: Optional[np.ndarray] = None
    escalations: int = 0

    @property
    def m(self) -> int:
        return len(self.subframes)

    def _csrs(self, idx) -> List[Csr]:
        return [Csr(int(self.subframes[i]), int(self.starts[i]), self.length) for i in idx]

    @property
    def all(self) -> List[Csr]:
        return self._csrs(range(self.m))

    @property
    def set_a(self) -> List[Csr]:
        return self._csrs(np.flatnonzero(self.in_a))

    @property
    def set_b(self) -> List[Csr]:
        if self.b_index is None:
            return []
        return self._csrs(self.b_index)


def project_to_window(sensed_subframe: int, window: SelectionWindow, rri_ms: int) -> List[int]:
    first = window.start_subframe + (sensed_subframe - window.start_subframe) % rri_ms
    return list(range(first, window.end_subframe + 1, rri_ms))


def _project_indices(subframes: np.ndarray, window: SelectionWindow, rri_ms: int):
    """Window-relative indices of every RRI projection, plus the source row of each."""
    first = (subframes - window.start_subframe) % rri_ms
    n_win = len(window)
    idx, src = [], []
    k = 0
    while True:
        w = first + k * rri_ms
        m = w < n_win
        if not m.any():
            break
        idx.append(w[m])
        src.append(np.flatnonzero(m))
        k += 1
    if not idx:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(idx), np.concatenate(src)


def build_set_a(win: SensingWindow, window: SelectionWindow, params: SimParams,
                initial_threshold_dbm: Optional[float] = None) -> CandidateSet:
    t = window.start_subframe - 1
    th0 = params.sps_threshold_dbm if initial_threshold_dbm is None else initial_threshold_dbm
    n_sub = num_subchannels(params)
    L = params.packet_subchannels
    starts = np.asarray(candidate_starts(params), dtype=np.int64)
    n_win = len(window)
    n_starts = len(starts)
    m = n_win * n_starts
    need = required_size(m)

    own = np.zeros(n_win, dtype=bool)
    own_subs = np.asarray(win.own_visible(t), dtype=np.int64)
    if own_subs.size:
        w_idx, _ = _project_indices(own_subs, window, params.rri_ms)
        own[w_idx] = True
    own_mask = np.repeat(own, n_starts)
    if m - int(own_mask.sum()) < need:
        raise SchedulingError(
            f"vehicle {win.owner_id}: own transmissions leave {m - int(own_mask.sum())} of {m} "
            f"candidates, fewer than the required {need}"
        )

    ent = win.arrays(t)
    dec = ent["decoded"]
    if dec.any():
        w_idx, src = _project_indices(ent["subframe"][dec], window, params.rri_ms)
        blocking = kernels.blocking_rsrp(w_idx, ent["start"][dec][src], ent["length"][dec][src],
                                         ent["rsrp"][dec][src], n_win, n_sub, L).ravel()
    else:
        blocking = np.full(m, -np.inf)

    th = th0
    k = 0
    while True:
        in_a = ~own_mask & ~(blocking > th)
        if int(in_a.sum()) >= need:
            break
        k += 1
        th = th0 + k * params.threshold_step_db

    subs = np.repeat(np.arange(window.start_subframe, window.end_subframe + 1, dtype=np.int64), n_starts)
    return CandidateSet(window, subs, np.tile(starts, n_win), L, in_a, th, escalations=k)


def _rssi_grid(win: SensingWindow, t: int, params: SimParams, n_sub: int, noise_sc_mw: float):
    """(horizon, n_sub) mW grid for subframes t-horizon .. t-1; unmeasured cells hold the noise floor."""
    h = win.horizon_ms
    lo = t - h
    grid = np.full((h, n_sub), noise_sc_mw)
    for s, row in win.rssi_rows.items():
        if lo <= s < t:
            grid[s - lo] = row
    for first, offs, rows in win._rssi_blocks:
        idx = first + offs - lo
        m = (idx >= 0) & (idx < h)
        grid[idx[m]] = rows[m]
    # without an exact row, a cell takes the strongest RSSI reported by entries covering it
    ent = win.arrays(t)
    measured = win._measured_subframes()
    free = np.array([s not in measured for s in ent["subframe"].tolist()], dtype=bool)
    if free.any():
        derived = np.full((h, n_sub), -np.inf)
        rows = ent["subframe"][free] - lo
        starts, lens, rssi = ent["start"][free], ent["length"][free], dbm_to_mw(ent["rssi"][free])
        for l in range(int(lens.max())):
            m = lens > l
            np.maximum.at(derived, (rows[m], starts[m] + l), rssi[m])
        touched = np.isfinite(derived)
        grid[touched] = derived[touched]
    # deaf subframes measured nothing
    for s in win.own_visible(t):
        grid[s - lo] = noise_sc_mw
    return grid


def average_rssi_dbm(win: SensingWindow, window: SelectionWindow, params: SimParams) -> np.ndarray:
    """Linear-mean RSSI of every candidate over its periodic sensed occurrences, in dBm."""
    t = window.start_subframe - 1
    n_sub = num_subchannels(params)
    L = params.packet_subchannels
    noise_sc_mw = float(dbm_to_mw(subchannel_noise_dbm(params)))
    grid = _rssi_grid(win, t, params, n_sub, noise_sc_mw)
    h = win.horizon_ms
    lo = t - h
    n_win = len(window)
    acc = np.zeros((n_win, n_sub))
    cnt = np.zeros(n_win)
    w_subs = np.arange(window.start_subframe, window.end_subframe + 1)
    k = 1
    while True:
        occ = w_subs - k * params.rri_ms
        valid = (occ >= lo) & (occ < t)
        if not valid.any() and occ.max() < lo:
            break
        acc[valid] += grid[occ[valid] - lo]
        cnt[valid] += 1
        k += 1
    n_starts = n_sub - L + 1
    span = np.zeros((n_win, n_starts))
    for l in range(L):
        span += acc[:, l:l + n_starts]
    denom = np.maximum(cnt, 1)[:, None] * L
    mean_mw = np.where(cnt[:, None] > 0, span / denom, noise_sc_mw)
    return (10.0 * np.log10(mean_mw)).ravel()


def build_set_b(cands: CandidateSet, win: SensingWindow, params: SimParams) -> CandidateSet:
    need = required_size(cands.m)
    a_idx = np.flatnonzero(cands.in_a)
    if len(a_idx) < need:
        raise SchedulingError(f"set A holds {len(a_idx)} candidates, need {need}")
    avg = average_rssi_dbm(win, cands.window, params)
    key = np.round(avg[a_idx] / RSSI_RANK_RESOLUTION_DB)
    order = np.lexsort((a_idx, key))
    cands.b_index = np.sort(a_idx[order[:need]])
    cands.avg_rssi_dbm = avg
    return cands


def select_csr(cands: CandidateSet, rng: np.random.Generator) -> Csr:
    if cands.b_index is None or len(cands.b_index) == 0:
        raise SchedulingError("set B is empty")
    i = int(cands.b_index[int(rng.integers(len(cands.b_index)))])
    return Csr(int(cands.subframes[i]), int(cands.starts[i]), cands.length)


def draw_slrrc(params: SimParams, rng: np.random.Generator) -> int:
    return int(rng.integers(params.slrrc_min, params.slrrc_max + 1))


def on_counter_zero(state: SpsState, params: SimParams, rng: np.random.Generator) -> SpsDecision:
    if state.slrrc != 0:
        raise SchedulingError(f"counter-expiry handling called with slrrc={state.slrrc}")
    return SpsDecision.KEEP_CSR if rng.random() < params.p_resel else SpsDecision.RESELECT


def run_sbsps(win: SensingWindow, window: SelectionWindow, params: SimParams,
              rng: np.random.Generator, initial_threshold_dbm: Optional[float] = None):
    """Full selection: returns (chosen CSR, candidate sets)."""
    cands = build_set_a(win, window, params, initial_threshold_dbm)
    build_set_b(cands, win, params)
    return select_csr(cands, rng), cands
