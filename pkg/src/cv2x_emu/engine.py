"""Discrete-event core: BSM priority queue, SB-SPS dispatch and per-subframe commits.

Events are popped in generation-time order (ties by transmitter id). Before an
event at time T is dispatched, every subframe before T is committed, so a
scheduling decision at T only ever sees history in [T - 1000, T).

Remote vehicles do not keep an eagerly updated sensing window. Committed
transmissions go into a shared log, and a vehicle's window is rebuilt from the
last second of that log when (and only when) it runs SB-SPS. Shadowing and
decode draws are keyed on (seed, tx, rx, packet), so the rebuilt window is
identical to one maintained subframe by subframe.
"""
from __future__ import annotations

import heapq
import logging
import math
import resource
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .channel import ChannelModelConfig, path_loss_db, shadowing_keyed, subchannel_noise_dbm
from .grid import ConfigError, Csr, SelectionWindow, SimParams, num_subchannels
from .metrics import MetricsCollector, MetricsReport
from .mobility import TraceRecord, TrackSet
from .phy import BlerTable, LossCause, ReceptionOutcome, dbm_to_mw, evaluate_links, loss_causes
from .sbsps import (CandidateSet, SensingWindow, SpsDecision, SpsState, build_set_a, build_set_b,
                    draw_slrrc, on_counter_zero, select_csr)

log = logging.getLogger(__name__)

_CAUSES = {0: LossCause.NONE, 2: LossCause.PROPAGATION, 3: LossCause.COLLISION}


@dataclass(frozen=True)
class BsmEvent:
    gen_time_ms: int
    tx_id: int
    seq: int
    snapshot: Optional[TraceRecord] = None


@dataclass(frozen=True)
class EmittedBsm:
    rx_time_ms: int
    tx_id: int
    seq: int
    x_m: float
    y_m: float
    speed_mps: float
    heading_deg: float
    rssi_dbm: float
    sinr_db: float


@dataclass
class TxRecord:
    vehicle: int
    gen_time_ms: int
    subframe: int
    subchannel_start: int
    kind: str  # first | periodic | keep | reselect


class EventQueue:
    """Min-heap of BSM events keyed by (generation time, transmitter id)."""

    def __init__(self):
        self._heap = []

    def push(self, ev: BsmEvent) -> None:
        heapq.heappush(self._heap, (ev.gen_time_ms, ev.tx_id, ev.seq, ev))

    def pop(self) -> BsmEvent:
        return heapq.heappop(self._heap)[3]

    def __len__(self) -> int:
        return len(self._heap)


class _TxLog:
    """Append-only columnar log of committed transmissions, ordered by subframe."""

    def __init__(self, capacity: int = 4096):
        self.sub = np.empty(capacity, dtype=np.int64)
        self.tx = np.empty(capacity, dtype=np.int64)
        self.seq = np.empty(capacity, dtype=np.int64)
        self.start = np.empty(capacity, dtype=np.int64)
        self.x = np.empty(capacity)
        self.y = np.empty(capacity)
        self.lo = 0
        self.hi = 0

    def append(self, sub, tx, seq, start, x, y) -> None:
        n = len(tx)
        if self.hi + n > len(self.sub):
            self._grow(n)
        s = slice(self.hi, self.hi + n)
        self.sub[s] = sub
        self.tx[s] = tx
        self.seq[s] = seq
        self.start[s] = start
        self.x[s] = x
        self.y[s] = y
        self.hi += n

    def _grow(self, n: int) -> None:
        live = self.hi - self.lo
        cap = len(self.sub)
        if live + n > cap // 2:
            cap = max(2 * cap, 2 * (live + n))
        for name in ("sub", "tx", "seq", "start", "x", "y"):
            old = getattr(self, name)
            new = np.empty(cap, dtype=old.dtype)
            new[:live] = old[self.lo:self.hi]
            setattr(self, name, new)
        self.lo, self.hi = 0, live

    def trim(self, before: int) -> None:
        self.lo += int(np.searchsorted(self.sub[self.lo:self.hi], before, side="left"))

    def window(self, lo_sub: int, hi_sub: int) -> slice:
        subs = self.sub[self.lo:self.hi]
        a = int(np.searchsorted(subs, lo_sub, side="left"))
        b = int(np.searchsorted(subs, hi_sub, side="left"))
        return slice(self.lo + a, self.lo + b)


class Engine:
    def __init__(self, params: SimParams, channel: ChannelModelConfig, tracks: TrackSet,
                 hv_id: Optional[int] = 0, bler_table: Optional[BlerTable] = None,
                 on_decoded: Optional[Callable[[EmittedBsm], None]] = None,
                 keep_outcomes: bool = False, keep_tx_log: bool = False,
                 metrics: Optional[MetricsCollector] = None):
        if channel.model != params.channel_model:
            channel = ChannelModelConfig(**{**channel.__dict__, "model": params.channel_model})
        self.params = params
        self.channel = channel
        self.tracks = tracks
        self.ids = tracks.ids()
        if self.ids and hv_id not in tracks:
            raise ConfigError(f"host vehicle {hv_id} has no track")
        self.hv_id = hv_id if self.ids else None
        self.table = bler_table or BlerTable.default(params.mcs)
        self.on_decoded = on_decoded
        self.metrics = metrics or MetricsCollector()
        self.outcomes: Optional[List[ReceptionOutcome]] = [] if keep_outcomes else None
        self.tx_log: Optional[List[TxRecord]] = [] if keep_tx_log else None
        self.selections: List[tuple] = []

        self.seed = int(params.rng_seed)
        self.n_sub = num_subchannels(params)
        self.noise_sc_mw = float(dbm_to_mw(subchannel_noise_dbm(params)))
        self.sps: Dict[int, SpsState] = {v: SpsState() for v in self.ids}
        self.rng = {v: np.random.default_rng([self.seed, 0x5B5, v]) for v in self.ids}
        phase_rng = np.random.default_rng([self.seed, 0xFA5E])
        phases = phase_rng.integers(0, params.rri_ms, len(self.ids))
        self.phase = {v: int(p) for v, p in zip(self.ids, phases)}
        self.queue = EventQueue()
        self.pending: Dict[int, list] = {}
        self.committed_until = -1 << 62
        self.log = _TxLog()
        self.seq = {v: 0 for v in self.ids}
        self.n_transmissions = 0
        self.n_rv_transmissions = 0

    # -- event generation -------------------------------------------------

    def _track_end(self, v: int) -> float:
        return getattr(self.tracks[v], "t_end", math.inf)

    def _next_event(self, v: int, gen: int) -> Optional[BsmEvent]:
        if gen >= self.params.sim_duration_ms or gen > self._track_end(v):
            return None
        seq = self.seq[v]
        self.seq[v] = seq + 1
        return BsmEvent(gen, v, seq)

    def _seed_queue(self) -> None:
        for v in self.ids:
            start = int(math.ceil(getattr(self.tracks[v], "t_start", 0)))
            ev = self._next_event(v, max(start, 0) + self.phase[v])
            if ev is not None:
                self.queue.push(ev)

    # -- main loop --------------------------------------------------------

    def run(self) -> MetricsReport:
        t0 = time.perf_counter()
        self._seed_queue()
        while len(self.queue):
            ev = self.queue.pop()
            self.commit_until(ev.gen_time_ms - 1)
            self.dispatch(ev)
            nxt = self._next_event(ev.tx_id, ev.gen_time_ms + self.params.rri_ms)
            if nxt is not None:
                self.queue.push(nxt)
        if self.pending:
            self.commit_until(max(self.pending))
        wall_ms = (time.perf_counter() - t0) * 1000.0
        return self.metrics.report(
            sim_duration_ms=self.params.sim_duration_ms, n_vehicles=len(self.ids), wall_ms=wall_ms,
            peak_rss_bytes=peak_rss_bytes(), n_transmissions=self.n_transmissions,
        )

    def dispatch(self, ev: BsmEvent) -> Csr:
        state = self.sps[ev.tx_id]
        if state.slrrc == -1:
            csr = self.handle_first_tx(ev, state)
        elif state.slrrc == 0:
            csr = self.handle_reselection(ev, state)
        else:
            csr = self.handle_periodic(ev, state)
        gen = ev.gen_time_ms
        if not gen < csr.subframe <= gen + self.params.latency_ms:
            raise RuntimeError(
                f"vehicle {ev.tx_id}: transmission at {csr.subframe} violates latency bound for packet generated at {gen}"
            )
        state.reserved_csr = csr
        state.slrrc -= 1
        self.pending.setdefault(csr.subframe, []).append((ev.tx_id, ev.seq, csr.subchannel_start, gen))
        return csr

    def handle_first_tx(self, ev: BsmEvent, state: SpsState) -> Csr:
        csr = self._select(ev, "first")
        state.slrrc = draw_slrrc(self.params, self.rng[ev.tx_id])
        return csr

    def handle_reselection(self, ev: BsmEvent, state: SpsState) -> Csr:
        rng = self.rng[ev.tx_id]
        if on_counter_zero(state, self.params, rng) is SpsDecision.KEEP_CSR:
            csr = state.reserved_csr.shifted(self.params.rri_ms)
            self._note(ev, csr, "keep")
        else:
            csr = self._select(ev, "reselect")
        state.slrrc = draw_slrrc(self.params, rng)
        return csr

    def handle_periodic(self, ev: BsmEvent, state: SpsState) -> Csr:
        if state.reserved_csr is None:
            raise RuntimeError(f"vehicle {ev.tx_id} has slrrc={state.slrrc} but no reservation")
        csr = state.reserved_csr.shifted(self.params.rri_ms)
        self._note(ev, csr, "periodic")
        return csr

    def _note(self, ev: BsmEvent, csr: Csr, kind: str) -> None:
        if self.tx_log is not None:
            self.tx_log.append(TxRecord(ev.tx_id, ev.gen_time_ms, csr.subframe, csr.subchannel_start, kind))

    def _select(self, ev: BsmEvent, kind: str) -> Csr:
        t = ev.gen_time_ms
        window = SelectionWindow.after(t, self.params.latency_ms)
        win = self.sensing_window(ev.tx_id, t)
        cands = build_set_a(win, window, self.params)
        build_set_b(cands, win, self.params)
        csr = select_csr(cands, self.rng[ev.tx_id])
        self.selections.append((ev.tx_id, t, cands.m, int(cands.in_a.sum()), len(cands.b_index),
                                cands.threshold_db))
        self._note(ev, csr, kind)
        return csr

    # -- sensing ----------------------------------------------------------

    def sensing_window(self, v: int, t: int) -> SensingWindow:
        """Rebuild vehicle v's sensing window for a decision at time t from the transmission log."""
        p = self.params
        h = p.sensing_window_ms
        lo = t - h
        win = SensingWindow(v, h)
        sl = self.log.window(lo, t)
        sub = self.log.sub[sl]
        if sub.size == 0:
            return win
        tx = self.log.tx[sl]
        own = tx == v
        deaf_subs = np.unique(sub[own])
        for s in deaf_subs.tolist():
            win.record_own_tx(s)
        keep = ~own
        if deaf_subs.size:
            keep &= ~np.isin(sub, deaf_subs)
        if not keep.any():
            return win
        sub, tx = sub[keep], tx[keep]
        seq = self.log.seq[sl][keep]
        start = self.log.start[sl][keep]
        rx_x, rx_y = self.tracks.positions(np.full(sub.shape, v), sub)
        d = np.hypot(self.log.x[sl][keep] - rx_x, self.log.y[sl][keep] - rx_y)
        rx_dbm = (p.tx_power_dbm - path_loss_db(self.channel, d)
                  + shadowing_keyed(self.channel, self.seed, tx, v, seq))
        group = sub - lo
        res = evaluate_links(group, rx_dbm, start, tx, seq, v, h, p, self.table, self.seed)
        win.extend(sub, start, p.packet_subchannels, res.rsrp_dbm, res.rssi_dbm, res.decoded, tx)
        used = np.unique(group)
        win.record_rssi_block(lo, used, res.total_mw[used] + self.noise_sc_mw)
        return win

    # -- subframe commit --------------------------------------------------

    def commit_until(self, subframe: int) -> None:
        if subframe <= self.committed_until:
            return
        if self.pending:
            for s in sorted(k for k in self.pending if k <= subframe):
                self.commit_subframe(s)
        self.committed_until = subframe
        self.log.trim(subframe - self.params.sensing_window_ms - self.params.latency_ms)

    def commit_subframe(self, s: int) -> None:
        entries = self.pending.pop(s, None)
        if not entries:
            return
        p = self.params
        tx = np.fromiter((e[0] for e in entries), dtype=np.int64, count=len(entries))
        seq = np.fromiter((e[1] for e in entries), dtype=np.int64, count=len(entries))
        start = np.fromiter((e[2] for e in entries), dtype=np.int64, count=len(entries))
        gen = np.fromiter((e[3] for e in entries), dtype=np.int64, count=len(entries))
        x, y = self.tracks.positions(tx, np.full(tx.shape, s))
        self.log.append(s, tx, seq, start, x, y)
        self.n_transmissions += len(tx)

        hv = self.hv_id
        if hv is None:
            return
        rv = tx != hv
        if not rv.any():
            return
        hx, hy = self.tracks.positions(np.array([hv]), np.array([s]))
        d_all = np.hypot(x - hx[0], y - hy[0])
        self.n_rv_transmissions += int(rv.sum())
        if not rv.all():
            # host transmitting: deaf for the whole subframe
            for i in np.flatnonzero(rv):
                self._record(s, int(gen[i]), int(tx[i]), int(seq[i]), float(d_all[i]), False,
                             LossCause.HALF_DUPLEX, math.nan, -math.inf)
            return
        rx_dbm = (p.tx_power_dbm - path_loss_db(self.channel, d_all)
                  + shadowing_keyed(self.channel, self.seed, tx, hv, seq))
        res = evaluate_links(np.zeros(len(tx), dtype=np.int64), rx_dbm, start, tx, seq, hv, 1,
                             p, self.table, self.seed)
        causes = loss_causes(res, self.table)
        for i in range(len(tx)):
            ok = bool(res.decoded[i])
            self._record(s, int(gen[i]), int(tx[i]), int(seq[i]), float(d_all[i]), ok,
                         _CAUSES[int(causes[i])], float(rx_dbm[i]), float(res.sinr_db[i]))
            if ok and self.on_decoded is not None:
                snap = self.tracks[int(tx[i])].state_at(int(gen[i]))
                self.on_decoded(EmittedBsm(s, int(tx[i]), int(seq[i]), snap.x_m, snap.y_m, snap.speed_mps,
                                           snap.heading_deg, float(rx_dbm[i]), float(res.sinr_db[i])))

    def _record(self, s, gen, tx, seq, d, decoded, cause, rssi, sinr) -> None:
        # IPG runs on generation stamps, which stay RRI-periodic across reselections
        self.metrics.record_raw(tx, gen, d, decoded, cause, rssi)
        if self.outcomes is not None:
            self.outcomes.append(ReceptionOutcome(tx, self.hv_id, s, sinr, rssi, decoded, cause, seq))


def peak_rss_bytes() -> int:
    # ru_maxrss is KiB on Linux
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss) * 1024


def run(params: SimParams, channel: ChannelModelConfig, tracks: TrackSet, hv_id: int = 0, **kw) -> MetricsReport:
    return Engine(params, channel, tracks, hv_id, **kw).run()
