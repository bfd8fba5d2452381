"""Real-time emission gateway: paces decoded BSMs to wall-clock time and sends them over UDP.

The engine runs in a producer thread and hands records to the emitter through
an ordered, bounded channel. The producer may run at most ``horizon_ms`` of
simulated time ahead of the oldest unsent record; past that it blocks. The
emitter sends each record once ``wall >= start + rx_time_ms / factor`` and
records how late it was.
"""
from __future__ import annotations

import collections
import gc
import hashlib
import json
import math
import socket
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Tuple, Union
from urllib.parse import urlparse

import numpy as np

from .engine import EmittedBsm
from .grid import ConfigError

RECORD_KEYS = ("rx_time_ms", "tx_id", "seq", "x_m", "y_m", "speed_mps", "heading_deg", "rssi_dbm", "sinr_db")
_INT_KEYS = frozenset(RECORD_KEYS[:3])


class RealTimeViolation(RuntimeError):
    """The emitter fell behind wall-clock time for too long."""

    def __init__(self, subframe: int, lag_ms: float, max_lag_ms: float):
        super().__init__(
            f"real-time violation at subframe {subframe}: emission lag {lag_ms:.1f} ms "
            f"stayed above {max_lag_ms:g} ms"
        )
        self.subframe = subframe
        self.lag_ms = lag_ms


class ChannelClosed(Exception):
    pass


@dataclass(frozen=True)
class PacingConfig:
    real_time_factor: float = 1.0
    endpoint: Optional[str] = None
    max_lag_ms: float = 100.0
    # consecutive late records before the run is declared non-real-time
    violation_records: int = 20
    horizon_ms: int = 1000

    def __post_init__(self):
        if not self.real_time_factor > 0:
            raise ConfigError(f"real_time_factor must be > 0, got {self.real_time_factor}")
        if self.max_lag_ms <= 0 or self.violation_records < 1 or self.horizon_ms < 1:
            raise ConfigError("max_lag_ms, violation_records and horizon_ms must be positive")
        if self.endpoint is not None:
            parse_endpoint(self.endpoint)

    @property
    def paced(self) -> bool:
        return math.isfinite(self.real_time_factor)


def parse_endpoint(endpoint: str) -> Tuple[str, int]:
    """``udp://host:port`` (or bare ``host:port``) to a (host, port) pair."""
    text = endpoint if "://" in endpoint else "udp://" + endpoint
    u = urlparse(text)
    if u.scheme != "udp":
        raise ConfigError(f"only udp:// endpoints are supported, got {endpoint!r}")
    try:
        port = u.port
    except ValueError:
        port = None
    if not u.hostname or port is None:
        raise ConfigError(f"endpoint must look like udp://host:port, got {endpoint!r}")
    return u.hostname, port


def _num(key: str, value) -> Union[int, float]:
    if key in _INT_KEYS:
        return int(value)
    v = round(float(value), 3)
    if not math.isfinite(v):
        raise ValueError(f"{key} is not finite")
    return v + 0.0  # folds -0.0 into 0.0


def encode_record(e: EmittedBsm) -> bytes:
    body = ",".join(f'"{k}":{json.dumps(_num(k, getattr(e, k)))}' for k in RECORD_KEYS)
    return ("{" + body + "}\n").encode("utf-8")


def decode_record(data: bytes) -> EmittedBsm:
    obj = json.loads(data.decode("utf-8"))
    if list(obj) != list(RECORD_KEYS):
        raise ValueError(f"unexpected keys {list(obj)}")
    return EmittedBsm(**obj)


class UdpSink:
    """Unconnected UDP sender; resolution and send errors propagate to the caller."""

    def __init__(self, endpoint: str):
        host, port = parse_endpoint(endpoint)
        info = socket.getaddrinfo(host, port, type=socket.SOCK_DGRAM)
        family, _, _, _, addr = info[0]
        self.addr = addr
        self.sock = socket.socket(family, socket.SOCK_DGRAM)

    def __call__(self, payload: bytes) -> None:
        self.sock.sendto(payload, self.addr)

    def close(self) -> None:
        self.sock.close()


class BoundedChannel:
    """FIFO hand-off limited by simulated time span rather than item count."""

    def __init__(self, horizon_ms: int):
        self.horizon_ms = horizon_ms
        self.items = collections.deque()
        self.cond = threading.Condition()
        self.done = False
        self.closed = False
        self.full = False
        self.error: Optional[BaseException] = None

    def put(self, rec: EmittedBsm) -> None:
        with self.cond:
            while (not self.closed and self.items
                   and rec.rx_time_ms - self.items[0].rx_time_ms >= self.horizon_ms):
                # a blocked producer means the buffer holds all it can
                self.full = True
                self.cond.notify_all()
                self.cond.wait()
            if self.closed:
                raise ChannelClosed()
            self.items.append(rec)
            # wake the emitter if it was starved or is waiting for a full buffer
            if len(self.items) == 1 or rec.rx_time_ms - self.items[0].rx_time_ms >= self.horizon_ms - 1:
                self.cond.notify_all()

    def wait_primed(self) -> None:
        """Block until a full horizon of records is buffered or the producer is done."""
        with self.cond:
            while not self.done and not self.full and not (
                    self.items and self.items[-1].rx_time_ms - self.items[0].rx_time_ms >= self.horizon_ms - 1):
                self.cond.wait()

    def get(self) -> Optional[EmittedBsm]:
        """Next record, or None once the producer has finished and the buffer is drained."""
        with self.cond:
            while not self.items and not self.done:
                self.cond.wait()
            if self.items:
                rec = self.items.popleft()
                self.cond.notify_all()
                return rec
            if self.error is not None:
                raise self.error
            return None

    def finish(self, error: Optional[BaseException] = None) -> None:
        with self.cond:
            self.done = True
            self.error = error
            self.cond.notify_all()

    def close(self) -> None:
        with self.cond:
            self.closed = True
            self.cond.notify_all()


@dataclass
class PacingReport:
    n_emitted: int = 0
    lags_ms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    digest: str = ""
    wall_s: float = 0.0
    payloads: Optional[List[bytes]] = None

    def lag_percentile(self, q: float) -> float:
        return float(np.percentile(self.lags_ms, q)) if self.lags_ms.size else 0.0


Producer = Callable[[Callable[[EmittedBsm], None]], object]


def _as_producer(source) -> Producer:
    if callable(source):
        return source

    def produce(emit):
        for rec in source:
            emit(rec)
    return produce


def pace_and_emit(source: Union[Producer, Iterable[EmittedBsm]], cfg: PacingConfig,
                  sink: Optional[Callable[[bytes], None]] = None, keep_payloads: bool = False,
                  clock: Callable[[], float] = time.perf_counter) -> PacingReport:
    """Stream decoded records to ``sink`` (or ``cfg.endpoint``), paced by ``cfg.real_time_factor``.

    ``source`` is either an iterable of records or a callable that takes an
    ``emit(record)`` callback and runs to completion (e.g. an engine run).
    The wall-clock origin is set once the producer has filled its buffer
    horizon (or finished), so start-up work does not count as lag. Raises
    :class:`RealTimeViolation` after ``violation_records`` consecutive records
    later than ``max_lag_ms``; producer errors are re-raised here.
    """
    own_sink = None
    if sink is None and cfg.endpoint is not None:
        sink = own_sink = UdpSink(cfg.endpoint)
    chan = BoundedChannel(cfg.horizon_ms)
    produce = _as_producer(source)

    def worker():
        err = None
        try:
            produce(chan.put)
        except ChannelClosed:
            pass
        except BaseException as exc:  # handed to the emitter thread
            err = exc
        chan.finish(err)

    thread = threading.Thread(target=worker, name="cv2x-engine", daemon=True)
    old_interval = sys.getswitchinterval()
    # the default 5 ms GIL slice would show up directly as emission lag
    sys.setswitchinterval(0.0005)
    # full collections over long-lived caller state stall the emitter for 100+ ms;
    # collect once up front and keep those objects out of later passes
    gc.collect()
    gc.freeze()
    digest = hashlib.sha256()
    lags: List[float] = []
    payloads: Optional[List[bytes]] = [] if keep_payloads else None
    scale = 0.0 if not cfg.paced else 1.0 / cfg.real_time_factor / 1000.0
    late = 0
    streak_start = None
    t_begin = clock()
    start = None
    last_rx = -math.inf
    thread.start()
    try:
        chan.wait_primed()
        while True:
            rec = chan.get()
            if rec is None:
                break
            if rec.rx_time_ms < last_rx:
                raise RuntimeError(f"records out of order at rx_time_ms={rec.rx_time_ms}")
            last_rx = rec.rx_time_ms
            payload = encode_record(rec)
            if start is None:
                start = clock() - rec.rx_time_ms * scale
            target = start + rec.rx_time_ms * scale
            now = clock()
            if now < target:
                time.sleep(target - now)
                now = clock()
            if sink is not None:
                sink(payload)
            lag = max(0.0, (now - target) * 1000.0) if cfg.paced else 0.0
            lags.append(lag)
            digest.update(payload)
            if payloads is not None:
                payloads.append(payload)
            if lag > cfg.max_lag_ms:
                if late == 0:
                    streak_start = rec.rx_time_ms
                late += 1
                if late >= cfg.violation_records:
                    raise RealTimeViolation(streak_start, lag, cfg.max_lag_ms)
            else:
                late = 0
    finally:
        chan.close()
        thread.join()
        sys.setswitchinterval(old_interval)
        gc.unfreeze()
        if own_sink is not None:
            own_sink.close()
    return PacingReport(len(lags), np.asarray(lags), digest.hexdigest(), clock() - t_begin, payloads)


def receive_stub(endpoint: str, count: Optional[int] = None, timeout_s: Optional[float] = None,
                 out=None) -> int:
    """Bind to ``endpoint``, validate incoming datagrams and echo them; returns records received."""
    host, port = parse_endpoint(endpoint)
    info = socket.getaddrinfo(host, port, type=socket.SOCK_DGRAM)
    family, _, _, _, addr = info[0]
    n = 0
    last = -math.inf
    with socket.socket(family, socket.SOCK_DGRAM) as sock:
        sock.bind(addr)
        sock.settimeout(timeout_s)
        while count is None or n < count:
            try:
                data, _ = sock.recvfrom(65535)
            except socket.timeout:
                break
            rec = decode_record(data)
            if encode_record(rec) != data:
                raise ValueError(f"non-canonical datagram: {data!r}")
            if rec.rx_time_ms < last:
                raise ValueError(f"rx_time_ms went backwards: {rec.rx_time_ms} < {last}")
            last = rec.rx_time_ms
            n += 1
            if out is not None:
                out.write(data.decode("utf-8"))
                out.flush()
    return n
