"""PER, IPG and RSSI bookkeeping at the host vehicle, plus file export."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .phy import LossCause, ReceptionOutcome

IPG_BINS = (("low", 0.0, 150.0), ("medium", 150.0, 400.0), ("high", 400.0, math.inf))


@dataclass
class PerBin:
    start_m: float
    end_m: float
    sent: int = 0
    failed: int = 0

    @property
    def per(self) -> Optional[float]:
        return self.failed / self.sent if self.sent else None


@dataclass(frozen=True)
class IpgSample:
    tx_id: int
    gap_ms: int
    distance_m: float


@dataclass(frozen=True)
class RssiSample:
    distance_m: float
    rssi_dbm: float


@dataclass
class MetricsReport:
    per_bins: List[PerBin]
    ipg: List[IpgSample]
    rssi: List[RssiSample]
    loss_counts: Dict[str, int]
    sim_duration_ms: int = 0
    n_vehicles: int = 0
    wall_ms: float = 0.0
    peak_rss_bytes: int = 0
    n_transmissions: int = 0

    @property
    def total_sent(self) -> int:
        return sum(b.sent for b in self.per_bins)

    @property
    def total_decoded(self) -> int:
        return self.loss_counts.get(LossCause.NONE.value, 0)

    def per_between(self, start_m: float, end_m: float) -> Optional[float]:
        sent = sum(b.sent for b in self.per_bins if b.start_m >= start_m and b.end_m <= end_m)
        failed = sum(b.failed for b in self.per_bins if b.start_m >= start_m and b.end_m <= end_m)
        return failed / sent if sent else None

    def per_at(self, distance_m: float, width_m: float = 25.0) -> Optional[float]:
        """PER of the bin ending at ``distance_m``."""
        return self.per_between(distance_m - width_m, distance_m)


class MetricsCollector:
    def __init__(self, bin_width_m: float = 25.0, report_range_m: float = 600.0):
        self.bin_width_m = bin_width_m
        self.report_range_m = report_range_m
        self.n_report_bins = int(math.ceil(report_range_m / bin_width_m))
        self.sent = Counter()
        self.failed = Counter()
        self.last_decode: Dict[int, int] = {}
        self.ipg: List[IpgSample] = []
        self.rssi: List[RssiSample] = []
        self.loss_counts = Counter()

    def _bin(self, d: float) -> int:
        # everything past the reporting range shares one overflow bin
        return min(int(d // self.bin_width_m), self.n_report_bins)

    def record(self, outcome: ReceptionOutcome, distance_m: float, gen_time_ms: Optional[int] = None) -> None:
        """Count one packet; ``gen_time_ms`` (default: the reception subframe) drives the IPG."""
        self.record_raw(outcome.tx_id, outcome.subframe if gen_time_ms is None else gen_time_ms,
                        distance_m, outcome.decoded, outcome.loss_cause, outcome.rssi_dbm)

    def record_raw(self, tx_id: int, t_ms: int, distance_m: float, decoded: bool,
                   cause: LossCause, rssi_dbm: float) -> None:
        b = self._bin(distance_m)
        self.sent[b] += 1
        self.loss_counts[cause.value] += 1
        if cause is not LossCause.HALF_DUPLEX:
            self.rssi.append(RssiSample(distance_m, rssi_dbm))
        if decoded:
            prev = self.last_decode.get(tx_id)
            if prev is not None:
                self.ipg.append(IpgSample(tx_id, t_ms - prev, distance_m))
            self.last_decode[tx_id] = t_ms
        else:
            self.failed[b] += 1

    def report(self, **info) -> MetricsReport:
        bins = []
        for i in range(self.n_report_bins):
            start = i * self.bin_width_m
            bins.append(PerBin(start, min(start + self.bin_width_m, self.report_range_m),
                               self.sent[i], self.failed[i]))
        k = self.n_report_bins
        bins.append(PerBin(self.report_range_m, math.inf, self.sent[k], self.failed[k]))
        return MetricsReport(bins, list(self.ipg), list(self.rssi), dict(self.loss_counts), **info)


def ipg_by_distance(samples: Sequence[IpgSample], resolution_ms: int = 100) -> Dict[str, dict]:
    """Per distance bin: histogram of gaps at ``resolution_ms`` plus mean/median/p95."""
    out = {}
    for name, lo, hi in IPG_BINS:
        gaps = np.array([s.gap_ms for s in samples if lo <= s.distance_m < hi], dtype=float)
        hist: Dict[int, int] = {}
        if gaps.size:
            q = (np.round(gaps / resolution_ms) * resolution_ms).astype(int)
            vals, counts = np.unique(q, return_counts=True)
            hist = {int(v): int(c) for v, c in zip(vals, counts)}
        out[name] = {
            "range_m": (lo, hi),
            "histogram": hist,
            "count": int(gaps.size),
            "mean": float(gaps.mean()) if gaps.size else None,
            "median": float(np.median(gaps)) if gaps.size else None,
            "p95": float(np.percentile(gaps, 95)) if gaps.size else None,
        }
    return out


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:g}"


def export(report: MetricsReport, out_dir) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "per_by_distance.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_start_m", "bin_end_m", "sent", "failed", "per"])
            for b in report.per_bins:
                w.writerow([_fmt(b.start_m), _fmt(b.end_m), b.sent, b.failed,
                            "" if b.per is None else f"{b.per:.6f}"])
        with (out / "ipg.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin", "gap_ms", "count"])
            for name, info in ipg_by_distance(report.ipg).items():
                for gap, count in sorted(info["histogram"].items()):
                    w.writerow([name, gap, count])
        with (out / "rssi_scatter.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["distance_m", "rssi_dbm"])
            for s in report.rssi:
                w.writerow([f"{s.distance_m:.3f}", f"{s.rssi_dbm:.3f}"])
        runtime = {
            "sim_duration_ms": report.sim_duration_ms,
            "wall_ms": round(report.wall_ms, 3),
            "n_vehicles": report.n_vehicles,
            "peak_rss_bytes": report.peak_rss_bytes,
        }
        (out / "runtime.json").write_text(json.dumps(runtime, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {out}: {exc}") from exc
