"""Command line: ``run``, ``bench``, ``receive-stub`` and ``gen-mobility``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import subprocess
import sys
from pathlib import Path
from statistics import mean
from typing import List, Optional

from . import kernels
from .config import RunConfig, default_config, load_config, write_effective_config
from .engine import Engine, peak_rss_bytes
from .grid import ConfigError
from .hil import PacingConfig, RealTimeViolation, pace_and_emit, receive_stub
from .metrics import MetricsReport, export, ipg_by_distance
from .mobility import ScenarioSpec, TraceError, generate_linear_scenario, write_trace_csv

log = logging.getLogger("cv2x_emu")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_REALTIME = 3

BENCH_FIELDS = ["channel_model", "vehicles", "bandwidth_mhz", "reps", "mean_wall_s", "min_wall_s",
                "max_wall_s", "peak_rss_mb", "n_transmissions"]


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    params = cfg.params
    if args.seed is not None:
        params = params.replace(rng_seed=args.seed)
    pacing = cfg.pacing
    if args.real_time or args.rtf is not None or args.emit:
        base = pacing or PacingConfig(real_time_factor=math.inf)
        factor = base.real_time_factor
        if args.rtf is not None:
            factor = args.rtf
        elif args.real_time:
            factor = 1.0
        pacing = dataclasses.replace(base, real_time_factor=factor,
                                     endpoint=args.emit or base.endpoint)
    out = args.out or cfg.out_dir
    return dataclasses.replace(cfg, params=params, pacing=pacing, out_dir=out)


def execute(cfg: RunConfig, keep_payloads: bool = False):
    """Run one configured scenario; returns (report, pacing report or None)."""
    tracks = cfg.build_tracks()
    if cfg.pacing is None:
        report = Engine(cfg.params, cfg.channel, tracks, cfg.hv_id).run()
        return report, None
    result = {}

    def produce(emit):
        result["report"] = Engine(cfg.params, cfg.channel, tracks, cfg.hv_id, on_decoded=emit).run()

    pacing = pace_and_emit(produce, cfg.pacing, keep_payloads=keep_payloads)
    return result["report"], pacing


def _fmt_per(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{100 * v:.1f}%"


def print_summary(report: MetricsReport, out=None) -> None:
    out = out or sys.stdout
    per = "  ".join(f"PER@{d}m={_fmt_per(report.per_at(d))}" for d in (100, 300, 600))
    print(per, file=out)
    for name, info in ipg_by_distance(report.ipg).items():
        lo, hi = info["range_m"]
        m = "n/a" if info["mean"] is None else f"{info['mean']:.1f} ms"
        print(f"IPG {name} [{lo:g}, {hi:g}) m: mean {m} over {info['count']} gaps", file=out)
    print(f"wall {report.wall_ms / 1000:.2f} s for {report.sim_duration_ms / 1000:g} s simulated, "
          f"{report.n_vehicles} vehicles, peak RSS {report.peak_rss_bytes / 2**20:.0f} MiB", file=out)


def cmd_run(args) -> int:
    cfg = _resolve(args)
    if cfg.out_dir:
        write_effective_config(cfg, cfg.out_dir)
    report, pacing = execute(cfg)
    if cfg.out_dir:
        export(report, cfg.out_dir)
    print_summary(report)
    if pacing is not None:
        print(f"emitted {pacing.n_emitted} records, lag p50 {pacing.lag_percentile(50):.2f} ms, "
              f"p99 {pacing.lag_percentile(99):.2f} ms")
    return EXIT_OK


def _cell_config(vehicles: int, bandwidth: int, channel: str, duration_ms: int, seed: int) -> dict:
    return {"sim": {"bandwidth_mhz": bandwidth, "channel_model": channel, "sim_duration_ms": duration_ms,
                    "rng_seed": seed},
            "scenario": {"n_vehicles": vehicles}}


def cmd_cell(args) -> int:
    # one benchmark cell in a fresh process so peak RSS is per cell
    from .config import config_from_dict
    cfg = config_from_dict(json.loads(args.cell))
    report, _ = execute(cfg)
    json.dump({"wall_ms": report.wall_ms, "peak_rss_bytes": peak_rss_bytes(),
               "n_transmissions": report.n_transmissions}, sys.stdout)
    return EXIT_OK


def run_cell(cell: dict) -> dict:
    proc = subprocess.run([sys.executable, "-m", "cv2x_emu", "_cell", json.dumps(cell)],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"benchmark cell failed: {proc.stderr.strip()}")
    return json.loads(proc.stdout)


def bench(vehicles: List[int], bandwidths: List[int], channels: List[str], duration_ms: int,
          reps: int, seed: int = 1) -> List[dict]:
    rows = []
    for ch in channels:
        for n in vehicles:
            for bw in bandwidths:
                runs = [run_cell(_cell_config(n, bw, ch, duration_ms, seed)) for _ in range(reps)]
                walls = [r["wall_ms"] / 1000 for r in runs]
                rows.append({
                    "channel_model": ch, "vehicles": n, "bandwidth_mhz": bw, "reps": reps,
                    "mean_wall_s": round(mean(walls), 3), "min_wall_s": round(min(walls), 3),
                    "max_wall_s": round(max(walls), 3),
                    "peak_rss_mb": round(max(r["peak_rss_bytes"] for r in runs) / 2**20, 1),
                    "n_transmissions": runs[0]["n_transmissions"],
                })
                log.info("%s %d veh %d MHz: %.2f s", ch, n, bw, rows[-1]["mean_wall_s"])
    return rows


def cmd_bench(args) -> int:
    rows = bench(args.vehicles, args.bandwidth, args.channel, args.duration_ms, args.reps, args.seed)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_receive(args) -> int:
    n = receive_stub(args.endpoint, args.count, args.timeout, out=sys.stdout)
    print(f"received {n} valid records", file=sys.stderr)
    return EXIT_OK


def cmd_gen_mobility(args) -> int:
    spec = ScenarioSpec(n_vehicles=args.vehicles, speed_mps=args.speed, placement_seed=args.seed)
    write_trace_csv(generate_linear_scenario(spec, args.duration_ms), args.out, args.duration_ms, args.step_ms)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cv2x-emu", description="C-V2X mode 4 sidelink emulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario and export metrics")
    r.add_argument("--config", help="JSON run configuration (defaults if omitted)")
    r.add_argument("--seed", type=int, help="override sim.rng_seed")
    r.add_argument("--out", help="output directory for metrics and effective_config.json")
    r.add_argument("--real-time", action="store_true", help="pace emission to wall-clock time")
    r.add_argument("--rtf", type=float, help="real-time factor (implies pacing; inf = as fast as possible)")
    r.add_argument("--emit", help="stream decoded BSMs to udp://host:port")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="runtime matrix, one subprocess per cell")
    b.add_argument("--vehicles", type=int, nargs="+", default=[100, 200, 500])
    b.add_argument("--bandwidth", type=int, nargs="+", default=[10, 20])
    b.add_argument("--channel", nargs="+", default=["Fowlerville", "WinnerB1"])
    b.add_argument("--duration-ms", type=int, default=40_000)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("--out", help="CSV path (stdout if omitted)")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("receive-stub", help="listen for emitted BSMs and validate them")
    s.add_argument("endpoint", nargs="?", default="udp://127.0.0.1:9000")
    s.add_argument("--count", type=int)
    s.add_argument("--timeout", type=float, help="stop after this many idle seconds")
    s.set_defaults(func=cmd_receive)

    g = sub.add_parser("gen-mobility", help="write a constant-velocity trace CSV")
    g.add_argument("out")
    g.add_argument("--vehicles", type=int, default=100)
    g.add_argument("--speed", type=float, default=30.0)
    g.add_argument("--duration-ms", type=int, default=40_000)
    g.add_argument("--step-ms", type=int, default=100)
    g.add_argument("--seed", type=int, default=1)
    g.set_defaults(func=cmd_gen_mobility)

    c = sub.add_parser("_cell")
    c.add_argument("cell")
    c.set_defaults(func=cmd_cell)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        return args.func(args)
    except (ConfigError, TraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RealTimeViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REALTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
