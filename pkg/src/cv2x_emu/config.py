"""JSON run configuration: parsing, defaults and the effective-config echo.

Schema (every block optional, unknown keys rejected)::

    {
      "sim":      {SimParams fields, e.g. "bandwidth_mhz": 20, "channel_model": "WinnerB1"},
      "channel":  {"carrier_ghz": 5.9, "shadowing_sigma_db": 3.0,
                   "fowlerville": {...}, "winner": {...}},
      "scenario": {ScenarioSpec fields}        -- or --
      "trace":    "mobility.csv", "hv_id": 0,
      "out":      "results/",
      "pacing":   {"real_time_factor": 1.0, "endpoint": "udp://127.0.0.1:9000", "max_lag_ms": 100}
    }

The channel model is chosen by ``sim.channel_model``; ``channel.model`` may
repeat it but must agree.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .channel import ChannelModelConfig
from .grid import ConfigError, SimParams
from .hil import PacingConfig
from .mobility import ScenarioSpec, TrackSet, generate_linear_scenario, load_trace_csv

TOP_LEVEL_KEYS = {"sim", "channel", "scenario", "trace", "hv_id", "out", "pacing"}


@dataclass(frozen=True)
class RunConfig:
    params: SimParams
    channel: ChannelModelConfig
    scenario: Optional[ScenarioSpec] = None
    trace_path: Optional[str] = None
    hv_id: int = 0
    out_dir: Optional[str] = None
    pacing: Optional[PacingConfig] = None

    def __post_init__(self):
        if (self.scenario is None) == (self.trace_path is None):
            raise ConfigError("exactly one of 'scenario' and 'trace' must be given")
        if self.scenario is not None and self.hv_id != self.scenario.hv_id:
            raise ConfigError("hv_id must match scenario.hv_id")

    def build_tracks(self) -> TrackSet:
        if self.trace_path is not None:
            return load_trace_csv(self.trace_path)
        return generate_linear_scenario(self.scenario, self.params.sim_duration_ms)

    def to_dict(self) -> dict:
        ch = self.channel.to_dict()
        ch.pop("model")
        out = {"sim": self.params.to_dict(), "channel": ch}
        if self.scenario is not None:
            out["scenario"] = asdict(self.scenario)
        else:
            out["trace"] = self.trace_path
            out["hv_id"] = self.hv_id
        if self.out_dir is not None:
            out["out"] = self.out_dir
        if self.pacing is not None:
            p = asdict(self.pacing)
            if math.isinf(p["real_time_factor"]):
                p["real_time_factor"] = "inf"
            out["pacing"] = p
        return out


def _block(data: dict, key: str) -> dict:
    value = data.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a JSON object")
    return dict(value)


def _build(cls, data: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {what} block: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    params = SimParams.from_dict(_block(data, "sim"))
    ch = _block(data, "channel")
    model = ch.pop("model", params.channel_model)
    if model != params.channel_model:
        raise ConfigError(f"channel.model {model!r} disagrees with sim.channel_model {params.channel_model!r}")
    try:
        channel = ChannelModelConfig.from_dict({**ch, "model": model})
    except TypeError as exc:
        raise ConfigError(f"bad channel block: {exc}") from None
    trace = data.get("trace")
    scenario = None
    hv_id = data.get("hv_id")
    if trace is None:
        scenario = _build(ScenarioSpec, _block(data, "scenario"), "scenario")
        if hv_id is None:
            hv_id = scenario.hv_id
    elif "scenario" in data:
        raise ConfigError("exactly one of 'scenario' and 'trace' must be given")
    pacing = None
    if "pacing" in data:
        pb = _block(data, "pacing")
        if pb.get("real_time_factor") == "inf":
            pb["real_time_factor"] = math.inf
        pacing = _build(PacingConfig, pb, "pacing")
    return RunConfig(params, channel, scenario, trace, 0 if hv_id is None else int(hv_id),
                     data.get("out"), pacing)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


def default_config() -> RunConfig:
    return config_from_dict({})


def write_effective_config(cfg: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / "effective_config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path
