"""Run configuration: JSON file, AFFECTLOOP_ environment overrides, CLI flags.

Precedence is flags over environment over file over defaults; everything is
validated against the pipeline preconditions at load time.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .signal_core import BANDS, N_CHANNELS

N_FEATURES = 3 * N_CHANNELS
ENV_PREFIX = "AFFECTLOOP_"


class ConfigError(ValueError):
    """Invalid or unknown configuration input."""


@dataclass(frozen=True)
class RunConfig:
    sample_rate: float = 250.0
    window_s: float = 2.0
    overlap_s: float = 0.5
    bands: tuple[tuple[str, float, float], ...] = BANDS
    k_features: int = 32
    C: float = 1.0
    n_folds: int = 5
    port_http: int = 8000
    port_ingest: int = 9000
    host: str = "127.0.0.1"
    udp_sink: str | None = None  # "host:port"
    out_dir: str = "out"
    log_path: str | None = None
    montage_path: str | None = None
    static_dir: str | None = "frontend/dist"
    seed: int = 0

    def validate(self) -> None:
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not self.window_s > self.overlap_s >= 0.0:
            raise ConfigError("need window_s > overlap_s >= 0")
        if len(self.bands) != 3:
            raise ConfigError("exactly three bands are required")
        for name, lo, hi in self.bands:
            if not (0.0 < lo < hi <= self.sample_rate / 2.0):
                raise ConfigError(
                    f"band {name}: [{lo}, {hi}) invalid at {self.sample_rate} Hz")
        if not 1 <= self.k_features <= N_FEATURES:
            raise ConfigError(f"k_features must be in 1..{N_FEATURES}")
        if self.C <= 0:
            raise ConfigError("C must be positive")
        if self.n_folds < 2:
            raise ConfigError("n_folds must be at least 2")
        for name in ("port_http", "port_ingest"):
            port = getattr(self, name)
            if not 0 <= port <= 65535:
                raise ConfigError(f"{name} must be in 0..65535")
        if self.udp_sink is not None:
            parse_udp_sink(self.udp_sink)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["bands"] = [list(b) for b in self.bands]
        return doc


def parse_udp_sink(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host:
        raise ConfigError("udp_sink must look like host:port")
    try:
        port_num = int(port)
    except ValueError as exc:
        raise ConfigError(f"udp_sink port {port!r} is not an integer") from exc
    if not 0 < port_num <= 65535:
        raise ConfigError("udp_sink port out of range")
    return host, port_num


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_OPTIONAL_STR = ("udp_sink", "log_path", "montage_path", "static_dir")


def _coerce(name: str, raw, source: str):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r} (from {source})")
    if name == "bands":
        if isinstance(raw, str):
            raw = json.loads(raw)
        try:
            return tuple((str(b[0]), float(b[1]), float(b[2])) for b in raw)
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"bands (from {source}) must be "
                              "[name, low, high] triples") from exc
    if name in _OPTIONAL_STR:
        if raw is None or raw == "":
            return None
        return str(raw)
    if name in ("host", "out_dir"):
        return str(raw)
    if name in ("k_features", "n_folds", "port_http", "port_ingest", "seed"):
        try:
            return int(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name} (from {source}) must be an integer") from exc
    try:
        return float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} (from {source}) must be a number") from exc


def load_config(path: str | None = None, env: dict | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Merged config; CLI overrides beat environment beats file beats defaults."""
    values: dict = {}

    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, raw in doc.items():
            values[key] = _coerce(key, raw, f"file {path}")

    env = os.environ if env is None else env
    for key in _FIELDS:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            values[key] = _coerce(key, env[env_key], f"env {env_key}")

    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        values[key] = _coerce(key, raw, "flag")

    config = RunConfig(**values)
    config.validate()
    return config
