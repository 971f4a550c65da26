"""Structured run configuration with JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import DATA_FILES
from .gravity import GravityConfig
from .network import NetworkConfig
from .train import TrainConfig

GRAPH_MODES = ("adaptive", "dynamic")
GRAPH_INITS = ("static_flow", "gravity")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    paths: dict[str, str] = field(default_factory=dict)
    graph_mode: str = "adaptive"
    graph_init: str = "static_flow"
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gravity: GravityConfig = field(default_factory=GravityConfig)
    zscore: bool = True
    normalize_flows: bool = True
    output: str = "out"

    @classmethod
    def from_data_dir(cls, directory, **kw) -> "RunConfig":
        """Point ``paths`` at every standard file present in ``directory``."""
        d = Path(directory)
        paths = {k: str(d / f) for k, f in DATA_FILES.items() if (d / f).exists()}
        return cls(paths=paths, **kw)

    def validate(self) -> None:
        if self.graph_mode not in GRAPH_MODES:
            raise ConfigError(f"graph_mode must be one of {GRAPH_MODES}, got {self.graph_mode!r}")
        if self.graph_init not in GRAPH_INITS:
            raise ConfigError(f"graph_init must be one of {GRAPH_INITS}, got {self.graph_init!r}")
        unknown = set(self.paths) - set(DATA_FILES)
        if unknown:
            raise ConfigError(f"unknown input keys {sorted(unknown)}; expected {sorted(DATA_FILES)}")
        for key in ("regions", "cases", "movement"):
            if not self.paths.get(key):
                raise ConfigError(f"missing required input {DATA_FILES[key]}")
        if self.graph_mode == "dynamic" and not self.paths.get("flows_dynamic"):
            raise ConfigError("dynamic graph mode needs flows_dynamic.csv "
                              "(provide it or switch to --graph-mode adaptive)")
        if self.graph_mode == "adaptive":
            if self.graph_init == "gravity" and not self.paths.get("distances"):
                raise ConfigError("gravity initialisation needs distances.csv "
                                  "(provide it or use --graph-init static_flow)")
            if self.graph_init == "static_flow" and not self.paths.get("flows_static"):
                raise ConfigError("static-flow initialisation needs flows_static.csv "
                                  "(provide it or use --graph-init gravity)")
        for key, p in self.paths.items():
            if p and not Path(p).exists():
                raise ConfigError(f"input {key}: file not found: {p}")

    def to_dict(self) -> dict:
        return {
            "paths": dict(sorted(self.paths.items())),
            "graph_mode": self.graph_mode,
            "graph_init": self.graph_init,
            "network": self.network.to_dict(),
            "train": self.train.to_dict(),
            "gravity": asdict(self.gravity),
            "zscore": self.zscore,
            "normalize_flows": self.normalize_flows,
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kw = dict(d)
        try:
            if "network" in kw:
                kw["network"] = NetworkConfig(**kw["network"])
            if "train" in kw:
                kw["train"] = TrainConfig(**kw["train"])
            if "gravity" in kw:
                kw["gravity"] = GravityConfig(**kw["gravity"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
