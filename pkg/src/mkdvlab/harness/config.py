"""Versioned JSON experiment configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

SCHEMA_VERSION = 1
SUBCOMMANDS = ("sample", "greens", "flow", "invariance", "kms", "kdv", "report")


class ConfigError(ValueError):
    """Validation failure; ``errors`` maps dotted field paths to messages."""

    def __init__(self, errors: dict[str, str]):
        self.errors = errors
        super().__init__("; ".join(f"{k}: {v}" for k, v in errors.items()))


@dataclass
class OscillatorConfig:
    mu: float = 0.0
    y_max: float = 6.0
    m: int = 1200


@dataclass
class GridConfig:
    half_period: float = 4.0
    n_sites: int = 128
    kind: str = "periodic"  # or "infinite"


@dataclass
class FlowConfig:
    kind: str = "hk"  # or "mkdv"
    kappa: float = 8.0
    dt: float = 1e-3
    time: float = 0.1
    probe_kappa: float = 16.0
    nonlinear_scale: float = 1.0
    gplus_scale: float = 1.0


@dataclass
class ExperimentConfig:
    subcommand: str
    oscillator: OscillatorConfig = field(default_factory=OscillatorConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    ensemble_size: int = 1000
    seed: int = 0
    test_functions: str | None = None  # path; None selects the bundled library
    input_path: str | None = None
    output_dir: str = "runs"
    threads: int = 1
    tolerances: dict = field(default_factory=dict)
    controls: bool = True
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, seed=None, output_dir=None, threads=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        if threads is not None:
            cfg = replace(cfg, threads=int(threads))
        validate(cfg)
        return cfg

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _build(cls, data: dict, prefix: str, errors: dict):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        errors[prefix] = "expected an object"
        return cls()
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            errors[f"{prefix}.{key}"] = "unknown field"
    return cls(**{k: v for k, v in data.items() if k in known})


def from_dict(data: dict) -> ExperimentConfig:
    errors: dict[str, str] = {}
    if not isinstance(data, dict):
        raise ConfigError({"": "configuration must be a JSON object"})
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        errors["schema_version"] = f"unsupported version {version}, expected {SCHEMA_VERSION}"
    if "subcommand" not in data:
        errors["subcommand"] = "required"
    nested = {"oscillator": OscillatorConfig, "grid": GridConfig, "flow": FlowConfig}
    known = {f.name for f in fields(ExperimentConfig)}
    top = {}
    for key, value in data.items():
        if key in nested:
            top[key] = _build(nested[key], value, key, errors)
        elif key in known:
            top[key] = value
        else:
            errors[key] = "unknown field"
    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(**top)
    validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError({"": f"invalid JSON: {exc}"}) from exc
    return from_dict(data)


def validate(cfg: ExperimentConfig) -> None:
    e: dict[str, str] = {}
    if cfg.subcommand not in SUBCOMMANDS:
        e["subcommand"] = f"must be one of {', '.join(SUBCOMMANDS)}"
    if not isinstance(cfg.ensemble_size, int) or cfg.ensemble_size < 1:
        e["ensemble_size"] = "must be a positive integer"
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        e["seed"] = "must be a nonnegative integer"
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        e["threads"] = "must be a positive integer"
    if not cfg.oscillator.y_max > 0:
        e["oscillator.y_max"] = "must be positive"
    if not isinstance(cfg.oscillator.m, int) or cfg.oscillator.m < 16:
        e["oscillator.m"] = "must be an integer >= 16"
    if not cfg.grid.half_period > 0:
        e["grid.half_period"] = "must be positive"
    n = cfg.grid.n_sites
    if not isinstance(n, int) or n < 2 or n % 2:
        e["grid.n_sites"] = "must be an even integer >= 2"
    elif cfg.grid.kind == "periodic" and n & (n - 1):
        e["grid.n_sites"] = "must be a power of two for periodic sampling"
    if cfg.grid.kind not in ("periodic", "infinite"):
        e["grid.kind"] = "must be 'periodic' or 'infinite'"
    if cfg.flow.kind not in ("hk", "mkdv"):
        e["flow.kind"] = "must be 'hk' or 'mkdv'"
    if not abs(cfg.flow.kappa) >= 1:
        e["flow.kappa"] = "must satisfy |kappa| >= 1"
    if not cfg.flow.probe_kappa >= 1:
        e["flow.probe_kappa"] = "must be >= 1"
    if not cfg.flow.dt > 0:
        e["flow.dt"] = "must be positive"
    if not cfg.flow.time >= 0:
        e["flow.time"] = "must be nonnegative"
    if cfg.subcommand == "report" and cfg.input_path is None:
        e["input_path"] = "report needs the directory of a finished run"
    if e:
        raise ConfigError(e)
