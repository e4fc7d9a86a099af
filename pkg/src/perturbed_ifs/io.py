"""Deterministic CSV/JSON writers and the sectioned run-configuration format."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunConfig",
    "load_config",
    "config_hash",
    "format_value",
    "write_csv",
    "read_csv",
    "write_json",
]


class ConfigError(ValueError):
    pass


def format_value(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[Any]], provenance: dict | None = None) -> Path:
    """Header plus one line per record, 17 significant digits, ``\\n`` line ends.

    ``provenance`` adds a leading ``# key=value ...`` comment line.
    """
    path = Path(path)
    lines = []
    if provenance:
        lines.append("# " + " ".join(f"{k}={provenance[k]}" for k in sorted(provenance)))
    lines.append(",".join(columns))
    for row in rows:
        row = list(row)
        if len(row) != len(columns):
            raise ValueError(f"record has {len(row)} fields, schema has {len(columns)}")
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        body = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(body)
    header = next(reader)
    return header, [row for row in reader]


def _jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = dataclasses.asdict(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")
    return path


def config_hash(payload: dict) -> str:
    blob = json.dumps(_jsonable(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    n: int = 20
    horizon: int = 50
    replicas: int = 10000
    particles: int = 100000
    kappa_frac: float = 0.5
    zeta: float = 0.5
    a_tilde: float = 0.9
    burn_in: int = 1000
    n_samples: int = 100000
    x0: str = "10"
    y0: str = "0"
    n_max: int = 15
    mode: str = "pair"
    init: str = "stationary"
    inner_replicas: int = 256
    outer: int = 256
    n_pairs: int = 10
    pair_distance: float = 0.1
    pair_lo: float = -2.0
    pair_hi: float = 3.0
    q_steps: int = 5
    t_grid: int = 2048
    x_grid: int = 201
    bins: int = 256
    cap: int = 4096
    bl_method: str = "auto"
    cloud_a: str = ""
    cloud_b: str = ""

    def point(self, name: str) -> np.ndarray:
        raw = getattr(self, name)
        try:
            return np.array([float(v) for v in str(raw).split(",")])
        except ValueError as exc:
            raise ConfigError(f"{name} must be a comma-separated point, got {raw!r}") from exc


MODEL_DEFAULTS: dict[str, Any] = {
    "family": "cc-affine",
    "c0": 0.5,
    "c1": 0.2,
    "kappa": 0.5,
    "T": 1.0,
    "epsilon": 0.05,
    "epsilon_star": None,
    "window": (-10.0, 10.0),
    "t_nodes": 1024,
    "cell_width": 1e-3,
}
_CC_KEYS = set(MODEL_DEFAULTS)
_EXPR_KEYS = {"family", "S", "lambda", "p", "T", "epsilon", "epsilon_star", "omega_coeff", "xbar", "window", "t_nodes", "cell_width"}


@dataclass
class RunConfig:
    model: dict[str, Any] = field(default_factory=lambda: dict(MODEL_DEFAULTS))
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    seed: int = 0
    out: str = "out"
    threads: int = 1

    def hashed_payload(self) -> dict:
        # thread count and output location never change results
        return {"model": self.model, "experiment": dataclasses.asdict(self.experiment), "seed": self.seed}

    @property
    def hash(self) -> str:
        return config_hash(self.hashed_payload())


def _coerce(value: str, like: Any, key: str):
    try:
        if isinstance(like, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value.strip()


def _parse_model(section: dict[str, str]) -> dict[str, Any]:
    family = section.get("family", "cc-affine").strip()
    out: dict[str, Any] = {"family": family}
    if family == "cc-affine":
        allowed = _CC_KEYS
        out.update({k: v for k, v in MODEL_DEFAULTS.items() if k != "family"})
    elif family == "expression":
        allowed = _EXPR_KEYS
        out.update({"window": (-10.0, 10.0)})
    else:
        raise ConfigError(f"unknown model family {family!r}")
    for key, raw in section.items():
        if key == "family":
            continue
        if family == "expression" and key.startswith("param_"):
            out[key[len("param_"):]] = _coerce(raw, 0.0, key)
            continue
        if key not in allowed:
            raise ConfigError(f"unknown [model] key {key!r}")
        if key == "window":
            parts = [p for p in raw.split(",") if p.strip()]
            if len(parts) != 2:
                raise ConfigError("window needs two comma-separated numbers")
            out[key] = tuple(_coerce(p, 0.0, key) for p in parts)
        elif key in ("S", "lambda", "p"):
            out[key] = raw.strip()
        elif key == "t_nodes":
            out[key] = _coerce(raw, 0, key)
        elif key == "epsilon_star" and not raw.strip():
            out[key] = None
        else:
            out[key] = _coerce(raw, 0.0, key)
    return out


def load_config(path: str | Path | None) -> RunConfig:
    """Read a ``[model]`` / ``[experiment]`` / ``[run]`` INI file; every key has a default."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown_sections = set(parser.sections()) - {"model", "experiment", "run"}
    if unknown_sections:
        raise ConfigError(f"unknown sections {sorted(unknown_sections)}")
    if parser.has_section("model"):
        cfg.model = _parse_model(dict(parser.items("model")))
    if parser.has_section("experiment"):
        exp = cfg.experiment
        names = {f.name for f in dataclasses.fields(exp)}
        for key, raw in parser.items("experiment"):
            if key not in names:
                raise ConfigError(f"unknown [experiment] key {key!r}")
            setattr(exp, key, _coerce(raw, getattr(exp, key), key))
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in ("seed", "out", "threads"):
                raise ConfigError(f"unknown [run] key {key!r}")
            setattr(cfg, key, _coerce(raw, getattr(cfg, key), key))
    return cfg
