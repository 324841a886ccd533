"""Flat-sectioned key = value configuration files.

Sections [model], [firing], [jump], [kernel] describe the ModelSpec; [grid],
[run], [initial], [stationary] and [verify] hold run parameters. Unknown
sections or keys are errors. A [model] preset key starts from a built-in
preset; explicit keys override it.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .grids import GridSpec
from .model import (FiringRate, InteractionKernel, JumpMap, ModelError, ModelSpec, PRESETS,
                    check_assumptions)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridParams:
    n_a: int = 400
    n_m: int = 100
    a_max: float | None = None  # default delta_abs + 10 / sigma
    m_min: float = 0.0
    m_max: float | None = None  # default: the model's memory bound
    spacing: str = "uniform"


@dataclass(frozen=True)
class RunParams:
    t_end: float = 20.0
    dt: float | None = None
    n_particles: int = 10000
    record_stride: int = 1
    raster_neurons: int = 0
    snapshot_times: tuple = ()
    frozen_x: float | None = None


@dataclass(frozen=True)
class InitialParams:
    a_mean: float = 1.0
    a_std: float = 0.5
    m_median: float = 0.5
    m_sigma: float = 0.5


@dataclass(frozen=True)
class StationaryParams:
    tol: float = 1e-10
    n_cells: int = 400
    max_outer: int = 200
    omega: float = 0.5
    x_tilde: float = 0.0  # frozen input for verify-std-formula


@dataclass(frozen=True)
class VerifyParams:
    R: float = 2.0
    probes: int = 25
    x_tilde: float = 0.0
    harris_t_end: float = 150.0
    transient: float = 0.2
    epsilons: tuple = (0.0, 0.05)
    sweep_t_end: float = 150.0


@dataclass(frozen=True)
class RunConfig:
    spec: ModelSpec
    grid: GridParams = field(default_factory=GridParams)
    run: RunParams = field(default_factory=RunParams)
    initial: InitialParams = field(default_factory=InitialParams)
    stationary: StationaryParams = field(default_factory=StationaryParams)
    verify: VerifyParams = field(default_factory=VerifyParams)
    notes: tuple = ()  # assumption report lines

    def grid_spec(self) -> GridSpec:
        g, fr = self.grid, self.spec.firing
        a_max = g.a_max if g.a_max is not None else fr.delta_abs + 10.0 / fr.sigma
        m_max = g.m_max if g.m_max is not None else self.spec.m_max
        return GridSpec(a_max, g.n_a, g.m_min, m_max, g.n_m, g.spacing)


MODEL_KEYS = {"preset": "preset", "lambda": "lam", "epsilon": "epsilon",
              "tail_tol": "tail_tol", "m_max": "m_max"}
SPEC_SECTIONS = {"firing": FiringRate, "jump": JumpMap, "kernel": InteractionKernel}
RUN_SECTIONS = {"grid": GridParams, "run": RunParams, "initial": InitialParams,
                "stationary": StationaryParams, "verify": VerifyParams}


def _coerce(text: str, tp, path: str):
    text = text.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        if text.lower() in ("", "none"):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is tuple:
            return tuple(float(v) for v in text.split(",") if v.strip())
        if tp is bool:
            return {"true": True, "false": False}[text.lower()]
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except (ValueError, KeyError):
        raise ConfigError(f"{path}: cannot parse {text!r} as {getattr(tp, '__name__', tp)}") from None


def _read_section(cp, name, cls, path_prefix=""):
    hints = typing.get_type_hints(cls)
    out = {}
    if not cp.has_section(name):
        return out
    for key, raw in cp.items(name):
        if key not in hints:
            raise ConfigError(f"{path_prefix}[{name}].{key}: unknown key")
        out[key] = _coerce(raw, hints[key], f"{path_prefix}[{name}].{key}")
    return out


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    allowed = {"model", *SPEC_SECTIONS, *RUN_SECTIONS}
    for sec in cp.sections():
        if sec not in allowed:
            raise ConfigError(f"[{sec}]: unknown section")
    md = {}
    preset = None
    if cp.has_section("model"):
        for key, raw in cp.items("model"):
            if key not in MODEL_KEYS:
                raise ConfigError(f"[model].{key}: unknown key")
            if key == "preset":
                preset = raw.strip()
                if preset not in PRESETS:
                    raise ConfigError(f"[model].preset: unknown preset {preset!r}")
                continue
            tp = float | None if key == "m_max" else float
            md[MODEL_KEYS[key]] = _coerce(raw, tp, f"[model].{key}")
    parts = {name: _read_section(cp, name, cls) for name, cls in SPEC_SECTIONS.items()}
    try:
        if preset is not None:
            overrides = dict(md)
            for name, vals in parts.items():
                for k, v in vals.items():
                    overrides[f"{name}__{k}"] = v
            spec = PRESETS[preset](**overrides)
        else:
            if "lam" not in md:
                raise ConfigError("[model].lambda: missing required field")
            for name in SPEC_SECTIONS:
                if "kind" not in parts[name]:
                    raise ConfigError(f"[{name}].kind: missing required field")
            spec = ModelSpec(firing=FiringRate(**parts["firing"]), jump=JumpMap(**parts["jump"]),
                             kernel=InteractionKernel(**parts["kernel"]), **md)
    except ModelError as exc:
        raise ConfigError(str(exc)) from None
    notes = []
    for name, ok, note in check_assumptions(spec):
        if not ok and not name.startswith("A4"):
            raise ConfigError(f"assumption violated: {name} ({note})")
        notes.append(f"{name}: {'satisfied' if ok else 'not satisfied'}; {note}")
    run = {name: cls(**_read_section(cp, name, cls)) for name, cls in RUN_SECTIONS.items()}
    return RunConfig(spec=spec, notes=tuple(notes), **run)


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: config file not found")
    return parse_config_text(p.read_text(), str(p))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def config_dict(cfg: RunConfig) -> dict:
    """Nested plain dict with every field (no preset indirection)."""
    s = cfg.spec
    out = {"model": {"lambda": s.lam, "epsilon": s.epsilon, "tail_tol": s.tail_tol,
                     "m_max": s.m_max}}
    for name in SPEC_SECTIONS:
        out[name] = dataclasses.asdict(getattr(s, name))
    for name in RUN_SECTIONS:
        out[name] = dataclasses.asdict(getattr(cfg, name))
    return out


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for sec, vals in config_dict(cfg).items():
        lines.append(f"[{sec}]")
        for k, v in vals.items():
            lines.append(f"{k} = {_fmt(v)}")
        lines.append("")
    return "\n".join(lines)


def _canonical(obj):
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, float):
        return repr(obj) if not math.isfinite(obj) else float.hex(obj)
    return obj


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form (independent of key order in the file)."""
    blob = json.dumps(_canonical(config_dict(cfg)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
