"""Experiment configuration: an INI file with ``[base]``, ``[cocycle]`` and ``[run]``.

Matrices are written row by row, rows separated by ``;`` and entries by
whitespace or ``,``.  Expression cocycles use the same layout with entries
separated by ``,``.  Any key may be overridden from the environment as
``COCYCLELAB_<SECTION>__<KEY>``, e.g. ``COCYCLELAB_RUN__N=1000``.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .errors import ConfigError

ENV_PREFIX = "COCYCLELAB_"
COCYCLE_KINDS = ("constant", "conformal", "expression", "example46", "example46_cover")


def _parse_matrix(text: str, numeric: bool = True) -> tuple:
    rows = [r.strip() for r in text.strip().split(";") if r.strip()]
    if not rows:
        raise ConfigError("empty matrix")
    if numeric:
        out = tuple(tuple(float(v) for v in r.replace(",", " ").split()) for r in rows)
    else:
        out = tuple(tuple(v.strip() for v in r.split(",")) for r in rows)
    if any(len(r) != len(out) for r in out):
        raise ConfigError(f"matrix {text!r} is not square")
    return out


def _format_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


def _format_matrix(m, numeric: bool = True) -> str:
    if numeric:
        return "; ".join(" ".join(_format_number(v) for v in row) for row in m)
    return "; ".join(", ".join(row) for row in m)


@dataclass(frozen=True)
class BaseConfig:
    matrix: tuple = ()
    lattice: tuple = ()


@dataclass(frozen=True)
class CocycleConfig:
    kind: str = ""
    epsilon: float = 0.1
    cover: int = 4
    matrix: tuple = ()
    entries: tuple = ()
    scale: str = "1"
    angle: str = "0"
    metric: tuple = ()
    beta: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    seeds: int = 8
    n: int = 100_000
    grid: int = 16
    n_max: int = 256
    max_period: int = 2
    tol: float = 1e-8
    xi: float = 0.0
    eps: float = 0.05
    rate: float = 0.3
    triples: int = 100
    max_dist: float = 0.01
    window: int = 32
    method: str = "ball"
    k_cap: float = 100.0
    ns: tuple = tuple(2**k for k in range(4, 15))


@dataclass(frozen=True)
class ExperimentConfig:
    base: BaseConfig = field(default_factory=BaseConfig)
    cocycle: CocycleConfig = field(default_factory=CocycleConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_dict(self) -> dict:
        """Section -> key -> string, exactly as :func:`serialize` writes it."""
        out = {}
        for sec in ("base", "cocycle", "run"):
            obj = getattr(self, sec)
            out[sec] = {f.name: _format_value(sec, f.name, getattr(obj, f.name)) for f in fields(obj)
                        if not _is_empty(getattr(obj, f.name))}
        return out


_SECTIONS = {"base": BaseConfig, "cocycle": CocycleConfig, "run": RunConfig}
_NON_NUMERIC_MATRIX = {("cocycle", "entries")}
_INT_TUPLES = {("base", "lattice"), ("run", "ns")}


def _is_empty(v) -> bool:
    return isinstance(v, tuple) and len(v) == 0


def _format_value(section: str, key: str, value) -> str:
    if (section, key) in _INT_TUPLES:
        return " ".join(str(v) for v in value)
    if isinstance(value, tuple):
        return _format_matrix(value, numeric=(section, key) not in _NON_NUMERIC_MATRIX)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(section: str, key: str, text: str, default):
    try:
        if (section, key) in _INT_TUPLES:
            return tuple(int(v) for v in text.replace(",", " ").split())
        if isinstance(default, tuple):
            return _parse_matrix(text, numeric=(section, key) not in _NON_NUMERIC_MATRIX)
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r} ({exc})") from None


def from_mapping(data: Mapping[str, Mapping[str, str]]) -> ExperimentConfig:
    """Build a config from section -> key -> string, rejecting unknown names."""
    parts = {}
    for sec, cls in _SECTIONS.items():
        raw = dict(data.get(sec, {}))
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(unknown)}")
        defaults = cls()
        kwargs = {k: _convert(sec, k, v, getattr(defaults, k)) for k, v in raw.items()}
        parts[sec] = cls(**kwargs)
    extra = sorted(set(data) - set(_SECTIONS) - {"DEFAULT"})
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")
    cfg = ExperimentConfig(**parts)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if not cfg.base.matrix:
        raise ConfigError("missing key [base] matrix")
    if any(not float(v).is_integer() for row in cfg.base.matrix for v in row):
        raise ConfigError("[base] matrix must have integer entries")
    if cfg.base.lattice and len(cfg.base.lattice) != len(cfg.base.matrix):
        raise ConfigError("[base] lattice must give one period per coordinate")
    if not cfg.cocycle.kind:
        raise ConfigError("missing key [cocycle] kind")
    if cfg.cocycle.kind not in COCYCLE_KINDS:
        raise ConfigError(f"[cocycle] kind must be one of {', '.join(COCYCLE_KINDS)}")
    if cfg.cocycle.kind == "constant" and not cfg.cocycle.matrix:
        raise ConfigError("missing key [cocycle] matrix")
    if cfg.cocycle.kind == "expression" and not cfg.cocycle.entries:
        raise ConfigError("missing key [cocycle] entries")


def parse(text: str, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Parse INI text, then apply environment overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    data = {sec: dict(cp[sec]) for sec in cp.sections()}
    env = os.environ if environ is None else environ
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name[len(ENV_PREFIX):]:
            continue
        sec, key = name[len(ENV_PREFIX):].split("__", 1)
        data.setdefault(sec.lower(), {})[key.lower()] = value
    return from_mapping(data)


def load(path, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse(text, environ)


def serialize(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec, values in cfg.to_dict().items():
        cp[sec] = values
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def with_run(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, **changes))


def base_matrix(cfg: ExperimentConfig) -> list[list[int]]:
    return [[int(v) for v in row] for row in cfg.base.matrix]


def as_array(m: tuple) -> np.ndarray:
    return np.array(m, dtype=float)
