"""Run configuration: every tunable of the pipeline with its default.

Configs are JSON objects with one section per component.  Missing keys take
their defaults; unknown keys are rejected so that typos fail loudly.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .dstf import DstfParams
from .ilp import IlpParams
from .stf import StfParams

ILP_VARIANTS = ("context", "multiclass", "none")
ZETA_MODES = ("class", "scalar")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LocationParams:
    grid_size: int = 21
    smoothing: float = 1.0

    def __post_init__(self):
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if self.smoothing <= 0:
            raise ValueError("location smoothing must be > 0")


@dataclass(frozen=True)
class CrfParams:
    omega: float = 0.3
    lam: float = 1.5
    alpha: float = 1.0
    eps: float = 1e-6
    zeta_mode: str = "class"
    max_sweeps: int = 10

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("lam and alpha must be non-negative")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if self.zeta_mode not in ZETA_MODES:
            raise ValueError("zeta_mode must be one of %s" % (ZETA_MODES,))
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    stf: StfParams = field(default_factory=StfParams)
    dstf: DstfParams = field(default_factory=DstfParams)
    ilp: IlpParams = field(default_factory=IlpParams)
    ilp_variant: str = "context"
    location: LocationParams = field(default_factory=LocationParams)
    crf: CrfParams = field(default_factory=CrfParams)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.ilp_variant not in ILP_VARIANTS:
            raise ValueError("ilp_variant must be one of %s" % (ILP_VARIANTS,))
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_json(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError("%s must be an object" % where)
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError("unknown key(s) in %s: %s" % (where, ", ".join(unknown)))
    kw = {}
    for name, value in doc.items():
        default = getattr(cls(), name) if name in known else None
        if is_dataclass(default):
            kw[name] = _build(type(default), value, "%s.%s" % (where, name))
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError("%s.%s must be a boolean" % (where, name))
            kw[name] = value
        elif isinstance(default, int) and not isinstance(value, bool):
            if not isinstance(value, int):
                raise ConfigError("%s.%s must be an integer" % (where, name))
            kw[name] = value
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("%s.%s must be a number" % (where, name))
            kw[name] = float(value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError("%s: %s" % (where, exc)) from None


def config_from_dict(doc):
    return _build(RunConfig, doc, "config")


def load_config(path=None, overrides=None):
    """Defaults, then the JSON file at ``path``, then ``overrides`` (a nested dict)."""
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config %s is not valid JSON: %s" % (path, exc)) from None
    if overrides:
        doc = merge(doc, overrides)
    return config_from_dict(doc)


def merge(base, extra):
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def replace(cfg, **sections):
    """Copy of ``cfg`` with nested overrides, e.g. ``replace(cfg, crf={"omega": 0.5})``."""
    return config_from_dict(merge(cfg.to_json(), sections))


def env_workers(default=1):
    raw = os.environ.get("CHEAPSEG_WORKERS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError("CHEAPSEG_WORKERS must be an integer, got %r" % raw) from None
