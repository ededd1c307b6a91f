"""JSON configuration with one section per module.

Every default used by the library appears here so a run can be fully
described by a single file.  Unknown sections or keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .acaf import ACAFConfig
from .cgg import CGGConfig
from .errors import ConfigError, ParameterError

ESTIMATORS = ("cgg", "tyler", "regscm")
METHODS = ("cgg-mle", "cfpl", "pta")


@dataclass
class LinkConfig:
    gtol: float = 1e-8
    max_iter: int = 500
    mm_tol: float = 1e-10
    mm_max_iter: int = 1000


@dataclass
class PipelineConfig:
    window: int = 11
    estimator: str = "cgg"
    method: str = "cfpl"
    # extra (estimator, method) pairs computed on the same masks
    combos: list = field(default_factory=list)
    seed: int = 0
    threads: int = 1
    tile_rows: int = 8
    stride: int = 1
    write_masks: bool = False

    def pairs(self):
        out = [(self.estimator, self.method)]
        for c in self.combos:
            pair = tuple(c)
            if pair not in out:
                out.append(pair)
        return out

    def validate(self):
        bad = []
        if self.window < 1 or self.window % 2 == 0:
            bad.append("window must be a positive odd integer")
        for est, meth in self.pairs():
            if est not in ESTIMATORS:
                bad.append(f"unknown estimator {est!r}")
            if meth not in METHODS:
                bad.append(f"unknown method {meth!r}")
        if self.threads < 1:
            bad.append("threads must be >= 1")
        if self.tile_rows < 1 or self.stride < 1:
            bad.append("tile_rows and stride must be >= 1")
        if bad:
            raise ConfigError("; ".join(bad))
        return self


@dataclass
class SimulationConfig:
    rows: int = 100
    cols: int = 100
    n_acquisitions: int = 20
    dt: float = 1.0
    amplitude: float = 3.141592653589793
    seed: int = 0
    # class id -> {tau, p_const, xi, sigma2}; empty means the built-in classes
    classes: dict = field(default_factory=dict)


@dataclass
class PowerConfig:
    n_points: int = 8
    p_range: tuple = (0.1, 0.3)
    tau_range: tuple = (1.0, 20.0)
    n_trials: int = 2000
    n_acquisitions: int = 20
    reference: str = "high"


@dataclass
class SGridConfig:
    n_list: tuple = (5, 10, 20, 30)
    xi_list: tuple = (0.0, 0.3, 0.6)
    samples_per_cell: int = 10000
    repeats: int = 1


SECTIONS = {
    "acaf": ACAFConfig,
    "cgg": CGGConfig,
    "phase_linking": LinkConfig,
    "pipeline": PipelineConfig,
    "simulation": SimulationConfig,
    "power": PowerConfig,
    "sgrid": SGridConfig,
}


@dataclass
class Config:
    acaf: ACAFConfig = field(default_factory=ACAFConfig)
    cgg: CGGConfig = field(default_factory=CGGConfig)
    phase_linking: LinkConfig = field(default_factory=LinkConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    power: PowerConfig = field(default_factory=PowerConfig)
    sgrid: SGridConfig = field(default_factory=SGridConfig)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, section, **changes):
        """Copy with ``changes`` applied to one section (None values skipped)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if not changes:
            return self
        sec = getattr(self, section)
        return dataclasses.replace(self, **{section: _build(type(sec), {**dataclasses.asdict(sec), **changes}, section)})


def _build(cls, values, name):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {unknown}")
    kw = {}
    for k, v in values.items():
        default = known[k].default
        if isinstance(default, tuple) and isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ParameterError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown configuration sections: {unknown}")
    parts = {name: _build(cls, data.get(name, {}), name) for name, cls in SECTIONS.items()}
    cfg = Config(**parts)
    cfg.pipeline.validate()
    return cfg


def load_config(path=None):
    if path is None:
        return Config()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
