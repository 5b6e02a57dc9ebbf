"""Run configuration: a versioned YAML tree with units in every key name.

Example::

    schema_version: 1
    seed: 1
    output_dir: out
    emitter: {t1_ns: 1.83, t2_over_t1: 2.0, inhom_fwhm_ghz: 4.0}
    drive: {saturation: 0.1, laser_detuning_ghz: 0.0, saturation_sweep: null}
    jump: {t_sd_us: 50.0}
    simulation: {duration_s: 10.0, count_rate_hz: 100000.0, split: 0.5, non_resonant: false}
    binning: {tau_min_ns: 1.0, tau_max_s: 10.0, bins_per_decade: 10}

``jump.t_sd_us`` is the delay at which the bunching excess has halved.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import yaml

from .correlator import LogBinSpec
from .inhomogeneous import InhomDistribution
from .montecarlo import JumpProcessParams
from .tls import DriveParams, EmitterParams

__all__ = ["ConfigError", "RunConfig", "load_config", "dump_config", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class EmitterSection:
    t1_ns: float = 1.83
    t2_over_t1: float = 2.0
    inhom_fwhm_ghz: float = 4.0


@dataclass
class DriveSection:
    saturation: float = 0.1
    laser_detuning_ghz: float = 0.0
    saturation_sweep: Optional[list] = None


@dataclass
class JumpSection:
    t_sd_us: float = 50.0


@dataclass
class SimulationSection:
    duration_s: float = 10.0
    count_rate_hz: float = 1e5
    split: float = 0.5
    non_resonant: bool = False


@dataclass
class BinningSection:
    tau_min_ns: float = 1.0
    tau_max_s: float = 10.0
    bins_per_decade: int = 10


_SECTIONS = {
    "emitter": EmitterSection,
    "drive": DriveSection,
    "jump": JumpSection,
    "simulation": SimulationSection,
    "binning": BinningSection,
}


@dataclass
class RunConfig:
    seed: int = 1
    output_dir: str = "out"
    emitter: EmitterSection = field(default_factory=EmitterSection)
    drive: DriveSection = field(default_factory=DriveSection)
    jump: JumpSection = field(default_factory=JumpSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    binning: BinningSection = field(default_factory=BinningSection)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    # --- conversion to domain objects -------------------------------------

    def emitter_params(self) -> EmitterParams:
        e = self.emitter
        return EmitterParams.from_ratio(e.t1_ns * 1e-9, e.t2_over_t1, inhom_fwhm=e.inhom_fwhm_ghz * 1e9)

    def distribution(self) -> InhomDistribution:
        return InhomDistribution.from_emitter(self.emitter_params())

    def drive_params(self, saturation: Optional[float] = None) -> DriveParams:
        em = self.emitter_params()
        s = self.drive.saturation if saturation is None else saturation
        return DriveParams.from_saturation(s, em, laser_freq=2 * math.pi * self.drive.laser_detuning_ghz * 1e9)

    def jump_params(self) -> JumpProcessParams:
        return JumpProcessParams.from_half_decay(self.jump.t_sd_us * 1e-6, self.distribution(), seed=self.seed)

    def bin_spec(self) -> LogBinSpec:
        b = self.binning
        return LogBinSpec(b.tau_min_ns * 1e-9, b.tau_max_s, b.bins_per_decade)

    # --- validation and (de)serialization ---------------------------------

    def validate(self) -> None:
        def need(cond, where, msg):
            if not cond:
                raise ConfigError(f"{where}: {msg}")

        need(self.schema_version == SCHEMA_VERSION, "schema_version", f"expected {SCHEMA_VERSION}, got {self.schema_version!r}")
        need(isinstance(self.seed, int) and not isinstance(self.seed, bool) and 0 <= self.seed < 2 ** 64,
             "seed", "must be an integer in [0, 2**64)")
        need(isinstance(self.output_dir, str) and self.output_dir, "output_dir", "must be a non-empty path")
        for section, cls in _SECTIONS.items():
            obj = getattr(self, section)
            need(isinstance(obj, cls), section, "missing or malformed section")
            for f in fields(obj):
                v = getattr(obj, f.name)
                where = f"{section}.{f.name}"
                if f.name == "non_resonant":
                    need(isinstance(v, bool), where, "must be true or false")
                elif f.name == "saturation_sweep":
                    need(v is None or (isinstance(v, list) and len(v) > 0 and all(_num(x) and x >= 0 for x in v)),
                         where, "must be null or a non-empty list of numbers >= 0")
                elif f.name == "bins_per_decade":
                    need(isinstance(v, int) and not isinstance(v, bool) and v >= 1, where, "must be an integer >= 1")
                else:
                    need(_num(v), where, "must be a finite number")
        e, d, s, b = self.emitter, self.drive, self.simulation, self.binning
        need(e.t1_ns > 0, "emitter.t1_ns", "must be > 0")
        need(0 < e.t2_over_t1 <= 2, "emitter.t2_over_t1", "must lie in (0, 2]")
        need(e.inhom_fwhm_ghz >= 0, "emitter.inhom_fwhm_ghz", "must be >= 0")
        need(d.saturation >= 0, "drive.saturation", "must be >= 0")
        need(self.jump.t_sd_us > 0, "jump.t_sd_us", "must be > 0")
        need(s.duration_s > 0, "simulation.duration_s", "must be > 0")
        need(s.count_rate_hz > 0, "simulation.count_rate_hz", "must be > 0")
        need(0 < s.split < 1, "simulation.split", "must lie strictly between 0 and 1")
        need(0 < b.tau_min_ns * 1e-9 < b.tau_max_s, "binning", "need 0 < tau_min_ns * 1e-9 < tau_max_s")

    def to_dict(self) -> dict:
        d = asdict(self)
        order = ["schema_version", "seed", "output_dir", *_SECTIONS]
        return {k: d[k] for k in order}

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be a mapping")
        known = {"schema_version", "seed", "output_dir", *_SECTIONS}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"{sorted(extra)[0]}: unknown key")
        kw = {k: d[k] for k in ("schema_version", "seed", "output_dir") if k in d}
        for name, sec_cls in _SECTIONS.items():
            raw = d.get(name) or {}
            if not isinstance(raw, dict):
                raise ConfigError(f"{name}: must be a mapping")
            names = {f.name for f in fields(sec_cls)}
            bad = set(raw) - names
            if bad:
                raise ConfigError(f"{name}.{sorted(bad)[0]}: unknown key")
            vals = {}
            for f in fields(sec_cls):
                if f.name in raw:
                    v = raw[f.name]
                    # YAML reads 1e5 as a string; accept numeric strings for float fields
                    if isinstance(v, str) and f.type in ("float", float):
                        try:
                            v = float(v)
                        except ValueError:
                            raise ConfigError(f"{name}.{f.name}: must be a number, got {v!r}") from None
                    elif isinstance(v, int) and not isinstance(v, bool) and f.type in ("float", float):
                        v = float(v)
                    vals[f.name] = v
            kw[name] = sec_cls(**vals)
        return cls(**kw)


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: not valid YAML ({exc})") from None
    return RunConfig.from_dict(data or {})


def dump_config(cfg: RunConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=False)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
