"""Scenario files: a YAML document per run, validated fail-closed.

Every section and key is optional except ``name`` and ``kind``; unknown keys
are errors. Lengths are metres, times seconds, angles degrees unless the key
says ``_rad``. See ``docs/scenario-schema.md`` for the field reference.
"""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .seeding import MAX_SEED

Kind = Literal["three_peak", "envelope_scan", "bfe_sweep", "lock_run", "chsh"]
StateName = Literal["H", "V", "plus", "minus", "R", "L"]


class ConfigError(ValueError):
    """Scenario failed validation; ``errors`` holds ``(field_path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]], source: str = "<scenario>"):
        self.errors = errors
        self.source = source
        lines = "\n".join(f"  {path}: {msg}" for path, msg in errors)
        super().__init__(f"invalid scenario {source}:\n{lines}")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DriftConfig(_Section):
    kind: Literal["random_walk", "ornstein_uhlenbeck"] = "random_walk"
    step_sigma: Optional[float] = Field(None, ge=0, description="rad/sqrt(s); default depends on fiber length")
    reversion_rate: float = Field(0.0, ge=0, description="1/s, Ornstein-Uhlenbeck only")

    @model_validator(mode="after")
    def _ou_needs_rate(self):
        if self.kind == "ornstein_uhlenbeck" and self.reversion_rate <= 0:
            raise ValueError("ornstein_uhlenbeck drift needs reversion_rate > 0")
        return self


class FiberConfig(_Section):
    name: str
    length_m: float = Field(ge=0)
    drift: DriftConfig = DriftConfig()
    lock_residual_rad: float = Field(0.0, ge=0, description="rms phase left by the lock during a sweep point")


class SourceConfig(_Section):
    inputs: list[StateName] = Field(default_factory=lambda: ["plus"], min_length=1)
    prep_infidelity: float = Field(0.0, ge=0, le=1)
    pair_rate: float = Field(22_000.0, ge=0)
    v_hv: float = Field(0.981, ge=0, le=1)
    v_diag: float = Field(0.926, ge=0, le=1)

    @model_validator(mode="after")
    def _physical(self):
        if self.v_diag > (1 + self.v_hv) / 2 + 1e-12:
            raise ValueError("v_diag must not exceed (1 + v_hv) / 2 for a physical source")
        return self


class ChannelConfig(_Section):
    fibers: list[FiberConfig] = Field(default_factory=lambda: [FiberConfig(name="10m", length_m=10.0)], min_length=1)
    ns_theta_deg: Optional[list[float]] = None
    bfe_rates: Optional[list[float]] = None

    @field_validator("bfe_rates")
    @classmethod
    def _rates(cls, v):
        if v is not None and any(not 0 <= x <= 1 for x in v):
            raise ValueError("bit-flip rates must lie in [0, 1]")
        return v

    @model_validator(mode="after")
    def _one_schedule(self):
        if self.ns_theta_deg is not None and self.bfe_rates is not None:
            raise ValueError("give either ns_theta_deg or bfe_rates, not both")
        names = [f.name for f in self.fibers]
        if len(set(names)) != len(names):
            raise ValueError("fiber names must be unique")
        return self

    def thetas(self, default: list[float]) -> list[float]:
        """NS half-wave-plate angles in radians."""
        if self.bfe_rates is not None:
            return [0.5 * math.asin(math.sqrt(p)) for p in self.bfe_rates]
        return [math.radians(t) for t in (self.ns_theta_deg if self.ns_theta_deg is not None else default)]


class ProtocolConfig(_Section):
    delay_s: float = Field(2.5e-9, gt=0)
    delay_prime_s: Optional[float] = Field(None, gt=0)
    window_s: float = Field(2e-9, gt=0)
    static_phase_offset_rad: float = 0.0
    wavelength_m: float = Field(810e-9, gt=0)
    bandwidth_m: float = Field(4e-9, gt=0)
    mode_match: float = Field(1.0, ge=0, le=1)
    accidental_fraction: float = Field(0.0, ge=0, description="accidentals per photon in one window")

    @model_validator(mode="after")
    def _window(self):
        if self.window_s >= self.delay_s:
            raise ValueError("window_s must be shorter than delay_s")
        return self


class ControllerConfig(_Section):
    enabled: bool = True
    gain: float = Field(0.8, gt=0)
    dither_rad: float = Field(0.2, gt=0)
    update_interval_s: float = Field(1.0, gt=0)
    actuator_limit_rad: float = Field(0.5, gt=0)
    lock_target: Literal["zero", "pi"] = "zero"
    probe_wavelength_m: float = Field(633e-9, gt=0)
    probe_visibility: float = Field(0.992, gt=0, le=1)
    shot_noise_sigma: float = Field(0.002, ge=0)


class ExposureConfig(_Section):
    photons: int = Field(100_000, gt=0)
    duration_s: float = Field(3600.0, gt=0)
    repetitions: int = Field(1, ge=1)
    rounds: int = Field(12, ge=1)
    pairs_per_setting: Optional[int] = Field(None, gt=0)
    target_sigma_s: float = Field(0.05, gt=0)
    accidental_rate: float = Field(0.0, ge=0, description="accidental coincidences per detected pair")
    sampling: bool = True


class ScanConfig(_Section):
    half_width_m: float = Field(4e-4, gt=0)
    step_m: float = Field(4e-6, gt=0)
    fringe_step_m: float = Field(30e-9, gt=0)
    fringe_points: int = Field(81, ge=5)
    counts_per_point: int = Field(20_000, gt=0)


class ExperimentScenario(_Section):
    name: str = Field(pattern=r"^[A-Za-z0-9_.-]+$")
    kind: Kind
    description: str = ""
    master_seed: int = Field(0, ge=0, le=MAX_SEED)
    source: SourceConfig = SourceConfig()
    channel: ChannelConfig = ChannelConfig()
    protocol: ProtocolConfig = ProtocolConfig()
    controller: ControllerConfig = ControllerConfig()
    exposure: ExposureConfig = ExposureConfig()
    scan: ScanConfig = ScanConfig()

    def with_seed(self, seed: int) -> "ExperimentScenario":
        return parse_scenario({**self.to_dict(), "master_seed": seed})

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")


def _errors(exc: ValidationError) -> list[tuple[str, str]]:
    out = []
    for e in exc.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append((path, e["msg"]))
    return out


def parse_scenario(data, source: str = "<scenario>") -> ExperimentScenario:
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "scenario must be a mapping")], source)
    try:
        return ExperimentScenario.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_errors(exc), source) from None


def loads_scenario(text: str, source: str = "<scenario>") -> ExperimentScenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<root>", f"not valid YAML: {exc}")], source) from None
    return parse_scenario(data, source)


def dumps_scenario(scn: ExperimentScenario) -> str:
    return yaml.safe_dump(scn.to_dict(), sort_keys=False)


def load_scenario(path) -> ExperimentScenario:
    """Load a scenario from a file path, or a shipped scenario by name."""
    p = Path(path)
    if not p.exists():
        if str(path) in builtin_scenarios():
            return loads_scenario(_builtin_dir().joinpath(f"{path}.yaml").read_text(), str(path))
        raise ConfigError([("<file>", f"no such scenario file or shipped scenario: {path}")], str(path))
    return loads_scenario(p.read_text(), str(p))


def _builtin_dir():
    return resources.files("eftsim").joinpath("scenarios")


def builtin_scenarios() -> list[str]:
    return sorted(f.name[: -len(".yaml")] for f in _builtin_dir().iterdir() if f.name.endswith(".yaml"))
