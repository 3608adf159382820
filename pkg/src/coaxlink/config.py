"""Scenario configuration schema (YAML in, validated with pydantic)."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator, model_validator

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Grid(_Strict):
    start: float
    stop: float
    num: int = Field(gt=0)


class QubitOverride(_Strict):
    t1_us: Optional[float] = Field(default=None, gt=0)
    tphi_us: Optional[float] = Field(default=None, gt=0)
    f0: Optional[float] = Field(default=None, ge=0, le=1)
    f1: Optional[float] = Field(default=None, ge=0, le=1)


class Device(_Strict):
    qubits_file: Optional[Path] = None
    sender: str = "Q1A"
    receiver: str = "Q3B"
    overrides: dict[str, QubitOverride] = {}

    @field_validator("qubits_file")
    @classmethod
    def _exists(cls, v):
        if v is not None and not Path(v).is_file():
            raise ValueError(f"file not found: {v}")
        return v


class _Base(_Strict):
    schema_version: Literal[1] = 1
    seed: Optional[int] = None
    out: Optional[Path] = None


class Chevron(_Base):
    scenario: Literal["chevron"]
    device: Device = Device()
    g_mhz: float = Field(default=5.0, gt=0)
    t1r_us: float = Field(default=26.4, gt=0)
    decoherence: bool = True
    detuning_mhz: Grid = Grid(start=-20.0, stop=20.0, num=41)
    time_ns: Grid = Grid(start=0.0, stop=400.0, num=201)
    n_modes: Literal[1, 2] = 1
    fsr_ghz: float = Field(default=0.44, gt=0)
    mode_cutoff: int = Field(default=3, ge=2)


class Ringdown(_Base):
    scenario: Literal["ringdown"]
    q_int: float = Field(default=8.1e5, gt=0)
    mode_freq_ghz: float = Field(default=4.885, gt=0)
    g_mhz: float = Field(default=5.0, gt=0)
    wait_us: Grid = Grid(start=0.0, stop=60.0, num=31)
    qubit_decoherence: bool = False
    device: Device = Device()


class Tomography(_Strict):
    mode: Literal["exact", "sampled"] = "exact"
    shots: int = Field(default=3000, ge=1)
    readout_errors: bool = True
    repeats: int = Field(default=1, ge=1)


class _LinkProtocol(_Base):
    device: Device = Device()
    g_mhz: float = Field(default=5.0, gt=0)
    t1r_us: float = Field(default=26.4, gt=0)
    mode_m: int = Field(default=11, ge=1)
    mode_cutoff: int = Field(default=3, ge=2)
    tomography: Tomography = Tomography()

    @model_validator(mode="after")
    def _seed_for_sampling(self):
        if self.tomography.mode == "sampled" and self.seed is None:
            raise ValueError("seed is required when tomography.mode is 'sampled'")
        return self


class Qst(_LinkProtocol):
    scenario: Literal["qst"]
    tau_ns: float = Field(default=66.0, ge=0)
    ramp_ns: float = Field(default=4.0, ge=0)


class Bell(_LinkProtocol):
    scenario: Literal["bell"]
    tau_b_ns: float = Field(default=25.0, gt=0)
    ramp_ns: float = Field(default=0.0, ge=0)


class Layout(_Strict):
    modules: dict[str, list[str]] = {
        "A": ["Q1A", "Q2A", "Q3A", "Q4A"],
        "B": ["Q1B", "Q2B", "Q3B", "Q4B"],
        "E": ["Q1E", "Q2E", "Q3E", "Q4E"],
    }
    interconnects: list[tuple[str, str]] = [("A", "B"), ("A", "E")]
    ab_link: tuple[str, str] = ("Q1A", "Q3B")
    ae_link: tuple[str, str] = ("Q4A", "Q1E")


class GhzNoise(_Strict):
    enabled: bool = True
    single_qubit_fidelity: float = Field(default=0.9985, gt=0, le=1)
    cz_fidelity: float = Field(default=0.961, gt=0, le=1)
    link_bell_fidelity: dict[str, float] = {"AB": 0.989, "AE": 0.991}
    cz_ns: float = Field(default=45.0, gt=0)
    single_ns: float = Field(default=25.0, gt=0)
    decohere_during_gates: bool = False


class Ghz(_Base):
    scenario: Literal["ghz"]
    step: Literal["I", "II", "III", "IV"] = "I"
    n_traj: int = Field(default=2000, ge=1)
    gamma_points: int = Field(default=60, ge=3)
    device: Device = Device()
    layout: Layout = Layout()
    noise: GhzNoise = GhzNoise()

    @model_validator(mode="after")
    def _checks(self):
        if self.seed is None:
            raise ValueError("seed is required for the stochastic ghz scenario")
        need = [("A", "B")] + ([("A", "E")] if self.step in ("III", "IV") else [])
        have = {frozenset(p) for p in self.layout.interconnects}
        for pair in need:
            if frozenset(pair) not in have:
                raise ValueError(f"layout: step {self.step} needs the {'-'.join(pair)} interconnect")
        return self


class LossFit(_Base):
    scenario: Literal["lossfit"]
    data_file: Optional[Path] = None
    n_bonds: Literal[1, 2] = 2
    cable_length_m: float = Field(default=0.25, gt=0)
    cpw_length_mm: float = Field(default=6.0, ge=0)
    n_cpw: Literal[1, 2] = 2

    @field_validator("data_file")
    @classmethod
    def _exists(cls, v):
        if v is not None and not Path(v).is_file():
            raise ValueError(f"file not found: {v}")
        return v


class Hanger(_Base):
    scenario: Literal["hanger"]
    data_file: Optional[Path] = None
    f0_ghz: float = Field(default=4.885, gt=0)
    q_int: float = Field(default=8.1e5, gt=0)
    q_c: float = Field(default=2.0e5, gt=0)
    span_linewidths: float = Field(default=20.0, gt=0)
    n_points: int = Field(default=401, ge=10)
    noise: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _checks(self):
        if self.data_file is not None and not Path(self.data_file).is_file():
            raise ValueError(f"data_file: file not found: {self.data_file}")
        if self.data_file is None and self.noise > 0 and self.seed is None:
            raise ValueError("seed is required for a noisy synthetic trace")
        return self


Scenario = Annotated[Union[Chevron, Ringdown, Qst, Bell, Ghz, LossFit, Hanger], Field(discriminator="scenario")]
SCENARIOS = {
    "chevron": Chevron,
    "ringdown": Ringdown,
    "qst": Qst,
    "bell": Bell,
    "ghz": Ghz,
    "lossfit": LossFit,
    "hanger": Hanger,
}
_ADAPTER = TypeAdapter(Scenario)


class ConfigError(ValueError):
    """Schema violation; ``errors`` holds (field path, message) pairs."""

    def __init__(self, errors):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))


def parse_config(raw: dict):
    try:
        return _ADAPTER.validate_python(raw)
    except ValidationError as exc:
        errs = []
        for e in exc.errors():
            # drop the union tag pydantic inserts after the root
            loc = [str(x) for x in e["loc"]]
            if loc and loc[0] in SCENARIOS:
                loc = loc[1:]
            errs.append((".".join(loc) or "<root>", e["msg"]))
        raise ConfigError(errs) from None


def load_config(path, overrides=None):
    """Read, apply top-level overrides, validate.  Returns (config, sha256 of file bytes)."""
    data = Path(path).read_bytes()
    raw = yaml.safe_load(data)
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config must be a mapping")])
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return parse_config(raw), hashlib.sha256(data).hexdigest()
