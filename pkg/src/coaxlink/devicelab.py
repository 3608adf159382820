"""Lumped-element model of the qubit / gmon coupler / coaxial cable network.

Inductances in the parameter objects are in nH, lengths in m, specific
capacitances in pF/m and specific inductances in nH/m.  Functions return SI
values (rad/s, H, F) unless the name says otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources

from . import units


@dataclass(frozen=True)
class QubitParams:
    label: str
    freq_ghz: float
    anharmonicity_ghz: float = -0.2
    t1_us: float = 20.0
    tphi_us: float = 10.0
    f0: float = 1.0
    f1: float = 1.0
    module: str = ""
    readout_freq_ghz: float | None = None
    alpha: float = 5.3
    # Not tabulated anywhere; repo default chosen so |g|/2pi = 5 MHz is reachable.
    lq_nh: float = 8.0
    tuning_range_ghz: tuple = (4.2, 5.2)

    def __post_init__(self):
        if self.t1_us <= 0 or self.tphi_us <= 0:
            raise ValueError(f"{self.label}: T1 and Tphi must be positive")
        for name in ("f0", "f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{self.label}: readout fidelity {name}={v} outside [0, 1]")
        lo, hi = self.tuning_range_ghz
        if not lo <= self.freq_ghz <= hi:
            raise ValueError(
                f"{self.label}: operating frequency {self.freq_ghz} GHz outside tuning range {lo}-{hi} GHz"
            )
        if self.lq_nh <= 0:
            raise ValueError(f"{self.label}: junction inductance must be positive")

    @property
    def omega(self):
        return units.ghz_to_rad(self.freq_ghz)

    @property
    def gamma1(self):
        return 1.0 / units.us(self.t1_us)

    @property
    def gamma_phi(self):
        return 1.0 / units.us(self.tphi_us)


@dataclass(frozen=True)
class CouplerParams:
    lg_nh: float = 0.2
    lw_nh: float = 0.06
    lt_nh: float = 0.6
    delta: float = 0.0

    def __post_init__(self):
        if self.lg_nh <= 0 or self.lt_nh <= 0:
            raise ValueError("Lg and L_T must be positive")
        if self.lw_nh < 0:
            raise ValueError("Lw must be non-negative")

    def at(self, delta) -> CouplerParams:
        return CouplerParams(self.lg_nh, self.lw_nh, self.lt_nh, delta)


@dataclass(frozen=True)
class CableParams:
    c_cb_pf_m: float = 86.5
    l_cb_nh_m: float = 216.0
    length_m: float = 0.25
    c_cpw_pf_m: float = 173.0
    l_cpw_nh_m: float = 402.0
    cpw_length_m: float = 6.5e-3
    n_cpw: int = 2

    def __post_init__(self):
        for name in ("c_cb_pf_m", "l_cb_nh_m", "length_m", "c_cpw_pf_m", "l_cpw_nh_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"cable parameter {name} must be positive")
        if self.cpw_length_m < 0:
            raise ValueError("CPW length must be non-negative")
        if self.n_cpw not in (1, 2):
            raise ValueError("n_cpw must be 1 or 2")

    @property
    def cable_delay(self):
        return self.length_m * math.sqrt(units.nh(self.l_cb_nh_m) * units.pf(self.c_cb_pf_m))

    @property
    def cpw_delay(self):
        return self.cpw_length_m * math.sqrt(units.nh(self.l_cpw_nh_m) * units.pf(self.c_cpw_pf_m))

    @property
    def cpw_beta_per_omega(self):
        """Propagation constant of the CPW divided by angular frequency (s/m)."""
        return math.sqrt(units.nh(self.l_cpw_nh_m) * units.pf(self.c_cpw_pf_m))


@dataclass(frozen=True)
class StandingMode:
    m: int
    omega: float
    inductance: float
    capacitance: float
    parity_sign: int

    @property
    def freq_ghz(self):
        return units.rad_to_ghz(self.omega)

    @property
    def inductance_nh(self):
        return units.to_nh(self.inductance)

    @property
    def capacitance_ff(self):
        return units.to_ff(self.capacitance)


@dataclass(frozen=True)
class InterconnectModel:
    cable: CableParams
    modes: tuple = field(default_factory=tuple)
    omega_fsr: float = 0.0

    @classmethod
    def build(cls, cable: CableParams, m_range=range(8, 13)) -> InterconnectModel:
        modes = tuple(mode_params(cable, m) for m in sorted(m_range))
        return cls(cable, modes, fsr(cable))

    def mode(self, m) -> StandingMode:
        for md in self.modes:
            if md.m == m:
                return md
        raise KeyError(f"mode m={m} not in model")


def fsr(cable: CableParams) -> float:
    """Free spectral range (rad/s) of the shorted CPW-cable-CPW line.

    TEM model: half-wave resonance, i.e. the inverse round-trip delay.
    """
    one_way = cable.cable_delay + cable.n_cpw * cable.cpw_delay
    return 2.0 * math.pi / (2.0 * one_way)


def mode_inductance(cable: CableParams) -> float:
    l_total = units.nh(cable.l_cb_nh_m) * cable.length_m + cable.n_cpw * units.nh(
        cable.l_cpw_nh_m
    ) * cable.cpw_length_m
    return 0.5 * l_total


def mode_params(cable: CableParams, m: int, omega=None) -> StandingMode:
    """Series-LC equivalent of standing-wave mode ``m``.

    ``omega`` forces the mode frequency (e.g. a measured value); otherwise
    ``m * fsr``.
    """
    if m < 1:
        raise ValueError("mode number must be >= 1")
    lm = mode_inductance(cable)
    w = m * fsr(cable) if omega is None else float(omega)
    cm = 1.0 / (w**2 * lm)
    return StandingMode(m, w, lm, cm, -1 if m % 2 else 1)


def mutual_inductance(c: CouplerParams) -> float:
    """Gmon mutual inductance in nH; signed, zero at delta = pi/2."""
    cos_d = math.cos(c.delta)
    if abs(cos_d) < 1e-300:
        return 0.0
    # Lg^2 / (2Lg + Lw + LT/cos) rewritten to stay finite as cos -> 0.
    return c.lg_nh**2 * cos_d / ((2 * c.lg_nh + c.lw_nh) * cos_d + c.lt_nh)


def coupling_strength(q: QubitParams, mode: StandingMode, c: CouplerParams, far_end=False) -> float:
    """Qubit-mode coupling g in rad/s (harmonic, weak-coupling limit)."""
    m_h = units.nh(mutual_inductance(c))
    lg = units.nh(c.lg_nh)
    lq = units.nh(q.lq_nh)
    g = -0.5 * m_h * math.sqrt(mode.omega * q.omega / ((lg + lq) * (lg + mode.inductance)))
    return g * mode.parity_sign if far_end else g


class BiasRangeError(ValueError):
    pass


def solve_coupler_bias(target_g, q: QubitParams, mode: StandingMode, c: CouplerParams, far_end=False):
    """Coupler phase delta in [0, pi/2] giving ``|g| = |target_g|``.

    |g| falls monotonically from delta = 0 to zero at pi/2, so plain
    bisection on that branch is enough.
    """
    target = abs(target_g)
    g_max = abs(coupling_strength(q, mode, c.at(0.0), far_end))
    if target > g_max:
        raise BiasRangeError(
            f"|g|/2pi = {units.rad_to_mhz(target):.4f} MHz unreachable; "
            f"maximum is {units.rad_to_mhz(g_max):.4f} MHz"
        )
    if target == 0.0:
        return math.pi / 2
    if target == g_max:
        return 0.0
    lo, hi = 0.0, math.pi / 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if abs(coupling_strength(q, mode, c.at(mid), far_end)) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def load_qubits(path=None) -> dict:
    """Read a qubit parameter CSV (label, module, freq_ghz, ...) into QubitParams."""
    if path is None:
        src = resources.files("coaxlink.data").joinpath("qubits.csv")
        text = src.read_text()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    out = {}
    for row in csv.DictReader(text.splitlines()):
        q = QubitParams(
            label=row["label"],
            freq_ghz=float(row["freq_ghz"]),
            anharmonicity_ghz=float(row["anharmonicity_ghz"]),
            t1_us=float(row["t1_us"]),
            tphi_us=float(row["tphi_us"]),
            f0=float(row["f0"]),
            f1=float(row["f1"]),
            module=row.get("module", ""),
            readout_freq_ghz=float(row["readout_freq_ghz"]) if row.get("readout_freq_ghz") else None,
        )
        out[q.label] = q
    return out


def reference_cable() -> CableParams:
    """2.1 mm Al cable, 0.25 m, two 6.5 mm CPW transformers."""
    return CableParams()
