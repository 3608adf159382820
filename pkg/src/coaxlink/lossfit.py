"""Internal quality factor of cable standing-wave modes.

Wirebond joints are a series resistance ``R_s`` sitting behind the CPW
quarter-wave transformer; the cable itself has a frequency-independent
intrinsic quality factor ``Q_cb``.  The two combine harmonically.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.optimize import least_squares

from .devicelab import CableParams, StandingMode, mode_inductance

COS_ZERO = 1e-12


class FitError(RuntimeError):
    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class LossModel:
    q_cb: float
    r_s: float
    n_bonds: int = 2
    cable: CableParams = field(default_factory=CableParams)

    def __post_init__(self):
        if self.q_cb <= 0:
            raise ValueError("Q_cb must be positive")
        if self.r_s < 0:
            raise ValueError("R_s must be non-negative")
        if self.n_bonds not in (1, 2):
            raise ValueError("n_bonds must be 1 or 2")


@dataclass(frozen=True)
class QDataPoint:
    omega: float
    q_int: float
    sigma: float | None = None
    m: int | None = None

    def __post_init__(self):
        if self.q_int <= 0:
            raise ValueError("Q_int must be positive")


def transformer_cos(cable: CableParams, omega) -> np.ndarray:
    """cos(beta_c * l_c): current ratio between the wirebond joint and the shorted end."""
    return np.cos(np.asarray(omega) * cable.cpw_beta_per_omega * cable.cpw_length_m)


def _q_loss(omega, l_m, cos_bl, r_s, n_bonds):
    cos2 = np.asarray(cos_bl) ** 2
    denom = cos2 * n_bonds * r_s
    with np.errstate(divide="ignore", over="ignore"):
        q = np.where(
            (np.abs(cos_bl) < COS_ZERO) | (r_s == 0), np.inf, omega * l_m / np.where(denom > 0, denom, 1.0)
        )
    return q


def q_loss(model: LossModel, mode: StandingMode) -> float:
    c = transformer_cos(model.cable, mode.omega)
    return float(_q_loss(mode.omega, mode.inductance, c, model.r_s, model.n_bonds))


def _harmonic(q_loss_v, q_cb):
    return 1.0 / (1.0 / q_loss_v + 1.0 / q_cb)


def q_int(model: LossModel, mode: StandingMode) -> float:
    return float(_harmonic(q_loss(model, mode), model.q_cb))


def q_int_curve(model: LossModel, omega) -> np.ndarray:
    """Q_int over an array of mode frequencies (mode inductance from the cable)."""
    omega = np.asarray(omega, dtype=float)
    c = transformer_cos(model.cable, omega)
    ql = _q_loss(omega, mode_inductance(model.cable), c, model.r_s, model.n_bonds)
    return _harmonic(ql, model.q_cb)


def t1r_from_q(q, omega):
    if q <= 0 or omega <= 0:
        raise ValueError("Q and omega must be positive")
    return q / omega


def q_from_t1r(t1r, omega):
    if t1r <= 0 or omega <= 0:
        raise ValueError("T1r and omega must be positive")
    return omega * t1r


def quarter_wave_impedance(z0, z_load):
    """Input impedance of a quarter-wave line near resonance."""
    if z_load < 0:
        raise ValueError("load impedance must be non-negative")
    if z_load == 0:
        return math.inf
    if math.isinf(z_load):
        return 0.0
    return z0**2 / z_load


@dataclass
class LossFitResult:
    q_cb: float
    r_s: float
    covariance: np.ndarray
    residuals: np.ndarray
    n_points: int
    nfev: int

    @property
    def q_cb_err(self):
        return float(math.sqrt(self.covariance[0, 0]))

    @property
    def r_s_err(self):
        return float(math.sqrt(self.covariance[1, 1]))

    def as_dict(self):
        return {
            "q_cb": self.q_cb,
            "q_cb_err": self.q_cb_err,
            "r_s_ohm": self.r_s,
            "r_s_err_ohm": self.r_s_err,
            "covariance": self.covariance.tolist(),
            "rms_log_residual": float(np.sqrt(np.mean(self.residuals**2))),
            "n_points": self.n_points,
            "nfev": self.nfev,
        }


def fit_loss_model(points, cable: CableParams, n_bonds=2, max_nfev=2000, noise_slack=0.01) -> LossFitResult:
    """Fit (Q_cb, R_s) to measured Q_int by least squares on log residuals.

    Starting point: Q_cb from the largest Q_int, R_s solved in closed form
    at the smallest Q_int point.  Parameters are optimised in log space so
    both stay positive.  Since Q_int <= Q_cb for every mode, Q_cb is bounded
    below by the largest observation less ``noise_slack``.
    """
    if len(points) < 3:
        raise ValueError("need at least 3 data points")
    ms = {p.m for p in points if p.m is not None}
    omegas = np.array([p.omega for p in points], dtype=float)
    if len(ms) < 2 and len(np.unique(omegas)) < 2:
        raise ValueError("data must span at least two modes")
    q_meas = np.array([p.q_int for p in points], dtype=float)
    w = np.array([1.0 / p.sigma if p.sigma else 1.0 for p in points])
    l_m = mode_inductance(cable)
    cos_bl = transformer_cos(cable, omegas)
    if np.all(np.abs(cos_bl) < 1e-6):
        raise FitError("R_s is unidentifiable: every point sits at the quarter-wave match")

    q_cb0 = q_meas.max()
    k = int(np.argmin(q_meas))
    inv_loss = 1.0 / q_meas[k] - 1.0 / q_cb0
    if inv_loss <= 0 or abs(cos_bl[k]) < 1e-6:
        inv_loss = 0.5 / q_meas[k]
        k = int(np.argmax(np.abs(cos_bl)))
    r_s0 = omegas[k] * l_m * inv_loss / (cos_bl[k] ** 2 * n_bonds)
    x0 = np.log([q_cb0, r_s0])

    def resid(x):
        q_cb, r_s = np.exp(x)
        model = _harmonic(_q_loss(omegas, l_m, cos_bl, r_s, n_bonds), q_cb)
        return w * (np.log(model) - np.log(q_meas))

    lower = [math.log((1.0 - noise_slack) * q_cb0), -np.inf]
    sol = least_squares(
        resid, x0, bounds=(lower, np.inf), method="trf", x_scale=1.0,
        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=max_nfev,
    )
    q_cb, r_s = np.exp(sol.x)
    if sol.status == 0:
        raise FitError("loss-model fit did not converge", last=(q_cb, r_s))
    cov = _gauss_newton_cov(sol.jac, sol.fun, weighted=any(p.sigma for p in points))
    jac_log = np.diag([q_cb, r_s])
    return LossFitResult(
        float(q_cb), float(r_s), jac_log @ cov @ jac_log, sol.fun / w, len(points), sol.nfev
    )


def _gauss_newton_cov(jac, fun, weighted):
    n, p = jac.shape
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    if not weighted:
        dof = max(n - p, 1)
        cov = cov * float(fun @ fun) / dof
    return cov


def read_q_csv(path) -> list:
    """Rows of (mode_m, freq_ghz, q_int[, sigma]); extra columns are ignored."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sigma = row.get("sigma")
            out.append(
                QDataPoint(
                    omega=2 * math.pi * float(row["freq_ghz"]) * 1e9,
                    q_int=float(row["q_int"]),
                    sigma=float(sigma) if sigma not in (None, "") else None,
                    m=int(row["mode_m"]) if row.get("mode_m") else None,
                )
            )
    return out


def load_cable_table(path=None) -> list:
    """Intrinsic Q_cb per cable type as dicts (material, diameter_mm, q_cb)."""
    if path is None:
        text = resources.files("coaxlink.data").joinpath("cables.csv").read_text()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    return [
        {"material": r["material"], "diameter_mm": float(r["diameter_mm"]), "q_cb": float(r["q_cb"])}
        for r in csv.DictReader(text.splitlines())
    ]


def loss_dataset_cable() -> CableParams:
    """Second assembly: 0.25 m 2.1 mm Al cable with two 6 mm CPW transformers."""
    return CableParams(cpw_length_m=6e-3, n_cpw=2)


# Hanger-geometry transmission


@dataclass(frozen=True)
class HangerResonance:
    f0: float
    q_int: float
    q_c: float
    amplitude: float = 1.0
    phase: float = 0.0
    asymmetry: float = 0.0

    def __post_init__(self):
        if self.q_int <= 0 or self.q_c <= 0:
            raise ValueError("quality factors must be positive")

    @property
    def q_loaded(self):
        return 1.0 / (1.0 / self.q_int + 1.0 / self.q_c)


def s21_hanger(f, res: HangerResonance) -> np.ndarray:
    """Notch-type transmission past a side-coupled resonator."""
    f = np.asarray(f, dtype=float)
    ql = res.q_loaded
    x = (f - res.f0) / res.f0
    dip = (ql / res.q_c) * np.exp(1j * res.asymmetry) / (1.0 + 2j * ql * x)
    return res.amplitude * np.exp(1j * res.phase) * (1.0 - dip)


def _hanger_guess(f, s21):
    n_edge = max(3, len(f) // 20)
    edge = np.concatenate([s21[:n_edge], s21[-n_edge:]])
    amp = float(np.mean(np.abs(edge)))
    phase = float(np.angle(np.mean(edge)))
    z = s21 / (amp * np.exp(1j * phase))
    depth = np.abs(1.0 - z) ** 2
    k = int(np.argmax(depth))
    f0 = f[k]
    half = depth[k] / 2
    lo = k
    while lo > 0 and depth[lo] > half:
        lo -= 1
    hi = k
    while hi < len(f) - 1 and depth[hi] > half:
        hi += 1
    fwhm = max(f[hi] - f[lo], f[1] - f[0])
    ql = f0 / fwhm
    smin = min(abs(z[k]), 0.999)
    qc = ql / (1.0 - smin)
    qi = 1.0 / max(1.0 / ql - 1.0 / qc, 1e-12)
    return f0, ql, qi, qc, amp, phase, k


def fit_hanger(f, s21, fix_asymmetry=0.0) -> HangerResonance:
    """Least-squares fit of ``s21_hanger`` to a complex trace."""
    f = np.asarray(f, dtype=float)
    s21 = np.asarray(s21, dtype=complex)
    if len(f) < 10:
        raise FitError("trace too short")
    f0g, qlg, qig, qcg, ampg, phg, k = _hanger_guess(f, s21)
    if k < 2 or k > len(f) - 3:
        raise FitError("resonance not inside the frequency window")

    def unpack(x):
        f0 = f0g * (1.0 + x[0] / qlg)
        return HangerResonance(f0, math.exp(x[1]), math.exp(x[2]), x[3], x[4], fix_asymmetry)

    def resid(x):
        r = s21_hanger(f, unpack(x)) - s21
        return np.concatenate([r.real, r.imag])

    x0 = np.array([0.0, math.log(qig), math.log(qcg), ampg, phg])
    sol = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000)
    res = unpack(sol.x)
    span = f[-1] - f[0]
    if not f[0] < res.f0 < f[-1]:
        raise FitError("fitted resonance outside the frequency window", last=res)
    if span < 5 * res.f0 / res.q_loaded:
        raise FitError("trace spans fewer than 5 linewidths", last=res)
    return res
