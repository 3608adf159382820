"""Readout correction, state and process tomography, fidelity metrics.

Measurement convention: each qubit gets a prerotation from {I, X/2, Y/2}
followed by a Z-basis readout, so the three settings measure the Bloch
components +Z, +Y and -X respectively (X/2 = exp(-i pi X/4)).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .hilbert import PAULIS, DensityMatrix, HilbertSpace, project_psd, qubits

GATE_SET = ("I", "X/2", "Y/2")
PREROTATIONS = {
    "I": np.eye(2, dtype=complex),
    "X/2": np.array([[1, -1j], [-1j, 1]], dtype=complex) / math.sqrt(2),
    "Y/2": np.array([[1, -1], [1, 1]], dtype=complex) / math.sqrt(2),
}
MAX_TOMO_QUBITS = 6


class ConditioningError(ValueError):
    pass


class TomographyError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """True -> observed readout map for one qubit; column j is the true state."""

    f0: float
    f1: float

    def __post_init__(self):
        for v in (self.f0, self.f1):
            if not 0.0 <= v <= 1.0:
                raise ValueError("readout fidelities must lie in [0, 1]")

    @property
    def matrix(self):
        return np.array([[self.f0, 1.0 - self.f1], [1.0 - self.f0, self.f1]])

    @classmethod
    def from_qubit(cls, q):
        return cls(q.f0, q.f1)

    @classmethod
    def ideal(cls):
        return cls(1.0, 1.0)


def _apply_per_qubit(probs, mats):
    n = len(mats)
    t = np.asarray(probs, dtype=float).reshape((2,) * n)
    for k, m in enumerate(mats):
        t = np.moveaxis(np.tensordot(m, t, axes=([1], [k])), 0, k)
    return t.reshape(-1)


def apply_confusion(probs, confusions):
    """Observed outcome distribution for true bitstring probabilities ``probs``."""
    return _apply_per_qubit(probs, [c.matrix for c in confusions])


def project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def readout_correct(observed, confusions):
    """Invert the tensor-product confusion map, then project onto the simplex."""
    observed = np.asarray(observed, dtype=float)
    if abs(observed.sum() - 1.0) > 1e-6:
        raise ValueError(f"observed probabilities sum to {observed.sum():.8f}, not 1")
    if len(observed) != 2 ** len(confusions):
        raise ValueError("one confusion matrix per qubit required")
    for k, c in enumerate(confusions):
        if c.f0 + c.f1 <= 1.0:
            raise ConditioningError(f"qubit {k}: F0 + F1 = {c.f0 + c.f1:.4f} <= 1, readout map not invertible")
    raw = _apply_per_qubit(observed, [np.linalg.inv(c.matrix) for c in confusions])
    if np.all(raw >= 0):
        return raw / raw.sum()
    return project_simplex(raw)


@dataclass(frozen=True)
class TomographySettings:
    n_qubits: int
    shots: int = 3000
    mode: str = "exact"

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.mode not in ("exact", "sampled"):
            raise ValueError("mode must be 'exact' or 'sampled'")
        if not 1 <= self.n_qubits <= MAX_TOMO_QUBITS:
            raise ValueError(f"full tomography supports 1..{MAX_TOMO_QUBITS} qubits")

    def settings(self):
        return list(itertools.product(GATE_SET, repeat=self.n_qubits))


@dataclass
class TomographyData:
    """Outcome probabilities (or counts) per prerotation setting.

    ``table[k, b]`` belongs to ``settings[k]`` and bitstring index ``b``
    (qubit 0 is the most significant bit).
    """

    settings: list
    table: np.ndarray
    shots: int | None = None

    @property
    def n_qubits(self):
        return len(self.settings[0])

    def probabilities(self):
        t = np.asarray(self.table, dtype=float)
        return t / t.sum(axis=1, keepdims=True)

    def to_json(self):
        return {
            "n_qubits": self.n_qubits,
            "shots": self.shots,
            "settings": [list(s) for s in self.settings],
            "counts": [
                {format(b, f"0{self.n_qubits}b"): float(v) for b, v in enumerate(row) if v}
                for row in np.asarray(self.table)
            ],
        }

    @classmethod
    def from_json(cls, obj):
        n = obj["n_qubits"]
        settings = [tuple(s) for s in obj["settings"]]
        table = np.zeros((len(settings), 2**n))
        for k, row in enumerate(obj["counts"]):
            for bits, v in row.items():
                table[k, int(bits, 2)] = v
        return cls(settings, table, obj.get("shots"))


def _rotation(setting):
    u = np.array([[1.0]], dtype=complex)
    for g in setting:
        u = np.kron(u, PREROTATIONS[g])
    return u


def measurement_probabilities(rho, setting):
    u = _rotation(setting)
    m = np.asarray(rho.entries if isinstance(rho, DensityMatrix) else rho)
    return np.clip(np.real(np.einsum("ij,jk,ik->i", u, m, u.conj())), 0.0, None)


def simulate_tomography(rho, settings: TomographySettings, confusions=None, rng=None) -> TomographyData:
    """Exact outcome probabilities, or multinomial counts when sampling."""
    if rho.space.dims != (2,) * settings.n_qubits:
        raise ValueError("state does not match the tomography register")
    rows = []
    for s in settings.settings():
        p = measurement_probabilities(rho, s)
        p = p / p.sum()
        if confusions is not None:
            p = apply_confusion(p, confusions)
        if settings.mode == "sampled":
            rng = np.random.default_rng() if rng is None else rng
            p = rng.multinomial(settings.shots, p / p.sum())
        rows.append(p)
    shots = settings.shots if settings.mode == "sampled" else None
    return TomographyData(settings.settings(), np.array(rows, dtype=float), shots)


def _single_qubit_design():
    """6 x 4 map from Pauli coefficients to (setting, outcome) probabilities."""
    a = np.zeros((6, 4))
    for s, g in enumerate(GATE_SET):
        u = PREROTATIONS[g]
        for b in range(2):
            proj = u.conj().T @ np.diag([1.0 - b, b]) @ u
            for k, p in enumerate(PAULIS):
                a[2 * s + b, k] = np.real(np.trace(proj @ p))
    return a


_DESIGN_PINV = np.linalg.pinv(_single_qubit_design())
_PAULI_STACK = np.array(PAULIS)


def pauli_coefficients_to_matrix(c):
    """rho = sum_k c[k1..kN] sigma_k1 (x) ... (x) sigma_kN."""
    n = c.ndim
    t = c
    for _ in range(n):
        t = np.tensordot(t, _PAULI_STACK, axes=([0], [0]))
    # axes now (i1, j1, i2, j2, ...)
    perm = [2 * k for k in range(n)] + [2 * k + 1 for k in range(n)]
    return t.transpose(perm).reshape(2**n, 2**n)


def linear_inversion(data: TomographyData, confusions=None):
    """Unconstrained estimate from outcome probabilities of all 3^N settings."""
    n = data.n_qubits
    expected = list(itertools.product(GATE_SET, repeat=n))
    index = {tuple(s): k for k, s in enumerate(data.settings)}
    missing = [s for s in expected if s not in index]
    if missing:
        raise TomographyError(f"missing {len(missing)} of {len(expected)} settings, e.g. {missing[0]}")
    table = np.asarray(data.table, dtype=float)
    totals = table.sum(axis=1)
    if data.shots is not None and not np.allclose(totals, data.shots):
        raise TomographyError("inconsistent shot counts across settings")
    probs = table / totals[:, None]
    if confusions is not None:
        probs = np.array([readout_correct(p, confusions) for p in probs])
    # (s1..sN, b1..bN) -> (s1, b1, ..., sN, bN) -> per-qubit 6-vectors
    t = np.array([probs[index[s]] for s in expected]).reshape((3,) * n + (2,) * n)
    perm = [x for k in range(n) for x in (k, n + k)]
    t = t.transpose(perm).reshape((6,) * n)
    for k in range(n):
        t = np.moveaxis(np.tensordot(_DESIGN_PINV, t, axes=([1], [k])), 0, k)
    return pauli_coefficients_to_matrix(t)


def state_tomography(data: TomographyData, confusions=None) -> DensityMatrix:
    """Linear inversion followed by projection onto unit-trace PSD matrices."""
    est = linear_inversion(data, confusions)
    return DensityMatrix(qubits(data.n_qubits), project_psd(est))


# Process tomography

PROCESS_INPUTS = (
    np.array([1, 0], dtype=complex),
    np.array([1, -1j], dtype=complex) / math.sqrt(2),
    np.array([1, 1], dtype=complex) / math.sqrt(2),
    np.array([0, 1], dtype=complex),
)


def _vec(m):
    return np.asarray(m).reshape(-1, order="F")


@dataclass(frozen=True)
class ProcessMatrix:
    """Single-qubit chi in the {I, X, Y, Z} basis: E(rho) = sum chi_mn P_m rho P_n."""

    chi: np.ndarray

    def __post_init__(self):
        chi = np.asarray(self.chi, dtype=complex)
        if chi.shape != (4, 4):
            raise ValueError("chi must be 4 x 4")
        if np.max(np.abs(chi - chi.conj().T)) > 1e-8:
            raise ValueError("chi is not Hermitian")
        if abs(np.trace(chi).real - 1.0) > 1e-6:
            raise ValueError("chi trace differs from 1")
        if np.linalg.eigvalsh(0.5 * (chi + chi.conj().T)).min() < -1e-8:
            raise ValueError("chi is not positive semidefinite")
        chi = chi.copy()
        chi.setflags(write=False)
        object.__setattr__(self, "chi", chi)

    def apply(self, rho):
        out = np.zeros((2, 2), dtype=complex)
        for m in range(4):
            for n in range(4):
                out += self.chi[m, n] * PAULIS[m] @ rho @ PAULIS[n].conj().T
        return out


def superoperator_to_chi(s):
    """Column-stacking superoperator -> Pauli-basis chi."""
    chi = np.empty((4, 4), dtype=complex)
    for m, pm in enumerate(PAULIS):
        for n, pn in enumerate(PAULIS):
            basis = np.kron(pn.conj(), pm)
            chi[m, n] = np.trace(basis.conj().T @ s) / 4.0
    return chi


def process_tomography(outputs, inputs=PROCESS_INPUTS) -> ProcessMatrix:
    """chi from the channel outputs on the four standard input states."""
    if len(outputs) != len(inputs):
        raise ValueError("one output per input state required")
    rin = np.array([_vec(np.outer(v, v.conj())) for v in inputs]).T
    if np.linalg.matrix_rank(rin) < 4:
        raise TomographyError("input states do not span the operator space")
    rout = np.array([_vec(o.entries if isinstance(o, DensityMatrix) else o) for o in outputs]).T
    s = rout @ np.linalg.inv(rin)
    chi = superoperator_to_chi(s)
    return ProcessMatrix(project_psd(chi))


def chi_identity():
    chi = np.zeros((4, 4), dtype=complex)
    chi[0, 0] = 1.0
    return ProcessMatrix(chi)


def process_fidelity(chi, chi_ideal) -> float:
    a = chi.chi if isinstance(chi, ProcessMatrix) else np.asarray(chi)
    b = chi_ideal.chi if isinstance(chi_ideal, ProcessMatrix) else np.asarray(chi_ideal)
    f = float(np.real(np.trace(a @ b)))
    if f < -1e-9 or f > 1 + 1e-9:
        raise ValueError(f"process fidelity {f} outside [0, 1]")
    return min(max(f, 0.0), 1.0)


def bootstrap_repeats(experiment, n_repeats=50, seed=0):
    """Run ``experiment(seed_i)`` for independent seeds; return (mean, std)."""
    seeds = np.random.SeedSequence(seed).generate_state(n_repeats)
    vals = np.array([experiment(int(s)) for s in seeds], dtype=float)
    std = float(vals.std(ddof=1)) if n_repeats > 1 else 0.0
    return float(vals.mean()), std


# Serialisation


def matrix_to_json(m):
    m = np.asarray(m)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def matrix_from_json(obj):
    return np.array([[complex(re, im) for re, im in row] for row in obj])


def write_density_json(path, rho: DensityMatrix):
    with open(path, "w") as fh:
        json.dump({"dims": list(rho.space.dims), "entries": matrix_to_json(rho.entries)}, fh, indent=1)


def read_density_json(path) -> DensityMatrix:
    with open(path) as fh:
        obj = json.load(fh)
    return DensityMatrix(HilbertSpace(tuple(obj["dims"])), matrix_from_json(obj["entries"]))


def write_matrix_csv(path, m):
    m = np.asarray(m)
    with open(path, "w") as fh:
        fh.write("row,col,re,im\n")
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                fh.write(f"{i},{j},{m[i, j].real:.12e},{m[i, j].imag:.12e}\n")
