"""Dense linear algebra on small composite Hilbert spaces.

Subsystem 0 is the slowest-varying tensor index. Basis state ``|1>`` is the
excited qubit state, so ``sigma = |0><1|`` lowers and ``sigma_z |1> = -|1>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

MAX_DIM = 2**14

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
EIGEN_TOL = 1e-8


class CapacityError(ValueError):
    """Raised when a composite space would exceed ``MAX_DIM``."""


class InvalidStateError(ValueError):
    """Raised when a matrix violates the density-matrix invariants."""


def _check_capacity(dim, cap=None):
    cap = MAX_DIM if cap is None else cap
    if dim > cap:
        raise CapacityError(f"total dimension {dim} exceeds cap {cap}")


def _frozen(a):
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HilbertSpace:
    dims: tuple
    labels: tuple | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("a Hilbert space needs at least one subsystem")
        if any(d < 2 for d in dims):
            raise ValueError(f"subsystem dimensions must be >= 2, got {dims}")
        object.__setattr__(self, "dims", dims)
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != len(dims):
                raise ValueError("one label per subsystem required")
            if len(set(labels)) != len(labels):
                raise ValueError(f"duplicate subsystem labels {labels}")
            object.__setattr__(self, "labels", labels)
        _check_capacity(self.dim)

    @property
    def dim(self):
        return int(np.prod(self.dims))

    @property
    def n_subsystems(self):
        return len(self.dims)

    def concat(self, other: HilbertSpace) -> HilbertSpace:
        if self.labels is not None and other.labels is not None:
            overlap = set(self.labels) & set(other.labels)
            if overlap:
                raise ValueError(f"subsystems {sorted(overlap)} appear in both operands")
            labels = self.labels + other.labels
        else:
            labels = None
        _check_capacity(self.dim * other.dim)
        return HilbertSpace(self.dims + other.dims, labels)

    def subspace(self, keep: Sequence[int]) -> HilbertSpace:
        labels = None if self.labels is None else tuple(self.labels[k] for k in keep)
        return HilbertSpace(tuple(self.dims[k] for k in keep), labels)

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < self.n_subsystems:
                raise IndexError(f"subsystem index {label} out of range")
            return int(label)
        if self.labels is None or label not in self.labels:
            raise IndexError(f"unknown subsystem {label!r}")
        return self.labels.index(label)

    def basis_index(self, levels: Sequence[int]) -> int:
        """Flat index of the product basis state ``|levels[0], levels[1], ...>``."""
        if len(levels) != self.n_subsystems:
            raise ValueError("one level per subsystem required")
        return int(np.ravel_multi_index(tuple(levels), self.dims))


def qubits(n) -> HilbertSpace:
    return HilbertSpace((2,) * n)


@dataclass(frozen=True)
class Operator:
    space: HilbertSpace
    entries: np.ndarray

    def __post_init__(self):
        m = _frozen(self.entries)
        if m.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"operator shape {m.shape} does not match dimension {self.space.dim}")
        object.__setattr__(self, "entries", m)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _same_space(self.space, other.space)
            return Operator(self.space, self.entries @ other.entries)
        if isinstance(other, StateVector):
            _same_space(self.space, other.space)
            return StateVector(self.space, self.entries @ other.amplitudes, normalize=False)
        return NotImplemented

    def __add__(self, other):
        _same_space(self.space, other.space)
        return Operator(self.space, self.entries + other.entries)

    def __sub__(self, other):
        _same_space(self.space, other.space)
        return Operator(self.space, self.entries - other.entries)

    def __mul__(self, c):
        return Operator(self.space, c * self.entries)

    __rmul__ = __mul__

    def dag(self):
        return Operator(self.space, self.entries.conj().T)

    def expect(self, state):
        if isinstance(state, StateVector):
            v = state.amplitudes
            return complex(v.conj() @ self.entries @ v)
        return complex(np.trace(self.entries @ state.entries))


@dataclass(frozen=True, init=False)
class StateVector:
    space: HilbertSpace
    amplitudes: np.ndarray

    def __init__(self, space, amplitudes, normalize=True):
        v = np.array(amplitudes, dtype=complex).reshape(-1)
        if v.shape != (space.dim,):
            raise ValueError(f"state length {v.size} does not match dimension {space.dim}")
        if normalize:
            n = np.linalg.norm(v)
            if n == 0:
                raise InvalidStateError("cannot normalize the zero vector")
            v = v / n
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "amplitudes", _frozen(v))

    @classmethod
    def basis(cls, space: HilbertSpace, levels: Sequence[int]) -> StateVector:
        v = np.zeros(space.dim, dtype=complex)
        v[space.basis_index(levels)] = 1.0
        return cls(space, v)

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def to_density(self) -> DensityMatrix:
        v = self.amplitudes
        return DensityMatrix(self.space, np.outer(v, v.conj()))

    def probabilities(self):
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True, init=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite matrix on ``space``.

    ``tolerance`` overrides all three invariant checks at once; integrator
    output uses 1e-6 to leave room for truncation error.
    """

    space: HilbertSpace
    entries: np.ndarray

    def __init__(self, space, entries, tolerance=None):
        m = np.array(entries, dtype=complex)
        if m.shape != (space.dim, space.dim):
            raise ValueError(f"matrix shape {m.shape} does not match dimension {space.dim}")
        herm_tol, tr_tol, eig_tol = (
            (HERMITIAN_TOL, TRACE_TOL, EIGEN_TOL) if tolerance is None else (tolerance,) * 3
        )
        herm_err = np.max(np.abs(m - m.conj().T))
        if herm_err > herm_tol:
            raise InvalidStateError(f"not Hermitian (max deviation {herm_err:.3e})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > tr_tol:
            raise InvalidStateError(f"trace {tr:.12f} differs from 1")
        min_eig = np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min()
        if min_eig < -eig_tol:
            raise InvalidStateError(f"negative eigenvalue {min_eig:.3e}")
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "entries", _frozen(m))

    @classmethod
    def maximally_mixed(cls, space):
        return cls(space, np.eye(space.dim) / space.dim)

    def purity(self):
        return float(np.real(np.trace(self.entries @ self.entries)))

    def probabilities(self):
        return np.clip(np.real(np.diag(self.entries)), 0.0, None)

    def trace_distance(self, other: DensityMatrix) -> float:
        _same_space(self.space, other.space)
        ev = np.linalg.eigvalsh(self.entries - other.entries)
        return float(0.5 * np.sum(np.abs(ev)))


def _same_space(a: HilbertSpace, b: HilbertSpace):
    if a.dims != b.dims:
        raise ValueError(f"mismatched spaces {a.dims} vs {b.dims}")


def tensor(a, b):
    """Kronecker product of two operators, kets or density matrices."""
    space = a.space.concat(b.space)
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(space, np.kron(a.amplitudes, b.amplitudes), normalize=False)
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(space, np.kron(a.entries, b.entries))
    if isinstance(a, Operator) and isinstance(b, Operator):
        return Operator(space, np.kron(a.entries, b.entries))
    raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")


def tensor_all(items):
    return reduce(tensor, items)


def embed(op, subsystem_index, space: HilbertSpace) -> Operator:
    """Lift a single-subsystem operator to ``space`` (identity elsewhere)."""
    k = space.index(subsystem_index)
    m = op.entries if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    if m.shape != (space.dims[k], space.dims[k]):
        raise ValueError(
            f"operator of shape {m.shape} does not fit subsystem {k} of dim {space.dims[k]}"
        )
    left = int(np.prod(space.dims[:k]))
    right = int(np.prod(space.dims[k + 1 :]))
    return Operator(space, np.kron(np.kron(np.eye(left), m), np.eye(right)))


def partial_trace_matrix(m, dims, keep):
    """Partial trace of a raw square array; ``keep`` is kept in ascending order."""
    dims = tuple(dims)
    n = len(dims)
    keep = sorted(set(keep))
    traced = [k for k in range(n) if k not in keep]
    t = np.asarray(m).reshape(dims + dims)
    # Move traced axes to the end pairwise, then contract them.
    ket_axes = keep + traced
    bra_axes = [n + k for k in keep] + [n + k for k in traced]
    t = t.transpose(ket_axes + bra_axes)
    dk = int(np.prod([dims[k] for k in keep]))
    dt = int(np.prod([dims[k] for k in traced])) if traced else 1
    t = t.reshape(dk, dt, dk, dt)
    return np.einsum("ajbj->ab", t)


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    keep = [rho.space.index(k) for k in keep]
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    reduced = partial_trace_matrix(rho.entries, rho.space.dims, keep)
    reduced = 0.5 * (reduced + reduced.conj().T)
    return DensityMatrix(rho.space.subspace(sorted(set(keep))), reduced)


def fidelity_pure(rho: DensityMatrix, psi: StateVector) -> float:
    """Overlap ``<psi|rho|psi>``; values within 1e-9 outside [0, 1] are clipped."""
    _same_space(rho.space, psi.space)
    v = psi.amplitudes
    f = float(np.real(v.conj() @ rho.entries @ v))
    if -1e-9 <= f < 0.0:
        return 0.0
    if 1.0 < f <= 1.0 + 1e-9:
        return 1.0
    return f


# Single-qubit and oscillator building blocks (raw arrays).

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
PAULIS = (I2, SX, SY, SZ)


def destroy(d):
    return np.diag(np.sqrt(np.arange(1, d)), 1).astype(complex)


def create(d):
    return destroy(d).conj().T


def number(d):
    return np.diag(np.arange(d)).astype(complex)


def ket(levels, dims=None):
    """Raw basis ket; ``dims`` defaults to all qubits."""
    dims = (2,) * len(levels) if dims is None else tuple(dims)
    v = np.zeros(int(np.prod(dims)), dtype=complex)
    v[np.ravel_multi_index(tuple(levels), dims)] = 1.0
    return v


def ghz_state(n, phase=0.0) -> StateVector:
    v = np.zeros(2**n, dtype=complex)
    v[0] = 1.0
    v[-1] = np.exp(1j * phase)
    return StateVector(qubits(n), v)


def project_psd(m, trace=1.0):
    """Closest unit-trace PSD matrix in Frobenius norm.

    Eigenvalues are clipped from the bottom and the removed weight is spread
    evenly over the surviving ones (Smolin, Gambetta, Smith 2012).
    """
    m = 0.5 * (np.asarray(m) + np.asarray(m).conj().T)
    evals, evecs = np.linalg.eigh(m)
    evals = evals * (trace / np.sum(evals)) if np.sum(evals) > 0 else evals
    lam = _water_fill(evals[::-1], trace)[::-1]
    return (evecs * lam) @ evecs.conj().T


def _water_fill(mu, trace):
    # mu sorted descending; returns projected eigenvalues in the same order
    mu = np.array(mu, dtype=float)
    lam = np.zeros_like(mu)
    acc = 0.0
    i = len(mu)
    while i > 0 and mu[i - 1] + acc / i < 0:
        acc += mu[i - 1]
        i -= 1
    lam[:i] = mu[:i] + acc / i if i else 0.0
    # restore exact trace after rounding
    lam *= trace / lam.sum() if lam.sum() > 0 else 1.0
    return lam
