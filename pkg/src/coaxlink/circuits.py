"""Gate-level noisy simulation of multi-module circuits.

A circuit is a list of layers; gates in a layer act on disjoint qubits and
run in parallel.  Noise is attached per gate (depolarizing, link damping)
and per layer (T1 / Tphi idling on every register qubit for the layer's
duration).  Two simulators share those conventions: an exact
density-matrix one for small registers and a Monte Carlo wavefunction one
for up to 14 qubits.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .hilbert import PAULIS, CapacityError, DensityMatrix, StateVector, qubits
from .tomo import ConfusionMatrix

MAX_QUBITS = 14
MAX_DENSITY_QUBITS = 6

_CZ = np.diag([1, 1, 1, -1]).astype(complex)
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
_S2 = 1 / math.sqrt(2)
# single-excitation beam splitter: |10> -> (|10> + |01>)/sqrt2
_HALF_LINK = np.array(
    [[1, 0, 0, 0], [0, _S2, _S2, 0], [0, -_S2, _S2, 0], [0, 0, 0, 1]], dtype=complex
)
_PAULI2 = [np.kron(a, b) for a in PAULIS for b in PAULIS]


def rotation_matrix(phi, theta):
    """exp(-i theta/2 (cos phi X + sin phi Y))."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s * np.exp(-1j * phi)], [-1j * s * np.exp(1j * phi), c]], dtype=complex)


def rz_matrix(theta):
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def calibrate_depolarizing(avg_gate_fidelity, dim):
    """Depolarizing probability with the given average gate fidelity."""
    if not 0.0 < avg_gate_fidelity <= 1.0:
        raise ValueError("average gate fidelity must lie in (0, 1]")
    if dim not in (2, 4):
        raise ValueError("dim must be 2 or 4")
    return (1.0 - avg_gate_fidelity) * dim / (dim - 1)


@dataclass(frozen=True)
class Gate:
    """One gate.

    kind: "rot" (equatorial axis ``phi``, angle ``theta``), "rz" (virtual,
    zero duration), "cz", "cnot" (control, target), "link_full",
    "link_half" (sender, receiver) or "measure".
    """

    kind: str
    qubits: tuple
    phi: float = 0.0
    theta: float = 0.0

    _ARITY = {"rot": 1, "rz": 1, "cz": 2, "cnot": 2, "link_full": 2, "link_half": 2, "measure": None}

    def __post_init__(self):
        if self.kind not in self._ARITY:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        arity = self._ARITY[self.kind]
        if arity is not None and len(self.qubits) != arity:
            raise ValueError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"{self.kind} repeats a qubit: {self.qubits}")

    def unitary(self):
        if self.kind == "rot":
            return rotation_matrix(self.phi, self.theta)
        if self.kind == "rz":
            return rz_matrix(self.theta)
        return {"cz": _CZ, "cnot": _CNOT, "link_full": _SWAP, "link_half": _HALF_LINK}[self.kind]

    def __str__(self):
        if self.kind == "rot":
            return f"R {self.qubits[0]} {self.phi:.17g} {self.theta:.17g}"
        if self.kind == "rz":
            return f"RZ {self.qubits[0]} {self.theta:.17g}"
        if self.kind == "measure":
            return "MEASURE"
        name = {"cz": "CZ", "cnot": "CNOT", "link_full": "QST", "link_half": "QST2"}[self.kind]
        return f"{name} {' '.join(self.qubits)}"


def rx(q, theta):
    return Gate("rot", (q,), 0.0, theta)


def ry(q, theta):
    return Gate("rot", (q,), math.pi / 2, theta)


def rz(q, theta):
    return Gate("rz", (q,), 0.0, theta)


def x(q):
    return rx(q, math.pi)


def cz(a, b):
    return Gate("cz", (a, b))


def cnot(control, target):
    return Gate("cnot", (control, target))


def link(sender, receiver, half=False):
    return Gate("link_half" if half else "link_full", (sender, receiver))


@dataclass(frozen=True)
class Circuit:
    qubits: tuple  # (label, module) pairs
    layers: tuple = ()
    interconnects: frozenset = frozenset()

    def __post_init__(self):
        labels = [q for q, _ in self.qubits]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate qubit labels")
        module = dict(self.qubits)
        for i, layer in enumerate(self.layers):
            used = [q for g in layer for q in g.qubits]
            if len(set(used)) != len(used):
                raise ValueError(f"layer {i}: gates overlap on a qubit")
            for g in layer:
                for q in g.qubits:
                    if q not in module:
                        raise ValueError(f"layer {i}: unknown qubit {q}")
                if g.kind.startswith("link"):
                    ma, mb = module[g.qubits[0]], module[g.qubits[1]]
                    if ma == mb:
                        raise ValueError(f"layer {i}: link {g.qubits} stays inside module {ma}")
                    if frozenset((ma, mb)) not in self.interconnects:
                        raise ValueError(f"layer {i}: no interconnect declared between {ma} and {mb}")

    @property
    def labels(self):
        return tuple(q for q, _ in self.qubits)

    @property
    def n_qubits(self):
        return len(self.qubits)

    def index(self, label):
        return self.labels.index(label)

    def append(self, *gates) -> Circuit:
        return Circuit(self.qubits, self.layers + (tuple(gates),), self.interconnects)

    def gate_count(self, kind=None):
        return sum(1 for layer in self.layers for g in layer if kind is None or g.kind == kind)

    @property
    def depth(self):
        return len(self.layers)

    def to_text(self):
        lines = [f"qubit {q} {m}" for q, m in self.qubits]
        lines += ["link " + " ".join(sorted(p)) for p in sorted(self.interconnects, key=sorted)]
        lines += [" | ".join(str(g) for g in layer) for layer in self.layers]
        return "\n".join(lines) + "\n"


_NAMED_1Q = {
    "X": (0.0, math.pi),
    "Y": (math.pi / 2, math.pi),
    "X/2": (0.0, math.pi / 2),
    "Y/2": (math.pi / 2, math.pi / 2),
    "-X/2": (0.0, -math.pi / 2),
    "-Y/2": (math.pi / 2, -math.pi / 2),
}


def parse_circuit(text) -> Circuit:
    """Read the line format written by ``Circuit.to_text``.

    ``qubit <label> <module>`` and ``link <module> <module>`` declare the
    register; every other non-blank line is a layer of ``|``-separated gates
    such as ``X Q1A``, ``RX Q1A 1.57``, ``R Q1A <phi> <theta>``,
    ``RZ Q1A 0.3``, ``CZ a b``, ``CNOT c t``, ``QST a b``, ``QST2 a b``.
    """
    regs, links, layers = [], set(), []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split()
        if head[0] == "qubit":
            regs.append((head[1], head[2]))
            continue
        if head[0] == "link":
            links.add(frozenset(head[1:3]))
            continue
        layer = []
        for tok in line.split("|"):
            parts = tok.split()
            try:
                layer.append(_parse_gate(parts))
            except (ValueError, IndexError, KeyError) as exc:
                raise ValueError(f"line {lineno}: cannot parse gate {tok.strip()!r}: {exc}") from None
        layers.append(tuple(layer))
    return Circuit(tuple(regs), tuple(layers), frozenset(links))


def _parse_gate(parts):
    name = parts[0].upper()
    if name in _NAMED_1Q:
        phi, theta = _NAMED_1Q[name]
        return Gate("rot", (parts[1],), phi, theta)
    if name == "RX":
        return rx(parts[1], float(parts[2]))
    if name == "RY":
        return ry(parts[1], float(parts[2]))
    if name == "R":
        return Gate("rot", (parts[1],), float(parts[2]), float(parts[3]))
    if name == "RZ":
        return rz(parts[1], float(parts[2]))
    if name == "MEASURE":
        return Gate("measure", ())
    kind = {"CZ": "cz", "CNOT": "cnot", "QST": "link_full", "QST2": "link_half"}[name]
    return Gate(kind, (parts[1], parts[2]))


# Noise model


@dataclass(frozen=True)
class NoiseModel:
    """Times in seconds.  Missing per-qubit entries mean no decoherence."""

    t1: dict = field(default_factory=dict)
    tphi: dict = field(default_factory=dict)
    p1: float = 0.0
    p2: float = 0.0
    eps_link: dict = field(default_factory=dict)  # frozenset(module pair) -> damping probability
    confusions: dict = field(default_factory=dict)
    t_single: float = 25e-9
    t_cz: float = 45e-9
    t_link_full: float = 74e-9
    t_link_half: float = 75e-9
    # Gate error rates from benchmarking already include decoherence during
    # the gate, so by default only the idle part of a layer decoheres a qubit.
    decohere_during_gates: bool = False

    def __post_init__(self):
        probs = [self.p1, self.p2, *self.eps_link.values()]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("noise probabilities must lie in [0, 1]")
        if any(v <= 0 for v in list(self.t1.values()) + list(self.tphi.values())):
            raise ValueError("T1 and Tphi must be positive")

    @classmethod
    def from_device(cls, qubit_params, p1=0.0, p2=0.0, eps_link=None, readout=True, **durations):
        return cls(
            t1={k: q.t1_us * 1e-6 for k, q in qubit_params.items()},
            tphi={k: q.tphi_us * 1e-6 for k, q in qubit_params.items()},
            p1=p1,
            p2=p2,
            eps_link=dict(eps_link or {}),
            confusions={k: ConfusionMatrix.from_qubit(q) for k, q in qubit_params.items()} if readout else {},
            **durations,
        )

    def gate_duration(self, g: Gate):
        if g.kind == "rot":
            return self.t_single
        if g.kind == "cz":
            return self.t_cz
        if g.kind == "cnot":
            return 2 * self.t_single + self.t_cz
        if g.kind == "link_full":
            return self.t_link_full
        if g.kind == "link_half":
            return self.t_link_half
        return 0.0

    def layer_duration(self, layer):
        return max((self.gate_duration(g) for g in layer), default=0.0)

    def idle_params(self, label, duration):
        """(amplitude-damping probability, coherence factor) over ``duration``."""
        t1 = self.t1.get(label)
        tp = self.tphi.get(label)
        p = 0.0 if t1 is None else -math.expm1(-duration / t1)
        lam = 1.0 if tp is None else math.exp(-duration / tp)
        return p, lam


# Gate expansion shared by both simulators.  Each step is
# ("u1", k, U) | ("u2", (a, b), U) | ("dep1", k, p) | ("dep2", (a, b), p)
# | ("damp", k, p) | ("deph", k, lam)


def _expand_layer(circuit: Circuit, layer, noise: NoiseModel | None):
    steps = []
    idx = circuit.index
    module = dict(circuit.qubits)
    for g in layer:
        if g.kind == "measure":
            continue
        if g.kind in ("rot", "rz"):
            steps.append(("u1", idx(g.qubits[0]), g.unitary()))
            if noise and g.kind == "rot" and noise.p1:
                steps.append(("dep1", idx(g.qubits[0]), noise.p1))
        elif g.kind == "cnot":
            # -Y/2 on target, CZ, Y/2 on target
            c, t = idx(g.qubits[0]), idx(g.qubits[1])
            for u in (rotation_matrix(math.pi / 2, -math.pi / 2), None, rotation_matrix(math.pi / 2, math.pi / 2)):
                if u is None:
                    steps.append(("u2", (c, t), _CZ))
                    if noise and noise.p2:
                        steps.append(("dep2", (c, t), noise.p2))
                else:
                    steps.append(("u1", t, u))
                    if noise and noise.p1:
                        steps.append(("dep1", t, noise.p1))
        else:
            a, b = idx(g.qubits[0]), idx(g.qubits[1])
            steps.append(("u2", (a, b), g.unitary()))
            if noise and g.kind == "cz" and noise.p2:
                steps.append(("dep2", (a, b), noise.p2))
            if noise and g.kind.startswith("link"):
                eps = noise.eps_link.get(frozenset((module[g.qubits[0]], module[g.qubits[1]])), 0.0)
                if eps:
                    steps += [("damp", a, eps), ("damp", b, eps)]
    if noise:
        dur = noise.layer_duration(layer)
        busy = {} if noise.decohere_during_gates else {q: noise.gate_duration(g) for g in layer for q in g.qubits}
        if dur > 0:
            for k, label in enumerate(circuit.labels):
                idle = dur - busy.get(label, 0.0)
                if idle <= 0:
                    continue
                p, lam = noise.idle_params(label, idle)
                if p:
                    steps.append(("damp", k, p))
                if lam < 1.0:
                    steps.append(("deph", k, lam))
    return steps


def _apply1(psi, u, k):
    return np.moveaxis(np.tensordot(u, psi, axes=([1], [k])), 0, k)


def _apply2(psi, u, a, b):
    t = np.tensordot(u.reshape(2, 2, 2, 2), psi, axes=([2, 3], [a, b]))
    return np.moveaxis(t, [0, 1], [a, b])


def _check_capacity(n, cap):
    if n > cap:
        raise CapacityError(f"{n} qubits exceeds the simulator limit of {cap}")


def simulate_statevector(circuit: Circuit) -> StateVector:
    """Exact noiseless final state, qubits in register order."""
    n = circuit.n_qubits
    _check_capacity(n, MAX_QUBITS)
    psi = np.zeros((2,) * n, dtype=complex)
    psi[(0,) * n] = 1.0
    for layer in circuit.layers:
        for kind, where, u in _expand_layer(circuit, layer, None):
            psi = _apply1(psi, u, where) if kind == "u1" else _apply2(psi, u, *where)
    return StateVector(qubits(n), psi.reshape(-1))


# Exact channel simulation


def _kraus(kind, p):
    if kind == "dep1":
        return [math.sqrt(1 - 3 * p / 4) * PAULIS[0]] + [math.sqrt(p / 4) * s for s in PAULIS[1:]]
    if kind == "dep2":
        return [math.sqrt(1 - 15 * p / 16) * _PAULI2[0]] + [math.sqrt(p / 16) * s for s in _PAULI2[1:]]
    if kind == "damp":
        return [np.array([[1, 0], [0, math.sqrt(1 - p)]], dtype=complex), np.array([[0, math.sqrt(p)], [0, 0]], dtype=complex)]
    if kind == "deph":
        q = (1 - p) / 2
        return [math.sqrt(1 - q) * PAULIS[0], math.sqrt(q) * PAULIS[3]]
    raise ValueError(kind)


def _rho_apply(rho, u, where, n):
    if isinstance(where, tuple):
        a, b = where
        rho = _apply2(rho, u, a, b)
        return _apply2(rho, u.conj(), n + a, n + b)
    rho = _apply1(rho, u, where)
    return _apply1(rho, u.conj(), n + where)


def simulate_density(circuit: Circuit, noise: NoiseModel | None = None) -> DensityMatrix:
    """Exact density matrix under the same noise conventions as the trajectories."""
    n = circuit.n_qubits
    _check_capacity(n, MAX_DENSITY_QUBITS)
    rho = np.zeros((2,) * (2 * n), dtype=complex)
    rho[(0,) * (2 * n)] = 1.0
    for layer in circuit.layers:
        for kind, where, arg in _expand_layer(circuit, layer, noise):
            if kind in ("u1", "u2"):
                rho = _rho_apply(rho, arg, where, n)
            else:
                rho = sum(_rho_apply(rho, k, where, n) for k in _kraus(kind, arg))
    m = rho.reshape(2**n, 2**n)
    return DensityMatrix(qubits(n), 0.5 * (m + m.conj().T))


# Monte Carlo wavefunction trajectories


@dataclass
class ShotRecord:
    counts: dict
    shots: int
    seed: int

    def __post_init__(self):
        if sum(self.counts.values()) != self.shots:
            raise ValueError("counts do not sum to the number of shots")

    def probabilities(self, n_qubits):
        p = np.zeros(2**n_qubits)
        for bits, c in self.counts.items():
            p[int(bits, 2)] += c
        return p / self.shots

    def merge(self, other: ShotRecord) -> ShotRecord:
        c = Counter(self.counts)
        c.update(other.counts)
        return ShotRecord(dict(c), self.shots + other.shots, self.seed)


@dataclass
class TrajectoryResult:
    fidelities: np.ndarray | None
    record: ShotRecord | None
    density: DensityMatrix | None
    parity_terms: np.ndarray | None  # averaged Fourier terms, index k + n for frequency k
    p_all0: float
    p_all1: float
    n_traj: int

    @property
    def fidelity(self):
        return float(np.mean(self.fidelities))

    @property
    def fidelity_stderr(self):
        f = self.fidelities
        return float(np.std(f, ddof=1) / math.sqrt(len(f))) if len(f) > 1 else 0.0

    def parity(self, gammas):
        """Trajectory-averaged <P(gamma)> on a grid."""
        n = (len(self.parity_terms) - 1) // 2
        k = np.arange(-n, n + 1)
        return np.real(np.exp(1j * np.outer(np.asarray(gammas), k)) @ self.parity_terms)


def trajectory_rng(seed, index):
    """Independent counter-based stream for trajectory ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def _sub(n, k, v):
    return (slice(None),) * k + (v,)


def _step(psi, kind, where, arg, n, rng):
    if kind == "u1":
        return _apply1(psi, arg, where)
    if kind == "u2":
        return _apply2(psi, arg, *where)
    if kind == "dep1":
        if rng.random() < arg:
            j = rng.integers(4)
            if j:
                psi = _apply1(psi, PAULIS[j], where)
    elif kind == "dep2":
        if rng.random() < arg:
            j = rng.integers(16)
            if j:
                psi = _apply2(psi, _PAULI2[j], *where)
    elif kind == "damp":
        one = psi[_sub(n, where, 1)]
        p1 = float(np.vdot(one, one).real)
        if rng.random() < arg * p1:
            new = np.zeros_like(psi)
            new[_sub(n, where, 0)] = one
            psi = new / math.sqrt(p1)
        else:
            psi[_sub(n, where, 1)] *= math.sqrt(1 - arg)
            psi /= math.sqrt(1 - arg * p1)
    elif kind == "deph":
        if rng.random() < (1 - arg) / 2:
            psi[_sub(n, where, 1)] *= -1
    return psi


def _run_trajectory(psi, steps_per_layer, n, rng):
    for steps in steps_per_layer:
        for kind, where, arg in steps:
            psi = _step(psi, kind, where, arg, n, rng)
    return psi


def _parity_terms(flat, n):
    """c_k with <P(gamma)> = sum_k c_k exp(i k gamma), k = n0 - n1."""
    weights = n - 2 * np.array([bin(i).count("1") for i in range(len(flat))])
    terms = np.zeros(2 * n + 1, dtype=complex)
    np.add.at(terms, weights + n, np.conj(flat[::-1]) * flat)
    return terms


def _sample_readout(probs, n, shots, rng, confusions):
    idx = rng.choice(len(probs), size=shots, p=probs / probs.sum())
    bits = (idx[:, None] >> np.arange(n - 1, -1, -1)) & 1
    if confusions is not None:
        f0 = np.array([c.f0 for c in confusions])
        f1 = np.array([c.f1 for c in confusions])
        flip_p = np.where(bits == 1, 1 - f1, 1 - f0)
        bits = bits ^ (rng.random(bits.shape) < flip_p)
    return ["".join(map(str, b)) for b in bits]


def simulate_trajectories(
    circuit: Circuit,
    noise: NoiseModel,
    n_traj: int,
    shots_per_traj: int = 0,
    seed: int = 0,
    target: StateVector | None = None,
    keep_density: bool = False,
    parity: bool = False,
    final_layers=(),
) -> TrajectoryResult:
    """Sample noisy wavefunction trajectories.

    ``target`` gives the exact per-trajectory overlap; ``parity`` records
    the Fourier terms of <P(gamma)>.  ``final_layers`` (e.g. measurement
    prerotations) are applied with noise before readout only.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    n = circuit.n_qubits
    _check_capacity(n, MAX_QUBITS)
    if keep_density:
        _check_capacity(n, MAX_DENSITY_QUBITS)
    steps = [_expand_layer(circuit, layer, noise) for layer in circuit.layers]
    tail = [_expand_layer(circuit, tuple(layer), noise) for layer in final_layers]
    conf = None
    if noise.confusions:
        conf = [noise.confusions.get(q, ConfusionMatrix.ideal()) for q in circuit.labels]
    tgt = None if target is None else np.asarray(target.amplitudes)
    fids = np.empty(n_traj) if tgt is not None else None
    rho = np.zeros((2**n, 2**n), dtype=complex) if keep_density else None
    terms = np.zeros(2 * n + 1, dtype=complex) if parity else None
    counts = Counter()
    p0 = p1 = 0.0
    for i in range(n_traj):
        rng = trajectory_rng(seed, i)
        psi = np.zeros((2,) * n, dtype=complex)
        psi[(0,) * n] = 1.0
        flat = _run_trajectory(psi, steps, n, rng).reshape(-1)
        if tgt is not None:
            fids[i] = abs(np.vdot(tgt, flat)) ** 2
        if keep_density:
            rho += np.outer(flat, flat.conj())
        if parity:
            terms += _parity_terms(flat, n)
        p0 += abs(flat[0]) ** 2
        p1 += abs(flat[-1]) ** 2
        if shots_per_traj:
            if tail:
                flat = _run_trajectory(flat.reshape((2,) * n).copy(), tail, n, rng).reshape(-1)
            counts.update(_sample_readout(np.abs(flat) ** 2, n, shots_per_traj, rng, conf))
    record = ShotRecord(dict(sorted(counts.items())), n_traj * shots_per_traj, seed) if shots_per_traj else None
    dens = DensityMatrix(qubits(n), rho / n_traj, tolerance=1e-8) if keep_density else None
    return TrajectoryResult(
        fids, record, dens, None if terms is None else terms / n_traj, p0 / n_traj, p1 / n_traj, n_traj
    )


# GHZ protocol


@dataclass(frozen=True)
class GhzLayout:
    """Which physical qubit plays which role in the GHZ protocol.

    The A-B link (sender ``ab_link[0]`` in A) seeds a Bell pair; the A-E
    link moves one A qubit's share into E.  Fan-out tuples list the CNOT
    targets in the order they join.
    """

    modules: dict = field(
        default_factory=lambda: {
            "A": ("Q1A", "Q2A", "Q3A", "Q4A"),
            "B": ("Q1B", "Q2B", "Q3B", "Q4B"),
            "E": ("Q1E", "Q2E", "Q3E", "Q4E"),
        }
    )
    interconnects: frozenset = frozenset({frozenset("AB"), frozenset("AE")})
    ab_link: tuple = ("Q1A", "Q3B")
    ae_link: tuple = ("Q4A", "Q1E")

    def module_of(self, q):
        for m, qs in self.modules.items():
            if q in qs:
                return m
        raise KeyError(f"qubit {q} not in layout")


GHZ_SIZES = {"I": 4, "II": 6, "III": 10, "IV": 12}


def build_ghz_circuit(step, layout: GhzLayout | None = None) -> Circuit:
    """Circuit preparing the GHZ state of protocol step I-IV from |0...0>.

    Steps I/II grow the A-B Bell pair with parallel CNOT pairs.  Steps
    III/IV transfer an A qubit to E right after it joins, then fan out on
    A, B and E in parallel.  The low-Tphi A-side qubits (Q2A, Q4A by
    default) join last.
    """
    layout = layout or GhzLayout()
    if step not in GHZ_SIZES:
        raise ValueError(f"step must be one of {list(GHZ_SIZES)}")
    need = [frozenset("AB")] + ([frozenset("AE")] if step in ("III", "IV") else [])
    for pair in need:
        if pair not in layout.interconnects:
            raise ValueError(f"layout lacks the {'-'.join(sorted(pair))} interconnect")
    a_s, b_r = layout.ab_link
    a_e, e_r = layout.ae_link
    a_rest = [q for q in layout.modules["A"] if q not in (a_s, a_e)]
    b_rest = [q for q in layout.modules["B"] if q != b_r]
    e_rest = [q for q in layout.modules.get("E", ()) if q != e_r]

    layers = [(x(a_s),), (link(a_s, b_r, half=True),), (x(b_r),)]
    if step in ("I", "II"):
        layers.append((cnot(a_s, a_rest[1]), cnot(b_r, b_rest[1])))
        if step == "II":
            layers.append((cnot(a_s, a_rest[0]), cnot(b_r, b_rest[2])))
    else:
        layers += [
            (cnot(a_s, a_e), cnot(b_r, b_rest[1])),
            (link(a_e, e_r), cnot(a_s, a_rest[1]), cnot(b_r, b_rest[2])),
            (cnot(e_r, e_rest[0]), cnot(a_s, a_rest[0])),
            (cnot(e_r, e_rest[1]), cnot(a_rest[1], a_e)),
        ]
        if step == "IV":
            layers.append((cnot(e_r, e_rest[2]), cnot(b_r, b_rest[0])))
    used = []
    for layer in layers:
        for g in layer:
            for q in g.qubits:
                if q not in used:
                    used.append(q)
    regs = tuple((q, layout.module_of(q)) for q in used)
    circ = Circuit(regs, tuple(layers), frozenset(layout.interconnects))
    if circ.n_qubits != GHZ_SIZES[step]:
        raise ValueError(f"layout yields {circ.n_qubits} qubits for step {step}")
    return circ


def ghz_target(n, phase=0.0) -> StateVector:
    v = np.zeros(2**n, dtype=complex)
    v[0] = 1.0
    v[-1] = np.exp(1j * phase)
    return StateVector(qubits(n), v)


def parity_expectation(state, gamma):
    """Exact <P(gamma)> with P = (x)_q (cos g X_q + sin g Y_q).

    P maps |x> to exp(i g (n0 - n1)) |not x>, so only the anti-diagonal of
    the state enters.  Accepts a StateVector, DensityMatrix or raw array;
    ``gamma`` may be an array.
    """
    gamma = np.asarray(gamma, dtype=float)
    if isinstance(state, StateVector):
        m = None
        flat = np.asarray(state.amplitudes)
    elif isinstance(state, DensityMatrix):
        m = np.asarray(state.entries)
        flat = None
    else:
        arr = np.asarray(state)
        m, flat = (arr, None) if arr.ndim == 2 else (None, arr)
    dim = len(flat) if flat is not None else m.shape[0]
    n = int(round(math.log2(dim)))
    if n < 2:
        raise ValueError("parity needs at least 2 qubits")
    if flat is not None:
        terms = _parity_terms(flat, n)
    else:
        weights = n - 2 * np.array([bin(i).count("1") for i in range(dim)])
        anti = m[np.arange(dim), np.arange(dim)[::-1]]
        terms = np.zeros(2 * n + 1, dtype=complex)
        np.add.at(terms, weights + n, anti)
    k = np.arange(-n, n + 1)
    return np.real(np.exp(1j * np.multiply.outer(gamma, k)) @ terms)


def parity_from_record(record: ShotRecord, n_qubits, confusions=None):
    """<Z...Z> parity of shots taken after the parity prerotations."""
    p = record.probabilities(n_qubits)
    if confusions is not None:
        from .tomo import readout_correct

        p = readout_correct(p, confusions)
    signs = 1 - 2 * (np.array([bin(i).count("1") for i in range(len(p))]) % 2)
    return float(signs @ p)


def parity_prerotation(labels, gamma):
    """Layers mapping (cos g X + sin g Y) onto Z: virtual Rz(-g), then -Y/2."""
    return [tuple(rz(q, -gamma) for q in labels), tuple(ry(q, -math.pi / 2) for q in labels)]


def ghz_gamma_grid(n_points=60):
    return 2 * math.pi * np.arange(n_points) / n_points


def estimate_ghz_fidelity(p_all0, p_all1, gammas, parity, n_qubits):
    """(F_N, |rho_offdiag|, phi0) from populations and a parity sweep.

    The coherence is the DFT component of the parity samples at frequency
    N, so <P> = 2|rho| cos(N gamma + phi0).
    """
    gammas = np.asarray(gammas, dtype=float)
    parity = np.asarray(parity, dtype=float)
    m = len(gammas)
    if m < 2 * n_qubits + 1:
        raise ValueError(f"need >= {2 * n_qubits + 1} gamma points for N={n_qubits}, got {m}")
    expected = gammas[0] + 2 * math.pi * np.arange(m) / m
    if not np.allclose(gammas, expected, atol=1e-9):
        raise ValueError("gamma grid must be uniform over [0, 2 pi)")
    comp = np.mean(parity * np.exp(-1j * n_qubits * gammas))
    mag = float(abs(comp))
    return (p_all0 + p_all1 + 2 * mag) / 2, mag, float(np.angle(comp))


def parity_spectrum(gammas, parity):
    """|DFT| amplitude per integer frequency 0..M/2 of a uniform parity sweep."""
    parity = np.asarray(parity, dtype=float)
    return np.abs(np.fft.rfft(parity)) / len(parity)


def bell_link_circuit(sender, receiver, sender_module="A", receiver_module="B") -> Circuit:
    regs = ((sender, sender_module), (receiver, receiver_module))
    return Circuit(regs, ((x(sender),), (link(sender, receiver, half=True),)), frozenset({frozenset((sender_module, receiver_module))}))


def calibrate_link_error(target_fidelity, noise: NoiseModel, sender, receiver, sender_module, receiver_module, tol=1e-10):
    """eps_link such that the simulated link Bell fidelity hits the target.

    Returns 0 when idling alone already falls below the target.
    """
    circ = bell_link_circuit(sender, receiver, sender_module, receiver_module)
    pair = frozenset((sender_module, receiver_module))
    bell = np.array([0, 1, 1, 0], dtype=complex) / math.sqrt(2)

    def fid(eps):
        eps_map = dict(noise.eps_link)
        eps_map[pair] = eps
        nm = NoiseModel(**{**noise.__dict__, "eps_link": eps_map})
        rho = simulate_density(circ, nm).entries
        return float(np.real(bell.conj() @ rho @ bell))

    if fid(0.0) <= target_fidelity:
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fid(mid) > target_fidelity:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
