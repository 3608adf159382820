"""Lindblad dynamics of the qubit - communication mode - qubit system.

The rotating frame sits at the communication-mode frequency, so on
resonance every detuning is zero and the Hamiltonian is just the exchange
couplings

    H = sum_i dq_i n_i + sum_m D_m a_m^+ a_m
        + g1 sum_m (s1 a_m^+ + h.c.) + g2 sum_m p_m (s2 a_m^+ + h.c.)

with p_m = (-1)^m the far-end parity of mode m.  Tensor order is
(q1, modes..., q2).  Times are in seconds and rates in rad/s or 1/s.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit

from . import units
from .hilbert import (
    SIGMA_MINUS,
    SZ,
    DensityMatrix,
    HilbertSpace,
    destroy,
    embed,
    partial_trace_matrix,
)
from .integrate import dopri5

CHANNELS = ("dq1", "dq2", "g1", "g2")

RTOL = 1e-8
ATOL = 1e-10
SAMPLE_TOL = 1e-6


@dataclass(frozen=True)
class RotatingFrameModel:
    gamma1: tuple = (0.0, 0.0)
    gamma_phi: tuple = (0.0, 0.0)
    kappa: tuple = (0.0,)
    mode_detunings: tuple = (0.0,)
    mode_parities: tuple = (1,)
    d: int = 3
    thermal_population: float = 0.0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("mode truncation d must be >= 2")
        n = len(self.mode_detunings)
        if len(self.kappa) != n or len(self.mode_parities) != n:
            raise ValueError("kappa, mode_detunings and mode_parities need one entry per mode")
        rates = tuple(self.gamma1) + tuple(self.gamma_phi) + tuple(self.kappa)
        if any(r < 0 for r in rates):
            raise ValueError("decoherence rates must be non-negative")
        if not 0.0 <= self.thermal_population < 0.5:
            raise ValueError("thermal population must lie in [0, 0.5)")

    @property
    def n_modes(self):
        return len(self.mode_detunings)

    @property
    def space(self) -> HilbertSpace:
        mode_labels = ["R"] + [f"M{k}" for k in range(1, self.n_modes)]
        return HilbertSpace((2,) + (self.d,) * self.n_modes + (2,), ("q1", *mode_labels, "q2"))

    def noiseless(self) -> RotatingFrameModel:
        return replace(
            self,
            gamma1=(0.0, 0.0),
            gamma_phi=(0.0, 0.0),
            kappa=(0.0,) * self.n_modes,
            thermal_population=0.0,
        )

    def operators(self):
        """Raw (n x n) operator arrays for the channels and collapse terms."""
        space = self.space
        n_m = self.n_modes
        s1 = embed(SIGMA_MINUS, 0, space).entries
        s2 = embed(SIGMA_MINUS, n_m + 1, space).entries
        modes = [embed(destroy(self.d), 1 + k, space).entries for k in range(n_m)]
        x1 = sum(s1 @ a.conj().T + s1.conj().T @ a for a in modes)
        x2 = sum(p * (s2 @ a.conj().T + s2.conj().T @ a) for p, a in zip(self.mode_parities, modes))
        h_static = sum(dm * a.conj().T @ a for dm, a in zip(self.mode_detunings, modes))
        if isinstance(h_static, int):
            h_static = np.zeros((space.dim, space.dim), dtype=complex)
        ops = {
            "dq1": s1.conj().T @ s1,
            "dq2": s2.conj().T @ s2,
            "g1": x1,
            "g2": x2,
        }
        collapse = []
        for g, s in zip(self.gamma1, (s1, s2)):
            if g > 0:
                collapse.append(math.sqrt(g) * s)
        for k, g in enumerate(self.gamma_phi):
            if g > 0:
                collapse.append(math.sqrt(g / 2) * embed(SZ, 0 if k == 0 else n_m + 1, space).entries)
        for kap, a in zip(self.kappa, modes):
            if kap > 0:
                collapse.append(math.sqrt(kap) * a)
        return h_static, ops, collapse, modes

    @classmethod
    def from_device(cls, sender, receiver, t1r=None, q_int=None, mode=None, d=3, parity=None, **kw):
        """Single-mode model from two ``QubitParams`` and the mode lifetime.

        Give either ``t1r`` (s) or ``q_int`` together with ``mode`` (a
        ``StandingMode``).  ``parity`` defaults to the mode's parity sign.
        """
        if t1r is None and q_int is not None:
            t1r = q_int / mode.omega
        kappa = 0.0 if t1r in (None, math.inf) else 1.0 / t1r
        if parity is None:
            parity = mode.parity_sign if mode is not None else 1
        return cls(
            gamma1=(sender.gamma1, receiver.gamma1),
            gamma_phi=(sender.gamma_phi, receiver.gamma_phi),
            kappa=(kappa,),
            mode_detunings=(0.0,),
            mode_parities=(parity,),
            d=d,
            **kw,
        )


@dataclass(frozen=True)
class Segment:
    """Control values over one interval; ``ramp`` moves start->end on a raised cosine."""

    duration: float
    start: tuple
    end: tuple
    shape: str = "flat"

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("segment durations must be positive")
        if self.shape not in ("flat", "ramp"):
            raise ValueError(f"unknown segment shape {self.shape!r}")
        if not all(math.isfinite(v) for v in self.start + self.end):
            raise ValueError("setpoints must be finite")

    def value(self, s):
        if self.shape == "flat":
            return self.end
        frac = 0.5 * (1.0 - math.cos(math.pi * min(max(s / self.duration, 0.0), 1.0)))
        return tuple(p + (n - p) * frac for p, n in zip(self.start, self.end))


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise control of (dq1, dq2, g1, g2) in rad/s.

    Builder methods return new schedules.  ``current`` holds the values the
    next segment starts from, so ``set`` changes them without spending time.
    """

    segments: tuple = ()
    current: tuple = (0.0, 0.0, 0.0, 0.0)

    @property
    def duration(self):
        return sum(s.duration for s in self.segments)

    def _next(self, changes):
        bad = set(changes) - set(CHANNELS)
        if bad:
            raise ValueError(f"unknown control channels {sorted(bad)}")
        cur = dict(zip(CHANNELS, self.current))
        cur.update({k: float(v) for k, v in changes.items()})
        return tuple(cur[c] for c in CHANNELS)

    def set(self, **changes) -> ControlSchedule:
        return ControlSchedule(self.segments, self._next(changes))

    def hold(self, duration, **changes) -> ControlSchedule:
        end = self._next(changes)
        if duration < 0:
            raise ValueError("durations must be non-negative")
        if duration == 0:
            return ControlSchedule(self.segments, end)
        return ControlSchedule(self.segments + (Segment(duration, end, end),), end)

    def ramp(self, duration, **changes) -> ControlSchedule:
        end = self._next(changes)
        if duration < 0:
            raise ValueError("durations must be non-negative")
        if duration == 0:
            return ControlSchedule(self.segments, end)
        return ControlSchedule(self.segments + (Segment(duration, self.current, end, "ramp"),), end)

    def flat_top(self, plateau, ramp=0.0, **setpoints) -> ControlSchedule:
        """Ramp to ``setpoints``, hold for ``plateau``, ramp back.

        Pulse area is ``(plateau + ramp)`` times the setpoint.
        """
        cur = dict(zip(CHANNELS, self.current))
        back = {k: cur[k] for k in setpoints}
        return self.ramp(ramp, **setpoints).hold(plateau).ramp(ramp, **back)

    def value(self, t):
        """Channel values at absolute time ``t``."""
        t0 = 0.0
        for seg in self.segments:
            if t < t0 + seg.duration:
                return seg.value(t - t0)
            t0 += seg.duration
        return self.current

    def area(self, channel):
        """Integral of one channel over the schedule (rad)."""
        k = CHANNELS.index(channel)
        total = 0.0
        for seg in self.segments:
            total += seg.duration * 0.5 * (seg.start[k] + seg.end[k]) if seg.shape == "ramp" else seg.duration * seg.end[k]
        return total


@dataclass
class EvolutionResult:
    space: HilbertSpace
    times: np.ndarray
    states: np.ndarray
    final: DensityMatrix
    stats: dict = field(default_factory=dict)

    def density(self, i) -> DensityMatrix:
        return DensityMatrix(self.space, self.states[i], tolerance=SAMPLE_TOL)

    def expectation(self, op):
        return np.real(np.einsum("ij,tji->t", op, self.states))

    def excitation(self, label):
        """<n> of one subsystem at every sample time (P1 for a qubit)."""
        k = self.space.index(label)
        d = self.space.dims[k]
        n_op = embed(np.diag(np.arange(d)).astype(complex), k, self.space).entries
        return self.expectation(n_op)

    def trace_drift(self):
        return float(np.max(np.abs(np.trace(self.states, axis1=1, axis2=2) - 1.0)))


def ground_state(model: RotatingFrameModel) -> DensityMatrix:
    """All subsystems in |0>, or thermal with ``model.thermal_population``."""
    space = model.space
    p = model.thermal_population
    m = np.array([[1.0]], dtype=complex)
    for d in space.dims:
        r = np.zeros((d, d), dtype=complex)
        r[0, 0] = 1.0 - p
        r[1, 1] = p
        m = np.kron(m, r)
    return DensityMatrix(space, m)


def product_state(model: RotatingFrameModel, q1=None, q2=None, mode_level=0) -> DensityMatrix:
    """Pure product state; ``q1``/``q2`` are 2-vectors (default |0>)."""
    space = model.space
    q1 = np.array([1, 0] if q1 is None else q1, dtype=complex)
    q2 = np.array([1, 0] if q2 is None else q2, dtype=complex)
    q1 = q1 / np.linalg.norm(q1)
    q2 = q2 / np.linalg.norm(q2)
    v = q1
    for _ in range(model.n_modes):
        e = np.zeros(model.d, dtype=complex)
        e[mode_level] = 1.0
        v = np.kron(v, e)
        mode_level = 0
    v = np.kron(v, q2)
    return DensityMatrix(space, np.outer(v, v.conj()))


def evolve_lindblad(model: RotatingFrameModel, rho0: DensityMatrix, schedule: ControlSchedule, sample_times=(), rtol=RTOL, atol=ATOL):
    """Integrate the master equation across ``schedule``.

    The integrator restarts at every segment boundary so ramps and jumps
    never fall inside a step.
    """
    space = model.space
    if rho0.space.dims != space.dims:
        raise ValueError(f"initial state on {rho0.space.dims}, model expects {space.dims}")
    h_static, ops, collapse, _ = model.operators()
    n = space.dim
    decay = sum((c.conj().T @ c for c in collapse), np.zeros((n, n), dtype=complex))
    h_eff0 = h_static - 0.5j * decay
    op_list = [ops[c] for c in CHANNELS]

    def rhs_for(values_fn):
        def rhs(t, y):
            rho = y.reshape(n, n)
            vals = values_fn(t)
            h = h_eff0 + sum(v * o for v, o in zip(vals, op_list) if v != 0.0)
            out = -1j * (h @ rho - rho @ h.conj().T)
            for c in collapse:
                out += c @ rho @ c.conj().T
            return out.reshape(-1)

        return rhs

    sample_times = np.asarray(sample_times, dtype=float)
    total = schedule.duration
    if len(sample_times) and (sample_times.min() < 0 or sample_times.max() > total * (1 + 1e-12) + 1e-18):
        raise ValueError("sample times must lie within the schedule")
    states = np.empty((len(sample_times), n, n), dtype=complex)
    filled = np.zeros(len(sample_times), dtype=bool)
    y = np.array(rho0.entries, dtype=complex).reshape(-1)
    t0 = 0.0
    stats = {"accepted": 0, "rejected": 0}
    n_seg = len(schedule.segments)
    for i, seg in enumerate(schedule.segments):
        t1 = t0 + seg.duration
        upper = t1 if i < n_seg - 1 else np.inf
        idx = np.nonzero((~filled) & (sample_times <= upper))[0]

        def values_fn(t, seg=seg, t0=t0):
            return seg.value(t - t0)

        local = np.clip(sample_times[idx], t0, t1)
        y, samp, st = dopri5(rhs_for(values_fn), t0, y, t1, local, rtol=rtol, atol=atol)
        states[idx] = samp.reshape(len(idx), n, n)
        filled[idx] = True
        stats["accepted"] += st["accepted"]
        stats["rejected"] += st["rejected"]
        t0 = t1
    if not schedule.segments and len(sample_times):
        states[:] = rho0.entries
    rho_f = y.reshape(n, n)
    rho_f = 0.5 * (rho_f + rho_f.conj().T)
    return EvolutionResult(space, sample_times, states, DensityMatrix(space, rho_f, tolerance=SAMPLE_TOL), stats)


# Protocols


def vacuum_rabi_chevron(model: RotatingFrameModel, detunings, times, g, threads=1):
    """P1 of the sender after exciting it and coupling it to the mode.

    Returns an array of shape (len(detunings), len(times)).
    """
    detunings = np.asarray(detunings, dtype=float)
    times = np.asarray(times, dtype=float)
    if detunings.size == 0 or times.size == 0:
        raise ValueError("detuning and time grids must be non-empty")
    rho0 = product_state(model, q1=[0, 1])
    t_end = float(times.max())

    def one(delta):
        sched = ControlSchedule().hold(t_end, dq1=delta, g1=g)
        res = evolve_lindblad(model, rho0, sched, times)
        return res.excitation("q1")

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(one, detunings))
    else:
        rows = [one(dlt) for dlt in detunings]
    return np.array(rows)


def swap_time(g):
    """Full qubit-mode photon swap, pi / (2 g)."""
    return math.pi / (2.0 * abs(g))


def transfer_time(g0):
    """Qubit-mode-qubit transfer time pi / (sqrt(2) g0) for equal couplings."""
    return math.pi / (math.sqrt(2.0) * abs(g0))


@dataclass
class RingdownResult:
    waits: np.ndarray
    p1: np.ndarray
    t1r: float
    amplitude: float
    method: str


T1R_CAP = 1.0


def fit_exponential(t, y, cap=T1R_CAP):
    """Fit y = A exp(-t/T); returns (T, A, method).

    Log-linear least squares when every sample is positive, otherwise a
    bounded nonlinear fit.  T above ``cap`` (seconds) is reported as inf.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.all(y > 0):
        slope, intercept = np.polyfit(t, np.log(y), 1)
        method = "log-linear"
        amp = math.exp(intercept)
        rate = -slope
    else:
        def f(tt, a, r):
            return a * np.exp(-r * tt)

        popt, _ = curve_fit(f, t, y, p0=[max(y.max(), 1e-6), 1.0 / max(t.max(), 1e-12)], bounds=([0, 0], [np.inf, np.inf]))
        amp, rate = popt
        method = "bounded-nonlinear"
    if rate <= 1.0 / cap:
        return math.inf, amp, method
    return 1.0 / rate, amp, method


def t1r_ringdown(model: RotatingFrameModel, waits, g) -> RingdownResult:
    """Swap a photon into the mode, wait, swap it back, read the sender P1."""
    waits = np.asarray(waits, dtype=float)
    ts = swap_time(g)
    rho0 = product_state(model, q1=[0, 1])
    swap_in = ControlSchedule().hold(ts, g1=g)
    after_in = evolve_lindblad(model, rho0, swap_in).final
    idle = ControlSchedule().hold(max(waits.max(), 1e-12), g1=0.0)
    stored = evolve_lindblad(model, after_in, idle, waits)
    swap_out = ControlSchedule().hold(ts, g1=g)
    p1 = np.empty(len(waits))
    for i in range(len(waits)):
        res = evolve_lindblad(model, stored.density(i), swap_out)
        p1[i] = float(np.real(res.final.entries.diagonal() @ _qubit_number(model, "q1")))
    t1r, amp, method = fit_exponential(waits, p1)
    return RingdownResult(waits, p1, t1r, amp, method)


def _qubit_number(model, label):
    space = model.space
    k = space.index(label)
    return embed(np.diag([0.0, 1.0]).astype(complex), k, space).entries.diagonal().real


def _pair_state(model, final: DensityMatrix) -> DensityMatrix:
    space = model.space
    keep = [0, space.n_subsystems - 1]
    m = partial_trace_matrix(final.entries, space.dims, keep)
    m = 0.5 * (m + m.conj().T)
    return DensityMatrix(space.subspace(keep), m, tolerance=SAMPLE_TOL)


def _rz(phi):
    return np.diag([1.0, np.exp(-1j * phi)])


@dataclass
class QSTResult:
    pair: DensityMatrix
    receiver: DensityMatrix
    phase: float
    transfer_probability: float
    schedule: ControlSchedule


def qst_schedule(g0, tau, ramp=0.0):
    """Both couplers on together; ``tau`` is the plateau, ramps sit outside it."""
    return ControlSchedule().flat_top(tau, ramp, g1=g0, g2=g0)


def _receiver_phase(model, schedule):
    """Phase the ideal transfer imprints on the receiver's |1> amplitude."""
    clean = model.noiseless()
    rho0 = product_state(clean, q1=[1, 1])
    res = evolve_lindblad(clean, rho0, schedule)
    # coherence between |0..0> and the receiver-excited state
    space = clean.space
    levels0 = [0] * space.n_subsystems
    levels1 = [0] * (space.n_subsystems - 1) + [1]
    i0 = space.basis_index(levels0)
    i1 = space.basis_index(levels1)
    c = res.final.entries[i1, i0]
    p = float(np.real(res.final.entries[i1, i1])) * 2
    return (float(np.angle(c)) if abs(c) > 1e-12 else 0.0), p


def qst_protocol(model: RotatingFrameModel, g0, tau, sender_state=(0, 1), ramp=0.0, schedule=None) -> QSTResult:
    """Transfer the sender qubit's state to the receiver through the mode.

    The receiver output is corrected by a virtual Z that removes the
    deterministic phase of the ideal transfer (computed once from the
    noiseless model).
    """
    schedule = qst_schedule(g0, tau, ramp) if schedule is None else schedule
    rho0 = product_state(model, q1=sender_state)
    if schedule.duration == 0:
        pair = _pair_state(model, rho0)
        rec = DensityMatrix(HilbertSpace((2,)), partial_trace_matrix(rho0.entries, model.space.dims, [model.space.n_subsystems - 1]))
        return QSTResult(pair, rec, 0.0, 0.0, schedule)
    phase, p_transfer = _receiver_phase(model, schedule)
    res = evolve_lindblad(model, rho0, schedule)
    pair = _pair_state(model, res.final)
    rec = partial_trace_matrix(pair.entries, (2, 2), [1])
    u = _rz(phase)
    rec = u @ rec @ u.conj().T
    rec = 0.5 * (rec + rec.conj().T)
    return QSTResult(pair, DensityMatrix(HilbertSpace((2,)), rec, tolerance=SAMPLE_TOL), phase, p_transfer, schedule)


@dataclass
class BellResult:
    rho: DensityMatrix
    raw: DensityMatrix
    phase: float
    schedule: ControlSchedule


def bell_schedule(g0, tau_b, ramp=0.0, swap=None):
    """Half swap sender->mode for ``tau_b``, then full swap mode->receiver.

    Ramps are area-preserving here: each stage's plateau is shortened by
    ``ramp`` so the pulse areas stay ``tau_b`` and ``pi/(2 g0)``.
    """
    swap = swap_time(g0) if swap is None else swap
    s = ControlSchedule().flat_top(tau_b - ramp, ramp, g1=g0)
    return s.flat_top(swap - ramp, ramp, g2=g0)


def bell_target():
    return np.array([0, 1, 1, 0], dtype=complex) / math.sqrt(2)


def bell_protocol(model: RotatingFrameModel, g0, tau_b, ramp=0.0, schedule=None) -> BellResult:
    """Entangle sender and receiver by sharing half a photon.

    Reports the (q1, q2) density matrix with the deterministic relative phase
    between |10> and |01> removed by a virtual Z on the receiver.
    """
    schedule = bell_schedule(g0, tau_b, ramp) if schedule is None else schedule
    clean = model.noiseless()
    ideal = _pair_state(clean, evolve_lindblad(clean, product_state(clean, q1=[0, 1]), schedule).final)
    c = ideal.entries[1, 2]  # <01|rho|10>
    phase = float(np.angle(c)) if abs(c) > 1e-12 else 0.0
    res = evolve_lindblad(model, product_state(model, q1=[0, 1]), schedule)
    raw = _pair_state(model, res.final)
    u = np.kron(np.eye(2), _rz(phase))
    fixed = u @ raw.entries @ u.conj().T
    fixed = 0.5 * (fixed + fixed.conj().T)
    return BellResult(DensityMatrix(raw.space, fixed, tolerance=SAMPLE_TOL), raw, phase, schedule)


def reference_link_model(sender="Q1A", receiver="Q3B", t1r_us=26.4, mode_m=11, d=3, qubits=None, **kw):
    """A-B link with the tabulated qubit decoherence and the measured mode lifetime."""
    from .devicelab import load_qubits

    qubits = load_qubits() if qubits is None else qubits
    parity = -1 if mode_m % 2 else 1
    return RotatingFrameModel.from_device(
        qubits[sender], qubits[receiver], t1r=units.us(t1r_us), parity=parity, d=d, **kw
    )
