"""Adaptive Dormand-Prince 5(4) integrator for complex ODE systems.

Sample points between accepted steps come from cubic Hermite interpolation
on (y, f) at the step ends, which the FSAL property gives for free.
"""

from __future__ import annotations

import numpy as np

# Dormand & Prince (1980) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_ERR = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class IntegratorError(RuntimeError):
    pass


def _hermite(t0, y0, f0, t1, y1, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def dopri5(f, t0, y0, t1, sample_times=(), rtol=1e-8, atol=1e-10, h0=None, h_min=1e-22, max_steps=1_000_000):
    """Integrate ``y' = f(t, y)`` from t0 to t1.

    Returns ``(y(t1), samples, stats)`` where ``samples`` holds the state at
    each of ``sample_times`` (which must lie in [t0, t1]).
    """
    y = np.array(y0, dtype=complex)
    t = float(t0)
    t1 = float(t1)
    samples_t = np.asarray(sample_times, dtype=float)
    order = np.argsort(samples_t, kind="stable")
    out = np.empty((len(samples_t),) + y.shape, dtype=complex)
    k_next = 0
    n_acc = n_rej = 0
    if len(samples_t) and (samples_t.min() < t0 - 1e-18 or samples_t.max() > t1 + 1e-18):
        raise ValueError("sample times must lie inside the integration interval")

    while k_next < len(order) and samples_t[order[k_next]] <= t:
        out[order[k_next]] = y
        k_next += 1
    span = t1 - t
    if span <= 0:
        while k_next < len(order):
            out[order[k_next]] = y
            k_next += 1
        return y, out, {"accepted": 0, "rejected": 0}

    fy = f(t, y)
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean(np.abs(y / scale) ** 2))
        d1 = np.sqrt(np.mean(np.abs(fy / scale) ** 2))
        h0 = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6 * span
    h = min(float(h0), span)

    k = [None] * 7
    err = 0.0
    while t < t1:
        if n_acc + n_rej > max_steps:
            raise IntegratorError(f"exceeded {max_steps} steps at t={t:.6e}")
        if h < h_min or t + h == t:
            raise IntegratorError(f"step size underflow (h={h:.3e}) at t={t:.6e}; last error norm {err:.3e}")
        h = min(h, t1 - t)
        k[0] = fy
        for i in range(1, 7):
            dy = sum(a * k[j] for j, a in enumerate(_A[i]) if a != 0.0)
            k[i] = f(t + _C[i] * h, y + h * dy)
        y_new = y + h * sum(b * k[j] for j, b in enumerate(_B) if b != 0.0)
        y_err = h * sum(b * k[j] for j, b in enumerate(_B_ERR) if b != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean(np.abs(y_err / scale) ** 2)))
        if err <= 1.0:
            t_new = t + h if t1 - (t + h) > 1e-15 * abs(t1) else t1
            f_new = k[6]
            while k_next < len(order) and samples_t[order[k_next]] <= t_new:
                ts = samples_t[order[k_next]]
                out[order[k_next]] = _hermite(t, y, fy, t_new, y_new, f_new, ts)
                k_next += 1
            t, y, fy = t_new, y_new, f_new
            n_acc += 1
            fac = 0.9 * err ** -0.2 if err > 0 else 5.0
            h *= min(5.0, max(0.2, fac))
        else:
            n_rej += 1
            h *= max(0.1, 0.9 * err ** -0.2)
    while k_next < len(order):
        out[order[k_next]] = y
        k_next += 1
    return y, out, {"accepted": n_acc, "rejected": n_rej}
