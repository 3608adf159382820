import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coaxlink import units
from coaxlink.devicelab import CableParams, StandingMode, mode_params
from coaxlink.lossfit import (
    FitError, HangerResonance, LossModel, QDataPoint, loss_dataset_cable, fit_hanger, fit_loss_model,
    q_from_t1r, q_int, q_int_curve, q_loss, quarter_wave_impedance, read_q_csv, s21_hanger,
    t1r_from_q, transformer_cos,
)

from importlib import resources


def _mode(freq_ghz, l_nh=29.6, m=9):
    w = units.ghz_to_rad(freq_ghz)
    lm = units.nh(l_nh)
    return StandingMode(m, w, lm, 1 / (w**2 * lm), (-1) ** m)


def _quarter_wave_cable(freq_ghz):
    # CPW long enough that beta*l = pi/2 at freq_ghz
    beta = math.sqrt(402e-9 * 173e-12)
    return CableParams(cpw_length_m=math.pi / 2 / (units.ghz_to_rad(freq_ghz) * beta))


def test_q_loss_infinite_at_quarter_wave_and_zero_resistance():
    cab = _quarter_wave_cable(4.0)
    assert math.isinf(q_loss(LossModel(6e5, 0.01, 2, cab), _mode(4.0)))
    assert math.isinf(q_loss(LossModel(6e5, 0.0), _mode(4.0)))


def test_q_loss_arithmetic():
    # choose a CPW length with cos^2 = 0.25, i.e. beta*l = pi/3
    beta = math.sqrt(402e-9 * 173e-12)
    cab = CableParams(cpw_length_m=(math.pi / 3) / (units.ghz_to_rad(4.0) * beta))
    ql = q_loss(LossModel(6e5, 0.010, 2, cab), _mode(4.0))
    assert ql == pytest.approx(2 * math.pi * 4e9 * 29.6e-9 / (0.25 * 0.02), rel=1e-9)
    assert ql == pytest.approx(1.49e5, rel=0.01)


def test_q_int_limits():
    cab = _quarter_wave_cable(4.0)
    assert q_int(LossModel(6e5, 0.01, 2, cab), _mode(4.0)) == 6e5
    beta = math.sqrt(402e-9 * 173e-12)
    cab = CableParams(cpw_length_m=(math.pi / 3) / (units.ghz_to_rad(4.0) * beta))
    ql = 2 * math.pi * 4e9 * 29.6e-9 / (0.25 * 0.02)
    assert q_int(LossModel(ql, 0.01, 2, cab), _mode(4.0)) == pytest.approx(ql / 2, rel=1e-9)


def test_t1r_conversions():
    assert units.to_us(t1r_from_q(8.1e5, units.ghz_to_rad(4.885))) == pytest.approx(26.39, abs=0.01)
    assert units.to_us(t1r_from_q(1.2e6, units.ghz_to_rad(5.257))) == pytest.approx(36.3, abs=0.05)
    w = units.ghz_to_rad(4.4)
    assert q_from_t1r(t1r_from_q(3e5, w), w) == pytest.approx(3e5, rel=1e-14)
    with pytest.raises(ValueError):
        t1r_from_q(-1, w)


def test_quarter_wave_impedance():
    assert quarter_wave_impedance(50, math.inf) == 0.0
    assert quarter_wave_impedance(50, 50) == 50
    assert quarter_wave_impedance(50, 25) == 100


def _synthetic_points(model, ms, rng=None, noise=0.0):
    pts = []
    for m in ms:
        md = mode_params(model.cable, m)
        q = q_int(model, md)
        if rng is not None:
            q *= 1 + noise * rng.normal()
        pts.append(QDataPoint(md.omega, q, m=m))
    return pts


def test_fit_noiseless_exact():
    model = LossModel(6.0e5, 0.012, 2, loss_dataset_cable())
    res = fit_loss_model(_synthetic_points(model, range(8, 13)), loss_dataset_cable())
    assert res.q_cb == pytest.approx(6.0e5, rel=1e-6)
    assert res.r_s == pytest.approx(0.012, rel=1e-6)


def test_fit_noisy_roundtrip():
    model = LossModel(6.0e5, 0.012, 2, loss_dataset_cable())
    errs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        res = fit_loss_model(_synthetic_points(model, range(8, 13), rng, 0.01), loss_dataset_cable())
        errs.append(abs(res.q_cb / 6.0e5 - 1))
    assert max(errs) < 0.05


def test_fit_on_shipped_dataset():
    path = resources.files("coaxlink.data").joinpath("mode_q_int.csv")
    pts = read_q_csv(path)
    assert len(pts) == 5
    res = fit_loss_model(pts, loss_dataset_cable())
    assert abs(res.q_cb / 6.0e5 - 1) < 0.15
    assert res.q_cb >= 0.99 * max(p.q_int for p in pts)
    assert np.all(np.isfinite(res.covariance))


def test_fit_preconditions():
    cab = loss_dataset_cable()
    with pytest.raises(ValueError):
        fit_loss_model([QDataPoint(1e10, 1e5)] * 2, cab)
    # every point at the quarter-wave match leaves R_s unidentifiable
    f = 4.0
    qcab = _quarter_wave_cable(f)
    w = units.ghz_to_rad(f)
    w2 = units.ghz_to_rad(3 * f)  # odd multiples are also at cos = 0
    pts = [QDataPoint(w, 5e5, m=9), QDataPoint(w2, 5e5, m=27), QDataPoint(w, 5.1e5, m=9)]
    with pytest.raises(FitError):
        fit_loss_model(pts, qcab)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(min_value=1e4, max_value=1e7),
    st.floats(min_value=0.0, max_value=0.1),
    st.floats(min_value=3.0, max_value=6.0),
)
def test_harmonic_bounds(q_cb, r_s, f):
    model = LossModel(q_cb, r_s)
    md = mode_params(model.cable, 10, omega=units.ghz_to_rad(f))
    qi = q_int(model, md)
    assert qi <= q_cb * (1 + 1e-12)
    assert qi <= q_loss(model, md) * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.05, max_value=1.5), st.floats(min_value=3.0, max_value=6.0))
def test_q_loss_periodic_in_transformer_phase(phase, f):
    beta = math.sqrt(402e-9 * 173e-12)
    w = units.ghz_to_rad(f)
    l1 = phase / (w * beta)
    l2 = (phase + math.pi) / (w * beta)
    md = _mode(f)
    a = q_loss(LossModel(6e5, 0.01, 2, CableParams(cpw_length_m=l1)), md)
    b = q_loss(LossModel(6e5, 0.01, 2, CableParams(cpw_length_m=l2)), md)
    assert a == pytest.approx(b, rel=1e-9)


def test_q_int_curve_matches_pointwise():
    model = LossModel(6e5, 0.012, 2, loss_dataset_cable())
    ms = range(8, 13)
    curve = q_int_curve(model, [mode_params(model.cable, m).omega for m in ms])
    assert np.allclose(curve, [q_int(model, mode_params(model.cable, m)) for m in ms], rtol=1e-12)
    assert transformer_cos(model.cable, 0.0) == 1.0


def _hanger_grid(res, span_lw=20, n=801):
    lw = res.f0 / res.q_loaded
    return np.linspace(res.f0 - span_lw * lw / 2, res.f0 + span_lw * lw / 2, n)


def test_hanger_lossless_full_dip():
    res = HangerResonance(4.885e9, 1e15, 1e5)
    assert abs(s21_hanger(np.array([4.885e9]), res)[0]) < 1e-8


def test_hanger_noiseless_roundtrip():
    res = HangerResonance(4.885e9, 8.1e5, 2e5, 1.0, 0.3)
    f = _hanger_grid(res)
    fit = fit_hanger(f, s21_hanger(f, res))
    assert fit.q_int == pytest.approx(8.1e5, rel=1e-6)
    assert fit.q_c == pytest.approx(2e5, rel=1e-6)
    assert fit.f0 == pytest.approx(4.885e9, rel=1e-12)


def test_hanger_deep_undercoupled_monte_carlo():
    res = HangerResonance(4.885e9, 4.2e6, 1e5)
    f = _hanger_grid(res, n=401)
    clean = s21_hanger(f, res)
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        noisy = clean + 0.005 * (rng.normal(size=f.size) + 1j * rng.normal(size=f.size)) / math.sqrt(2)
        errs.append(abs(fit_hanger(f, noisy).q_int / 4.2e6 - 1))
    assert max(errs) < 0.2


def test_hanger_resonance_outside_window():
    res = HangerResonance(4.885e9, 8.1e5, 2e5)
    f = np.linspace(4.0e9, 4.1e9, 401)
    with pytest.raises(FitError):
        fit_hanger(f, s21_hanger(f, res))


def test_cable_table():
    from coaxlink.lossfit import load_cable_table

    rows = load_cable_table()
    assert [r["q_cb"] for r in rows] == [4.2e6, 7.4e5, 2.7e5]
    assert rows[0]["material"] == "Al" and rows[0]["diameter_mm"] == 2.1
