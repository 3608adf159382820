"""End-to-end protocol runs combining dynamics, tomography and circuits."""

from __future__ import annotations

import csv
from importlib import resources

import numpy as np

from . import circuits, dynamics, tomo
from .devicelab import load_qubits
from .hilbert import DensityMatrix, HilbertSpace


def load_link_fidelities(path=None) -> dict:
    """Measured per-link QST and Bell fidelities keyed by module pair, e.g. "AB"."""
    if path is None:
        text = resources.files("coaxlink.data").joinpath("links.csv").read_text()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    out = {}
    for row in csv.DictReader(text.splitlines()):
        out[row["link"].replace("-", "")] = {k: float(v) for k, v in row.items() if k != "link"}
    return out


LINK_BELL_FIDELITY = {k: v["f_bell"] for k, v in load_link_fidelities().items()}
SINGLE_QUBIT_FIDELITY = 0.9985
CZ_FIDELITY = 0.961


def _single_tomography(rho: DensityMatrix, mode, shots, confusion, rng):
    if mode == "exact":
        return rho
    settings = tomo.TomographySettings(1, shots, "sampled")
    conf = None if confusion is None else [confusion]
    return tomo.state_tomography(tomo.simulate_tomography(rho, settings, conf, rng), conf)


def qst_process(model, g0, tau, ramp=4e-9, mode="exact", shots=3000, confusion=None, rng=None):
    """Process tomography of the transfer; returns (F_QST, ProcessMatrix, receiver outputs)."""
    outputs = []
    for psi in tomo.PROCESS_INPUTS:
        rec = dynamics.qst_protocol(model, g0, tau, sender_state=psi, ramp=ramp).receiver
        rec = DensityMatrix(HilbertSpace((2,)), tomo.project_psd(rec.entries))
        outputs.append(_single_tomography(rec, mode, shots, confusion, rng))
    chi = tomo.process_tomography(outputs)
    return tomo.process_fidelity(chi, tomo.chi_identity()), chi, outputs


def bell_tomography(rho: DensityMatrix, mode="exact", shots=3000, confusions=None, rng=None):
    """Bell fidelity of a two-qubit state after (optionally sampled) tomography."""
    target = dynamics.bell_target()
    if mode == "sampled":
        settings = tomo.TomographySettings(2, shots, "sampled")
        rho = tomo.state_tomography(tomo.simulate_tomography(rho, settings, confusions, rng), confusions)
    return float(np.real(target.conj() @ rho.entries @ target)), rho


def reference_ghz_noise(qubit_params=None, layout=None, single_fidelity=SINGLE_QUBIT_FIDELITY,
                    cz_fidelity=CZ_FIDELITY, link_fidelity=None, readout=True, **durations):
    """Gate-level noise model with eps_link fitted to the link Bell fidelities."""
    qubit_params = load_qubits() if qubit_params is None else qubit_params
    layout = layout or circuits.GhzLayout()
    link_fidelity = LINK_BELL_FIDELITY if link_fidelity is None else link_fidelity
    base = circuits.NoiseModel.from_device(
        qubit_params,
        circuits.calibrate_depolarizing(single_fidelity, 2),
        circuits.calibrate_depolarizing(cz_fidelity, 4),
        readout=readout,
        **durations,
    )
    eps = {}
    for pair in (layout.ab_link, layout.ae_link):
        ma, mb = layout.module_of(pair[0]), layout.module_of(pair[1])
        key = frozenset((ma, mb))
        if key not in layout.interconnects:
            continue
        target = link_fidelity["".join(sorted((ma, mb)))]
        eps[key] = circuits.calibrate_link_error(target, base, pair[0], pair[1], ma, mb)
    return circuits.NoiseModel(**{**base.__dict__, "eps_link": eps})


def ghz_run(step, noise, n_traj=2000, seed=0, layout=None, n_gamma=60):
    """Noisy GHZ preparation with exact per-trajectory diagnostics.

    Returns the trajectory-averaged fidelity, its standard error, and the
    parity-estimator inputs on a uniform gamma grid.
    """
    circ = circuits.build_ghz_circuit(step, layout)
    n = circ.n_qubits
    res = circuits.simulate_trajectories(circ, noise, n_traj, seed=seed, target=circuits.ghz_target(n), parity=True)
    gammas = circuits.ghz_gamma_grid(n_gamma)
    parity = res.parity(gammas)
    f_est, coh, phi0 = circuits.estimate_ghz_fidelity(res.p_all0, res.p_all1, gammas, parity, n)
    return {
        "step": step,
        "n_qubits": n,
        "fidelity": res.fidelity,
        "fidelity_stderr": res.fidelity_stderr,
        "fidelity_estimator": f_est,
        "coherence": coh,
        "phase": phi0,
        "p_all0": res.p_all0,
        "p_all1": res.p_all1,
        "gammas": gammas,
        "parity": parity,
        "circuit": circ,
    }
