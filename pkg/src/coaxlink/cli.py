"""Command-line scenario runner: ``coaxlink run|validate|list``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import time
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import circuits, config, dynamics, experiments, lossfit, tomo, units
from .devicelab import load_qubits, reference_cable
from .integrate import IntegratorError

ENV_PREFIX = "COAXLINK_"
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

DESCRIPTIONS = {
    "chevron": "vacuum Rabi P1(detuning, time) map of a qubit against the communication mode",
    "ringdown": "swap in / wait / swap out lifetime measurement of a standing-wave mode",
    "qst": "qubit-to-qubit state transfer with process tomography",
    "bell": "half-photon swap Bell state with state tomography",
    "ghz": "noisy GHZ preparation (steps I-IV) with parity sweep",
    "lossfit": "fit of cable Q_cb and wirebond R_s to per-mode Q_int",
    "hanger": "S21 hanger resonance fit (file or synthetic trace)",
}


# Output helpers; formatting is fixed so reruns are byte-identical.


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _json(obj):
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _matrix_rows(m):
    m = np.asarray(m)
    return [(i, j, m[i, j].real, m[i, j].imag) for i in range(m.shape[0]) for j in range(m.shape[1])]


def _grid(g):
    return np.linspace(g.start, g.stop, g.num)


def _device_qubits(dev):
    qs = load_qubits(dev.qubits_file)
    for label, ov in dev.overrides.items():
        if label not in qs:
            raise config.ConfigError([(f"device.overrides.{label}", "unknown qubit")])
        qs[label] = replace(qs[label], **{k: v for k, v in ov.model_dump().items() if v is not None})
    for role in (dev.sender, dev.receiver):
        if role not in qs:
            raise config.ConfigError([("device", f"unknown qubit {role}")])
    return qs


# Scenario construction (shared by run and validate)


def _link_model(cfg, qs):
    parity = -1 if cfg.mode_m % 2 else 1
    return dynamics.RotatingFrameModel.from_device(
        qs[cfg.device.sender], qs[cfg.device.receiver], t1r=units.us(cfg.t1r_us), parity=parity, d=cfg.mode_cutoff
    )


def _chevron_model(cfg, qs):
    base = dynamics.RotatingFrameModel.from_device(
        qs[cfg.device.sender], qs[cfg.device.receiver], t1r=units.us(cfg.t1r_us), d=cfg.mode_cutoff
    )
    if not cfg.decoherence:
        base = base.noiseless()
    if cfg.n_modes == 2:
        kap = base.kappa[0]
        base = replace(
            base,
            kappa=(kap, kap),
            mode_detunings=(0.0, units.ghz_to_rad(cfg.fsr_ghz)),
            mode_parities=(1, -1),
        )
    return base


def _ringdown_model(cfg, qs):
    omega = units.ghz_to_rad(cfg.mode_freq_ghz)
    t1r = lossfit.t1r_from_q(cfg.q_int, omega)
    model = dynamics.RotatingFrameModel.from_device(qs[cfg.device.sender], qs[cfg.device.receiver], t1r=t1r)
    if not cfg.qubit_decoherence:
        model = replace(model, gamma1=(0.0, 0.0), gamma_phi=(0.0, 0.0))
    return model, t1r


def _ghz_layout(cfg):
    lay = cfg.layout
    return circuits.GhzLayout(
        modules={k: tuple(v) for k, v in lay.modules.items()},
        interconnects=frozenset(frozenset(p) for p in lay.interconnects),
        ab_link=tuple(lay.ab_link),
        ae_link=tuple(lay.ae_link),
    )


def _ghz_noise(cfg, qs, layout):
    nz = cfg.noise
    if not nz.enabled:
        return circuits.NoiseModel()
    return experiments.reference_ghz_noise(
        qs,
        layout,
        single_fidelity=nz.single_qubit_fidelity,
        cz_fidelity=nz.cz_fidelity,
        link_fidelity=nz.link_bell_fidelity,
        t_single=nz.single_ns * 1e-9,
        t_cz=nz.cz_ns * 1e-9,
        decohere_during_gates=nz.decohere_during_gates,
    )


def build(cfg):
    """Construct everything a scenario needs without running it."""
    name = cfg.scenario
    if name in ("chevron", "ringdown", "qst", "bell", "ghz"):
        qs = _device_qubits(cfg.device)
    if name == "chevron":
        return {"model": _chevron_model(cfg, qs)}
    if name == "ringdown":
        model, t1r = _ringdown_model(cfg, qs)
        return {"model": model, "t1r": t1r}
    if name in ("qst", "bell"):
        return {"model": _link_model(cfg, qs), "qubits": qs}
    if name == "ghz":
        layout = _ghz_layout(cfg)
        circ = circuits.build_ghz_circuit(cfg.step, layout)
        missing = [q for q in circ.labels if q not in qs]
        if missing:
            raise config.ConfigError([("layout.modules", f"qubits missing from device table: {missing}")])
        return {"layout": layout, "circuit": circ, "qubits": qs}
    if name == "lossfit":
        cable = replace(reference_cable(), length_m=cfg.cable_length_m, cpw_length_m=cfg.cpw_length_mm * 1e-3, n_cpw=cfg.n_cpw)
        return {"cable": cable}
    return {}


# Scenario runners: each returns (files {name: text}, summary dict)


def run_chevron(cfg, built, threads):
    g = units.mhz_to_rad(cfg.g_mhz)
    det = _grid(cfg.detuning_mhz)
    ts = _grid(cfg.time_ns)
    p1 = dynamics.vacuum_rabi_chevron(built["model"], units.mhz_to_rad(det), ts * 1e-9, g, threads=threads)
    rows = [(d, t, p) for d, row in zip(det, p1) for t, p in zip(ts, row)]
    k0 = int(np.argmin(np.abs(det)))
    res = p1[k0]
    interior = np.nonzero((res[1:-1] < res[:-2]) & (res[1:-1] <= res[2:]))[0]
    first_min = float(ts[interior[0] + 1]) if len(interior) else None
    return {"chevron.csv": _csv(["detuning_mhz", "t_ns", "p1"], rows)}, {
        "first_minimum_ns_at_min_detuning": first_min,
        "min_detuning_mhz": float(det[k0]),
    }


def run_ringdown(cfg, built, threads):
    waits = _grid(cfg.wait_us) * 1e-6
    r = dynamics.t1r_ringdown(built["model"], waits, units.mhz_to_rad(cfg.g_mhz))
    files = {"ringdown.csv": _csv(["wait_us", "p1"], zip(waits * 1e6, r.p1))}
    return files, {"t1r_us": r.t1r * 1e6, "configured_t1r_us": built["t1r"] * 1e6, "fit_method": r.method}


def _rng(cfg):
    return np.random.default_rng(cfg.seed if cfg.seed is not None else 0)


def run_qst(cfg, built, threads):
    model = built["model"]
    g0 = units.mhz_to_rad(cfg.g_mhz)
    tm = cfg.tomography
    conf = tomo.ConfusionMatrix.from_qubit(built["qubits"][cfg.device.receiver]) if tm.readout_errors else None
    f, chi, outs = experiments.qst_process(model, g0, cfg.tau_ns * 1e-9, cfg.ramp_ns * 1e-9, "exact")
    summary = {"f_qst": f, "tau_ns": cfg.tau_ns, "ramp_ns": cfg.ramp_ns}
    if tm.mode == "sampled":
        def one(seed):
            return experiments.qst_process(
                model, g0, cfg.tau_ns * 1e-9, cfg.ramp_ns * 1e-9, "sampled", tm.shots, conf, np.random.default_rng(seed)
            )[0]

        mean, std = tomo.bootstrap_repeats(one, tm.repeats, cfg.seed)
        summary.update({"f_qst_sampled_mean": mean, "f_qst_sampled_std": std, "repeats": tm.repeats})
    files = {
        "chi.csv": _csv(["row", "col", "re", "im"], _matrix_rows(chi.chi)),
        "summary.json": _json(summary),
    }
    return files, summary


def run_bell(cfg, built, threads):
    model = built["model"]
    g0 = units.mhz_to_rad(cfg.g_mhz)
    b = dynamics.bell_protocol(model, g0, cfg.tau_b_ns * 1e-9, cfg.ramp_ns * 1e-9)
    f, _ = experiments.bell_tomography(b.rho)
    summary = {"f_bell": f, "phase_rad": b.phase}
    tm = cfg.tomography
    if tm.mode == "sampled":
        qs = built["qubits"]
        conf = [tomo.ConfusionMatrix.from_qubit(qs[q]) for q in (cfg.device.sender, cfg.device.receiver)] if tm.readout_errors else None

        def one(seed):
            return experiments.bell_tomography(b.rho, "sampled", tm.shots, conf, np.random.default_rng(seed))[0]

        mean, std = tomo.bootstrap_repeats(one, tm.repeats, cfg.seed)
        summary.update({"f_bell_sampled_mean": mean, "f_bell_sampled_std": std, "repeats": tm.repeats})
    files = {"rho.csv": _csv(["row", "col", "re", "im"], _matrix_rows(b.rho.entries)), "summary.json": _json(summary)}
    return files, summary


def run_ghz(cfg, built, threads):
    noise = _ghz_noise(cfg, built["qubits"], built["layout"])
    r = experiments.ghz_run(cfg.step, noise, cfg.n_traj, cfg.seed, built["layout"], cfg.gamma_points)
    summary = {k: r[k] for k in ("step", "n_qubits", "fidelity", "fidelity_stderr", "fidelity_estimator", "coherence", "phase", "p_all0", "p_all1")}
    summary["eps_link"] = {"-".join(sorted(k)): v for k, v in sorted(noise.eps_link.items(), key=lambda kv: sorted(kv[0]))}
    files = {
        "parity.csv": _csv(["gamma_rad", "parity_expectation"], zip(r["gammas"], r["parity"])),
        "circuit.txt": r["circuit"].to_text(),
        "summary.json": _json(summary),
    }
    return files, summary


def run_lossfit(cfg, built, threads):
    if cfg.data_file is None:
        from importlib import resources

        with resources.as_file(resources.files("coaxlink.data").joinpath("mode_q_int.csv")) as p:
            points = lossfit.read_q_csv(p)
    else:
        points = lossfit.read_q_csv(cfg.data_file)
    cable = built["cable"]
    fit = lossfit.fit_loss_model(points, cable, n_bonds=cfg.n_bonds)
    model = lossfit.LossModel(fit.q_cb, fit.r_s, cfg.n_bonds, cable)
    omegas = np.array([p.omega for p in points])
    fgrid = np.linspace(omegas.min() * 0.9, omegas.max() * 1.1, 201)
    curve = lossfit.q_int_curve(model, fgrid)
    files = {
        "fit.json": _json(fit.as_dict()),
        "curve.csv": _csv(["freq_ghz", "q_int_model"], zip(units.rad_to_ghz(fgrid), curve)),
        "data.csv": _csv(["freq_ghz", "q_int"], [(units.rad_to_ghz(p.omega), p.q_int) for p in points]),
    }
    return files, {"q_cb": fit.q_cb, "r_s_mohm": fit.r_s * 1e3}


def _read_trace(path):
    f, s = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            f.append(float(row["freq_hz"]))
            s.append(complex(float(row["re"]), float(row["im"])))
    return np.array(f), np.array(s)


def run_hanger(cfg, built, threads):
    if cfg.data_file is not None:
        f, s21 = _read_trace(cfg.data_file)
        truth = None
    else:
        truth = lossfit.HangerResonance(cfg.f0_ghz * 1e9, cfg.q_int, cfg.q_c)
        half = cfg.span_linewidths * truth.f0 / truth.q_loaded / 2
        f = np.linspace(truth.f0 - half, truth.f0 + half, cfg.n_points)
        s21 = lossfit.s21_hanger(f, truth)
        if cfg.noise > 0:
            rng = _rng(cfg)
            s21 = s21 + cfg.noise * (rng.normal(size=f.size) + 1j * rng.normal(size=f.size))
    res = lossfit.fit_hanger(f, s21)
    fitted = lossfit.s21_hanger(f, res)
    summary = {"f0_ghz": res.f0 / 1e9, "q_int": res.q_int, "q_c": res.q_c, "q_loaded": res.q_loaded}
    rows = zip(f, s21.real, s21.imag, fitted.real, fitted.imag)
    files = {"trace.csv": _csv(["freq_hz", "re", "im", "fit_re", "fit_im"], rows), "fit.json": _json(summary)}
    return files, summary


RUNNERS = {
    "chevron": run_chevron,
    "ringdown": run_ringdown,
    "qst": run_qst,
    "bell": run_bell,
    "ghz": run_ghz,
    "lossfit": run_lossfit,
    "hanger": run_hanger,
}


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "coaxlink": own}


def run_scenario(config_path, seed=None, out=None, threads=1):
    """Run one scenario and write its outputs; returns (out_dir, summary)."""
    cfg, digest = config.load_config(config_path, {"seed": seed})
    out_dir = Path(out or cfg.out or Path("out") / cfg.scenario)
    t0 = time.perf_counter()
    built = build(cfg)
    files, summary = RUNNERS[cfg.scenario](cfg, built, threads)
    wall = time.perf_counter() - t0
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text)
    manifest = {
        "scenario": cfg.scenario,
        "schema_version": config.SCHEMA_VERSION,
        "config_path": str(config_path),
        "config_sha256": digest,
        "seed": cfg.seed,
        "versions": _versions(),
        "wall_time_s": wall,
        "outputs": sorted(files),
        "summary": summary,
    }
    (out_dir / "manifest.json").write_text(_json(manifest))
    return out_dir, summary


def _env(name, cast=str):
    v = os.environ.get(ENV_PREFIX + name)
    return None if v in (None, "") else cast(v)


def _parser():
    p = argparse.ArgumentParser(prog="coaxlink", description="Modular interconnect simulation scenarios.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("run", "validate"):
        s = sub.add_parser(verb)
        s.add_argument("--config", type=Path, default=None)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", type=Path, default=None)
        s.add_argument("--threads", type=int, default=None)
    ls = sub.add_parser("list")
    ls.add_argument("--schema", choices=sorted(config.SCENARIOS), default=None)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.verb == "list":
        if args.schema:
            print(json.dumps(config.SCENARIOS[args.schema].model_json_schema(), indent=2, default=str))
        else:
            for name in config.SCENARIOS:
                print(f"{name:9s} {DESCRIPTIONS[name]}")
        return 0

    cfg_path = args.config or _env("CONFIG", Path)
    if cfg_path is None:
        print("error: --config is required (or set COAXLINK_CONFIG)", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else _env("SEED", int)
    out = args.out or _env("OUT", Path)
    threads = args.threads or _env("THREADS", int) or 1
    try:
        if args.verb == "validate":
            cfg, _ = config.load_config(cfg_path, {"seed": seed})
            build(cfg)
            print(f"ok: {cfg_path} ({cfg.scenario})")
            return 0
        out_dir, summary = run_scenario(cfg_path, seed, out, threads)
    except config.ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error at {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (lossfit.FitError, IntegratorError, ValueError, ArithmeticError) as exc:
        print(f"numerical failure in {type(exc).__module__}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(_plain(summary), sort_keys=True))
    print(f"wrote {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
