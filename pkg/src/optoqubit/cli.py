"""Command-line entry point: ``optoqubit {rabi,fit-spectrum,protocol,params-check}``.

Exit codes: 0 success, 2 configuration error, 3 numerical invariant breach,
4 fit non-convergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .gaussdyn import InvariantBreach, MonteCarloMismatch
from .jcsim import QubitControl, ReadoutModel, StepSizeError, vacuum_rabi_trace
from .lm import FitError
from .params import (ConfigError, DeviceParams, load_device_params, parse_rate, parse_time,
                     default_device, thermal_occupancy)
from .tables import atomic_write_text, write_table

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FIT = 0, 2, 3, 4
TWO_PI = 2.0 * math.pi


@dataclass
class RunManifest:
    """What a run was asked to do; its digest goes into every output file."""

    subcommand: str
    config_paths: list = field(default_factory=list)
    seed: int | None = None
    out: str = "."
    mode: str | None = None
    options: dict = field(default_factory=dict)

    def digest(self) -> str:
        doc = asdict(self)
        doc.pop("out")
        doc["config_sha256"] = [_file_hash(p) for p in self.config_paths]
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def header(self, **extra) -> dict:
        meta = {"command": self.subcommand, "manifest": self.digest(), "seed": self.seed,
                "mode": self.mode, "version": __version__}
        meta.update(extra)
        # the seed is always recorded, even for deterministic runs
        return {k: v for k, v in meta.items() if v is not None or k == "seed"}


def _file_hash(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return "missing"


def _read_yaml(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(str(path), "expected a mapping")
    return doc


def _device_from(doc: dict, base: Path | None):
    """Device parameters from an inline mapping, a path, or the shipped default."""
    dev = doc.get("device")
    if dev is None:
        params, baths = default_device()
    elif isinstance(dev, str):
        p = Path(dev)
        params, baths = load_device_params(p if p.is_absolute() or base is None else base / p)
    else:
        params, baths = load_device_params({"device": dev, **{k: doc[k] for k in ("heating", "baths") if k in doc}})
    over = doc.get("overrides") or {}
    changes = {}
    for key, raw in over.items():
        name = key.removesuffix("/2pi")
        if name in ("T1_qubit", "T1_cavity", "Tphi_qubit"):
            changes[name] = parse_time(f"overrides.{key}", raw)
        elif name in ("J", "g0", "kappa_int", "kappa_ext", "Gamma_m", "omega_c", "Omega_m"):
            changes[name] = parse_rate(f"overrides.{key}", raw)
        else:
            raise ConfigError(f"overrides.{key}", "not an overridable parameter")
    return (params.replace(**changes) if changes else params), baths


# -- rabi --------------------------------------------------------------------------


def _distribution(key: str, doc: dict):
    from .tomo import PhotonDistribution

    fam = doc.get("family", "vacuum")
    try:
        if fam == "vacuum":
            return PhotonDistribution.vacuum()
        if fam == "fock":
            return PhotonDistribution.fock(int(doc["n"]))
        if fam == "thermal":
            return PhotonDistribution.thermal(float(doc["n_bar"]))
        if fam == "coherent":
            return PhotonDistribution.coherent(float(doc["alpha_sq"]))
        if fam == "displaced_thermal":
            return PhotonDistribution.displaced_thermal(float(doc["n_bar"]), float(doc["alpha_sq"]))
    except KeyError as exc:
        raise ConfigError(f"{key}.{exc.args[0]}", "missing field") from None
    raise ConfigError(f"{key}.family", f"unknown family {fam!r}")


def cmd_rabi(args) -> int:
    doc = _read_yaml(args.config)
    base = Path(args.config).parent
    params, _ = _device_from(doc, base)
    manifest = RunManifest("rabi", [args.config], args.seed, args.out, None)
    protocol = doc.get("protocol", "single_photon")
    if protocol not in ("single_photon", "detector"):
        raise ConfigError("protocol", "expected single_photon or detector")
    qubit = "e" if protocol == "single_photon" else "g"
    ro = doc.get("readout") or {}
    readout = ReadoutModel(float(ro.get("contrast", 1.0)), float(ro.get("offset", 0.0)),
                           float(ro.get("prep_efficiency", 1.0)))
    ctl = doc.get("control") or {}
    off = parse_rate("control.off_detuning/2pi", ctl.get("off_detuning/2pi", "800 MHz"))
    ramp = parse_time("control.ramp_time", ctl.get("ramp_time", "4 ns"))
    drift = float(ctl.get("drift_rate", 0.0))
    control = QubitControl.tune_in(off, ramp, drift)
    t = doc.get("tau") or {}
    tau = np.linspace(parse_time("tau.start", t.get("start", "0 ns")),
                      parse_time("tau.stop", t.get("stop", "200 ns")), int(t.get("num", 201)))
    cavities = doc.get("cavity", {"family": "vacuum"})
    cavities = cavities if isinstance(cavities, list) else [cavities]
    out = Path(args.out)
    traces = []
    for i, cav in enumerate(cavities):
        dist = _distribution(f"cavity[{i}]", cav)
        n_max = int(doc.get("n_max", max(dist.recommended_n_max(), 15)))
        tr = vacuum_rabi_trace(dist.populations(n_max), control, params, tau, qubit, readout, n_max)
        if not np.all(np.isfinite(tr.p_e)):
            raise InvariantBreach("non-finite trace")
        label = cav.get("label", dist.family if len(cavities) == 1 else f"{dist.family}_{i}")
        meta = manifest.header(protocol=protocol, cavity=json.dumps(cav, sort_keys=True),
                               J_2pi_hz=params.J / TWO_PI, T1_qubit_s=params.T1_qubit,
                               T1_cavity_s=params.T1_cavity, Tphi_qubit_s=params.Tphi_qubit,
                               contrast=readout.contrast, prep_efficiency=readout.prep_efficiency,
                               n_max=n_max)
        path = out / f"trace_{label}.csv"
        write_table(path, tr.columns(), meta)
        traces.append(tr)
        print(f"wrote {path}")
    if len(traces) > 1:
        for i, tr in enumerate(traces[1:], 1):
            print(f"max |delta P_e| trace 0 vs {i}: {np.max(np.abs(tr.p_e - traces[0].p_e)):.4g}")
    return EXIT_OK


# -- fit-spectrum --------------------------------------------------------------------


def cmd_fit_spectrum(args) -> int:
    from .specfit import ReflectionModel, enhanced_coupling, fit_reflection, read_spectrum

    config = args.config
    params, _ = load_device_params(config) if config else default_device()
    manifest = RunManifest("fit-spectrum", ([config] if config else []) + list(args.data), None, args.out,
                           None, {"free": args.free, "loss": args.loss})
    try:
        spectra = [read_spectrum(p) for p in args.data]
    except (OSError, ValueError) as exc:
        raise ConfigError("data", str(exc)) from None
    n_p = next((s.n_p for s in spectra if s.n_p is not None), None)
    g_init = enhanced_coupling(params.g0, n_p) if n_p else (args.g_guess or 0.5 * params.kappa)
    initial = ReflectionModel.from_params(params, g=g_init)
    free = [f.strip() for f in args.free.split(",") if f.strip()]
    res = fit_reflection(spectra, initial, free, args.loss, max_iter=args.max_iter)
    report = {"meta": manifest.header(spectra=[str(p) for p in args.data]), "fit": res.to_doc()}
    text = yaml.safe_dump(report, sort_keys=False)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        atomic_write_text(args.out, text)
        print(f"wrote {args.out}")
    return EXIT_OK


# -- protocol --------------------------------------------------------------------------


def cmd_protocol(args) -> int:
    from .protocol import calibrate_gains, extract_vacuum, load_run, run_interaction_sweep

    plan, params, baths, run = load_run(args.plan)
    mode = args.mode or run.get("mode", "fast")
    seed = args.seed if args.seed is not None else int(run.get("seed", 0))
    paths = [args.plan] + ([str(run["device"])] if "device" in run else [])
    manifest = RunManifest("protocol", paths, seed, args.out, mode)
    out = Path(args.out)
    meta = manifest.header(plan=plan.digest(), interaction=plan.interaction,
                           g_2pi_hz=plan.g / TWO_PI, n_p=plan.n_p)
    if not plan.theta_grid and not plan.alpha_sq_grid:
        raise ConfigError("sweep", "plan has neither a theta nor an alpha_sq sweep")
    if plan.theta_grid:
        sweep = run_interaction_sweep(plan, params, baths, mode, seed)
        path = out / f"sweep_{plan.interaction}.csv"
        write_table(path, sweep.columns(), meta)
        print(f"wrote {path}")
    if plan.alpha_sq_grid:
        gains = calibrate_gains(plan, params, baths, mode=mode, seed=seed)
        vac = extract_vacuum(plan, gains, params, baths, mode, seed)
        vmeta = dict(meta, G_minus=gains.G_minus, G_plus=gains.G_plus, n_int_apparent=vac.n_int_apparent,
                     n_m_initial=vac.n_m_initial)
        vmeta.pop("interaction")
        path = out / "vacuum.csv"
        write_table(path, vac.columns(), vmeta)
        gdoc = {"meta": {k: v for k, v in vmeta.items()}, "G_minus": gains.G_minus, "G_plus": gains.G_plus,
                "stderr_minus": gains.stderr_minus, "stderr_plus": gains.stderr_plus,
                "r2_minus": gains.r2_minus, "r2_plus": gains.r2_plus, "theta": gains.theta,
                "alpha_sq_range": list(gains.alpha_sq_range)}
        atomic_write_text(out / "gains.yaml", yaml.safe_dump(gdoc, sort_keys=False))
        print(f"wrote {path}; mean difference {float(np.mean(vac.difference)):.4f}")
    return EXIT_OK


# -- params-check ------------------------------------------------------------------------


def cmd_params_check(args) -> int:
    params, baths = load_device_params(args.config) if args.config else default_device()
    rows = [
        ("omega_c/2pi", params.omega_c / TWO_PI, "Hz"),
        ("Omega_m/2pi", params.Omega_m / TWO_PI, "Hz"),
        ("J/2pi", params.J / TWO_PI, "Hz"),
        ("kappa/2pi", params.kappa / TWO_PI, "Hz"),
        ("eta", params.eta, ""),
        ("n_mech_eq", params.n_mech_eq, ""),
        ("n_cav_eq", float(thermal_occupancy(params.omega_c, params.temperature)), ""),
        ("n_int_eq(3.8e5)", float(baths.n_int_at(3.8e5)), ""),
        ("kappa/2pi at n_p=3.8e5", float(params.kappa_at(3.8e5)) / TWO_PI, "Hz"),
    ]
    for name, value, unit in rows:
        print(f"{name:24s} {value:.6g} {unit}".rstrip())
    return EXIT_OK


# -- entry -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optoqubit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rabi", help="qubit population traces after cavity interaction")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_rabi)

    p = sub.add_parser("fit-spectrum", help="fit cavity reflection spectra")
    p.add_argument("data", nargs="+")
    p.add_argument("--config", default=None, help="device parameters used as the initial guess")
    p.add_argument("--free", default="omega_c,kappa_int,kappa_ext,Gamma_m,g")
    p.add_argument("--loss", choices=("complex", "db"), default=None)
    p.add_argument("--g-guess", type=float, default=None, help="initial g in rad/s")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_fit_spectrum)

    p = sub.add_parser("protocol", help="run a pulsed optomechanics plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--mode", choices=("fast", "faithful", "lossless"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("params-check", help="validate a device configuration")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_params_check)
    return ap


def main(argv=None) -> int:
    from .tomo import TailBoundError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantBreach, StepSizeError, MonteCarloMismatch, TailBoundError) as exc:
        print(f"numerical invariant breach: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FitError as exc:
        print(f"fit did not converge: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (OSError, yaml.YAMLError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
