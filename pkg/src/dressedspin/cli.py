"""Command-line entry point.

Every run writes ``<subcommand>.csv`` and a ``<subcommand>.json`` sidecar
into the output directory. Exit codes: 0 success, 1 simulation error,
2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .floquet import dressed_splitting_curve, fit_even_poly
from .lockloop import Controller, Plant, feedback_run
from .noise import (
    DriftParams,
    NOISE_KEYS,
    NoiseModel,
    dephasing_scaling_study,
    fit_decay,
    noise_model_from_kv,
    noise_model_to_kv,
    stream,
)
from .sequences import (
    BASES,
    ExperimentResult,
    fit_oscillation,
    hahn_echo_experiment,
    odmr_scan,
    rabi_experiment,
    ramsey_experiment,
    resonance_dips,
    standard_setup,
)
from .spinsys import SPIN_KEYS, ConfigError, Drive, FieldEnv, read_kv, spin_config_from_kv, spin_config_to_kv

CONFIG_ENV = "DRESSEDSPIN_CONFIG"
SUBCOMMANDS = ("odmr", "rabi", "ramsey", "echo", "dispersion", "t2star-sweep", "lock", "validate")


class SimulationError(RuntimeError):
    pass


# -- configuration ----------------------------------------------------------------


def resolve_config(path: str | None, overrides: list[str]) -> dict[str, str]:
    """Merge the kv file and ``--set`` overrides; every key must be known."""
    kv: dict[str, str] = {}
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        kv.update(read_kv(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        kv[key] = value
    known = set(SPIN_KEYS) | set(NOISE_KEYS)
    for key in kv:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = spin_config_from_kv(kv)
    noise = noise_model_from_kv(kv)
    # canonical resolved form: every key present
    return {**spin_config_to_kv(cfg), **noise_model_to_kv(noise)}


def config_hash(resolved: dict[str, str]) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# -- outputs ------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit_outputs(
    out_dir: str | Path,
    stem: str,
    writer,
    n_rows: int,
    sidecar: dict,
    svg: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[Path]:
    """Write ``stem.csv`` via ``writer(path)`` plus a JSON sidecar (and optional SVG)."""
    if n_rows == 0:
        raise SimulationError("empty result: nothing written")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        writer(csv_path)
        json_path = out / f"{stem}.json"
        json_path.write_text(json.dumps(_jsonable(sidecar), indent=2, sort_keys=True) + "\n")
        paths = [csv_path, json_path]
        if svg is not None:
            svg_path = out / f"{stem}.svg"
            svg_path.write_text(svg_polyline(*svg))
            paths.append(svg_path)
    except OSError as exc:
        raise SimulationError(f"cannot write outputs in {out}: {exc}") from exc
    return paths


def emit_result(out_dir, stem, result: ExperimentResult, fit: dict | None, base: dict, svg: bool) -> list[Path]:
    sidecar = dict(base, meta=result.meta, fit=fit)
    return emit_outputs(out_dir, stem, result.to_csv, len(result), sidecar, (result.x, result.signal) if svg else None)


def replay_argv(sidecar: dict, out: str | Path) -> list[str]:
    """Command line that reproduces a run from its JSON sidecar alone."""
    args = dict(sidecar["args"])
    argv = [args.pop("command")]
    for key, value in sidecar["config"].items():
        argv += ["--set", f"{key}={value}"]
    for key, value in args.items():
        flag = "--" + key.replace("_", "-")
        if value is None or value is False:
            continue
        if value is True:
            argv.append(flag)
        else:
            argv += [flag, repr(value) if isinstance(value, float) else str(value)]
    return argv + ["--out", str(out)]


def svg_polyline(x, y, width: int = 480, height: int = 320) -> str:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    xs = (x - x.min()) / (np.ptp(x) or 1.0) * (width - 20) + 10
    ys = height - 10 - (y - y.min()) / (np.ptp(y) or 1.0) * (height - 20)
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<polyline fill="none" stroke="black" points="{pts}"/></svg>\n'
    )


# -- subcommands ------------------------------------------------------------------


def _fit_dict(fit) -> dict | None:
    return None if fit is None else fit.as_dict()


def _noise(resolved) -> NoiseModel:
    return noise_model_from_kv(resolved)


def cmd_odmr(a, cfg, resolved, base):
    env = FieldEnv(B=(a.bx, a.by, a.bz))
    setup = standard_setup("dps", cfg, rabi=a.dressing_hz, env=env) if a.dressing_hz > 0 else standard_setup(
        "zero-field", cfg, env=env
    )
    deltas = np.linspace(-a.span_hz, a.span_hz, a.points)
    res = odmr_scan(setup, deltas, probe_rabi=a.probe_rabi_hz)
    dips = resonance_dips(res.x, res.signal, n=2 if setup.dressing else 1)
    fit = {"dips": [{"center_hz": c, "fwhm_hz": w, "depth": d} for c, w, d in dips]}
    return emit_result(a.out, "odmr", res, fit, base, a.svg)


def cmd_rabi(a, cfg, resolved, base):
    basis = "dps" if a.transition in ("0-+1", "0--1", "+1--1") else "zero-field"
    setup = standard_setup(basis, cfg, rabi=a.dressing_hz) if basis == "dps" else standard_setup(basis, cfg)
    t = np.linspace(0.0, a.t_max, a.points)
    res = rabi_experiment(setup, a.transition, t, rabi=a.rabi_hz)
    f, sd = fit_oscillation(res.x, res.signal)
    return emit_result(a.out, "rabi", res, {"freq": f, "sd": {"freq": sd}}, base, a.svg)


def cmd_ramsey(a, cfg, resolved, base):
    setup = standard_setup(a.basis, cfg)
    t = np.linspace(0.0, a.t_max, a.points)
    noise = _noise(resolved)
    res = ramsey_experiment(setup, a.basis, a.detuning_hz, t, noise, a.samples, a.seed, n_jobs=a.jobs)
    fit = fit_decay(res, "ramsey")
    return emit_result(a.out, "ramsey", res, _fit_dict(fit), base, a.svg)


def cmd_echo(a, cfg, resolved, base):
    setup = standard_setup(a.basis, cfg)
    t = np.linspace(0.0, a.t_max, a.points)
    noise = _noise(resolved)
    res = hahn_echo_experiment(setup, a.basis, t, noise, a.samples, a.seed, refocus=not a.no_refocus, n_jobs=a.jobs)
    try:
        fit = _fit_dict(fit_decay(res, "echo"))
    except Exception as exc:  # flat echoes have no decay to fit
        fit = {"error": str(exc)}
    return emit_result(a.out, "echo", res, fit, base, a.svg)


def cmd_dispersion(a, cfg, resolved, base):
    dressing = Drive("magnetic-z", carrier=2 * cfg.e, rabi=a.dressing_hz)
    fields = np.linspace(-a.range_t, a.range_t, a.points)
    curve = dressed_splitting_curve(cfg, dressing, a.axis, fields, n_jobs=a.jobs)
    poly = fit_even_poly(curve)
    fit = {"c0_hz": poly.c0, "c2_hz_per_t2": poly.c2, "c4_hz_per_t4": poly.c4, "rms_residual_hz": poly.rms_residual}
    sidecar = dict(base, meta={"experiment": "dispersion", "axis": a.axis}, fit=fit)
    return emit_outputs(a.out, "dispersion", curve.to_csv, fields.size, sidecar,
                        (curve.field_values, curve.delta_f0) if a.svg else None)


def cmd_t2star_sweep(a, cfg, resolved, base):
    sigmas = [float(s) for s in a.sigma_b.split(",") if s.strip()]
    study = dephasing_scaling_study(a.basis, sigmas, cfg, a.samples, a.seed, n_points=a.points, n_jobs=a.jobs,
                                    base_model=_noise(resolved))
    rows = [{"sigma_b": r.sigma_b, "t2star": r.t2star, "censored": r.censored} for r in study.rows]
    sidecar = dict(base, meta={"experiment": "t2star-sweep", "basis": a.basis}, fit={"slope": study.slope, "rows": rows})
    xs = np.array([r.sigma_b for r in study.rows])
    ys = np.array([r.t2star for r in study.rows])
    return emit_outputs(a.out, "t2star_sweep", study.to_csv, len(study.rows), sidecar, (xs, ys) if a.svg else None)


def cmd_lock(a, cfg, resolved, base):
    noise = _noise(resolved)
    drift = noise.omega_drift if noise.omega_drift.sigma_rel > 0 else DriftParams(1e-4, 6 * 3600.0)
    plant = Plant(base_rabi=a.dressing_hz, rabi_drift=drift, osc_drift=noise.osc_drift, carrier=2 * cfg.e)
    ctl = Controller(k_p=a.k_p, tau_fb=a.tau_fb, update_period=a.update_period, shots_per_update=a.shots)
    disable = math.inf if a.disable_after is None else a.disable_after
    trace = feedback_run(plant, ctl, a.duration, lambda t: t < disable, stream(a.seed, 0))
    on, off = trace.residual[trace.enabled], trace.residual[~trace.enabled]
    fit = {
        "residual_sd_enabled_hz": float(on.std()) if on.size > 1 else None,
        "residual_sd_disabled_hz": float(off.std()) if off.size > 1 else None,
    }
    sidecar = dict(base, meta={"experiment": "lock"}, fit=fit)
    return emit_outputs(a.out, "lock", trace.to_csv, trace.time.size, sidecar,
                        (trace.time, trace.residual) if a.svg else None)


# -- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"flat key = value file (default: ${CONFIG_ENV})")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="dressedspin-out", help="output directory")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--svg", action="store_true", help="also write a bare SVG line plot")

    p = argparse.ArgumentParser(prog="dressedspin", description="Dressed spin-1 simulator.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True

    s = sub.add_parser("odmr", parents=[common], help="pulsed ODMR under resonant dressing")
    s.add_argument("--dressing-hz", type=float, default=350e3)
    s.add_argument("--probe-rabi-hz", type=float, default=None)
    s.add_argument("--span-hz", type=float, default=300e3)
    s.add_argument("--points", type=int, default=241)
    for ax in ("bx", "by", "bz"):
        s.add_argument(f"--{ax}", type=float, default=0.0, help="static field (T)")

    s = sub.add_parser("rabi", parents=[common], help="Rabi oscillations on one transition")
    s.add_argument("--transition", default="0-+1", choices=("0-+", "0-+1", "0--1", "+1--1"))
    s.add_argument("--dressing-hz", type=float, default=350e3)
    s.add_argument("--rabi-hz", type=float, default=None)
    s.add_argument("--t-max", type=float, default=100e-6)
    s.add_argument("--points", type=int, default=101)

    s = sub.add_parser("ramsey", parents=[common], help="Ramsey free precession")
    s.add_argument("--basis", default="dps", choices=BASES)
    s.add_argument("--detuning-hz", type=float, default=166.6)
    s.add_argument("--t-max", type=float, default=18e-3)
    s.add_argument("--points", type=int, default=61)
    s.add_argument("--samples", type=int, default=100, help="ensemble size when noise is configured")

    s = sub.add_parser("echo", parents=[common], help="Hahn echo")
    s.add_argument("--basis", default="dps", choices=BASES)
    s.add_argument("--t-max", type=float, default=40e-3)
    s.add_argument("--points", type=int, default=41)
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--no-refocus", action="store_true")

    s = sub.add_parser("dispersion", parents=[common], help="dressed splitting versus static field")
    s.add_argument("--axis", default="z", choices=("x", "y", "z"))
    s.add_argument("--range-t", type=float, default=13e-6)
    s.add_argument("--points", type=int, default=27)
    s.add_argument("--dressing-hz", type=float, default=350e3)

    s = sub.add_parser("t2star-sweep", parents=[common], help="Ramsey T2* versus magnetic noise amplitude")
    s.add_argument("--basis", default="dps", choices=BASES)
    s.add_argument("--sigma-b", default="3.25e-6,6.5e-6,13e-6,26e-6", help="comma-separated SDs (T)")
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--points", type=int, default=41)

    s = sub.add_parser("lock", parents=[common], help="resonance feedback against dressing drift")
    s.add_argument("--dressing-hz", type=float, default=350e3)
    s.add_argument("--duration", type=float, default=36000.0)
    s.add_argument("--k-p", type=float, default=0.5)
    s.add_argument("--tau-fb", type=float, default=2e-3)
    s.add_argument("--update-period", type=float, default=60.0)
    s.add_argument("--shots", type=int, default=1000)
    s.add_argument("--disable-after", type=float, default=None, help="freeze the correction after this time (s)")

    sub.add_parser("validate", parents=[common], help="check a config and print the resolved parameters")
    return p


HANDLERS = {
    "odmr": cmd_odmr,
    "rabi": cmd_rabi,
    "ramsey": cmd_ramsey,
    "echo": cmd_echo,
    "dispersion": cmd_dispersion,
    "t2star-sweep": cmd_t2star_sweep,
    "lock": cmd_lock,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)

    try:
        path = a.config or os.environ.get(CONFIG_ENV)
        resolved = resolve_config(path, a.set)
        cfg = spin_config_from_kv(resolved)
        if a.seed < 0 or a.seed >= 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if a.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if a.command == "validate":
        for k, v in resolved.items():
            print(f"{k} = {v}")
        print(f"config_hash = {config_hash(resolved)}")
        return 0

    args = {k: v for k, v in vars(a).items() if k not in ("config", "set", "out", "jobs", "svg")}
    base = {
        "version": __version__,
        "command": a.command,
        "seed": a.seed,
        "config": resolved,
        "config_hash": config_hash(resolved),
        "args": args,
    }
    try:
        paths = HANDLERS[a.command](a, cfg, resolved, base)
    except (ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"simulation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
