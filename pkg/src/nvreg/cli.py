"""Command-line front end: ``nvreg <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import NAME as BACKEND
from .calibration import MeasuredTrace, compare_trace, fit_both_directions, write_report
from .dynamics import SampledField, propagate
from .hamiltonian import Disturbance, SystemParams
from .optimizers import METHODS, OptimizationResult, OptimizerConfig, fixed_stirap_shape
from .pulses import PulseShape, sample
from .robustness import (
    RobustConfig,
    RobustnessMap,
    WeightModel,
    average_fidelity,
    bpm_optimize,
    default_grid,
    landscape_brute,
    landscape_estimate,
)

TWO_PI = 2.0 * math.pi
SWEEP_METHODS = ["stirap", "grape_g", "grape_inv_lambda", "crab", "pm"]


class CliError(Exception):
    pass


def parse_range(text: str) -> list[float]:
    """``"3..16"`` (integer steps), ``"3..16:0.5"`` or ``"4,8,16"``."""
    text = text.strip()
    if ".." in text:
        lo, _, rest = text.partition("..")
        hi, _, step = rest.partition(":")
        lo, hi, step = float(lo), float(hi), float(step or 1)
        if step <= 0 or hi < lo:
            raise CliError(f"bad range {text!r}")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + k * step for k in range(n)]
    return [float(v) for v in text.split(",") if v.strip()]


def _params(args) -> SystemParams:
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        return SystemParams.from_config(cfg.get("system", cfg))
    return SystemParams()


def _workers(args) -> int:
    return args.threads if args.threads and args.threads > 0 else (os.cpu_count() or 1)


def _opt_config(args, **extra) -> OptimizerConfig:
    kw = dict(seed=args.seed, workers=_workers(args))
    if getattr(args, "trials", None):
        kw["n_trials"] = args.trials
    if getattr(args, "max_evals", None):
        kw["max_evals"] = args.max_evals
    kw.update(extra)
    return OptimizerConfig(**kw)


def _load_shape(path, T=None):
    """A pulse shape JSON, or an OptimizationResult JSON (its best shape and T)."""
    d = json.loads(Path(path).read_text())
    if "best_shape" in d:
        return PulseShape.from_dict(d["best_shape"]), d["T_us"]
    return PulseShape.from_dict(d), T


def _field_from_args(args):
    if getattr(args, "field", None):
        field = SampledField.from_csv(args.field)
        return field, field.T
    if getattr(args, "shape", None):
        shape, T = _load_shape(args.shape, args.T)
    else:
        if args.T is None:
            raise CliError("--T is required without --shape or --field")
        shape, T = fixed_stirap_shape(args.T), args.T
    if T is None:
        raise CliError("--T is required for a bare pulse shape")
    return sample(shape, T, args.samples), T


def _grid(args):
    return default_grid(args.n_delta, args.n_kappa, TWO_PI * args.delta_range_mhz, tuple(args.kappa_range))


def _weights(args, grid):
    w = WeightModel.default(grid)
    return WeightModel(
        TWO_PI * args.sigma_delta_mhz if args.sigma_delta_mhz else w.sigma_delta,
        args.sigma_kappa if args.sigma_kappa else w.sigma_kappa,
    )


def _write_manifest(out: Path, args, extra=None):
    echo = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "tool": "nvreg",
        "version": __version__,
        "backend": BACKEND,
        "seed": args.seed,
        "args": echo,
        "system": _params(args).to_config(),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# -- commands -----------------------------------------------------------------


def cmd_simulate(args, out: Path):
    field, T = _field_from_args(args)
    traj = propagate(field, Disturbance(TWO_PI * args.delta_mhz, args.kappa), _params(args))
    field.to_csv(out / "field.csv")
    traj.to_csv(out / "trajectory.csv")
    fid = float(traj.populations[-1, 1])
    print(f"T={T:g} us  fidelity={fid:.6f}")
    return {"fidelity": fid, "T_us": T}


def cmd_optimize(args, out: Path):
    if args.T is None:
        raise CliError("--T is required")
    method = args.method or "pm"
    if method not in METHODS:
        raise CliError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    res = METHODS[method](args.T, _params(args), _opt_config(args))
    res.save(out / "result.json")
    res.trace_to_csv(out / "trace.csv")
    sample(res.best_shape, res.T, res.n_samples).to_csv(out / "field.csv")
    print(f"{method} T={args.T:g} us  best_fidelity={res.best_fidelity:.6f}  evals={res.n_evaluations}")
    return {"best_fidelity": res.best_fidelity}


def cmd_sweep(args, out: Path):
    Ts = parse_range(args.T_range)
    methods = SWEEP_METHODS if args.method in (None, "all") else args.method.split(",")
    for m in methods:
        if m not in METHODS:
            raise CliError(f"unknown method {m!r}")
    params = _params(args)
    rows = []
    for T in Ts:
        row = {"T_us": T}
        for m in methods:
            row[m] = METHODS[m](T, params, _opt_config(args)).best_fidelity
        row["best"] = max(row[m] for m in methods)
        rows.append(row)
        print(" ".join(f"{k}={v:.4f}" for k, v in row.items()), flush=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T_us"] + methods + ["best"])
        for row in rows:
            w.writerow([repr(row["T_us"])] + [repr(row[m]) for m in methods] + [repr(row["best"])])
    return {"n_rows": len(rows)}


def cmd_robustness(args, out: Path):
    grid = _grid(args)
    weights = _weights(args, grid)
    params = _params(args)
    summary = {}
    if args.mode == "optimize":
        if args.T is None:
            raise CliError("--T is required")
        init = _load_shape(args.shape)[0] if args.shape else None
        cfg = RobustConfig(seed=args.seed, workers=_workers(args), max_evals=args.max_evals or 600)
        res, rmap = bpm_optimize(args.T, params, weights, cfg, grid, initial_shape=init)
        res.save(out / "result.json")
        res.trace_to_csv(out / "trace.csv")
        sample(res.best_shape, res.T, res.n_samples).to_csv(out / "field.csv")
        summary["best_fidelity"] = res.best_fidelity
    else:
        field, _ = _field_from_args(args)
        if args.mode == "map":
            rmap = landscape_brute(field, grid, params, workers=_workers(args))
        else:
            rmap = landscape_estimate(field, grid, args.n_points, args.seed, params)
    rmap.to_csv(out / "map.csv")
    summary["average_fidelity"] = average_fidelity(rmap, weights)
    summary["area_f_ge_0.7"] = rmap.area_above(0.7)
    print(f"{args.mode}: average_fidelity={summary['average_fidelity']:.6f}  area(f>=0.7)={summary['area_f_ge_0.7']:.4f}")
    return summary


def _read_xy(path):
    t = MeasuredTrace.from_csv(path)
    return t.times, t.voltages


def cmd_calibrate(args, out: Path):
    report = {"fits": {}, "traces": []}
    for spec in args.fit or []:
        name, _, path = spec.partition("=")
        if not path:
            name, path = Path(spec).stem, spec
        x, y = _read_xy(path)
        report["fits"][name] = fit_both_directions(x, y)
    if args.trace:
        if not args.field:
            raise CliError("--trace needs --field")
        sim = SampledField.from_csv(args.field)
        for path in args.trace:
            entry = compare_trace(MeasuredTrace.from_csv(path), sim, args.channel)
            entry["path"] = str(path)
            report["traces"].append(entry)
    if not report["fits"] and not report["traces"]:
        raise CliError("nothing to do: pass --fit and/or --trace")
    write_report(out / "calibration.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return {}


def cmd_export(args, out: Path):
    field, T = _field_from_args(args)
    field.to_csv(out / "field.csv")
    if args.rabi_per_volt:
        # AWG voltage = Rabi frequency (MHz) / slope; intercept ignored for a zero-offset AWG
        volts = np.column_stack([field.omega_p, field.omega_s]) / TWO_PI / args.rabi_per_volt
        times = field.times if len(field.omega_p) == len(field.times) else field.times[:-1]
        with open(out / "awg.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_us", "pump_volts", "stokes_volts"])
            for t, (vp, vs) in zip(times, volts):
                w.writerow([repr(float(t)), repr(float(vp)), repr(float(vs))])
    print(f"exported T={T:g} us to {out}")
    return {}


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="system parameter JSON")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=0, help="worker processes (0 = all cores)")
    common.add_argument("--method")
    common.add_argument("--T", type=float, help="pulse duration in us")

    field_opts = argparse.ArgumentParser(add_help=False)
    field_opts.add_argument("--shape", help="pulse shape or optimization result JSON")
    field_opts.add_argument("--field", help="field CSV")
    field_opts.add_argument("--samples", type=int, default=1001)

    grid_opts = argparse.ArgumentParser(add_help=False)
    grid_opts.add_argument("--delta-range-mhz", type=float, default=0.1, help="detuning half-range, delta/2pi in MHz")
    grid_opts.add_argument("--kappa-range", type=float, nargs=2, default=[-0.5, 0.5])
    grid_opts.add_argument("--n-delta", type=int, default=50)
    grid_opts.add_argument("--n-kappa", type=int, default=50)
    grid_opts.add_argument("--sigma-delta-mhz", type=float)
    grid_opts.add_argument("--sigma-kappa", type=float)
    grid_opts.add_argument("--n-points", type=int, default=16, help="surrogate sample count")
    grid_opts.add_argument("--max-evals", type=int)

    p = argparse.ArgumentParser(prog="nvreg", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, field_opts], help="propagate one field")
    s.add_argument("--delta-mhz", type=float, default=0.0)
    s.add_argument("--kappa", type=float, default=0.0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("optimize", parents=[common], help="optimize a field at one T")
    s.add_argument("--trials", type=int)
    s.add_argument("--max-evals", type=int)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", parents=[common], help="fidelity versus T table")
    s.add_argument("--T-range", default="3..16", help="e.g. 3..16, 3..16:0.5 or 4,8,16")
    s.add_argument("--trials", type=int)
    s.add_argument("--max-evals", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("robustness", parents=[common, field_opts, grid_opts], help="landscapes and B-PM")
    s.add_argument("mode", choices=["map", "estimate", "optimize"])
    s.set_defaults(func=cmd_robustness)

    s = sub.add_parser("calibrate", parents=[common], help="linear fits and trace comparison")
    s.add_argument("--fit", action="append", help="NAME=xy.csv two-column data to regress")
    s.add_argument("--trace", action="append", help="measured trace CSV")
    s.add_argument("--field", help="simulated field CSV to compare against")
    s.add_argument("--channel", choices=["pump", "stokes"], default="pump")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("export", parents=[common, field_opts], help="write a field (and AWG volts)")
    s.add_argument("--rabi-per-volt", type=float, help="calibration slope in MHz/V")
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        summary = args.func(args, out)
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        (out / "error.json").write_text(json.dumps(record, indent=2) + "\n")
        print(json.dumps(record), file=sys.stderr)
        return 2
    _write_manifest(out, args, {"summary": summary})
    return 0


if __name__ == "__main__":
    sys.exit(main())
