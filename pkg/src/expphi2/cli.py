"""Command-line experiment runner.

Every subcommand resolves a config (defaults, then ``--config`` file, then
flags), writes into a fresh content-addressed run directory under ``--out``
and prints its main result on stdout. Exit codes: 0 success, 2 invalid
configuration, 1 any other failure; errors are printed as one JSON object on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, besov, config as cfgmod, dynamics, fields, functionals, gff, params as pmod
from . import resolvent, wick
from .errors import ConfigError

__all__ = ["main", "build_parser", "make_run_dir"]


# ---------------------------------------------------------------- run directories


def make_run_dir(out, command, cfg, extra):
    """``out/<command>-<hash12>``; a numeric suffix is added if it already exists."""
    digest = cfgmod.config_hash(cfg, {"command": command, **extra})
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    base = f"{command}-{digest[:12]}"
    d, k = root / base, 0
    while True:
        try:
            d.mkdir()
            break
        except FileExistsError:
            k += 1
            d = root / f"{base}-{k}"
    (d / "config.json").write_text(json.dumps(
        {"command": command, "config": cfg, "options": extra, "config_hash": digest, "version": __version__},
        indent=1, sort_keys=True))
    return d, digest


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _emit(run_dir, name, obj, digest):
    obj = _jsonable({**obj, "config_hash": digest, "run_dir": str(run_dir)})
    text = json.dumps(obj, sort_keys=True)
    (run_dir / name).write_text(text + "\n")
    print(text)
    return obj


def _emit_csv(run_dir, name, rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(_jsonable(r))
    (run_dir / name).write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())


# ---------------------------------------------------------------- helpers


def _ensemble(p, cfg, n_samples=None):
    run = cfg["run"]
    n = run["n_samples"] if n_samples is None else n_samples
    if p.alpha == 0:
        return dynamics.gff_ensemble(p, n, run["seed"], dt=run["dt"], scheme=run["scheme"])
    return dynamics.simulate_stationary(
        p, burn_in=run["burn_in"], n_samples=n, spacing=run["spacing"], seed=run["seed"], dt=run["dt"],
        scheme=run["scheme"], n_chains=run["n_chains"], workers=run["workers"])


def _test_field(name, grid):
    lib = functionals.shipped_library(grid)
    scale = math.sqrt(grid.side**2)
    if name == "one":
        return np.ones(grid.shape)
    if name in ("u1", "u2", "u3"):
        return lib["product"].test_vectors[int(name[1]) - 1] * scale
    raise ConfigError("--h", f"unknown test field {name!r} (one, u1, u2, u3)")


def _library_function(name, grid, split="phi"):
    lib = functionals.shipped_library(grid, split=split)
    if name not in lib:
        raise ConfigError("--function", f"unknown cylinder function {name!r}; choose from {sorted(lib)}")
    return lib[name]


def _floats(text, field):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(field, f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(field, "empty list")
    return vals


# ---------------------------------------------------------------- subcommands


def cmd_sample(args, cfg):
    p = cfgmod.model_params(cfg)
    run_dir, digest = make_run_dir(args.out, "sample", cfg, {})
    t0 = time.time()
    ens = _ensemble(p, cfg)
    ens.save(run_dir / "ensemble")
    return _emit(run_dir, "result.json", {"n_samples": len(ens), "max_Y": ens.max_Y, "spacing": ens.spacing,
                                          "burn_in": ens.burn_in, "seconds": time.time() - t0}, digest)


def cmd_ibp(args, cfg):
    p = cfgmod.model_params(cfg)
    opts = {"function": args.function, "h": args.h, "drift": args.drift, "control_variate": args.control_variate,
            "z_max": args.z_max}
    F = _library_function(args.function, p.grid)
    h = _test_field(args.h, p.grid)
    run_dir, digest = make_run_dir(args.out, "ibp-check", cfg, opts)
    fields.dump_field(run_dir / "h.bin", h, p.grid, kind="test_field")
    ens = _ensemble(p, cfg)
    rep = functionals.ibp_residual(ens, F, h, p, args.drift, allowance="dt" if p.alpha else 0.0,
                                   control_variate=args.control_variate)
    return _emit(run_dir, "report.json", rep.to_dict(args.z_max), digest)


def cmd_fpk(args, cfg):
    p = cfgmod.model_params(cfg)
    opts = {"function": args.function, "split": args.split, "z_max": args.z_max}
    F = _library_function(args.function, p.grid, args.split)
    run_dir, digest = make_run_dir(args.out, "fpk-check", cfg, opts)
    fields.dump_field(run_dir / "u.bin", F.test_vectors, p.grid, kind="test_vectors")
    ens = _ensemble(p, cfg)
    rep = functionals.fpk_residual(ens, F, p, allowance="dt" if p.alpha else 0.0)
    return _emit(run_dir, "report.json", rep.to_dict(args.z_max), digest)


def cmd_lyapunov(args, cfg):
    p = cfgmod.model_params(cfg)
    opts = {"s": args.s, "p": args.p, "delta": args.delta}
    idx = pmod.lyapunov_indices(p.gamma, p=args.p, delta=args.delta, s=args.s)
    run_dir, digest = make_run_dir(args.out, "lyapunov", cfg, opts)
    ens = _ensemble(p, cfg)
    rep = functionals.lyapunov_drift_check(ens, p, idx, seed=cfg["run"]["seed"])
    return _emit(run_dir, "report.json", rep.to_dict(), digest)


def cmd_besov(args, cfg):
    p = cfgmod.model_params(cfg)
    opts = {"p": args.p, "levels": args.levels}
    run_dir, digest = make_run_dir(args.out, "besov-probe", cfg, opts)
    X = gff.sample_gff(p, cfg["run"]["seed"], size=cfg["run"]["n_samples"])
    W = wick.wick_exp(X, p).values
    fields.dump_field(run_dir / "wick_sample.bin", W[0], p.grid, kind="wick_exponential")
    levels = besov.scaling_levels(p.grid, p.mass, p.epsilon) if args.levels == "scaling" else None
    rep = besov.regularity_slope(W, p.grid, args.p, levels)
    rep.update({"gamma": p.gamma, "target": -p.gamma})
    return _emit(run_dir, "regularity.json", rep, digest)


def cmd_params(args, cfg):
    action = args.action or "region"
    if action == "region":
        g = args.gamma if args.gamma is not None else cfg["model"]["gamma"]
        run_dir, digest = make_run_dir(args.out, "params", cfg, {"action": action, "gamma": g})
        return _emit(run_dir, "region.json", pmod.region_report(g), digest)
    if args.gamma_grid is None:
        raise ConfigError("--gamma-grid", "required for 'params sweep'")
    grid = _floats(args.gamma_grid, "--gamma-grid")
    run_dir, digest = make_run_dir(args.out, "params", cfg, {"action": action, "gamma_grid": grid})
    _emit_csv(run_dir, "sweep.csv", pmod.sweep(grid))
    return {"run_dir": str(run_dir)}


def cmd_resolvent(args, cfg):
    p = cfgmod.model_params(cfg)
    run = cfg["run"]
    opts = {"action": args.action, "lambda": args.lam, "function": args.function, "T_max": args.t_max,
            "n_starts": args.n_starts, "n_paths": args.n_paths, "z_max": args.z_max}
    F = _library_function(args.function, p.grid)
    run_dir, digest = make_run_dir(args.out, "resolvent", cfg, opts)
    if args.action == "estimate":
        X0 = gff.sample_gff(p, gff.rng_for(run["seed"], 2**32 - 7))
        Y0 = np.zeros_like(X0)
        fields.dump_field(run_dir / "X0.bin", X0, p.grid, kind="start")
        est = resolvent.estimate_resolvent(F, args.lam, X0, Y0, p, args.n_paths, args.t_max, run["seed"],
                                           dt=run["dt"], scheme=run["scheme"])
        out = est.to_dict()
        if p.alpha == 0 and args.function == "linear":
            out["closed_form"] = resolvent.gaussian_closed_form(F.test_vectors[0], args.lam, X0, Y0, p, "phi",
                                                                args.t_max)
        return _emit(run_dir, "estimate.json", out, digest)
    ens = _ensemble(p, cfg, n_samples=max(args.n_starts, 1))
    rep = resolvent.resolvent_identity_check(F, args.lam, ens, p, n_starts=args.n_starts, n_paths=args.n_paths,
                                             T_max=args.t_max, seed=run["seed"])
    return _emit(run_dir, "report.json", rep.to_dict(args.z_max), digest)


def cmd_gradcheck(args, cfg):
    p = cfgmod.model_params(cfg)
    run = cfg["run"]
    opts = {"wrt": args.wrt, "t_end": args.t_end, "step": args.step}
    run_dir, digest = make_run_dir(args.out, "gradcheck", cfg, opts)
    bg = dynamics.simulate_stationary(p, n_samples=1, spacing=1.0, seed=run["seed"], dt=run["dt"],
                                      scheme=run["scheme"], n_chains=1) if p.alpha else None
    X0 = bg.X[0] if bg is not None else gff.sample_gff(p, run["seed"])
    Y0 = bg.Y[0] if bg is not None else np.zeros_like(X0)
    x = p.grid.coords()
    xx, yy = np.meshgrid(x, x, indexing="ij")
    M = p.grid.M
    h = -(1 + 0.5 * np.cos(xx / M) * np.cos(yy / M)) if args.wrt == "Y0" else np.cos(xx / M) + np.sin(2 * yy / M)
    fields.dump_field(run_dir / "h.bin", h, p.grid, kind="direction")
    out = dynamics.gradcheck(p, h, X0, Y0, args.t_end, run["dt"], run["seed"], wrt=args.wrt, step=args.step,
                             scheme=run["scheme"])
    out["passed"] = out["relative_error_final"] < args.tol
    return _emit(run_dir, "gradcheck.json", out, digest)


def cmd_renorm(args, cfg):
    p = cfgmod.model_params(cfg)
    eps = _floats(args.eps_grid, "--eps-grid")
    run_dir, digest = make_run_dir(args.out, "renorm", cfg, {"eps_grid": eps})
    target = math.log(2) / (2 * math.pi)
    rows, prev = [], None
    for e in eps:
        try:
            c = gff.renorm_constant(e, p)
        except ValueError as exc:
            raise ConfigError("--eps-grid", str(exc)) from None
        d = "" if prev is None else c - prev
        rel = "" if prev is None else abs(d - target * math.log2(prev_e / e)) / (target * math.log2(prev_e / e))
        rows.append({"epsilon": e, "c_eps": c, "difference": d, "target_difference":
                     "" if prev is None else target * math.log2(prev_e / e), "relative_error": rel})
        prev, prev_e = c, e
    slope = float(np.polyfit(np.log(1 / np.asarray(eps)), [r["c_eps"] for r in rows], 1)[0]) if len(eps) > 1 else ""
    _emit_csv(run_dir, "renorm.csv", rows)
    (run_dir / "summary.json").write_text(json.dumps({"log_slope": slope, "target_slope": 1 / (2 * math.pi),
                                                      "config_hash": digest}))
    return {"run_dir": str(run_dir)}


COMMANDS = {
    "sample": cmd_sample,
    "ibp-check": cmd_ibp,
    "fpk-check": cmd_fpk,
    "lyapunov": cmd_lyapunov,
    "besov-probe": cmd_besov,
    "params": cmd_params,
    "resolvent": cmd_resolvent,
    "gradcheck": cmd_gradcheck,
    "renorm": cmd_renorm,
}


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="master seed (run.seed)")
    common.add_argument("--workers", type=int, help="worker processes (run.workers)")
    common.add_argument("--out", help="output root (out)")
    common.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("--gamma", type=float, help="model.gamma")
    common.add_argument("--alpha", type=float, help="model.alpha")
    common.add_argument("--mass", type=float, help="model.mass")
    common.add_argument("--epsilon", type=float, help="model.epsilon")
    common.add_argument("--fejer-order", type=int, help="model.fejer_order")
    common.add_argument("--n", type=int, help="model.n")
    common.add_argument("--dt", type=float, help="run.dt")
    common.add_argument("--scheme", help="run.scheme")
    common.add_argument("--n-samples", type=int, help="run.n_samples")

    ap = argparse.ArgumentParser(prog="expphi2", description="Exponential-interaction field simulator")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("sample", parents=[common], help="one stationary ensemble")
    for name in ("ibp-check", "fpk-check"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--function", default="square")
        sp.add_argument("--z-max", type=float, default=4.0)
        if name == "ibp-check":
            sp.add_argument("--h", default="u1")
            sp.add_argument("--drift", default="generator_matched", choices=functionals.DRIFTS)
            sp.add_argument("--control-variate", action="store_true")
        else:
            sp.add_argument("--split", default="phi", choices=functionals.SPLITS)
    sp = sub.add_parser("lyapunov", parents=[common])
    sp.add_argument("--s", type=float)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--delta", type=float, default=0.01)
    sp = sub.add_parser("besov-probe", parents=[common])
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--levels", default="scaling", choices=("scaling", "default"))
    sp = sub.add_parser("params", parents=[common])
    sp.add_argument("action", nargs="?", choices=("region", "sweep"))
    sp.add_argument("--gamma-grid")
    sp = sub.add_parser("resolvent", parents=[common])
    sp.add_argument("action", nargs="?", default="check", choices=("check", "estimate"))
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sp.add_argument("--function", default="tanh_sum")
    sp.add_argument("--t-max", type=float, default=8.0)
    sp.add_argument("--n-starts", type=int, default=200)
    sp.add_argument("--n-paths", type=int, default=50)
    sp.add_argument("--z-max", type=float, default=4.0)
    sp = sub.add_parser("gradcheck", parents=[common])
    sp.add_argument("--wrt", default="Y0", choices=("Y0", "X0"))
    sp.add_argument("--t-end", type=float, default=1.0)
    sp.add_argument("--step", type=float, default=1e-4)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp = sub.add_parser("renorm", parents=[common])
    sp.add_argument("--eps-grid", default="0.2,0.1,0.05,0.025")
    return ap


_OVERRIDES = {
    "seed": "run.seed", "workers": "run.workers", "out": "out", "gamma": "model.gamma", "alpha": "model.alpha",
    "mass": "model.mass", "epsilon": "model.epsilon", "fejer_order": "model.fejer_order", "n": "model.n",
    "dt": "run.dt", "scheme": "run.scheme", "n_samples": "run.n_samples",
}


def _fail(code, payload):
    sys.stderr.write(json.dumps(_jsonable(payload), sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = {dst: getattr(args, src) for src, dst in _OVERRIDES.items()}
        if args.command == "renorm" and args.n is None:
            overrides["model.n"] = 512  # the log-law needs a fine grid
        cfg = cfgmod.load_config(args.config, overrides)
        if args.print_config:
            sys.stdout.write(cfgmod.dump_yaml(cfg))
            return 0
        args.out = cfg["out"]
        COMMANDS[args.command](args, cfg)
        return 0
    except ConfigError as exc:
        return _fail(2, {"error": "config", "field": exc.field, "message": str(exc)})
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "to_dict"):
            payload.update(exc.to_dict())
        if hasattr(exc, "violations"):
            payload["violations"] = exc.violations
        return _fail(1, payload)


if __name__ == "__main__":
    sys.exit(main())
