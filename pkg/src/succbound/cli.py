"""Command-line entry point: simulate, bounds, region, sweep-t0, selfcheck.

Exit codes: 0 success, 1 usage or invalid config, 2 numeric failure, 3 IO.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .approx_engine import ApproximationConfig, direct_error, direct_solve, run_scheme, stack_rows
from .config import RunConfig, config_hash, load_config
from .error_bounds import bounds_rows, gamma_forcing, solve_Z1, solve_Z2
from .io import append_manifest, write_csv
from .linear_analysis import SingularTransition, fundamental_matrix
from .odeint import IntegratorOptions, StepSizeUnderflow
from .polyfield import Monomial, PolySystemModel, PolyVectorField, lipschitz_constants
from .presets import PRESETS
from .region import (BracketInvalid, InsufficientOscillation, Method, RegionContext, RegionQuery,
                     estimate_region, ratio_table)
from .signals import Constant

log = logging.getLogger("succbound")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- config handling ------------------------------------------------------------

def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    upd = {}
    model = cfg.model
    if args.preset is not None:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        model = model.model_copy(update={"preset": args.preset, "inline": None})
    if args.f0 is not None:
        model = model.with_f0(args.f0)
    approx = cfg.approximation.model_dump()
    region = cfg.region.model_dump()
    if args.m is not None:
        approx["m"] = args.m
    if args.scheme is not None:
        approx["scheme"] = args.scheme
    if args.t0 is not None:
        approx["t0"] = args.t0
        region["t0"] = args.t0
    if args.m is not None or args.scheme is not None:
        region["methods"] = _retarget_methods(cfg.region.methods, args.m, args.scheme)
    if args.out is not None:
        upd["output_dir"] = args.out
    data = cfg.model_dump()
    data.update(upd, model=model.model_dump(), approximation=approx, region=region)
    return RunConfig.model_validate(data)


def _retarget_methods(labels, m, scheme):
    out = []
    for lab in labels:
        meth = Method.parse(lab)
        if meth.kind != "reference":
            meth = Method(meth.kind, m if m is not None else meth.m, scheme or meth.scheme)
        if meth.label not in out:
            out.append(meth.label)
    return tuple(out)


def _out_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _grid(t0: float, T: float, dt: float) -> np.ndarray:
    n = max(int(round((T - t0) / dt)), 1)
    return np.linspace(t0, T, n + 1)


def _norm_on(traj, grid) -> np.ndarray:
    """``||traj(t)||`` on ``grid``; nan where the trajectory does not reach."""
    out = np.full(len(grid), np.nan)
    sel = (grid >= traj.times[0]) & (grid <= traj.times[-1])
    if np.any(sel):
        v = np.asarray(traj(grid[sel]))
        out[sel] = np.abs(v[:, 0]) if v.ndim == 2 and v.shape[1] == 1 else np.linalg.norm(v.reshape(len(v), -1), axis=1)
    return out


def _bound_on(bound, grid) -> np.ndarray:
    out = np.full(len(grid), np.nan)
    sel = (grid >= bound.times[0]) & (grid <= bound.times[-1])
    if np.any(sel):
        out[sel] = bound(grid[sel])
    return out


# --- simulate / bounds ------------------------------------------------------------------

def _approximation_run(cfg: RunConfig):
    model = cfg.model.build()
    a = cfg.approximation
    T = a.t0 + a.horizon
    x0 = cfg.x0()
    opts = IntegratorOptions(rel_tol=a.rel_tol, abs_tol=a.abs_tol)
    stack = run_scheme(model, ApproximationConfig(a.scheme, a.m, a.t0, x0, T, opts))
    direct = direct_solve(model, a.t0, x0, T, opts)
    z = direct_error(model, stack)
    trace = fundamental_matrix(model, a.t0, T)
    grid = _grid(a.t0, T, a.sample_dt)
    return model, stack, direct, z, trace, grid


def _stack_csv(out: Path, stack, z, grid) -> Path:
    g = grid[grid <= min(stack.times[-1], z.times[-1])]
    header, rows = stack_rows(stack, z, g)
    return write_csv(out / "stack.csv", header, rows)


def cmd_simulate(cfg: RunConfig, args) -> tuple[list, dict]:
    model, stack, direct, z, trace, grid = _approximation_run(cfg)
    Z2 = solve_Z2(stack, trace)
    nY = _norm_on(stack.Y_m, grid)
    Zv = _bound_on(Z2, grid)
    cols = [grid, _norm_on(direct, grid), nY, np.maximum(nY - Zv, 0.0), nY + Zv, Zv]
    header = ["t", "norm_x_direct", "norm_Ym", "lower", "upper", "Z2"]
    out = _out_dir(cfg)
    files = [write_csv(out / "trajectory.csv", header, np.column_stack(cols)),
             _stack_csv(out, stack, z, grid)]
    info = {"stack_divergent": stack.divergent, "direct_blew_up": direct.blew_up, "Z2_blew_up": Z2.blew_up}
    _report(info)
    return files, info


def _lipschitz_radius(cfg, stack, direct, grid) -> float:
    if cfg.bounds.lipschitz_radius is not None:
        return cfg.bounds.lipschitz_radius
    vals = [_norm_on(direct, grid)] + [_norm_on(stack.partial_sum(k), grid) for k in range(1, stack.m + 1)]
    return float(np.nanmax(np.concatenate(vals)))


def cmd_bounds(cfg: RunConfig, args) -> tuple[list, dict]:
    model, stack, direct, z, trace, grid = _approximation_run(cfg)
    a = cfg.approximation
    Z2 = solve_Z2(stack, trace, with_Z3=True)
    cols = {"Z2": _bound_on(Z2, grid), "Z3": _bound_on(Z2.extra["Z3"], grid)}
    info = {"stack_divergent": stack.divergent, "Z2_blew_up": Z2.blew_up, "lambda1": Z2.extra["lambda1"]}
    if cfg.bounds.z1 and not stack.divergent:
        R = _lipschitz_radius(cfg, stack, direct, grid)
        lip = lipschitz_constants(model.f, R, a.t0, a.t0 + a.horizon)
        gam = gamma_forcing(stack, trace, lip, conservative=cfg.bounds.conservative_gamma)
        lam = trace.p(gam.times) + trace.c(gam.times) * lip.l2
        Z1 = solve_Z1(gam, lam)
        cols["Z1"] = _bound_on(Z1, grid)
        info.update(lipschitz_radius=R, l2=lip.l2, Z1_blew_up=Z1.blew_up)
    nY = _norm_on(stack.Y_m, grid)
    cols.update(lower=np.maximum(nY - cols["Z2"], 0.0), upper=nY + cols["Z2"], norm_Ym=nY,
                norm_x_direct=_norm_on(direct, grid))
    out = _out_dir(cfg)
    header, rows = bounds_rows(grid, cols)
    files = [write_csv(out / "bounds.csv", header, rows),
             write_csv(out / "linear_trace.csv", ["t", "norm_w", "p", "c"], trace.to_rows()),
             _stack_csv(out, stack, z, grid)]
    info.update(c_hat=trace.c_hat, c_bound_violated=trace.c_bound_violated)
    _report(info)
    return files, info


# --- region / sweep --------------------------------------------------------------------

def _region_query(cfg: RunConfig, model, label: str, t0: float) -> RegionQuery:
    r = cfg.region
    lo, hi = cfg.bracket()
    return RegionQuery(model, Method.parse(label), t0=t0, horizon=r.horizon, n_directions=r.n_directions,
                       r_lo=lo, r_hi=hi, tol=r.tol, params=r.classifier.params(),
                       opts=IntegratorOptions(rel_tol=r.rel_tol, abs_tol=r.abs_tol), chunk_size=r.chunk_size)


def _estimates_at(cfg: RunConfig, model, t0: float, workers: int) -> list:
    ests, trace = [], None
    for label in cfg.region.methods:
        q = _region_query(cfg, model, label, t0)
        ctx = RegionContext(q, trace)
        trace = ctx.trace
        t1 = time.perf_counter()
        est = estimate_region(q, workers=workers, ctx=ctx)
        n_bad = sum(f == "bracket_invalid" for f in est.flags)
        print(f"{label} t0={t0:g}: {len(est.thresholds)} directions, {n_bad} failed, "
              f"{time.perf_counter() - t1:.1f}s")
        ests.append(est)
    return ests


def _all_failed(est) -> bool:
    return all(f == "bracket_invalid" for f in est.flags)


def cmd_region(cfg: RunConfig, args) -> tuple[list, dict]:
    model = cfg.model.build()
    ests = _estimates_at(cfg, model, cfg.region.t0, args.workers)
    out = _out_dir(cfg)
    files = []
    for est in ests:
        header, rows = est.rows()
        files.append(write_csv(out / f"region_{est.method}.csv", header, rows))
    info = {"meta": _json_safe(ests[0].meta), "all_failed": [e.method for e in ests if _all_failed(e)]}
    return files, info


def cmd_sweep(cfg: RunConfig, args) -> tuple[list, dict]:
    model = cfg.model.build()
    per_t0 = [_estimates_at(cfg, model, float(t0), args.workers) for t0 in cfg.sweep.t0s]
    out = _out_dir(cfg)
    files = []
    for ests in per_t0:
        for est in ests:
            header, rows = est.rows()
            files.append(write_csv(out / f"region_{est.method}_t0_{est.t0:.6g}.csv", header, rows))
    for k, label in enumerate(cfg.region.methods):
        header, rows = ratio_table([ests[k] for ests in per_t0])
        files.append(write_csv(out / f"ratios_{label}.csv", header, rows))
    failed = [f"{e.method}@{e.t0:g}" for ests in per_t0 for e in ests if _all_failed(e)]
    return files, {"all_failed": failed}


# --- selfcheck ---------------------------------------------------------------------------

def _vdp_small():
    from .presets import preset_model
    return preset_model("vanderpol-8.1")


def _check_telescoping(rel_tol: float):
    model = _vdp_small()
    worst = 0.0
    ref_tol = 1e-9  # nominal tolerance the identity is checked against
    for scheme in ("A", "B"):
        opts = IntegratorOptions(rel_tol=rel_tol, abs_tol=1e-3 * rel_tol)
        stack = run_scheme(model, ApproximationConfig(scheme, 2, 0.0, (0.02, 0.01), 10.0, opts))
        x = direct_solve(model, 0.0, (0.02, 0.01), 10.0, opts)
        z = direct_error(model, stack)
        t = np.linspace(0.0, 10.0, 2001)
        worst = max(worst, float(np.max(np.linalg.norm(stack.Y_m(t) + z(t) - x(t), axis=1))))
    return worst <= 10 * ref_tol, f"max |Y_m + z - x| = {worst:.3g} (limit {10 * ref_tol:.0e})"


def _check_dominance(rel_tol: float):
    model = _vdp_small()
    opts = IntegratorOptions(rel_tol=rel_tol, abs_tol=1e-3 * rel_tol)
    stack = run_scheme(model, ApproximationConfig("A", 2, 0.0, (0.02, 0.01), 10.0, opts))
    z = direct_error(model, stack)
    Z2 = solve_Z2(stack, fundamental_matrix(model, 0.0, 10.0), with_Z3=True)
    t = np.linspace(0.0, min(10.0, Z2.times[-1]), 2001)
    nz = np.linalg.norm(z(t), axis=1)
    gap = float(np.min(Z2(t) - nz))
    z3 = float(np.max(Z2.extra["Z3"](t) - Z2(t)))
    slack = 10 * 1e-9 * max(float(np.max(nz)), 1e-300)
    ok = gap >= -slack and z3 <= slack and not Z2.blew_up
    return ok, f"min(Z2 - |z|) = {gap:.3g}, max(Z3 - Z2) = {z3:.3g}"


def _linear_model():
    A = ((Constant(0.0), Constant(1.0)), (Constant(-4.0), Constant(-1.2)))
    return PolySystemModel(A, PolyVectorField.zero(2), name="linear")


def _check_linear(rel_tol: float):
    model = _linear_model()
    opts = IntegratorOptions(rel_tol=rel_tol, abs_tol=1e-3 * rel_tol)
    stack = run_scheme(model, ApproximationConfig("A", 3, 0.0, (1.0, 0.5), 10.0, opts))
    t = np.linspace(0.0, 10.0, 501)
    hi = float(np.max(np.abs(stack.levels_at(t)[:, 1:])))
    Z2 = solve_Z2(stack, fundamental_matrix(model, 0.0, 10.0))
    zmax = float(np.max(np.abs(Z2.values)))
    return hi == 0.0 and zmax == 0.0, f"max |y_k>=2| = {hi:.3g}, max Z2 = {zmax:.3g}"


def _check_zero(rel_tol: float):
    model = _vdp_small()
    opts = IntegratorOptions(rel_tol=rel_tol, abs_tol=1e-3 * rel_tol)
    stack = run_scheme(model, ApproximationConfig("A", 3, 0.0, (0.0, 0.0), 5.0, opts))
    x = direct_solve(model, 0.0, (0.0, 0.0), 5.0, opts)
    Z2 = solve_Z2(stack, fundamental_matrix(model, 0.0, 5.0))
    worst = max(float(np.max(np.abs(stack.traj.states))), float(np.max(np.abs(x.states))),
                float(np.max(np.abs(Z2.values))))
    return worst == 0.0, f"max |output| = {worst:.3g}"


def _check_identity_trace(rel_tol: float):
    A = ((Constant(-1.0), Constant(0.0)), (Constant(0.0), Constant(-1.0)))
    tr = fundamental_matrix(A, 0.0, 5.0)
    dp = float(np.max(np.abs(tr.p_samples + 1.0)))
    dc = float(np.max(np.abs(tr.c_samples - 1.0)))
    return dp <= 1e-6 and dc <= 1e-9, f"max |p + 1| = {dp:.3g}, max |c - 1| = {dc:.3g}"


def _cubic_1d():
    f = PolyVectorField(1, [[Monomial(Constant(1.0), (3,))]])
    return PolySystemModel(((Constant(-1.0),),), f, name="cubic-1d")


def _check_separatrix(rel_tol: float):
    q = RegionQuery(_cubic_1d(), Method("reference"), horizon=30.0, r_lo=0.1, r_hi=2.0,
                    opts=IntegratorOptions(rel_tol=min(rel_tol, 1e-7), abs_tol=1e-10))
    est = estimate_region(q)
    err = float(np.max(np.abs(est.thresholds - 1.0)))
    return err <= q.bisection_tol, f"thresholds {est.thresholds.round(6).tolist()} (tol {q.bisection_tol:.2g})"


SELFCHECKS = [
    ("telescoping", _check_telescoping),
    ("dominance", _check_dominance),
    ("linear-model", _check_linear),
    ("zero-data", _check_zero),
    ("identity-trace", _check_identity_trace),
    ("cubic-separatrix", _check_separatrix),
]


def cmd_selfcheck(rel_tol: float) -> int:
    failed = 0
    for name, fn in SELFCHECKS:
        try:
            with np.errstate(all="ignore"):
                ok, detail = fn(rel_tol)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    print(f"{len(SELFCHECKS) - failed}/{len(SELFCHECKS)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


# --- plumbing --------------------------------------------------------------------------

def _json_safe(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, float)):
            v = float(v)
            v = v if np.isfinite(v) else str(v)
        elif isinstance(v, np.bool_):
            v = bool(v)
        out[k] = v
    return out


def _report(info: dict):
    for k, v in info.items():
        print(f"{k}: {v}")


COMMANDS = {"simulate": cmd_simulate, "bounds": cmd_bounds, "region": cmd_region, "sweep-t0": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--preset", help=f"named model, one of: {', '.join(sorted(PRESETS))}")
    common.add_argument("--m", type=int, help="number of successive approximations")
    common.add_argument("--scheme", choices=["A", "B"], help="approximation scheme")
    common.add_argument("--f0", type=float, help="forcing amplitude")
    common.add_argument("--t0", type=float, help="initial time")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="worker processes for region sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="succbound", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="direct and approximate trajectories with Z2 bounds")
    sub.add_parser("bounds", parents=[common], help="Z1, Z2, Z3 error bounds and the linear trace")
    sub.add_parser("region", parents=[common], help="region boundary per method")
    sub.add_parser("sweep-t0", parents=[common], help="region boundaries over several initial times")
    sc = sub.add_parser("selfcheck", help="built-in oracle suite")
    sc.add_argument("--rel-tol", type=float, default=1e-9, help="integrator tolerance under test")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selfcheck":
        if not args.rel_tol > 0:
            print("error: --rel-tol must be positive", file=sys.stderr)
            return EXIT_USAGE
        return cmd_selfcheck(args.rel_tol)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = resolve_config(args)
        cfg.bracket()
    except (ValidationError, UsageError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    t_start = time.perf_counter()
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
            files, info = COMMANDS[args.command](cfg, args)
        man = append_manifest(cfg.output_dir, args.command, config_hash(cfg), __version__,
                              time.perf_counter() - t_start, files)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, StepSizeUnderflow, SingularTransition, BracketInvalid,
            InsufficientOscillation, ValueError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {len(man.files)} files to {cfg.output_dir}")
    if info.get("all_failed"):
        print(f"error: every direction failed for {info['all_failed']}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
