"""Scalar comparison equations bounding ||x|| and the approximation error.

With ``p`` and ``c`` from the fundamental-matrix trace and the error
nonlinearity ``g(t, z) = f(t, z + Y_m) - offset`` majorised by a polynomial
``q(s) = gamma + D s + pi_minus(s)`` with non-negative coefficients:

* ``Z1' = (p + c l2) Z1 + Gamma``          (global Lipschitz constant l2)
* ``Z2' = p Z2 + c q(Z2)``                 (full nonlinear majorant)
* ``Z3' = (p + c D) Z3 + c gamma``         (drop the terms of degree >= 2)

All start from zero at ``t0``. The norm of the solution itself is bounded by
``X' = p X + c (L(X) + ||F||)`` with ``X(t0) = ||x0||``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .approx_engine import ApproximationStack, SchemeSystem
from .linear_analysis import FundamentalMatrixTrace
from .odeint import IntegratorOptions, Status, Trajectory, integrate_batch
from .polyfield import LipschitzConstants, PolySystemModel, eval_jacobian, norm_bound, shift_expand

__all__ = [
    "ErrorBoundMode",
    "BoundTrace",
    "GammaForcing",
    "Bilateral",
    "norm_comparison_solve",
    "gamma_forcing",
    "solve_Z1",
    "solve_Z2",
    "solve_Z3",
    "comparison_batch",
    "running_limsup",
    "bilateral_bounds",
    "bounds_rows",
]

Z1_BLOWUP = 1e300
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


class ErrorBoundMode(enum.Enum):
    LINEAR_LIPSCHITZ = "Z1"
    NONLINEAR_COMPARISON = "Z2"
    LINEARIZED_COMPARISON = "Z3"
    NORM_COMPARISON = "X"


@dataclass
class BoundTrace:
    """A non-negative scalar bound ``Z(t)`` with ``Z(t0) = 0`` (or ``||x0||`` for X)."""

    traj: Trajectory
    mode: ErrorBoundMode
    extra: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.traj.times

    @property
    def values(self) -> np.ndarray:
        return self.traj.states[:, 0]

    @property
    def blew_up(self) -> bool:
        return self.traj.status != Status.COMPLETED

    @property
    def stop_time(self) -> Optional[float]:
        return self.traj.stop_time

    def __call__(self, t):
        v = self.traj(t)
        return v[..., 0]

    def tail_sup(self, fraction: float = 0.25) -> float:
        """Largest sample over the last ``fraction`` of the horizon (inf if stopped early)."""
        if self.blew_up:
            return float("inf")
        t = self.times
        start = t[-1] - fraction * (t[-1] - t[0])
        return float(np.max(self.values[t >= start]))


def _scalar_traj(times, values, status=Status.COMPLETED, stop=None, t_end=None) -> Trajectory:
    return Trajectory(np.asarray(times, dtype=float), np.asarray(values, dtype=float)[:, None], None,
                      status, stop, t_end)


def _clamp_opts(opts: IntegratorOptions, trace: FundamentalMatrixTrace, extra=()) -> IntegratorOptions:
    return opts.with_breakpoints(tuple(trace.breaks) + tuple(extra))


def _check_horizon(trace: FundamentalMatrixTrace, t0: float, T: float):
    if t0 < trace.t0 - 1e-12 or T > trace.T + 1e-12:
        raise ValueError(f"trace covers [{trace.t0}, {trace.T}], requested [{t0}, {T}]")


# --- norm of the solution ---------------------------------------------------------

def norm_comparison_solve(model: PolySystemModel, t0: float, x0_norm: float, trace: FundamentalMatrixTrace,
                          T: float, opts: IntegratorOptions = IntegratorOptions()) -> BoundTrace:
    """Upper bound ``X*(t) >= ||x(t)||`` from the norm comparison equation."""
    _check_horizon(trace, t0, T)
    exp = shift_expand(model.f)
    n = model.dim

    def rhs(t, X):
        L = norm_bound(exp, exp.coefficients(t, np.zeros(n)))
        s = X[:, 0]
        out = trace.p(t) * s + trace.c(t) * (L.pi(s) + model.forcing_norm(t))
        return out[:, None]

    bt = integrate_batch(rhs, t0, np.array([[float(x0_norm)]]), T,
                         _clamp_opts(opts, trace, model.breakpoints()), dense=True)
    return BoundTrace(bt.member(0), ErrorBoundMode.NORM_COMPARISON)


# --- linear error equation -----------------------------------------------------------

@dataclass
class GammaForcing:
    times: np.ndarray
    values: np.ndarray
    conservative: bool = False

    def __call__(self, t):
        return np.interp(t, self.times, self.values)


def _stack_grid(stack: ApproximationStack, trace: FundamentalMatrixTrace, grid=None) -> np.ndarray:
    if grid is not None:
        return np.asarray(grid, dtype=float)
    t, _ = trace.unique_grid()
    return t[(t >= stack.times[0]) & (t <= stack.times[-1])]


def gamma_forcing(stack: ApproximationStack, trace: FundamentalMatrixTrace, lipschitz: LipschitzConstants,
                  conservative: bool = False, grid=None) -> GammaForcing:
    """Forcing of the linear error equation sampled on ``grid``.

    Exact form ``c (l2 ||y_m|| + ||f'(Y_{m-1}) y_m||)``; the Jacobian term is
    absent for scheme B and for m = 1, whose z-free error term is a plain
    difference of f. ``conservative`` replaces c by its maximum and the
    Jacobian norm by ``l3 ||Y_{m-1}|| ||y_m||``.
    """
    t = _stack_grid(stack, trace, grid)
    lv = stack.levels_at(t)  # (N, m, n)
    ym = lv[:, -1]
    nym = np.linalg.norm(ym, axis=1)
    use_jac = stack.scheme == "A" and stack.m > 1
    if conservative:
        c = np.full(len(t), trace.c_hat)
        jac = lipschitz.l3 * np.linalg.norm(lv[:, :-1].sum(axis=1), axis=1) * nym if use_jac else 0.0
    else:
        c = trace.c(t)
        if use_jac:
            Ym1 = lv[:, :-1].sum(axis=1)
            if all(mono.coeff.is_constant() for _, mono in stack.model.f.monomials()):
                J = eval_jacobian(stack.model.f, 0.0, Ym1)
                jac = np.linalg.norm(np.einsum("bij,bj->bi", J, ym), axis=1)
            else:
                jac = np.array([np.linalg.norm(eval_jacobian(stack.model.f, float(ti), Ym1[i]) @ ym[i])
                                for i, ti in enumerate(t)])
        else:
            jac = 0.0
    vals = c * (lipschitz.l2 * nym + jac)
    return GammaForcing(t, np.asarray(vals, dtype=float), conservative)


def _z1_quadrature(t: np.ndarray, lam: np.ndarray, gam: np.ndarray) -> np.ndarray:
    """Exact variation-of-constants for piecewise-linear ``lam`` and ``gam``.

    ``Z_{j+1} = e^{L_j} Z_j + int_{t_j}^{t_{j+1}} e^{int_s^{t_{j+1}} lam} gam(s) ds``
    with the inner integral by 5-point Gauss-Legendre per interval.
    """
    h = np.diff(t)
    L = 0.5 * h * (lam[1:] + lam[:-1])
    s = (t[:-1, None] + 0.5 * h[:, None] * (_GL_NODES[None] + 1.0))
    w = 0.5 * h[:, None] * _GL_WEIGHTS[None]
    frac = (s - t[:-1, None]) / h[:, None]
    lam_s = lam[:-1, None] + frac * (lam[1:] - lam[:-1])[:, None]
    gam_s = gam[:-1, None] + frac * (gam[1:] - gam[:-1])[:, None]
    expo = 0.5 * (t[1:, None] - s) * (lam_s + lam[1:, None])
    with np.errstate(over="ignore", invalid="ignore"):
        I = np.sum(w * np.exp(expo) * gam_s, axis=1)
        eL = np.exp(L)
        Z = np.empty(len(t))
        Z[0] = 0.0
        for j in range(len(h)):
            Z[j + 1] = eL[j] * Z[j] + I[j]
    return Z


def solve_Z1(gamma: GammaForcing, lam, t0: Optional[float] = None, T: Optional[float] = None,
             opts: IntegratorOptions = IntegratorOptions(rel_tol=1e-10, abs_tol=1e-300)) -> BoundTrace:
    """``Z1' = lam(t) Z1 + Gamma(t)``, ``Z1(t0) = 0``, by ODE and by quadrature.

    ``lam`` is an array on ``gamma.times`` or a constant. Both are taken as
    piecewise linear in t. The quadrature values are stored in
    ``extra["quadrature"]``; the ODE solution is the trace itself.
    """
    t = gamma.times
    lam = np.broadcast_to(np.asarray(lam, dtype=float), t.shape).copy()
    t0 = t[0] if t0 is None else t0
    T = t[-1] if T is None else T
    sel = (t >= t0) & (t <= T)
    t, lam, gam = t[sel], lam[sel], gamma.values[sel]
    quad = _z1_quadrature(t, lam, gam)
    if not np.any(gam):
        traj = _scalar_traj(t, np.zeros(len(t)), t_end=T)
        return BoundTrace(traj, ErrorBoundMode.LINEAR_LIPSCHITZ, {"quadrature": quad, "grid": t})

    # the equation is linear in (Z1, Gamma): solve with Gamma scaled to unit peak
    scale = float(np.max(np.abs(gam)))
    g1 = gam / scale

    def rhs(s, Z):
        return (np.interp(s, t, lam) * Z[:, 0] + np.interp(s, t, g1))[:, None]

    o = IntegratorOptions(rel_tol=opts.rel_tol, abs_tol=opts.abs_tol, max_step=opts.max_step,
                          blowup_threshold=Z1_BLOWUP / scale)
    tr = integrate_batch(rhs, float(t[0]), np.zeros((1, 1)), float(t[-1]), o, dense=True).member(0)
    tr = Trajectory(tr.times, tr.states * scale, None if tr.dense is None else tr.dense * scale,
                    tr.status, tr.stop_time, tr.t_end)
    return BoundTrace(tr, ErrorBoundMode.LINEAR_LIPSCHITZ, {"quadrature": quad, "grid": t})


# --- nonlinear and linearised comparison equations ------------------------------------------

def comparison_batch(model: PolySystemModel, scheme: str, m: int, t0: float, X0, T: float,
                     trace: FundamentalMatrixTrace, opts: IntegratorOptions,
                     parts: Sequence[str] = ("Z2",), dense: bool = True, raise_on_underflow: bool = False):
    """Co-integrate the stack with the requested comparison equations.

    State layout per member: ``[y_1..y_m, Z2?, Z3?, I1?]`` where ``I1`` is
    ``int P1`` with ``P1 = p + c D``, included whenever Z3 is. The monitor
    watches Z2 when present, otherwise the stack norm. Returns the batch
    trajectory and a dict of column indices.
    """
    _check_horizon(trace, t0, T)
    sysm = SchemeSystem(model, scheme, m)
    k = m * model.dim
    cols, nxt = {}, k
    for name in ("Z2", "Z3"):
        if name in parts:
            cols[name] = nxt
            nxt += 1
    if "Z3" in parts:
        cols["I1"] = nxt
        nxt += 1
    exp = sysm.expansion
    degm = exp._degree_matrix

    def rhs(t, S):
        ys_flat = S[:, :k]
        ys = sysm.split(ys_flat)
        out = np.empty_like(S)
        out[:, :k] = sysm.stack_derivative(t, ys_flat)
        p, c = trace.p(t), trace.c(t)
        C = sysm.error_polynomial(t, ys)
        q = np.sqrt(np.sum(C * C, axis=-1)) @ degm  # (B, K+1)
        if "Z2" in cols:
            z = S[:, cols["Z2"]]
            val = np.zeros(len(z))
            for d in range(q.shape[1] - 1, -1, -1):
                val = val * z + q[:, d]
            out[:, cols["Z2"]] = p * z + c * val
        if "Z3" in cols:
            D = q[:, 1] if q.shape[1] > 1 else 0.0
            P1 = p + c * D
            out[:, cols["Z3"]] = P1 * S[:, cols["Z3"]] + c * q[:, 0]
            out[:, cols["I1"]] = P1
        return out

    if "Z2" in cols:
        zi = cols["Z2"]
        monitor = lambda S: np.maximum(S[:, zi], np.sqrt(np.sum(S[:, :k] ** 2, axis=1)))
    else:
        monitor = lambda S: np.sqrt(np.sum(S[:, :k] ** 2, axis=1))
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    S0 = np.zeros((X0.shape[0], nxt))
    S0[:, :k] = sysm.initial_stack(X0)
    o = _clamp_opts(sysm.options(opts), trace)
    bt = integrate_batch(rhs, t0, S0, T, o, monitor=monitor, dense=dense, raise_on_underflow=raise_on_underflow)
    return bt, cols


def _stack_config(stack: ApproximationStack):
    cfg = stack.cfg
    if cfg is None:
        raise ValueError("stack carries no configuration")
    return cfg


def solve_Z2(stack: ApproximationStack, trace: FundamentalMatrixTrace, T: Optional[float] = None,
             opts: Optional[IntegratorOptions] = None, with_Z3: bool = False) -> BoundTrace:
    """Nonlinear comparison bound Z2 on ``||x - Y_m||``; blow-up is reported, not raised.

    With ``with_Z3`` the linearised bound is co-integrated and stored in
    ``extra["Z3"]`` (plus ``extra["lambda1"]``).
    """
    cfg = _stack_config(stack)
    T = cfg.T if T is None else T
    parts = ("Z2", "Z3") if with_Z3 else ("Z2",)
    bt, cols = comparison_batch(stack.model, stack.scheme, stack.m, cfg.t0, np.asarray(cfg.x0), T, trace,
                                opts or cfg.opts, parts)
    full = bt.member(0)
    out = BoundTrace(full.component(cols["Z2"]), ErrorBoundMode.NONLINEAR_COMPARISON)
    if with_Z3:
        out.extra["Z3"] = BoundTrace(full.component(cols["Z3"]), ErrorBoundMode.LINEARIZED_COMPARISON)
        out.extra["lambda1"] = running_limsup(full.times, full.states[:, cols["I1"]], cfg.t0)
    return out


def running_limsup(times: np.ndarray, integral: np.ndarray, t0: float) -> float:
    """Max of ``integral(t) / (t - t0)`` over the second half of the horizon."""
    tau = times - t0
    tail = tau >= 0.5 * tau[-1]
    tail &= tau > 0
    return float(np.max(integral[tail] / tau[tail]))


def solve_Z3(stack: ApproximationStack, trace: FundamentalMatrixTrace, T: Optional[float] = None,
             opts: Optional[IntegratorOptions] = None):
    """Linearised bound Z3 and the exponent ``lambda1``.

    ``lambda1`` is the finite-horizon limsup estimate of the running average
    of ``P1 = p + c D``; negative values indicate decay.
    """
    cfg = _stack_config(stack)
    T = cfg.T if T is None else T
    o = opts or cfg.opts
    o = IntegratorOptions(rel_tol=o.rel_tol, abs_tol=o.abs_tol, max_step=o.max_step,
                          blowup_threshold=np.inf, breakpoints=o.breakpoints, error_scale=o.error_scale)
    bt, cols = comparison_batch(stack.model, stack.scheme, stack.m, cfg.t0, np.asarray(cfg.x0), T, trace,
                                o, ("Z3",))
    full = bt.member(0)
    lam1 = running_limsup(full.times, full.states[:, cols["I1"]], cfg.t0) if not full.blew_up else float("inf")
    return BoundTrace(full.component(cols["Z3"]), ErrorBoundMode.LINEARIZED_COMPARISON), lam1


# --- bilateral bounds ---------------------------------------------------------------------

@dataclass
class Bilateral:
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    norm_Ym: np.ndarray


def bilateral_bounds(stack: ApproximationStack, bound: BoundTrace, grid=None) -> Bilateral:
    """``max(||Y_m|| - Z, 0) <= ||x|| <= ||Y_m|| + Z`` on the common time range."""
    if grid is None:
        t = bound.times
        t = t[(t >= stack.times[0]) & (t <= stack.times[-1])]
    else:
        t = np.asarray(grid, dtype=float)
    nY = np.linalg.norm(stack.Y_m(t), axis=-1)
    Z = bound(t)
    return Bilateral(t, np.maximum(nY - Z, 0.0), nY + Z, nY)


def bounds_rows(times, columns: dict):
    """Header and rows for the bounds CSV; missing columns are written as nan."""
    order = ["Z1", "Z2", "Z3", "lower", "upper", "norm_Ym", "norm_x_direct"]
    t = np.asarray(times, dtype=float)
    cols = [t]
    for name in order:
        v = columns.get(name)
        cols.append(np.full(len(t), np.nan) if v is None else np.asarray(v, dtype=float))
    return ["t"] + order, np.column_stack(cols)
