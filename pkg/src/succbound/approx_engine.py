"""Successive approximations y_1..y_m of x' = A x + f(t, x) + F and their error.

Two recursions are supported. Scheme ``"A"`` keeps the Jacobian of the
nonlinearity in the linear part of every level k >= 2::

    y_k' = (A + f'(Y_{k-1})) y_k + f(Y_{k-1}) - f(Y_{k-2}) - f'(Y_{k-2}) y_{k-1}

scheme ``"B"`` keeps only A::

    y_k' = A y_k + f(Y_{k-1}) - f(Y_{k-2})

with ``Y_k = y_1 + ... + y_k``, ``Y_0 = 0``, ``y_1' = A y_1 + F``. Since f has
no monomials of degree below two, ``f(0) = f'(0) = 0`` and the k = 2 equations
are the general ones evaluated at ``Y_0``.

The levels form a triangular system, so they are integrated together as one
augmented state of size ``m * n`` on a shared adaptive grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .odeint import IntegratorOptions, Status, Trajectory, integrate, integrate_batch
from .polyfield import PolySystemModel, eval_f, eval_jacobian, shift_expand

__all__ = [
    "ApproximationConfig",
    "ApproximationStack",
    "SchemeSystem",
    "run_scheme",
    "run_scheme_batch",
    "direct_solve",
    "direct_solve_batch",
    "direct_error",
    "stack_rows",
    "M_CAP",
]

M_CAP = 8
SCHEMES = ("A", "B")


@dataclass(frozen=True)
class ApproximationConfig:
    scheme: str = "A"
    m: int = 1
    t0: float = 0.0
    x0: tuple = (0.0, 0.0)
    T: float = 40.0
    opts: IntegratorOptions = field(default_factory=IntegratorOptions)
    m_cap: int = M_CAP

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be an integer >= 1")
        if self.m > self.m_cap:
            raise ValueError(f"m={self.m} exceeds the cap {self.m_cap}")
        if not self.T > self.t0:
            raise ValueError("T must exceed t0")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))


class SchemeSystem:
    """Right-hand sides of one scheme for a fixed model and depth ``m``.

    States are batches of stacked levels ``(B, m * n)``; level ``k`` occupies
    columns ``(k-1) n : k n``.
    """

    def __init__(self, model: PolySystemModel, scheme: str, m: int):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.model = model
        self.scheme = scheme
        self.m = int(m)
        self.n = model.dim
        self.expansion = shift_expand(model.f)
        self.linear = model.f.is_zero()

    def split(self, Y: np.ndarray) -> np.ndarray:
        """``(B, m * n)`` -> ``(B, m, n)``."""
        return Y.reshape(Y.shape[0], self.m, self.n)

    def references(self, ys: np.ndarray) -> np.ndarray:
        """Partial sums ``Y_0..Y_m`` as ``(B, m + 1, n)``."""
        B = ys.shape[0]
        out = np.zeros((B, self.m + 1, self.n))
        np.cumsum(ys, axis=1, out=out[:, 1:])
        return out

    def _f_J(self, t, P):
        """f and f' at the partial sums ``P`` of shape ``(B, k, n)``."""
        B, k, n = P.shape
        flat = P.reshape(B * k, n)
        fv = eval_f(self.model.f, t, flat).reshape(B, k, n)
        J = eval_jacobian(self.model.f, t, flat).reshape(B, k, n, n)
        return fv, J

    def stack_derivative(self, t: float, Y: np.ndarray) -> np.ndarray:
        ys = self.split(Y)
        A = self.model.A_at(t)
        out = ys @ A.T
        out[:, 0] += self.model.forcing(t)
        if self.m > 1 and not self.linear:
            P = self.references(ys)[:, : self.m]  # Y_0..Y_{m-1}
            if self.scheme == "A":
                fv, J = self._f_J(t, P)
                # level k (index k-1 >= 1) uses Y_{k-1}=P[:, k-1] and Y_{k-2}=P[:, k-2]
                out[:, 1:] += np.einsum("bkij,bkj->bki", J[:, 1:], ys[:, 1:])
                out[:, 1:] += fv[:, 1:] - fv[:, :-1]
                out[:, 1:] -= np.einsum("bkij,bkj->bki", J[:, :-1], ys[:, :-1])
            else:
                B = P.shape[0]
                fv = eval_f(self.model.f, t, P.reshape(-1, self.n)).reshape(B, self.m, self.n)
                out[:, 1:] += fv[:, 1:] - fv[:, :-1]
        return out.reshape(Y.shape)

    def error_offset(self, t: float, ys: np.ndarray) -> np.ndarray:
        """z-free term subtracted in the error equation, ``(B, n)``."""
        if self.linear:
            return np.zeros((ys.shape[0], self.n))
        Ym1 = self.references(ys)[:, self.m - 1]
        off = eval_f(self.model.f, t, Ym1)
        if self.scheme == "A":
            J = eval_jacobian(self.model.f, t, Ym1)
            off = off + np.einsum("bij,bj->bi", J, ys[:, -1])
        return off

    def error_derivative(self, t: float, ys: np.ndarray, z: np.ndarray) -> np.ndarray:
        """``z' = A z + f(z + Y_m) - offset``."""
        out = z @ self.model.A_at(t).T
        if not self.linear:
            Ym = ys.sum(axis=1)
            out += eval_f(self.model.f, t, z + Ym) - self.error_offset(t, ys)
        return out

    def error_polynomial(self, t: float, ys: np.ndarray) -> np.ndarray:
        """Coefficients ``(B, G, n)`` of the error nonlinearity as a polynomial in z."""
        Ym = ys.sum(axis=1)
        C = self.expansion.coefficients(t, Ym)
        if C.ndim == 2:
            C = C[None]
        C = C.copy()
        C[:, 0, :] -= self.error_offset(t, ys)
        return C

    def stacked_with_error(self, t: float, S: np.ndarray) -> np.ndarray:
        """Derivative of ``[y_1..y_m, z]``."""
        k = self.m * self.n
        out = np.empty_like(S)
        out[:, :k] = self.stack_derivative(t, S[:, :k])
        out[:, k:] = self.error_derivative(t, self.split(S[:, :k]), S[:, k:])
        return out

    def initial_stack(self, X0: np.ndarray) -> np.ndarray:
        X0 = np.atleast_2d(X0)
        Y = np.zeros((X0.shape[0], self.m * self.n))
        Y[:, : self.n] = X0
        return Y

    def options(self, opts: IntegratorOptions) -> IntegratorOptions:
        return opts.with_breakpoints(self.model.breakpoints())


def _sum_levels(traj: Trajectory, m: int, n: int, upto: Optional[int] = None) -> Trajectory:
    upto = m if upto is None else upto
    st = traj.states.reshape(len(traj.times), m, n)[:, :upto].sum(axis=1)
    dense = None
    if traj.dense is not None:
        dense = traj.dense.reshape(traj.dense.shape[:2] + (m, n))[:, :, :upto].sum(axis=2)
    return Trajectory(traj.times, st, dense, traj.status, traj.stop_time, traj.t_end)


@dataclass
class ApproximationStack:
    """Levels ``y_1..y_m`` integrated on a shared grid."""

    traj: Trajectory  # states (N, m * n)
    model: PolySystemModel
    scheme: str
    m: int
    cfg: Optional[ApproximationConfig] = None

    @property
    def n(self) -> int:
        return self.model.dim

    @property
    def times(self) -> np.ndarray:
        return self.traj.times

    @property
    def divergent(self) -> bool:
        return self.traj.status != Status.COMPLETED

    @property
    def y(self) -> list:
        n = self.n
        return [self.traj.component(slice(k * n, (k + 1) * n)) for k in range(self.m)]

    @property
    def Y_m(self) -> Trajectory:
        return _sum_levels(self.traj, self.m, self.n)

    def partial_sum(self, k: int) -> Trajectory:
        """``Y_k`` for ``0 <= k <= m``."""
        if k == 0:
            return Trajectory(self.times, np.zeros((len(self.times), self.n)), None,
                              self.traj.status, self.traj.stop_time, self.traj.t_end)
        return _sum_levels(self.traj, self.m, self.n, k)

    def levels_at(self, t) -> np.ndarray:
        """``(..., m, n)`` level values by dense interpolation."""
        v = self.traj(t)
        return v.reshape(np.shape(t) + (self.m, self.n))

    def system(self) -> SchemeSystem:
        return SchemeSystem(self.model, self.scheme, self.m)


def run_scheme(model: PolySystemModel, cfg: ApproximationConfig) -> ApproximationStack:
    """Integrate the approximation stack for one initial vector."""
    sysm = SchemeSystem(model, cfg.scheme, cfg.m)
    x0 = np.asarray(cfg.x0, dtype=float)
    if x0.shape != (model.dim,):
        raise ValueError(f"x0 must have {model.dim} entries")
    bt = integrate_batch(sysm.stack_derivative, cfg.t0, sysm.initial_stack(x0), cfg.T,
                         sysm.options(cfg.opts), dense=True)
    return ApproximationStack(bt.member(0), model, cfg.scheme, cfg.m, cfg)


def run_scheme_batch(model: PolySystemModel, scheme: str, m: int, t0: float, X0, T: float,
                     opts: IntegratorOptions, dense: bool = True):
    """Integrate stacks for a batch of initial vectors on one shared grid."""
    sysm = SchemeSystem(model, scheme, m)
    return integrate_batch(sysm.stack_derivative, t0, sysm.initial_stack(np.asarray(X0, dtype=float)), T,
                           sysm.options(opts), dense=dense)


def direct_solve(model: PolySystemModel, t0: float, x0, T: float,
                 opts: IntegratorOptions = IntegratorOptions()) -> Trajectory:
    """Reference solution of the full nonlinear system."""
    x0 = np.asarray(x0, dtype=float)
    return integrate(lambda t, x: model.rhs(t, x[None])[0], t0, x0, T,
                     opts.with_breakpoints(model.breakpoints()))


def direct_solve_batch(model: PolySystemModel, t0: float, X0, T: float,
                       opts: IntegratorOptions = IntegratorOptions(), dense: bool = True):
    return integrate_batch(model.rhs, t0, np.asarray(X0, dtype=float), T,
                           opts.with_breakpoints(model.breakpoints()), dense=dense)


def direct_error(model: PolySystemModel, stack: ApproximationStack,
                 opts: Optional[IntegratorOptions] = None) -> Trajectory:
    """Exact error ``z = x - Y_m`` from its own differential equation, ``z(t0) = 0``.

    The levels are re-integrated alongside z so the coupling is exact rather
    than interpolated.
    """
    cfg = stack.cfg
    if cfg is None:
        raise ValueError("stack carries no configuration")
    opts = opts or cfg.opts
    sysm = stack.system()
    k = sysm.m * sysm.n
    S0 = np.zeros((1, k + sysm.n))
    S0[:, :k] = sysm.initial_stack(np.asarray(cfg.x0))
    bt = integrate_batch(sysm.stacked_with_error, cfg.t0, S0, cfg.T, sysm.options(opts), dense=True,
                         monitor=lambda S: np.sqrt(np.sum(S[:, k:] ** 2, axis=1)))
    return bt.member(0).component(slice(k, k + sysm.n))


def stack_rows(stack: ApproximationStack, z: Optional[Trajectory] = None, grid=None):
    """Header and rows ``(t, ||y_1||..||y_m||, ||Y_m||, ||z||)`` on ``grid``."""
    t = stack.times if grid is None else np.asarray(grid, dtype=float)
    levels = stack.levels_at(t)
    norms = np.linalg.norm(levels, axis=-1)
    Ym = np.linalg.norm(levels.sum(axis=-2), axis=-1)
    cols = [t] + [norms[:, k] for k in range(stack.m)] + [Ym]
    header = ["t"] + [f"norm_y{k + 1}" for k in range(stack.m)] + ["norm_Ym"]
    if z is not None:
        cols.append(np.linalg.norm(z(t), axis=-1))
        header.append("norm_z_direct")
    return header, np.column_stack(cols)
