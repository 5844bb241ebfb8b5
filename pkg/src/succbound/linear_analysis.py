"""Fundamental matrix of x' = A(t) x and its scalar diagnostics.

``p(t)`` is the logarithmic derivative of ``||w(t)||`` (finite differences of
``ln sigma_max`` on a uniform grid, one-sided at segment ends) and ``c(t)``
the running condition number. Both are treated as piecewise-linear functions
of ``t`` on the trace grid by every consumer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .odeint import IntegratorOptions, Trajectory, integrate_batch

__all__ = [
    "FundamentalMatrixTrace",
    "ExponentEstimate",
    "EnvelopeResult",
    "fundamental_matrix",
    "transition_norm",
    "exponent_estimate",
    "envelope_recursion",
    "SingularTransition",
]

log = logging.getLogger(__name__)

DEFAULT_TRACE_DT = 0.001
DEFAULT_C_CAP = 1e4


class SingularTransition(ValueError):
    """w(s) is numerically singular, so W(t, s) cannot be formed."""


@dataclass
class FundamentalMatrixTrace:
    t0: float
    T: float
    times: np.ndarray  # uniform per segment; breakpoints appear twice
    w: np.ndarray  # (N, n, n)
    sigma_max: np.ndarray
    sigma_min: np.ndarray
    p_samples: np.ndarray
    c_samples: np.ndarray
    segment_bounds: tuple  # index ranges (start, stop) into the sample arrays
    breaks: tuple  # interior breakpoints
    w_traj: Trajectory = field(repr=False)
    c_cap: float = DEFAULT_C_CAP
    resolution: float = 1e-12  # smallest singular value ratio the integration can resolve

    @property
    def c_hat(self) -> float:
        return float(np.max(self.c_samples))

    @property
    def c_bound_violated(self) -> bool:
        """True when the measured condition number exceeds the configured cap."""
        return self.c_hat > self.c_cap

    @property
    def norm_w(self) -> np.ndarray:
        return self.sigma_max

    def _segment(self, t: float) -> int:
        return int(np.searchsorted(np.asarray(self.breaks), t, side="right"))

    def _lookup(self, values: np.ndarray, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            lo, hi = self.segment_bounds[self._segment(float(t))]
            return float(np.interp(t, self.times[lo:hi], values[lo:hi]))
        out = np.empty(t.shape)
        flat = t.ravel()
        res = out.ravel()
        seg = np.searchsorted(np.asarray(self.breaks), flat, side="right")
        for s, (lo, hi) in enumerate(self.segment_bounds):
            mask = seg == s
            if np.any(mask):
                res[mask] = np.interp(flat[mask], self.times[lo:hi], values[lo:hi])
        return res.reshape(t.shape)

    def p(self, t):
        return self._lookup(self.p_samples, t)

    def c(self, t):
        return self._lookup(self.c_samples, t)

    def w_at(self, t) -> np.ndarray:
        n = self.w.shape[1]
        v = self.w_traj(t)
        return v.reshape(np.shape(t) + (n, n))

    def log_norm_integral(self) -> np.ndarray:
        """Cumulative trapezoid of p on the sample grid (zero-width jumps at breakpoints)."""
        dt = np.diff(self.times)
        incr = 0.5 * dt * (self.p_samples[1:] + self.p_samples[:-1])
        return np.concatenate([[0.0], np.cumsum(incr)])

    def unique_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample times without duplicated breakpoints and the matching indices (right values)."""
        keep = np.ones(len(self.times), dtype=bool)
        keep[:-1] = self.times[1:] != self.times[:-1]
        idx = np.flatnonzero(keep)
        return self.times[idx], idx

    def to_rows(self):
        """(t, ||w||, p, c) rows on the unique grid."""
        t, idx = self.unique_grid()
        return np.column_stack([t, self.sigma_max[idx], self.p_samples[idx], self.c_samples[idx]])


def _grid(a: float, b: float, dt: float) -> np.ndarray:
    n = max(2, int(np.ceil((b - a) / dt - 1e-9)) + 1)
    return np.linspace(a, b, n)


def fundamental_matrix(A: Sequence, t0: float, T: float,
                       opts: Optional[IntegratorOptions] = None, dt: float = DEFAULT_TRACE_DT,
                       c_cap: float = DEFAULT_C_CAP) -> FundamentalMatrixTrace:
    """Integrate ``W' = A(t) W``, ``W(t0) = I`` and sample its diagnostics.

    ``A`` is either an ``n x n`` nested sequence of signals or a model with
    an ``A_at`` method and ``breakpoints()``.
    """
    if not T > t0:
        raise ValueError("T must exceed t0")
    if hasattr(A, "A_at"):
        A_at = A.A_at
        n = A.dim
        bps = tuple(A.breakpoints())
    else:
        rows = [[s for s in row] for row in A]
        n = len(rows)
        const = all(s.is_constant() for r in rows for s in r)
        A0 = np.array([[s.eval(0.0) for s in r] for r in rows])
        bps = tuple(sorted({b for r in rows for s in r for b in s.breakpoints()}))

        def A_at(t):
            if const:
                return A0
            return np.array([[s.eval(t) for s in r] for r in rows])

    base = opts or IntegratorOptions(rel_tol=1e-10, abs_tol=1e-300)
    o = IntegratorOptions(rel_tol=min(base.rel_tol, 1e-9), abs_tol=1e-300, max_step=base.max_step,
                          blowup_threshold=np.inf, breakpoints=tuple(bps) + base.breakpoints,
                          error_scale="global")

    def rhs(t, Y):
        W = Y.reshape(-1, n, n)
        return (A_at(t) @ W).reshape(Y.shape)

    bt = integrate_batch(rhs, t0, np.eye(n).reshape(1, -1), T, o, dense=True)
    traj = bt.member(0)
    if traj.blew_up:
        raise FloatingPointError("fundamental matrix integration failed")

    breaks = tuple(b for b in o.breakpoints if t0 < b < T)
    cuts = [t0, *breaks, T]
    times, bounds = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        g = _grid(a, b, dt)
        start = sum(len(x) for x in times)
        times.append(g)
        bounds.append((start, start + len(g)))
    tgrid = np.concatenate(times)

    W = np.empty((len(tgrid), n, n))
    for lo, hi in bounds:
        W[lo:hi] = traj(tgrid[lo:hi]).reshape(-1, n, n)
    W[0] = np.eye(n)
    sv = np.linalg.svd(W, compute_uv=False)
    smax, smin = sv[:, 0], sv[:, -1]
    lsm = np.log(smax)
    p = np.empty_like(lsm)
    for lo, hi in bounds:
        if hi - lo >= 3:
            p[lo:hi] = np.gradient(lsm[lo:hi], tgrid[lo:hi], edge_order=2)
        else:
            p[lo:hi] = (lsm[hi - 1] - lsm[lo]) / (tgrid[hi - 1] - tgrid[lo])
    with np.errstate(divide="ignore"):
        c = np.where(smin > 0, smax / smin, np.inf)
    c = np.maximum(c, 1.0)
    trace = FundamentalMatrixTrace(t0=float(t0), T=float(T), times=tgrid, w=W, sigma_max=smax,
                                   sigma_min=smin, p_samples=p, c_samples=c, segment_bounds=tuple(bounds),
                                   breaks=breaks, w_traj=traj, c_cap=c_cap, resolution=10.0 * o.rel_tol)
    if trace.c_bound_violated:
        log.warning("assumption c<=c_hat violated: max condition number %.3g exceeds cap %.3g",
                    trace.c_hat, c_cap)
    return trace


def transition_norm(trace: FundamentalMatrixTrace, t: float, s: float) -> float:
    """``||w(t) w(s)^{-1}||_2``."""
    if not (trace.t0 <= s <= t <= trace.T):
        raise ValueError("need t0 <= s <= t <= T")
    if s == t:
        return 1.0
    wt, ws = trace.w_at(t), trace.w_at(s)
    sv = np.linalg.svd(ws, compute_uv=False)
    if sv[-1] < trace.resolution * sv[0]:
        raise SingularTransition(f"w({s}) is numerically singular")
    return float(np.linalg.norm(wt @ np.linalg.inv(ws), 2))


@dataclass(frozen=True)
class ExponentEstimate:
    lambda_hat: float
    v1: float
    N1: float
    valid: bool


def exponent_estimate(trace: FundamentalMatrixTrace, pair_samples: int = 240) -> ExponentEstimate:
    """Decay rate and uniform exponential envelope ``||W(t, s)|| <= N1 exp(-v1 (t - s))``.

    ``lambda_hat`` is minus the largest running average of ``p`` over the
    second half of the horizon.

    ``v1`` is the negated least-squares slope of ``ln ||w(t)||``. ``N1`` is
    inflated until the envelope dominates ``||W(t, s)||`` over all sampled
    pairs ``s <= t`` (which includes ``s = t0``).
    """
    t, idx = trace.unique_grid()
    tau = t - trace.t0
    logn = np.log(trace.sigma_max[idx])
    run = trace.log_norm_integral()[idx]
    # limsup proxy: running averages over the second half of the horizon
    tail = tau >= 0.5 * tau[-1]
    tail[0] = False
    lambda_hat = -float(np.max(run[tail] / tau[tail])) if np.any(tail) else 0.0

    slope = float(np.polyfit(tau, logn, 1)[0])
    v1 = -slope
    valid = v1 > 0

    # N1 from pairs on a subgrid
    sel = np.unique(np.linspace(0, len(t) - 1, min(pair_samples, len(t))).round().astype(int))
    Ws = trace.w[idx[sel]]
    ts = t[sel]
    inv = np.linalg.inv(Ws)
    prod = np.einsum("aij,bjk->abik", Ws, inv)
    norms = np.linalg.norm(prod, ord=2, axis=(2, 3))
    dt = ts[:, None] - ts[None, :]
    mask = dt >= 0
    with np.errstate(over="ignore"):
        ratio = np.where(mask, norms * np.exp(v1 * dt), 0.0)
    N1 = max(1.0, float(np.max(ratio)))
    # envelope must also dominate every sample of ||W(t, t0)||
    N1 = max(N1, float(np.max(trace.sigma_max[idx] * np.exp(v1 * tau))) * (1 + 1e-9))
    return ExponentEstimate(lambda_hat=lambda_hat, v1=v1, N1=N1, valid=bool(valid))


@dataclass
class EnvelopeResult:
    grid: np.ndarray
    curves: np.ndarray  # (k_max, N)
    certificate: bool
    certificate_value: float

    def sup_ratios(self) -> np.ndarray:
        """``sup y~_{k+1} / sup y~_k`` for k = 1..k_max-1."""
        s = self.curves.max(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return s[1:] / s[:-1]


def envelope_recursion(v1: float, N1: float, l: float, F0: float, x0_norm: float, k_max: int,
                       grid) -> EnvelopeResult:
    """Envelopes of the successive terms of the fixed-matrix scheme.

    ``y~_1 = N1((|x0| - F0/v1) e^{-v1 s} + F0/v1)`` and
    ``y~_{k+1}(t) = N1 l int_{t0}^t e^{-v1 (t - tau)} y~_k(tau) dtau``,
    the integral taken by the trapezoid rule on ``grid``.
    """
    if not v1 > 0:
        raise ValueError("v1 must be positive")
    grid = np.asarray(grid, dtype=float)
    s = grid - grid[0]
    decay = np.exp(-v1 * s)
    curves = np.empty((k_max, len(grid)))
    curves[0] = N1 * ((x0_norm - F0 / v1) * decay + F0 / v1)
    grow = np.exp(v1 * s)
    for k in range(1, k_max):
        g = grow * curves[k - 1]
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(s) * (g[1:] + g[:-1]))])
        curves[k] = N1 * l * decay * cum
    value = l * N1 * F0 / v1
    return EnvelopeResult(grid=grid, curves=curves, certificate=bool(value < 1.0), certificate_value=float(value))
