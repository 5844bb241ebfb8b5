"""Boundary estimates of trapping and stability regions by radial bisection.

Every direction is bisected on ``[r_lo, r_hi]`` between a Trapped and an
Escaped initial vector. Directions are processed in fixed-size chunks whose
members share one integration grid, so a whole chunk advances one bisection
step per batched integration.
"""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from .approx_engine import direct_solve_batch, run_scheme_batch
from .error_bounds import comparison_batch
from .linear_analysis import FundamentalMatrixTrace, exponent_estimate, fundamental_matrix
from .odeint import IntegratorOptions, Status
from .polyfield import PolySystemModel

__all__ = [
    "Outcome",
    "Method",
    "ClassifierParams",
    "RegionQuery",
    "RegionEstimate",
    "RegionContext",
    "BracketInvalid",
    "InsufficientOscillation",
    "unit_directions",
    "classify",
    "classify_batch",
    "radial_bisect",
    "estimate_region",
    "two_maxima_ratios",
    "two_maxima_threshold",
    "sweep_t0",
    "ratio_table",
]

METHOD_KINDS = ("comparison_z2", "linearized_z3", "reference", "two_maxima")


class Outcome(enum.IntEnum):
    TRAPPED = 0
    ESCAPED = 1
    UNDETERMINED = 2


class BracketInvalid(ValueError):
    """The bracket endpoints do not straddle the Trapped/Escaped transition."""


class InsufficientOscillation(ValueError):
    """Fewer than two local maxima in the norm history at a bracket endpoint."""


@dataclass(frozen=True)
class Method:
    kind: str
    m: int = 1
    scheme: str = "A"

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method {self.kind!r}; choose from {METHOD_KINDS}")
        if self.scheme not in ("A", "B"):
            raise ValueError("scheme must be 'A' or 'B'")
        if self.m < 1:
            raise ValueError("m must be >= 1")

    @property
    def label(self) -> str:
        if self.kind == "reference":
            return "reference"
        short = {"comparison_z2": "z2", "linearized_z3": "z3", "two_maxima": "twomax"}[self.kind]
        return f"{short}-{self.scheme}-m{self.m}"

    @classmethod
    def parse(cls, text: str) -> "Method":
        """Inverse of :attr:`label`, e.g. ``z2-A-m3`` or ``reference``."""
        if text == "reference":
            return cls("reference")
        try:
            short, scheme, mpart = text.split("-")
            kind = {"z2": "comparison_z2", "z3": "linearized_z3", "twomax": "two_maxima"}[short]
            if not mpart.startswith("m"):
                raise ValueError
            return cls(kind, int(mpart[1:]), scheme)
        except (ValueError, KeyError):
            raise ValueError(f"cannot parse method {text!r}") from None


@dataclass(frozen=True)
class ClassifierParams:
    trap_eps: float = 1e-4
    trap_factor: float = 10.0
    tail_fraction: float = 0.25
    lambda_floor: float = 1e-3
    twomax_window: float = 10.0
    twomax_prominence: float = 0.0  # keep maxima with prominence >= this fraction of the largest
    twomax_dt: float = 1e-3
    twomax_scan: int = 48  # geometric radii scanned for the first crossing before bisection
    plateau_tol: float = 1e-9


@dataclass(frozen=True)
class RegionQuery:
    model: PolySystemModel
    method: Method
    t0: float = 0.0
    horizon: float = 40.0
    n_directions: int = 64
    r_lo: float = 1e-3
    r_hi: float = 1.0
    tol: Optional[float] = None
    params: ClassifierParams = field(default_factory=ClassifierParams)
    opts: IntegratorOptions = field(default_factory=lambda: IntegratorOptions(rel_tol=1e-7, abs_tol=1e-10))
    chunk_size: int = 16
    directions: Optional[tuple] = None  # explicit unit vectors override n_directions

    def __post_init__(self):
        if not self.r_lo < self.r_hi:
            raise ValueError("need r_lo < r_hi")
        if self.r_lo < 0:
            raise ValueError("r_lo must be non-negative")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("bisection tolerance must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")

    @property
    def T(self) -> float:
        return self.t0 + self.horizon

    @property
    def bisection_tol(self) -> float:
        return self.tol if self.tol is not None else (self.r_hi - self.r_lo) / 4096.0

    def unit_vectors(self) -> np.ndarray:
        if self.directions is not None:
            D = np.asarray(self.directions, dtype=float).reshape(-1, self.model.dim)
            return D / np.linalg.norm(D, axis=1, keepdims=True)
        return unit_directions(self.n_directions, self.model.dim)


def unit_directions(n: int, dim: int) -> np.ndarray:
    """Deterministic unit vectors: uniform angles in the plane, Fibonacci lattice on the sphere."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        a = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(a), np.sin(a)])
    if dim == 3:
        k = np.arange(n) + 0.5
        z = 1.0 - 2.0 * k / n
        phi = np.pi * (1.0 + 5 ** 0.5) * k
        rho = np.sqrt(1.0 - z * z)
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    g = np.random.default_rng(0).normal(size=(n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


class RegionContext:
    """Per-query resources shared by all probes: the trace over the horizon and the trap threshold."""

    def __init__(self, query: RegionQuery, trace: Optional[FundamentalMatrixTrace] = None):
        self.query = query
        model = query.model
        self.trace = trace if trace is not None else fundamental_matrix(model, query.t0, query.T)
        self.exponent = exponent_estimate(self.trace)
        p = query.params
        if model.F0 == 0.0:
            self.trap_threshold = p.trap_eps
        else:
            lam = max(abs(self.exponent.lambda_hat), p.lambda_floor)
            self.trap_threshold = p.trap_factor * model.F0 / lam


def _tail_sup(times: np.ndarray, norms: np.ndarray, t_end: float, horizon: float, fraction: float) -> np.ndarray:
    """Per-member max over the last ``fraction`` of the horizon; ``norms`` is (N, B)."""
    sel = times >= t_end - fraction * horizon
    if not np.any(sel):
        return np.full(norms.shape[1], np.inf)
    with np.errstate(invalid="ignore"):
        return np.max(norms[sel], axis=0)


def classify_batch(ctx: RegionContext, X0: np.ndarray) -> np.ndarray:
    """Outcome code per row of ``X0``."""
    q = ctx.query
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    meth = q.method
    p = q.params
    out = np.full(len(X0), Outcome.UNDETERMINED, dtype=int)
    n = q.model.dim
    if meth.kind == "two_maxima":
        r = two_maxima_ratios(ctx, X0)
        out[r < 1.0] = Outcome.TRAPPED
        out[r >= 1.0] = Outcome.ESCAPED
        return out
    if meth.kind == "reference":
        bt = direct_solve_batch(q.model, q.t0, X0, q.T, q.opts, dense=False)
        norms = np.linalg.norm(bt.states, axis=2)
    elif meth.kind == "comparison_z2":
        bt, cols = comparison_batch(q.model, meth.scheme, meth.m, q.t0, X0, q.T, ctx.trace, q.opts,
                                    ("Z2",), dense=False)
        ys = bt.states[:, :, : meth.m * n].reshape(len(bt.times), len(X0), meth.m, n)
        norms = np.linalg.norm(ys.sum(axis=2), axis=2) + bt.states[:, :, cols["Z2"]]
    else:
        o = replace(q.opts, blowup_threshold=np.inf)
        bt, cols = comparison_batch(q.model, meth.scheme, meth.m, q.t0, X0, q.T, ctx.trace, o,
                                    ("Z3",), dense=False)
        lam1 = _lambda1_batch(bt.times, bt.states[:, :, cols["I1"]], q.t0)
        done = bt.status == Status.COMPLETED
        out[:] = Outcome.ESCAPED
        out[done & (lam1 < 0.0)] = Outcome.TRAPPED
        return out
    done = bt.status == Status.COMPLETED
    tail = _tail_sup(bt.times, norms, q.T, q.horizon, p.tail_fraction)
    out[~done] = Outcome.ESCAPED
    out[done & (tail <= ctx.trap_threshold)] = Outcome.TRAPPED
    return out


def _lambda1_batch(times, integral, t0) -> np.ndarray:
    tau = times - t0
    sel = (tau >= 0.5 * tau[-1]) & (tau > 0)
    with np.errstate(invalid="ignore"):
        return np.max(integral[sel] / tau[sel, None], axis=0)


def classify(x0, query: RegionQuery, ctx: Optional[RegionContext] = None) -> Outcome:
    ctx = ctx or RegionContext(query)
    return Outcome(int(classify_batch(ctx, np.asarray(x0, dtype=float)[None])[0]))


# --- two-maxima heuristic ------------------------------------------------------------

def _first_two_maxima(v: np.ndarray, prominence: float, plateau_tol: float) -> Optional[tuple]:
    """First two significant local maxima of a sampled curve, or None."""
    if len(v) < 3:
        return None
    # plateaus: neighbours within plateau_tol are treated as equal
    w = v.copy()
    flat = np.abs(np.diff(w)) <= plateau_tol
    w[1:][flat] = w[:-1][flat]
    pk, props = find_peaks(w, prominence=0.0, plateau_size=1)
    if len(pk) < 2:
        return None
    pr = props["prominences"]
    keep = pk[pr >= prominence * pr.max()]
    if len(keep) < 2:
        return None
    return float(v[keep[0]]), float(v[keep[1]])


def two_maxima_ratios(ctx: RegionContext, X0: np.ndarray, strict: bool = False) -> np.ndarray:
    """``(second max) / (first max)`` of ``||Y_m(t)||`` per initial vector.

    Divergent stacks give ``inf``; too few maxima give ``nan`` (or raise with
    ``strict``).
    """
    q = ctx.query
    meth = q.method
    p = q.params
    n = q.model.dim
    T = min(q.T, q.t0 + p.twomax_window)
    bt = run_scheme_batch(q.model, meth.scheme, meth.m, q.t0, X0, T, q.opts, dense=True)
    grid = np.linspace(q.t0, T, int(round((T - q.t0) / p.twomax_dt)) + 1)
    out = np.empty(len(X0))
    for i in range(len(X0)):
        mb = bt.member(i)
        if mb.blew_up:
            out[i] = np.inf
            continue
        Y = mb(grid).reshape(len(grid), meth.m, n).sum(axis=1)
        mx = _first_two_maxima(np.linalg.norm(Y, axis=1), p.twomax_prominence, p.plateau_tol)
        if mx is None:
            if strict:
                raise InsufficientOscillation(f"fewer than two local maxima for x0={X0[i]}")
            out[i] = np.nan
        else:
            out[i] = mx[1] / mx[0]
    return out


def two_maxima_threshold(direction, query: RegionQuery, ctx: Optional[RegionContext] = None) -> float:
    """Radius along ``direction`` where the first two maxima of ``||Y_m||`` become equal."""
    if query.method.kind != "two_maxima":
        query = replace(query, method=Method("two_maxima", query.method.m, query.method.scheme))
    ctx = ctx or RegionContext(query)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    ends = two_maxima_ratios(ctx, np.array([query.r_lo * d, query.r_hi * d]), strict=True)
    if not (ends[0] < 1.0 <= ends[1]):
        raise BracketInvalid(f"two-maxima ratio does not cross 1 on the bracket: {ends}")
    est = _bisect_chunk(ctx, d[None])
    return float(est["thresholds"][0])


# --- bisection --------------------------------------------------------------------------

def _bisect_chunk(ctx: RegionContext, D: np.ndarray) -> dict:
    """Synchronous bisection of a chunk of directions; Undetermined counts as not trapped."""
    q = ctx.query
    if q.method.kind == "two_maxima":
        return _scan_chunk(ctx, D)
    B = len(D)
    r_lo, r_hi = q.r_lo, q.r_hi
    probes = []
    ends = classify_batch(ctx, np.concatenate([r_lo * D, r_hi * D]))
    lo_out, hi_out = ends[:B], ends[B:]
    for i in range(B):
        probes.append((i, r_lo, int(lo_out[i])))
        probes.append((i, r_hi, int(hi_out[i])))
    flags = [""] * B
    lo = np.full(B, r_lo)
    hi = np.full(B, r_hi)
    active = np.ones(B, dtype=bool)
    for i in range(B):
        if lo_out[i] != Outcome.TRAPPED:
            flags[i] = "bracket_invalid"
            active[i] = False
        elif hi_out[i] == Outcome.TRAPPED:
            flags[i] = "bracket_exceeded"
            lo[i] = r_hi
            active[i] = False
    return _refine(ctx, D, lo, hi, active, flags, probes, lambda X: classify_batch(ctx, X))


def _refine(ctx, D, lo, hi, active, flags, probes, classify_fn) -> dict:
    tol = ctx.query.bisection_tol
    while np.any(active & (hi - lo > tol)):
        idx = np.flatnonzero(active & (hi - lo > tol))
        mid = 0.5 * (lo[idx] + hi[idx])
        res = classify_fn(mid[:, None] * D[idx])
        for j, i in enumerate(idx):
            probes.append((int(i), float(mid[j]), int(res[j])))
        trapped = res == Outcome.TRAPPED
        lo[idx[trapped]] = mid[trapped]
        hi[idx[~trapped]] = mid[~trapped]
    return {"thresholds": lo, "upper": hi, "flags": flags, "probes": probes}


def _twomax_outcome(ratios: np.ndarray) -> np.ndarray:
    # no second significant maximum means the response settles: counted as inside
    out = np.full(len(ratios), Outcome.TRAPPED, dtype=int)
    out[ratios >= 1.0] = Outcome.ESCAPED
    return out


def _scan_chunk(ctx: RegionContext, D: np.ndarray) -> dict:
    """First crossing of the two-maxima ratio on a geometric radius grid, then bisection.

    The ratio is not monotone in the radius, so plain bisection between the
    bracket ends can lock onto a far crossing; the scan pins the first one.
    """
    q = ctx.query
    B = len(D)
    radii = np.geomspace(max(q.r_lo, 1e-12), q.r_hi, q.params.twomax_scan)
    S = len(radii)
    X = (radii[None, :, None] * D[:, None, :]).reshape(B * S, -1)
    res = _twomax_outcome(two_maxima_ratios(ctx, X)).reshape(B, S)
    probes = [(i, float(radii[k]), int(res[i, k])) for i in range(B) for k in range(S)]
    flags = [""] * B
    lo = np.full(B, q.r_lo)
    hi = np.full(B, q.r_hi)
    active = np.zeros(B, dtype=bool)
    for i in range(B):
        esc = np.flatnonzero(res[i] == Outcome.ESCAPED)
        if len(esc) == 0:
            flags[i] = "bracket_exceeded"
            lo[i] = q.r_hi
        elif esc[0] == 0:
            flags[i] = "bracket_invalid"
        else:
            lo[i], hi[i] = radii[esc[0] - 1], radii[esc[0]]
            active[i] = True
    return _refine(ctx, D, lo, hi, active, flags, probes,
                   lambda Xm: _twomax_outcome(two_maxima_ratios(ctx, Xm)))


def radial_bisect(direction, query: RegionQuery, ctx: Optional[RegionContext] = None) -> float:
    """Threshold radius along one direction; raises :class:`BracketInvalid`."""
    ctx = ctx or RegionContext(query)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    res = _bisect_chunk(ctx, d[None])
    if res["flags"][0] == "bracket_invalid":
        raise BracketInvalid(f"r_lo={query.r_lo} is not classified Trapped")
    if res["flags"][0] == "bracket_exceeded":
        raise BracketInvalid(f"r_hi={query.r_hi} is still classified Trapped")
    return float(res["thresholds"][0])


@dataclass
class RegionEstimate:
    method: str
    t0: float
    directions: np.ndarray
    thresholds: np.ndarray
    flags: list
    meta: dict = field(default_factory=dict)
    probes: list = field(default_factory=list)  # (direction index, radius, outcome)

    @property
    def angles(self) -> np.ndarray:
        D = self.directions
        if D.shape[1] == 1:
            return np.where(D[:, 0] > 0, 0.0, np.pi)
        return np.mod(np.arctan2(D[:, 1], D[:, 0]), 2.0 * np.pi)

    @property
    def boundary(self) -> np.ndarray:
        """Boundary points ``threshold * direction``."""
        return self.thresholds[:, None] * self.directions

    def rows(self):
        header = ["direction_angle", "threshold_radius", "method", "t0", "flags"]
        rows = [(float(a), float(r), self.method, float(self.t0), f)
                for a, r, f in zip(self.angles, self.thresholds, self.flags)]
        return header, rows


def _run_chunk(args):
    query, D, trace = args
    ctx = RegionContext(query, trace)
    return _bisect_chunk(ctx, D)


def estimate_region(query: RegionQuery, workers: int = 1, ctx: Optional[RegionContext] = None) -> RegionEstimate:
    """Thresholds over the direction grid, reduced in direction order."""
    ctx = ctx or RegionContext(query)
    D = query.unit_vectors()
    chunks = [D[i: i + query.chunk_size] for i in range(0, len(D), query.chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_chunk, [(query, c, ctx.trace) for c in chunks]))
    else:
        results = [_bisect_chunk(ctx, c) for c in chunks]
    thr, flags, probes = [], [], []
    for k, res in enumerate(results):
        off = k * query.chunk_size
        thr.append(res["thresholds"])
        flags.extend(res["flags"])
        probes.extend((i + off, r, o) for i, r, o in res["probes"])
    meta = {
        "model": query.model.name,
        "F0": query.model.F0,
        "horizon": query.horizon,
        "bisection_tol": query.bisection_tol,
        "lambda_hat": ctx.exponent.lambda_hat,
        "c_hat": ctx.trace.c_hat,
        "c_bound_violated": ctx.trace.c_bound_violated,
        "trap_threshold": ctx.trap_threshold,
    }
    return RegionEstimate(query.method.label, query.t0, D, np.concatenate(thr), flags, meta, probes)


def sweep_t0(query: RegionQuery, t0s: Sequence[float], workers: int = 1) -> list:
    """One region estimate per initial time."""
    return [estimate_region(replace(query, t0=float(t0)), workers=workers) for t0 in t0s]


def ratio_table(estimates: Sequence[RegionEstimate]):
    """Per-direction thresholds across estimates and their ratios to the first."""
    base = estimates[0]
    header = ["direction_angle"] + [f"r_t0_{e.t0:g}" for e in estimates] + \
             [f"ratio_t0_{e.t0:g}" for e in estimates[1:]]
    cols = [base.angles] + [e.thresholds for e in estimates]
    with np.errstate(divide="ignore", invalid="ignore"):
        cols += [e.thresholds / base.thresholds for e in estimates[1:]]
    return header, np.column_stack(cols)
