"""Adaptive embedded Runge-Kutta 5(4) integrator with dense output.

The integrator advances a batch of independent initial states with a shared
step size. Members that exceed the blow-up threshold (or cannot be advanced
at the smallest representable step) are frozen and dropped from the batch;
the rest continue. Breakpoints split the horizon into segments and no step
crosses one: stages that would land on a breakpoint are evaluated at its
left limit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

__all__ = [
    "IntegratorOptions",
    "Status",
    "Trajectory",
    "BatchTrajectory",
    "StepSizeUnderflow",
    "integrate",
    "integrate_batch",
]


class StepSizeUnderflow(RuntimeError):
    """The step size needed to meet the tolerance fell below machine resolution."""

    def __init__(self, t: float, message: str = ""):
        super().__init__(message or f"step size underflow at t={t!r}")
        self.t = t


class Status(enum.IntEnum):
    COMPLETED = 0
    BLOWUP = 1
    UNDERFLOW = 2


@dataclass(frozen=True)
class IntegratorOptions:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = np.inf
    blowup_threshold: float = 1e6
    breakpoints: tuple = ()
    # "component": per-entry scale; "global": one scale per member from its largest entry
    error_scale: str = "component"
    first_step: Optional[float] = None

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.blowup_threshold > 0:
            raise ValueError("blowup_threshold must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.error_scale not in ("component", "global"):
            raise ValueError("error_scale must be 'component' or 'global'")
        object.__setattr__(self, "breakpoints", tuple(sorted(float(b) for b in self.breakpoints)))

    def with_breakpoints(self, extra) -> "IntegratorOptions":
        return replace(self, breakpoints=tuple(sorted(set(self.breakpoints) | {float(b) for b in extra})))


# RK5(4)7M tableau with its standard quartic continuous extension.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_BETA = 0.04  # PI step-size controller
_ALPHA = 0.2 - 0.75 * _BETA


def _interp_steps(times, states, dense, t):
    """Dense evaluation; ``states`` (N, ...) and ``dense`` (N-1, 4, ...)."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    tq = np.atleast_1d(t)
    if tq.size and (tq.min() < times[0] - 1e-12 * max(1.0, abs(times[0]))
                    or tq.max() > times[-1] + 1e-12 * max(1.0, abs(times[-1]))):
        raise ValueError(f"query outside [{times[0]}, {times[-1]}]")
    idx = np.searchsorted(times, tq, side="right") - 1
    idx = np.clip(idx, 0, len(times) - 1)
    exact = times[idx] == tq
    out = np.empty((tq.size,) + states.shape[1:])
    out[exact] = states[idx[exact]]
    rest = ~exact
    if np.any(rest):
        if dense is None:
            # linear fallback for trajectories stored without dense output
            j = np.minimum(idx[rest], len(times) - 2)
            w = (tq[rest] - times[j]) / (times[j + 1] - times[j])
            w = w.reshape((-1,) + (1,) * (states.ndim - 1))
            out[rest] = (1 - w) * states[j] + w * states[j + 1]
        else:
            j = np.minimum(idx[rest], len(times) - 2)
            h = times[j + 1] - times[j]
            th = (tq[rest] - times[j]) / h
            pw = np.stack([th, th ** 2, th ** 3, th ** 4], axis=1)  # (q, 4)
            shape = (-1,) + (1,) * (states.ndim - 1)
            incr = np.einsum("qk,qk...->q...", pw, dense[j])
            out[rest] = states[j] + h.reshape(shape) * incr
    return out[0] if scalar else out


@dataclass
class Trajectory:
    """Sampled solution of one initial-value problem.

    ``states`` has shape ``(N, d)``; ``dense`` holds the per-step quartic
    interpolation coefficients ``(N-1, 4, d)`` when available.
    """

    times: np.ndarray
    states: np.ndarray
    dense: Optional[np.ndarray] = None
    status: Status = Status.COMPLETED
    stop_time: Optional[float] = None
    t_end: Optional[float] = None

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def blew_up(self) -> bool:
        return self.status != Status.COMPLETED

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __call__(self, t):
        return _interp_steps(self.times, self.states, self.dense, t)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def component(self, sl) -> "Trajectory":
        """View on a subset of state components."""
        dense = None if self.dense is None else self.dense[..., sl]
        states = self.states[:, sl]
        if states.ndim == 1:
            states = states[:, None]
            dense = None if dense is None else dense[..., None]
        return Trajectory(self.times, states, dense, self.status, self.stop_time, self.t_end)

    def covers(self, t: float) -> bool:
        return self.times[0] <= t <= self.times[-1]


@dataclass
class BatchTrajectory:
    """Shared grid for a batch: ``states`` (N, B, d), NaN after a member stops."""

    times: np.ndarray
    states: np.ndarray
    dense: Optional[np.ndarray]
    status: np.ndarray
    stop_time: np.ndarray
    last_index: np.ndarray
    t_end: float

    @property
    def size(self) -> int:
        return self.states.shape[1]

    def member(self, i: int) -> Trajectory:
        k = int(self.last_index[i]) + 1
        dense = None if self.dense is None else self.dense[: k - 1, :, i, :]
        st = Status(int(self.status[i]))
        return Trajectory(self.times[:k], self.states[:k, i, :], dense, st,
                          None if st == Status.COMPLETED else float(self.stop_time[i]), self.t_end)


def _error_norm(err, y, ynew, opts):
    if opts.error_scale == "global":
        mag = np.maximum(np.max(np.abs(y), axis=1), np.max(np.abs(ynew), axis=1))
        scale = (opts.abs_tol + opts.rel_tol * mag)[:, None]
    else:
        scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(y), np.abs(ynew))
    r = err / scale
    en = np.sqrt(np.mean(r * r, axis=1))
    en[~np.isfinite(en)] = np.inf
    return en


def _initial_step(rhs, t, y, f0, direction_len, opts):
    if opts.first_step is not None:
        return min(opts.first_step, direction_len, opts.max_step)
    if opts.error_scale == "global":
        scale = (opts.abs_tol + opts.rel_tol * np.max(np.abs(y), axis=1))[:, None]
    else:
        scale = opts.abs_tol + opts.rel_tol * np.abs(y)
    with np.errstate(all="ignore"):
        d0 = np.sqrt(np.mean((y / scale) ** 2, axis=1))
        d1 = np.sqrt(np.mean((f0 / scale) ** 2, axis=1))
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
    h0 = float(np.min(h0))
    h0 = min(h0, direction_len, opts.max_step)
    y1 = y + h0 * f0
    f1 = rhs(t + h0, y1)
    with np.errstate(all="ignore"):
        d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2, axis=1)) / h0
    d12 = float(np.max(np.maximum(d1, d2)))
    if not np.isfinite(d12):
        return max(h0 * 1e-3, 1e-12)
    h1 = max(1e-6, h0 * 1e-3) if d12 <= 1e-15 else (0.01 / d12) ** (1 / 5)
    return min(100 * h0, h1, direction_len, opts.max_step)


def _default_monitor(y):
    return np.sqrt(np.sum(y * y, axis=1))


def integrate_batch(rhs: Callable, t0: float, X0, T: float, opts: IntegratorOptions = IntegratorOptions(),
                    monitor: Optional[Callable] = None, dense: bool = True,
                    raise_on_underflow: bool = False) -> BatchTrajectory:
    """Integrate ``x' = rhs(t, x)`` for a batch of initial states.

    ``rhs`` receives the rows of still-active members, shape ``(b, d)``, and
    returns an array of the same shape; it must act row-wise. ``monitor``
    maps active rows to the scalar compared with ``blowup_threshold``
    (default: Euclidean norm of the row).
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if not T > t0:
        raise ValueError("horizon T must exceed t0")
    B, d = X0.shape
    monitor = monitor or _default_monitor
    cuts = [t0] + [b for b in opts.breakpoints if t0 < b < T] + [T]

    times = [float(t0)]
    states = [X0.copy()]
    denses = []
    status = np.zeros(B, dtype=int)
    stop_time = np.full(B, np.nan)
    last_index = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)

    y_full = X0.copy()
    m0 = monitor(X0)
    bad = ~np.isfinite(m0) | (m0 > opts.blowup_threshold)
    if np.any(bad):
        status[bad] = Status.BLOWUP
        stop_time[bad] = t0
        active[bad] = False

    h = None
    for seg in range(len(cuts) - 1):
        a, b = cuts[seg], cuts[seg + 1]
        left_limit = np.nextafter(b, -np.inf) if seg < len(cuts) - 2 else b
        t = a
        if not active.any():
            break
        ids = np.flatnonzero(active)
        y = y_full[ids]
        f = rhs(t, y)
        if h is None or seg > 0:
            h = _initial_step(rhs, t, y, f, b - a, opts)
        err_old = 1e-4
        rejected = False
        while t < b and ids.size:
            h_min = 16 * np.spacing(max(abs(t), abs(b - a), 1.0))
            h = min(h, opts.max_step)
            if t + h >= b or t + 1.01 * h >= b:
                h = b - t
                t_new = b
            else:
                t_new = t + h
            K = [f]
            # overflow in a trial step is caught by the error norm and the monitor
            with np.errstate(over="ignore", invalid="ignore"):
                for s in range(1, 7):
                    ts = min(t + _C[s] * h, left_limit)
                    dy = sum(_A[s][j] * K[j] for j in range(s) if _A[s][j] != 0.0)
                    K.append(rhs(ts, y + h * dy))
                ynew = y + h * sum(_B[j] * K[j] for j in range(6) if _B[j] != 0.0)
                err = h * sum(_E[j] * K[j] for j in range(7))
            with np.errstate(all="ignore"):
                en = _error_norm(err, y, ynew, opts)
            en_max = float(np.max(en))

            if en_max <= 1.0:
                # accept
                if dense:
                    Kst = np.stack(K, axis=0)  # (7, b, d)
                    Q = np.einsum("sk,sbd->kbd", _P, Kst)  # (4, b, d)
                    Qf = np.full((4, B, d), np.nan)
                    Qf[:, ids, :] = Q
                    denses.append(Qf)
                row = np.full((B, d), np.nan)
                row[ids] = ynew
                times.append(float(t_new))
                states.append(row)
                last_index[ids] = len(times) - 1
                y_full[ids] = ynew
                t = t_new
                mon = monitor(ynew)
                bad = ~np.isfinite(mon) | (mon > opts.blowup_threshold)
                f = K[6]
                if np.any(bad):
                    status[ids[bad]] = Status.BLOWUP
                    stop_time[ids[bad]] = t
                    active[ids[bad]] = False
                    keep = ~bad
                    ids, y, f = ids[keep], ynew[keep], f[keep]
                else:
                    y = ynew
                en_c = max(en_max, 1e-10)
                fac = _SAFETY * en_c ** -_ALPHA * err_old ** _BETA
                fac = min(_MAX_FACTOR, max(_MIN_FACTOR, fac))
                if rejected:
                    fac = min(fac, 1.0)
                h = h * fac
                err_old = en_c
                rejected = False
            else:
                if h <= h_min:
                    culprits = en > 1.0
                    if raise_on_underflow:
                        raise StepSizeUnderflow(t)
                    status[ids[culprits]] = Status.UNDERFLOW
                    stop_time[ids[culprits]] = t
                    active[ids[culprits]] = False
                    keep = ~culprits
                    ids, y, f = ids[keep], y[keep], f[keep]
                    rejected = False
                    continue
                fac = _SAFETY * en_max ** -0.2 if np.isfinite(en_max) else _MIN_FACTOR
                h = max(h * max(_MIN_FACTOR, fac), h_min)
                rejected = True

    times_arr = np.array(times)
    states_arr = np.stack(states, axis=0)
    dense_arr = np.stack(denses, axis=0) if (dense and denses) else (np.zeros((0, 4, B, d)) if dense else None)
    return BatchTrajectory(times_arr, states_arr, dense_arr, status, stop_time, last_index, float(T))


def integrate(rhs: Callable, t0: float, x0, T: float, opts: IntegratorOptions = IntegratorOptions(),
              monitor: Optional[Callable] = None, dense: bool = True) -> Trajectory:
    """Integrate a single initial-value problem.

    ``rhs(t, x)`` takes and returns a 1-D state. Blow-up stops the
    trajectory with ``status == Status.BLOWUP``; a step-size collapse raises
    :class:`StepSizeUnderflow`.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    def batch_rhs(t, Y):
        return np.asarray(rhs(t, Y[0]), dtype=float).reshape(1, -1)

    mon = None
    if monitor is not None:
        def mon(Y):
            return np.array([monitor(Y[0])])
    bt = integrate_batch(batch_rhs, t0, x0[None, :], T, opts, monitor=mon, dense=dense, raise_on_underflow=True)
    return bt.member(0)
