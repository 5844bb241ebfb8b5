"""Polynomial vector fields with time-dependent coefficients.

Besides evaluation and exact Jacobians this module builds the shift
expansion ``f(t, z + u)`` as a polynomial in ``z`` and turns a numeric
z-polynomial into a scalar majorant ``q(s)`` with ``||pi(z)|| <= q(||z||)``.

All numeric entry points accept a single state of shape ``(n,)`` or a batch
of shape ``(B, n)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .signals import Constant, TimeSignal, as_signal

__all__ = [
    "Monomial",
    "PolyVectorField",
    "PolySystemModel",
    "ShiftExpansion",
    "NormBoundPolynomial",
    "eval_f",
    "eval_jacobian",
    "shift_expand",
    "norm_bound",
    "lipschitz_constants",
    "LipschitzConstants",
]


@dataclass(frozen=True)
class Monomial:
    coeff: TimeSignal
    exponents: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeff", as_signal(self.coeff))
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValueError("monomial exponents must be non-negative")
        object.__setattr__(self, "exponents", exps)

    @property
    def degree(self) -> int:
        return sum(self.exponents)


class _MonomialTable:
    """Vectorised evaluator for a list of (signal, factor, exponents, output slot)."""

    def __init__(self, signals, factors, exponents, slots, out_dim, n):
        self.n = n
        self.out_dim = out_dim
        self.signals = list(signals)
        self.exponents = np.array(exponents, dtype=float).reshape(len(self.signals), n)
        self.factors = np.array(factors, dtype=float)
        self.scatter = np.zeros((len(self.signals), out_dim))
        for k, s in enumerate(slots):
            self.scatter[k, s] = 1.0
        self._const = all(sig.is_constant() for sig in self.signals)
        if self._const:
            self._coef = self.factors * np.array([sig.eval(0.0) for sig in self.signals])

    def coefficients(self, t: float) -> np.ndarray:
        if self._const:
            return self._coef
        return self.factors * np.array([sig.eval(t) for sig in self.signals])

    def powers(self, x: np.ndarray) -> np.ndarray:
        """x: (B, n) -> (B, M) products prod_j x_j**e_j."""
        if not self.signals:
            return np.zeros((x.shape[0], 0))
        return np.prod(x[:, None, :] ** self.exponents[None, :, :], axis=2)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        if not self.signals:
            return np.zeros((x.shape[0], self.out_dim))
        return (self.powers(x) * self.coefficients(t)) @ self.scatter


@dataclass(frozen=True)
class PolyVectorField:
    """``components[i]`` is the list of monomials of the i-th output."""

    dim: int
    components: tuple

    def __init__(self, dim: int, components):
        comps = tuple(tuple(m if isinstance(m, Monomial) else Monomial(*m) for m in c) for c in components)
        if len(comps) != dim:
            raise ValueError(f"expected {dim} components, got {len(comps)}")
        for c in comps:
            for m in c:
                if len(m.exponents) != dim:
                    raise ValueError("monomial exponent length must equal the system dimension")
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "components", comps)

    @classmethod
    def zero(cls, dim: int) -> "PolyVectorField":
        return cls(dim, [[] for _ in range(dim)])

    def monomials(self):
        for i, comp in enumerate(self.components):
            for m in comp:
                yield i, m

    @property
    def min_degree(self) -> int:
        degs = [m.degree for _, m in self.monomials()]
        return min(degs) if degs else 0

    @property
    def max_degree(self) -> int:
        degs = [m.degree for _, m in self.monomials()]
        return max(degs) if degs else 0

    def is_zero(self) -> bool:
        return not any(True for _ in self.monomials())

    def breakpoints(self) -> tuple[float, ...]:
        pts = set()
        for _, m in self.monomials():
            pts.update(m.coeff.breakpoints())
        return tuple(sorted(pts))

    # compiled evaluators are cached on the instance
    def _table(self) -> _MonomialTable:
        cached = self.__dict__.get("_f_table")
        if cached is None:
            mons = list(self.monomials())
            cached = _MonomialTable(
                [m.coeff for _, m in mons], [1.0] * len(mons), [m.exponents for _, m in mons],
                [i for i, _ in mons], self.dim, self.dim)
            object.__setattr__(self, "_f_table", cached)
        return cached

    def _jac_table(self) -> _MonomialTable:
        cached = self.__dict__.get("_j_table")
        if cached is None:
            n = self.dim
            sigs, facs, exps, slots = [], [], [], []
            for i, m in self.monomials():
                for j, e in enumerate(m.exponents):
                    if e == 0:
                        continue
                    d = list(m.exponents)
                    d[j] -= 1
                    sigs.append(m.coeff)
                    facs.append(float(e))
                    exps.append(tuple(d))
                    slots.append(i * n + j)
            cached = _MonomialTable(sigs, facs, exps, slots, n * n, n)
            object.__setattr__(self, "_j_table", cached)
        return cached


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def eval_f(f: PolyVectorField, t: float, x) -> np.ndarray:
    """f(t, x) for a state ``(n,)`` or a batch ``(B, n)``."""
    xb, single = _as_batch(x)
    out = f._table()(t, xb)
    return out[0] if single else out


def eval_jacobian(f: PolyVectorField, t: float, x) -> np.ndarray:
    """Exact Jacobian ``df_i/dx_j``; shape ``(n, n)`` or ``(B, n, n)``."""
    xb, single = _as_batch(x)
    n = f.dim
    out = f._jac_table()(t, xb).reshape(xb.shape[0], n, n)
    return out[0] if single else out


# --- shift expansion ----------------------------------------------------------

@dataclass(frozen=True)
class ExpansionTerm:
    """``factor * coeff(t) * u**u_exponents * z**z_exponents`` in output ``component``."""

    component: int
    z_exponents: tuple[int, ...]
    u_exponents: tuple[int, ...]
    factor: int
    coeff: TimeSignal


class ShiftExpansion:
    """Multinomial expansion of ``f(t, z + u)`` grouped by z-monomials.

    ``terms`` is the symbolic form. :meth:`coefficients` evaluates the
    coefficient vector of every z-monomial for numeric ``t`` and ``u``.
    """

    def __init__(self, f: PolyVectorField):
        self.field = f
        n = f.dim
        self.dim = n
        terms = []
        for i, m in f.monomials():
            ranges = [range(e + 1) for e in m.exponents]
            for k in itertools.product(*ranges):
                factor = 1
                for e, kj in zip(m.exponents, k):
                    factor *= comb(e, kj)
                u_exp = tuple(e - kj for e, kj in zip(m.exponents, k))
                terms.append(ExpansionTerm(i, tuple(k), u_exp, factor, m.coeff))
        self.terms = tuple(terms)
        groups = sorted({t.z_exponents for t in terms} | {(0,) * n}, key=lambda e: (sum(e), e))
        self.z_exponents = tuple(groups)
        self._group_index = {e: g for g, e in enumerate(groups)}
        self.z_degrees = np.array([sum(e) for e in groups], dtype=int)
        self.max_degree = int(self.z_degrees.max()) if len(groups) else 0
        G = len(groups)
        self._table = _MonomialTable(
            [t.coeff for t in terms], [t.factor for t in terms], [t.u_exponents for t in terms],
            [self._group_index[t.z_exponents] * n + t.component for t in terms], G * n, n)
        # degree aggregation matrix (G, K+1)
        self._degree_matrix = np.zeros((G, self.max_degree + 1))
        self._degree_matrix[np.arange(G), self.z_degrees] = 1.0

    def coefficients(self, t: float, u) -> np.ndarray:
        """Coefficient vectors, shape ``(G, n)`` or ``(B, G, n)``, ordered as ``z_exponents``.

        Group 0 is always the z-free part, i.e. ``f(t, u)``.
        """
        ub, single = _as_batch(u)
        out = self._table(t, ub).reshape(ub.shape[0], len(self.z_exponents), self.dim)
        return out[0] if single else out

    def as_dict(self, t: float, u) -> dict:
        c = self.coefficients(t, u)
        return {e: c[..., g, :] for g, e in enumerate(self.z_exponents)}

    def evaluate(self, coeffs: np.ndarray, z) -> np.ndarray:
        """Evaluate a numeric z-polynomial (from :meth:`coefficients`) at ``z``."""
        zb, single = _as_batch(z)
        E = np.array(self.z_exponents, dtype=float)
        zp = np.prod(zb[:, None, :] ** E[None], axis=2)  # (B, G)
        cb = coeffs if coeffs.ndim == 3 else coeffs[None]
        out = np.einsum("bg,bgn->bn", zp, cb)
        return out[0] if single else out


def shift_expand(f: PolyVectorField) -> ShiftExpansion:
    """Cached :class:`ShiftExpansion` of ``f``."""
    cached = f.__dict__.get("_shift")
    if cached is None:
        cached = ShiftExpansion(f)
        object.__setattr__(f, "_shift", cached)
    return cached


@dataclass(frozen=True)
class NormBoundPolynomial:
    """``q(s) = sum_k coeffs[..., k] s**k`` with non-negative coefficients."""

    coeffs: np.ndarray

    def __call__(self, s):
        return self.value(s)

    def value(self, s):
        s = np.asarray(s, dtype=float)
        c = self.coeffs
        out = np.zeros(np.broadcast_shapes(c.shape[:-1], s.shape))
        for k in range(c.shape[-1] - 1, -1, -1):
            out = out * s + c[..., k]
        return out

    @property
    def gamma(self):
        """The z-free part ``q(0)``."""
        return self.coeffs[..., 0]

    @property
    def linear(self):
        """Coefficient of ``s``; the ``D`` of the linearised error equation."""
        return self.coeffs[..., 1] if self.coeffs.shape[-1] > 1 else np.zeros(self.coeffs.shape[:-1])

    def pi(self, s):
        """Part of degree >= 1 in ``s``."""
        return self.value(s) - self.gamma

    def pi_minus(self, s):
        """Part of degree >= 2 in ``s``."""
        return self.pi(s) - self.linear * np.asarray(s, dtype=float)

    @property
    def terms(self) -> list[tuple[int, float]]:
        c = np.asarray(self.coeffs)
        if c.ndim != 1:
            raise ValueError("terms is only defined for a single polynomial")
        return [(k, float(v)) for k, v in enumerate(c) if v != 0.0]


def norm_bound(expansion: ShiftExpansion, coeffs: np.ndarray) -> NormBoundPolynomial:
    """Scalar majorant of a numeric z-polynomial.

    Every z-monomial satisfies ``|z^e| <= ||z||^{|e|}``, so grouping by
    degree gives ``||pi(z)||_2 <= sum_e ||c_e||_2 ||z||^{|e|}``. The z-free
    coefficient contributes ``||c_0||_2 = ||pi(0)||``.
    """
    norms = np.sqrt(np.sum(coeffs * coeffs, axis=-1))  # (..., G)
    return NormBoundPolynomial(norms @ expansion._degree_matrix)


# --- Lipschitz constants --------------------------------------------------------

@dataclass(frozen=True)
class LipschitzConstants:
    """Ball constants: ``||f(x)|| <= l1 ||x||``, ``||f(a)-f(b)|| <= l2 ||a-b||``,
    ``||f'(x)|| <= l3 ||x||`` for ``||x||, ||a||, ||b|| <= radius``."""

    l1: float
    l2: float
    l3: float
    radius: float
    sampled_l2: float = field(default=0.0)

    def __iter__(self):
        return iter((self.l1, self.l2, self.l3))


def lipschitz_constants(f: PolyVectorField, R: float, t_lo: float, t_hi: float,
                        n_samples: int = 2000, seed: int = 0) -> LipschitzConstants:
    """Analytic monomial bounds on the ball ``||x|| <= R`` over ``[t_lo, t_hi]``.

    The analytic l2 is cross-checked against the largest sampled
    ``||f'(t, x)||_2`` and the larger value is returned.
    """
    if not R > 0:
        raise ValueError("radius must be positive")
    n = f.dim
    l1 = 0.0
    jac_entry = np.zeros((n, n))  # bounds |df_i/dx_j| <= sum |c| e_j R^(deg-1)
    jac_lin = np.zeros((n, n))  # same with R^(deg-2), i.e. per unit ||x||
    for i, m in f.monomials():
        sup = m.coeff.abs_sup(t_lo, t_hi)
        d = m.degree
        if d == 0:
            raise ValueError("constant monomials are not allowed in the nonlinearity")
        l1 += sup * R ** (d - 1)
        for j, e in enumerate(m.exponents):
            if e:
                jac_entry[i, j] += sup * e * R ** (d - 1)
                if d >= 2:
                    jac_lin[i, j] += sup * e * R ** (d - 2)
    l2 = float(np.sqrt(np.sum(jac_entry ** 2)))
    l3 = float(np.sqrt(np.sum(jac_lin ** 2)))

    sampled = 0.0
    if not f.is_zero():
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n_samples, n))
        x *= (R * rng.uniform(0.0, 1.0, size=(n_samples, 1)) ** (1.0 / n)
              / np.linalg.norm(x, axis=1, keepdims=True))
        x[0] = 0.0
        ts = np.linspace(t_lo, t_hi, 16)
        for t in ts:
            J = eval_jacobian(f, float(t), x)
            sampled = max(sampled, float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2)))))
    return LipschitzConstants(l1=float(l1), l2=max(l2, sampled), l3=l3, radius=float(R), sampled_l2=sampled)


# --- system model ----------------------------------------------------------------

@dataclass(frozen=True)
class PolySystemModel:
    """``x' = A(t) x + f(t, x) + F0 * eta(t)``."""

    A: tuple
    f: PolyVectorField
    F0: float = 0.0
    eta: tuple = ()
    name: str = "model"

    def __post_init__(self):
        n = self.f.dim
        A = tuple(tuple(as_signal(a) for a in row) for row in self.A)
        if len(A) != n or any(len(r) != n for r in A):
            raise ValueError(f"A must be {n}x{n}")
        eta = tuple(as_signal(e) for e in self.eta) if self.eta else tuple(Constant(0.0) for _ in range(n))
        if len(eta) != n:
            raise ValueError(f"eta must have {n} entries")
        if self.F0 < 0:
            raise ValueError("F0 must be non-negative")
        for _, m in self.f.monomials():
            if m.degree < 2:
                raise ValueError("the nonlinearity must only contain monomials of degree >= 2")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "F0", float(self.F0))
        object.__setattr__(self, "_A_const", all(a.is_constant() for r in A for a in r))
        if self._A_const:
            object.__setattr__(self, "_A0", np.array([[a.eval(0.0) for a in r] for r in A]))

    @property
    def dim(self) -> int:
        return self.f.dim

    def A_at(self, t: float) -> np.ndarray:
        if self._A_const:
            return self._A0
        return np.array([[a.eval(t) for a in row] for row in self.A])

    def forcing(self, t: float) -> np.ndarray:
        if self.F0 == 0.0:
            return np.zeros(self.dim)
        return self.F0 * np.array([e.eval(t) for e in self.eta])

    def forcing_norm(self, t: float) -> float:
        return float(np.linalg.norm(self.forcing(t)))

    def eta_sup(self, t_lo: float, t_hi: float, samples: int = 4001) -> float:
        ts = np.linspace(t_lo, t_hi, samples)
        vals = np.array([e.eval(ts) for e in self.eta])
        return float(np.max(np.linalg.norm(vals, axis=0)))

    def breakpoints(self) -> tuple[float, ...]:
        pts = set(self.f.breakpoints())
        for row in self.A:
            for a in row:
                pts.update(a.breakpoints())
        for e in self.eta:
            pts.update(e.breakpoints())
        return tuple(sorted(pts))

    def rhs(self, t: float, x: np.ndarray) -> np.ndarray:
        """Full right-hand side for a batch ``(B, n)``."""
        return x @ self.A_at(t).T + eval_f(self.f, t, x) + self.forcing(t)

    def is_autonomous(self) -> bool:
        sigs = [a for r in self.A for a in r] + [m.coeff for _, m in self.f.monomials()]
        if self.F0 != 0.0:
            sigs += list(self.eta)
        return all(s.is_constant() for s in sigs)
