import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from succbound.approx_engine import SchemeSystem
from succbound.polyfield import (Monomial, PolySystemModel, PolyVectorField, eval_f, eval_jacobian,
                                 lipschitz_constants, norm_bound, shift_expand)
from succbound.presets import preset_model
from succbound.signals import Constant, Sinusoid


def vdp_field(alpha2=-100.0):
    return PolyVectorField(2, [[], [Monomial(Constant(-alpha2), (0, 3))]])


def test_vanderpol_field_value():
    assert np.array_equal(eval_f(vdp_field(), 0.3, np.array([0.0, 1.0])), [0.0, 100.0])


def test_duffing_field_value():
    f = PolyVectorField(2, [[], [Monomial(Constant(10.0), (3, 0))]])
    assert np.array_equal(eval_f(f, 0.0, np.array([2.0, 5.0])), [0.0, 80.0])


def test_field_and_jacobian_vanish_at_origin():
    f = random_field(np.random.default_rng(3), 3, 4)
    assert not np.any(eval_f(f, 1.0, np.zeros(3)))
    assert not np.any(eval_jacobian(f, 1.0, np.zeros(3)))


def test_vanderpol_jacobian_row():
    y21 = 0.37
    J = eval_jacobian(vdp_field(), 0.0, np.array([0.0, y21]))
    assert np.allclose(J, [[0, 0], [0, 300 * y21 ** 2]], rtol=1e-15)


def random_field(rng, n, max_deg, n_terms=6):
    comps = [[] for _ in range(n)]
    for _ in range(n_terms):
        deg = rng.integers(2, max_deg + 1)
        exps = np.zeros(n, dtype=int)
        for j in rng.integers(0, n, size=deg):
            exps[j] += 1
        coeff = Sinusoid(rng.uniform(-2, 2), rng.uniform(0, 5)) if rng.random() < 0.3 else Constant(rng.uniform(-2, 2))
        comps[rng.integers(0, n)].append(Monomial(coeff, tuple(exps)))
    return PolyVectorField(n, comps)


@pytest.mark.parametrize("seed", range(12))
def test_jacobian_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    f = random_field(rng, n, 4)
    x = rng.uniform(-1, 1, n)
    t = float(rng.uniform(0, 5))
    h = 1e-7
    fd = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        fd[:, j] = (eval_f(f, t, x + e) - eval_f(f, t, x - e)) / (2 * h)
    assert np.max(np.abs(fd - eval_jacobian(f, t, x))) <= 1e-6


def test_shift_expand_vanderpol_groups():
    exp = shift_expand(vdp_field())
    Y = 0.4
    d = exp.as_dict(0.0, np.array([0.1, Y]))
    # 100 (Y^3 + 3 Y^2 z2 + 3 Y z2^2 + z2^3) in the second component
    assert d[(0, 0)][1] == pytest.approx(100 * Y ** 3)
    assert d[(0, 1)][1] == pytest.approx(300 * Y ** 2)
    assert d[(0, 2)][1] == pytest.approx(300 * Y)
    assert d[(0, 3)][1] == pytest.approx(100)
    assert all(v[0] == 0 for v in d.values())


def test_shift_by_zero_is_identity():
    f = random_field(np.random.default_rng(1), 2, 3)
    exp = shift_expand(f)
    z = np.array([0.3, -0.7])
    assert np.allclose(exp.evaluate(exp.coefficients(0.5, np.zeros(2)), z), eval_f(f, 0.5, z), rtol=1e-14)


def test_binomial_square():
    f = PolyVectorField(1, [[Monomial(Constant(1.0), (2,))]])
    a = 1.7
    d = shift_expand(f).as_dict(0.0, np.array([a]))
    assert d[(0,)][0] == pytest.approx(a * a)
    assert d[(1,)][0] == pytest.approx(2 * a)
    assert d[(2,)][0] == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_expansion_reproduces_shifted_field(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    f = random_field(rng, n, 4)
    exp = shift_expand(f)
    u, z = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
    t = float(rng.uniform(0, 3))
    got = exp.evaluate(exp.coefficients(t, u), z)
    want = eval_f(f, t, z + u)
    assert np.allclose(got, want, rtol=1e-10, atol=1e-12)


def _rounding(q):
    # the bound is analytic; only floating-point rounding of both sides is allowed for
    return q * (1 + 8 * np.finfo(float).eps)


@pytest.mark.parametrize("scheme", ["A", "B"])
@pytest.mark.parametrize("m", [1, 2, 3])
def test_norm_bound_sandwich_on_error_polynomials(scheme, m):
    rng = np.random.default_rng(10 * m + (scheme == "B"))
    model = PolySystemModel(((0.0, 1.0), (-4.0, -1.2)), random_field(rng, 2, 3))
    sysm = SchemeSystem(model, scheme, m)
    exp = sysm.expansion
    N = 10_000
    ys = rng.uniform(-1, 1, (N, m, 2))
    z = rng.normal(size=(N, 2)) * rng.uniform(0, 2, (N, 1))
    t = 0.7
    C = sysm.error_polynomial(t, ys)
    lhs = np.linalg.norm(np.einsum("bg,bgn->bn", np.prod(z[:, None, :] ** np.array(exp.z_exponents)[None], axis=2), C),
                         axis=1)
    # direct evaluation of the error nonlinearity as a cross-check of the coefficients
    direct = eval_f(model.f, t, z + ys.sum(axis=1)) - sysm.error_offset(t, ys)
    assert np.allclose(lhs, np.linalg.norm(direct, axis=1), rtol=1e-9, atol=1e-12)
    q = norm_bound(exp, C).value(np.linalg.norm(z, axis=1))
    assert np.all(lhs <= _rounding(q))
    assert np.all(norm_bound(exp, C).coeffs >= 0)


def test_norm_bound_vanderpol_scheme_a_m2():
    model = preset_model("vanderpol-8.1")
    sysm = SchemeSystem(model, "A", 2)
    y1, y2 = np.array([0.2, 0.3]), np.array([-0.05, 0.11])
    q = norm_bound(sysm.expansion, sysm.error_polynomial(0.0, np.array([[y1, y2]])))
    Y22 = y1[1] + y2[1]
    want = 100 * np.array([abs(3 * y1[1] + y2[1]) * y2[1] ** 2, 3 * Y22 ** 2, 3 * abs(Y22), 1.0])
    assert np.allclose(q.coeffs[0], want, rtol=1e-12)


def test_norm_bound_z_free_polynomial():
    f = PolyVectorField(2, [[], [Monomial(Constant(2.0), (0, 2))]])
    exp = shift_expand(f)
    C = exp.coefficients(0.0, np.array([0.0, 3.0]))
    C[1:] = 0.0  # keep only the z-free part
    q = norm_bound(exp, C)
    assert q.gamma == pytest.approx(18.0)
    assert q.pi(2.5) == 0.0


def test_norm_bound_at_zero_reference_is_field_majorant():
    a1, a2 = -1.5, 0.8
    f = PolyVectorField(2, [[Monomial(Constant(a1), (2, 1))], [Monomial(Constant(a2), (1, 1))]])
    q = norm_bound(shift_expand(f), shift_expand(f).coefficients(0.0, np.zeros(2)))
    assert dict(q.terms) == {2: pytest.approx(abs(a2)), 3: pytest.approx(abs(a1))}


def test_lipschitz_vanderpol_dominates_sampled_jacobian():
    f = vdp_field()
    lip = lipschitz_constants(f, 0.1, 0.0, 10.0)
    assert lip.l2 >= 3.0 * (1 - 1e-12)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5000, 2))
    x *= 0.1 * rng.uniform(0, 1, (5000, 1)) / np.linalg.norm(x, axis=1, keepdims=True)
    oracle = np.max(np.linalg.norm(eval_jacobian(f, 0.0, x), ord=2, axis=(1, 2)))
    assert lip.l2 >= oracle
    assert lip.l1 * 0.1 >= np.max(np.linalg.norm(eval_f(f, 0.0, x), axis=1))


def test_lipschitz_vanishes_with_radius_and_for_zero_field():
    f = vdp_field()
    sizes = [max(lipschitz_constants(f, R, 0, 1)) for R in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(b < a for a, b in zip(sizes, sizes[1:]))
    assert sizes[-1] < 1e-5
    assert tuple(lipschitz_constants(PolyVectorField.zero(2), 1.0, 0, 1)) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        lipschitz_constants(f, 0.0, 0, 1)


def test_model_rejects_linear_terms():
    f = PolyVectorField(2, [[Monomial(Constant(1.0), (1, 0))], []])
    with pytest.raises(ValueError):
        PolySystemModel(((0, 1), (-1, 0)), f)
