import math

import numpy as np
import pytest

from succbound.odeint import IntegratorOptions, Status, StepSizeUnderflow, integrate, integrate_batch


def decay(t, x):
    return -x


def test_exponential_decay():
    tr = integrate(decay, 0.0, [1.0], 1.0, IntegratorOptions(rel_tol=1e-10, abs_tol=1e-14))
    assert abs(tr.states[-1, 0] - math.exp(-1)) <= 1e-8
    assert tr.times[0] == 0.0 and tr.times[-1] == 1.0
    assert np.all(np.diff(tr.times) > 0)


def test_quadratic_pole_blows_up_at_threshold():
    tr = integrate(lambda t, x: x * x, 0.0, [1.0], 2.0, IntegratorOptions(rel_tol=1e-10, abs_tol=1e-12))
    assert tr.status == Status.BLOWUP
    # x = 1 / (1 - t) reaches 1e6 at t = 1 - 1e-6
    assert tr.stop_time == pytest.approx(1 - 1e-6, abs=1e-6)
    assert abs(tr.states[-1, 0]) >= 1e6


def test_rotation_preserves_norm():
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    tr = integrate(lambda t, x: J @ x, 0.0, [1.0, 0.0], 100.0, IntegratorOptions(rel_tol=1e-12, abs_tol=1e-14))
    assert np.max(np.abs(tr.norms() - 1.0)) <= 1e-8


def test_grid_values_are_reproduced_by_interpolant():
    tr = integrate(decay, 0.0, [1.0, 2.0], 3.0)
    assert np.array_equal(tr(tr.times), tr.states)


def _fixed_step_error(h):
    # a tolerance of 1 accepts every step, so max_step fixes the step size
    o = IntegratorOptions(rel_tol=1.0, abs_tol=1.0, max_step=h, first_step=h)
    tr = integrate(decay, 0.0, [1.0], 1.0, o)
    return abs(tr.states[-1, 0] - math.exp(-1))


def test_convergence_order_at_least_four():
    e1, e2 = _fixed_step_error(0.1), _fixed_step_error(0.05)
    assert e1 / e2 >= 16


def test_dense_output_accuracy_between_steps():
    o = IntegratorOptions(rel_tol=1e-8, abs_tol=1e-12)
    tr = integrate(decay, 0.0, [1.0], 5.0, o)
    grid_err = np.max(np.abs(tr.states[:, 0] - np.exp(-tr.times)))
    mid = 0.5 * (tr.times[1:] + tr.times[:-1])
    off_err = np.max(np.abs(tr(mid)[:, 0] - np.exp(-mid)))
    assert off_err <= 10 * max(grid_err, 1e-15)


def test_breakpoint_is_never_straddled():
    def rhs(t, x):
        return np.array([1.0 if t < 1.0 else 0.0])

    o = IntegratorOptions(rel_tol=1e-9, abs_tol=1e-12, breakpoints=(1.0,))
    tr = integrate(rhs, 0.0, [0.0], 3.0, o)
    assert 1.0 in tr.times
    # a step across the switch would smear the kink; piecewise-linear x is exact otherwise
    assert np.max(np.abs(tr.states[:, 0] - np.minimum(tr.times, 1.0))) <= 1e-12
    mid = 0.5 * (tr.times[1:] + tr.times[:-1])
    assert np.max(np.abs(tr(mid)[:, 0] - np.minimum(mid, 1.0))) <= 1e-12


def test_step_size_underflow_raises_without_threshold():
    o = IntegratorOptions(rel_tol=1e-8, abs_tol=1e-10, blowup_threshold=np.inf)
    with pytest.raises(StepSizeUnderflow):
        integrate(lambda t, x: x * x, 0.0, [1.0], 2.0, o)


def test_batch_members_stop_independently():
    bt = integrate_batch(lambda t, X: X * X, 0.0, np.array([[0.5], [1.0]]), 1.5)
    assert list(bt.status) == [Status.COMPLETED, Status.BLOWUP]
    a, b = bt.member(0), bt.member(1)
    assert a.times[-1] == 1.5
    assert b.times[-1] < 1.0
    assert a.states[-1, 0] == pytest.approx(1 / (1 / 0.5 - 1.5), rel=1e-6)


@pytest.mark.parametrize("kw", [dict(rel_tol=0), dict(abs_tol=-1), dict(blowup_threshold=0), dict(max_step=0)])
def test_options_validation(kw):
    with pytest.raises(ValueError):
        IntegratorOptions(**kw)


def test_horizon_must_exceed_start():
    with pytest.raises(ValueError):
        integrate(decay, 1.0, [1.0], 1.0)
