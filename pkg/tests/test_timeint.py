import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from cutesdg.physics import InadmissibleStateError
from cutesdg.timeint import IntegrationError, IntegratorConfig, integrate, step


def fixed_steps(rhs, y0, dt, n):
    y, t = np.array(y0, dtype=float), 0.0
    for _ in range(n):
        y, _, _ = step(rhs, y, t, dt)
        t += dt
    return y


def test_zero_rhs_is_exact():
    y0 = np.array([[1.5, -2.0], [0.25, 3.0]])
    y, err, _ = step(lambda y, t: np.zeros_like(y), y0, 0.0, 0.7)
    np.testing.assert_array_equal(y, y0)
    np.testing.assert_array_equal(err, 0.0)


def test_exponential_decay_fixed_step():
    y = fixed_steps(lambda y, t: -y, [1.0], 0.1, 10)
    assert abs(y[0] - np.exp(-1.0)) <= 1e-7


def test_fifth_order_convergence():
    errs = [abs(fixed_steps(lambda y, t: -y, [1.0], 1.0 / n, n)[0] - np.exp(-1.0)) for n in (5, 10)]
    assert errs[0] / errs[1] >= 0.8 * 2 ** 4


def test_cosine_forcing_adaptive():
    res = integrate(lambda y, t: np.cos(t) + 0 * y, np.array([0.0]), IntegratorConfig(1e-3, 1.0, 1e-8, 1e-8))
    assert res.t == 1.0
    assert abs(res.y[0] - np.sin(1.0)) <= 1e-6


def test_linear_system_against_matrix_exponential():
    A = np.array([[-1.0, 2.0, 0.0], [-2.0, -1.0, 0.5], [0.0, -0.5, -0.2]])
    y0 = np.array([1.0, 0.0, -1.0])
    cfg = IntegratorConfig(1e-3, 2.0, atol=1e-10, rtol=1e-10)
    res = integrate(lambda y, t: A @ y, y0, cfg)
    exact = expm(2.0 * A) @ y0
    # local tolerance 1e-10 over a few hundred steps
    assert np.abs(res.y - exact).max() <= 1e-7
    assert res.n_accepted > 5


def test_final_step_lands_on_end_time():
    res = integrate(lambda y, t: -y, np.array([1.0]), IntegratorConfig(0.3, 1.0))
    assert res.t == 1.0
    assert res.times[-1] == 1.0
    assert sum(res.dts) == pytest.approx(1.0, abs=1e-14)


def test_zero_length_interval():
    res = integrate(lambda y, t: -y, np.array([2.0]), IntegratorConfig(0.1, 0.0))
    assert res.n_accepted == 0 and res.y[0] == 2.0


def test_forced_inadmissibility_halves_dt():
    calls = {"raised": False}

    def rhs(y, t):
        if t >= 0.3 and not calls["raised"]:
            calls["raised"] = True
            raise InadmissibleStateError("synthetic")
        return np.zeros_like(y)
    # zero error keeps dt pinned near dt0 via the tiny growth cap
    cfg = IntegratorConfig(0.01, 1.0, fac_max=1.0 + 1e-12)
    res = integrate(rhs, np.array([1.0]), cfg)
    assert res.n_inadmissible == 1
    assert res.t == 1.0
    dts = np.array(res.dts)
    i = int(np.argmax(dts < 0.0075))
    assert dts[i] == pytest.approx(0.005, rel=1e-6)
    assert np.all(dts[:i] == pytest.approx(0.01, rel=1e-6))


def test_inadmissible_initial_state_is_fatal():
    def rhs(y, t):
        raise InadmissibleStateError("bad start")
    with pytest.raises(IntegrationError):
        integrate(rhs, np.array([1.0]), IntegratorConfig(0.1, 1.0))


def test_step_size_collapse():
    def rhs(y, t):
        if t > 0.5:
            raise InadmissibleStateError("wall")
        return np.ones_like(y)
    with pytest.raises(IntegrationError, match="step size collapse"):
        integrate(rhs, np.array([0.0]), IntegratorConfig(0.1, 1.0))


def test_hook_order_and_state_replacement():
    seen = []

    def srd_hook(info):
        seen.append(("srd", info.step_index))
        return info.y + 1.0

    def residual_hook(info):
        # sees the state produced by the previous hook and its fresh rhs
        seen.append(("residual", info.step_index))
        assert np.array_equal(info.rhs(), np.zeros_like(info.y))

    res = integrate(lambda y, t: np.zeros_like(y), np.array([0.0]), IntegratorConfig(0.25, 1.0),
                    hooks=[srd_hook, residual_hook])
    assert seen[:2] == [("srd", 0), ("residual", 0)]
    assert [s for s, _ in seen] == ["srd", "residual"] * res.n_accepted
    assert res.y[0] == res.n_accepted


def test_determinism():
    A = np.array([[0.0, 1.0], [-4.0, -0.1]])
    cfg = IntegratorConfig(1e-2, 3.0, 1e-9, 1e-9)
    a = integrate(lambda y, t: A @ y + np.sin(t), np.array([1.0, 0.0]), cfg)
    b = integrate(lambda y, t: A @ y + np.sin(t), np.array([1.0, 0.0]), cfg)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.dts == b.dts


@pytest.mark.parametrize("kwargs", [dict(atol=0.0), dict(rtol=-1.0), dict(fac_min=1.2),
                                    dict(fac_max=0.9), dict(dt0=0.0), dict(t_end=-1.0)])
def test_config_validation(kwargs):
    base = dict(dt0=0.1, t_end=1.0)
    base.update(kwargs)
    with pytest.raises(IntegrationError):
        IntegratorConfig(**base)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(-3.0, 1.0), tol=st.sampled_from([1e-6, 1e-8, 1e-10]))
def test_adaptive_error_tracks_tolerance(lam, tol):
    res = integrate(lambda y, t: lam * y, np.array([1.0]), IntegratorConfig(1e-2, 1.0, tol, tol))
    assert abs(res.y[0] - np.exp(lam)) <= 200 * tol
