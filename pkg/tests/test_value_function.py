import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, solve_ivp

from conftest import random_valid_spec
from reinsgame.equilibrium import reinsurance_fixed_point, solve_equilibrium
from reinsgame.errors import DomainError, StateError
from reinsgame.value_function import (
    BackwardIntegral,
    h_of_t,
    h_prime_exact,
    h_prime_fd,
    riccati_coeffs,
    riccati_constants,
    riccati_residual,
    riccati_rhs,
    riccati_terms,
    terminal_utility,
)

# h(0) from a DOP853 integration of the Riccati equation backward from h(T) = 0 (rtol 1e-13)
H0_ORACLE = (-0.1683066304904472, -0.15048049961949336)


def _ode_h0(ins, mk):
    lin, quad_, src = riccati_terms(ins, mk)
    sol = solve_ivp(lambda t, h: lin * h - quad_ * h * h + src, (mk.horizon, 0.0), [0.0], rtol=1e-12, atol=1e-14, method="DOP853")
    return sol.y[0, -1]


def test_h0_matches_frozen_ode_values(spec):
    for ins, ref in zip(spec.insurers, H0_ORACLE):
        assert h_of_t(riccati_constants(ins, spec.market), 0.0) == pytest.approx(ref, rel=1e-10)


def test_constants_are_positive(spec):
    for ins in spec.insurers:
        k = riccati_constants(ins, spec.market)
        assert k.c1 > 0 and k.c2 > 0 and k.c3 > 0


def test_terminal_condition_and_sign(spec):
    k = riccati_constants(spec.insurers[0], spec.market)
    assert h_of_t(k, spec.market.horizon) == 0.0
    ts = np.linspace(0.0, spec.market.horizon, 101)[:-1]
    assert np.all(np.asarray(h_of_t(k, ts)) < 0)


def test_random_draws_agree_with_ode():
    rng = np.random.default_rng(11)
    for _ in range(10):
        s = random_valid_spec(rng)
        for ins in s.insurers:
            assert h_of_t(riccati_constants(ins, s.market), 0.0) == pytest.approx(_ode_h0(ins, s.market), rel=1e-8, abs=1e-12)


def test_exact_derivative_matches_rhs_and_fd(spec):
    ins = spec.insurers[1]
    k = riccati_constants(ins, spec.market)
    ts = np.linspace(0.01, 4.99, 37)
    exact = np.asarray(h_prime_exact(k, ts))
    assert np.allclose(exact, riccati_rhs(h_of_t(k, ts), ins, spec.market), rtol=1e-12, atol=1e-12)
    assert np.allclose(exact, h_prime_fd(k, ts), rtol=1e-7, atol=1e-9)


def test_c2_identity(spec):
    # without the m^2 factor this identity only holds when m = 1
    for ins in spec.insurers:
        k = riccati_constants(ins, spec.market)
        b1 = ins.beta[0]
        assert k.c2 == pytest.approx(spec.market.m**2 * (k.c3 + 1) / (2 * (1 - b1) * k.c1), rel=1e-12)


def test_literal_constants_fail_unless_unit_m(spec):
    ins = spec.insurers[0]
    ts = np.linspace(0.1, 4.9, 25)
    lit = riccati_constants(ins, spec.market, "literal")
    assert np.max(np.abs(riccati_residual(lit, ins, spec.market, ts))) > 1e-3
    unit = dataclasses.replace(spec.market, m=1.0)
    lit1 = riccati_constants(ins, unit, "literal")
    cor1 = riccati_constants(ins, unit)
    assert lit1.c2 == pytest.approx(cor1.c2, rel=1e-12)
    assert lit1.c3 == pytest.approx(cor1.c3, rel=1e-12)
    assert np.max(np.abs(riccati_residual(lit1, ins, unit, ts))) < 1e-6


def test_zero_risk_premium_gives_zero_h(spec):
    mk = dataclasses.replace(spec.market, m=0.0)
    k = riccati_constants(spec.insurers[0], mk)
    assert math.isinf(k.c3)
    assert np.all(np.asarray(h_of_t(k, np.linspace(0, 5, 11))) == 0.0)
    assert h_prime_exact(k, 1.0) == 0.0


def test_long_horizon_does_not_overflow(spec):
    mk = dataclasses.replace(spec.market, horizon=500.0, kappa=50.0, zbar=0.01)
    k = riccati_constants(spec.insurers[0], mk)
    assert k.c2 * mk.horizon > 700
    vals = np.asarray(h_of_t(k, np.linspace(0.0, 500.0, 1001)))
    assert np.all(np.isfinite(vals))
    assert vals[0] == pytest.approx(-k.c1 / k.c3, rel=1e-12)


def test_time_outside_horizon_rejected(spec):
    k = riccati_constants(spec.insurers[0], spec.market)
    with pytest.raises(DomainError):
        h_of_t(k, 5.5)
    with pytest.raises(DomainError):
        riccati_constants(spec.insurers[0], spec.market, "other")


@settings(deadline=None, max_examples=40)
@given(seed=st.integers(0, 2**32 - 1))
def test_riccati_residual_property(seed):
    s = random_valid_spec(np.random.default_rng(seed))
    ts = np.linspace(0.0, s.market.horizon, 22)[1:-1]
    for ins in s.insurers:
        k = riccati_constants(ins, s.market)
        assert np.max(np.abs(riccati_residual(k, ins, s.market, ts))) < 1e-6


def test_backward_integral_polynomial():
    integral = BackwardIntegral.build(lambda s: 3 * s**2, 2.0, 11)
    ts = np.array([0.0, 0.2, 0.37, 1.999, 2.0])
    assert np.allclose(integral(ts), 8.0 - ts**3, atol=1e-13)


def test_backward_integral_smooth_off_nodes():
    integral = BackwardIntegral.build(np.cos, 3.0, 301)
    ts = np.linspace(0.0, 3.0, 1000)
    assert np.max(np.abs(integral(ts) - (np.sin(3.0) - np.sin(ts)))) < 1e-8


def test_f_requires_profile(spec):
    c = riccati_coeffs(spec.insurers[0], spec.market)
    with pytest.raises(StateError):
        c.f(0.0)


@pytest.fixture(scope="module")
def profiles(spec):
    return solve_equilibrium(spec, n_grid=2001), solve_equilibrium(spec, n_grid=4001)


def test_f_grid_refinement(profiles):
    coarse, fine = profiles
    ts = np.linspace(0.0, 5.0, 17)
    for i in range(2):
        assert np.max(np.abs(coarse.coeffs[i].f(ts) - fine.coeffs[i].f(ts))) < 1e-10
    assert coarse.coeffs[0].f(0.0) == pytest.approx(1.7853, abs=1e-4)
    assert coarse.coeffs[1].f(0.0) == pytest.approx(-0.7053, abs=1e-4)


def _integrand_scalar(spec, i, s):
    """Independent scalar transcription of the f integrand for two insurers."""
    mk = spec.market
    me, peer = spec.insurers[i], spec.insurers[1 - i]
    a = reinsurance_fixed_point(spec, s).a
    ai, ap = a[i], a[1 - i]
    h = h_of_t(riccati_constants(me, mk), s)
    G = me.delta * math.exp(mk.r * (mk.horizon - s))
    wo, wp = 1 - me.theta / 2, me.theta / 2

    def prem(ins, x):
        lam = ins.lam + mk.lambda_hat
        return ins.eta * lam * ins.mu1 - mk.eta_hat * (1 - x) ** 2 * lam * ins.mu2

    def idio(ins):
        return (ins.lam + mk.lambda_hat) * ins.mu2 - mk.lambda_hat * ins.mu1**2

    b3, b4 = -me.psi3 / me.delta, -me.psi4 / me.delta
    common = mk.lambda_hat * (wo * ai * me.mu1 - wp * ap * peer.mu1) ** 2
    own_noise = (wo * ai) ** 2 * idio(me) + (wp * ap) ** 2 * idio(peer)
    return mk.kappa * mk.zbar * h - G * (wo * prem(me, ai) - wp * prem(peer, ap)) + 0.5 * G**2 * (
        common * (1 - b3) + own_noise * (1 - b4)
    )


def test_f_against_adaptive_quadrature(spec, profiles):
    prof = profiles[0]
    for i in range(2):
        for t in (0.0, 1.3, 4.2):
            ref, err = quad(lambda s: _integrand_scalar(spec, i, s), t, 5.0, epsabs=1e-13, epsrel=1e-13, limit=200)
            assert prof.coeffs[i].f(t) == pytest.approx(ref, abs=1e-9)


def test_f_prime_is_minus_integrand(spec, profiles):
    prof = profiles[0]
    for t in (0.0, 0.77, 3.0):
        assert prof.coeffs[0].f_prime(t) == pytest.approx(-_integrand_scalar(spec, 0, t), rel=1e-12)


def test_value_partials_against_finite_differences(profiles):
    vf = profiles[0].value_function(0)
    t, y, z = 1.1, 0.4, 0.05
    e = 1e-5
    assert vf.value_y(t, y, z) == pytest.approx((vf.value(t, y + e, z) - vf.value(t, y - e, z)) / (2 * e), rel=1e-7)
    assert vf.value_z(t, y, z) == pytest.approx((vf.value(t, y, z + e) - vf.value(t, y, z - e)) / (2 * e), rel=1e-7)
    assert vf.value_t(t, y, z) == pytest.approx((vf.value(t + e, y, z) - vf.value(t - e, y, z)) / (2 * e), rel=1e-6)
    e = 1e-4
    assert vf.value_yy(t, y, z) == pytest.approx(
        (vf.value(t, y + e, z) - 2 * vf.value(t, y, z) + vf.value(t, y - e, z)) / e**2, rel=1e-5
    )
    assert vf.value_zz(t, y, z) == pytest.approx(
        (vf.value(t, y, z + e) - 2 * vf.value(t, y, z) + vf.value(t, y, z - e)) / e**2, rel=1e-5
    )
    assert vf.value_yz(t, y, z) == pytest.approx(
        (vf.value_y(t, y, z + e) - vf.value_y(t, y, z - e)) / (2 * e), rel=1e-7
    )


def test_terminal_value_is_utility(profiles):
    vf = profiles[0].value_function(1)
    for y in (-1.0, 0.0, 2.5):
        assert vf.value(5.0, y, 0.07) == pytest.approx(terminal_utility(y, vf.delta), rel=1e-14)


def test_value_is_negative_and_increasing_in_y(profiles):
    vf = profiles[0].value_function(0)
    ys = np.linspace(-3, 3, 13)
    v = np.asarray(vf.value(0.5, ys, 0.04))
    assert np.all(v < 0) and np.all(np.diff(v) > 0)
    with pytest.raises(DomainError):
        vf.value(0.5, 0.0, 0.0)
