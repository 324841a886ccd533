import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from leakypop.grids import GridSpec, Trace, gaussian_lognormal
from leakypop.model import additive_preset, asrm0_preset, depression_preset
from leakypop.pde import run_nonlinear
from leakypop.verify import (RateFit, a_star, classify, doeblin_empirical, doeblin_window,
                             fit_decay, harris_rate, lyapunov_bound, lyapunov_check, psi,
                             psi_prime)

SPEC = additive_preset(0.0)
WINDOW = doeblin_window(SPEC, 2.0)


def test_doeblin_window_matches_hand_substitution():
    # additive map gamma(m) = m + G written out by hand
    lam, d, G = SPEC.lam, SPEC.firing.delta_abs, SPEC.jump.gamma_hat
    fr = SPEC.firing
    w = WINDOW
    upper = math.exp(-lam * w.a_bar) * (math.exp(-lam * d) * G + G)
    lower = math.exp(-lam * (w.T - w.a_bar - d)) * (math.exp(-lam * d) * 2.0 + G) + G
    assert w.m_upper == pytest.approx(upper, rel=1e-12)
    assert w.m_lower == pytest.approx(lower, rel=1e-12)
    # T is the smallest time with a 1% gap below the upper edge
    assert w.m_lower == pytest.approx(0.99 * w.m_upper, rel=1e-9)
    nu = math.exp(-3 * fr.f_max * w.T) * fr.sigma ** 2 * 1.0 / (lam * upper)
    assert w.nu_constant == pytest.approx(nu, rel=1e-12)
    assert 0 < w.a_bar < w.T


def test_doeblin_window_monotone_in_R():
    ws = [doeblin_window(SPEC, R) for R in (1.0, 2.0, 4.0)]
    Ts = [w.T for w in ws]
    nus = [w.nu_constant for w in ws]
    assert Ts == sorted(Ts) and len(set(Ts)) == 3
    assert nus == sorted(nus, reverse=True)
    assert all(nu > 0 for nu in nus)


def test_doeblin_rejects_nonpositive_R():
    with pytest.raises(ValueError):
        doeblin_window(SPEC, 0.0)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_last_jump_time_bounds_on_window(sa, sm):
    w = WINDOW
    a = sa * w.a_bar
    m = w.m_lower + sm * (w.m_upper - w.m_lower)
    ast = float(a_star(SPEC, a, m))
    d = SPEC.firing.delta_abs
    assert ast >= d - 1e-12
    assert ast < w.T - a - d


@pytest.mark.parametrize("spec, m", [(SPEC, 1.84), (depression_preset(0.0), 0.7)])
def test_psi_derivative_matches_difference_quotients(spec, m):
    T, a = 1.35, 0.02
    ap = np.linspace(0.05, 0.3, 11)
    h = 1e-6
    fd = (psi(spec, T, a, m, ap + h) - psi(spec, T, a, m, ap - h)) / (2 * h)
    assert np.allclose(psi_prime(spec, T, a, m, ap), fd, rtol=1e-6, atol=1e-9)
    assert np.all(np.diff(psi(spec, T, a, m, ap)) > 0)


def test_empirical_minoration_and_excluded_probe():
    spec = SPEC
    fr = spec.firing
    grid = GridSpec(fr.delta_abs + 10 / fr.sigma, 200, 0.0, spec.m_max, 50)
    rep = doeblin_empirical(spec, WINDOW, probes=4, grid=grid)
    inside = [p for p in rep.probes if p.included]
    outside = [p for p in rep.probes if not p.included]
    assert len(inside) == 4 and len(outside) == 1
    assert outside[0].m0 > WINDOW.R
    assert all(p.m0 <= WINDOW.R for p in inside)
    assert rep.all_positive and rep.min_density > 0
    assert rep.min_density == min(p.min_density for p in inside)
    assert rep.n_cells >= 1


def test_fit_decay_recovers_synthetic_rate():
    t = np.linspace(0, 40, 801)
    rng = np.random.default_rng(3)
    d = 3.0 * np.exp(-0.7 * t) * np.exp(rng.normal(0, 1e-3, t.size))
    fit = fit_decay(t, d, transient=0.2, floor=1e-14)
    assert fit.rate == pytest.approx(0.7, rel=1e-3)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-2)
    assert fit.r_squared > 0.999
    assert fit.window[0] == pytest.approx(8.0, abs=0.05)


def test_fit_decay_stops_at_floor():
    t = np.linspace(0, 60, 601)
    d = np.exp(-t) + 1e-15  # round-off plateau
    fit = fit_decay(t, d, transient=0.0, floor=1e-10)
    assert fit.rate == pytest.approx(1.0, rel=1e-6)
    assert fit.window[1] < 23.1


def test_fit_decay_degenerate_when_nothing_left():
    t = np.linspace(0, 1, 10)
    fit = fit_decay(t, np.zeros(10))
    assert fit.degenerate and math.isnan(fit.rate)


def test_harris_rate_identical_data_is_degenerate_and_symmetric():
    spec = asrm0_preset(0.0)
    g = GridSpec(spec.firing.delta_abs + 10 / spec.firing.sigma, 100, 0.0, spec.m_max, 25)
    u0 = gaussian_lognormal(g)
    v0 = gaussian_lognormal(g, a_mean=5.0, m_median=5.0)
    same = harris_rate(spec, 0.0, u0, u0, 20.0)
    assert same.degenerate
    fwd = harris_rate(spec, 0.0, u0, v0, 60.0)
    rev = harris_rate(spec, 0.0, v0, u0, 60.0)
    assert fwd.rate > 0
    assert rev.rate == pytest.approx(fwd.rate, rel=1e-12)


def test_harris_rate_requires_probability_data():
    spec = asrm0_preset(0.0)
    g = GridSpec(spec.firing.delta_abs + 10 / spec.firing.sigma, 50, 0.0, spec.m_max, 10)
    u0 = gaussian_lognormal(g)
    bad = type(u0)(g, u0.values * 2)
    with pytest.raises(ValueError, match="mass 1"):
        harris_rate(spec, 0.0, bad, u0, 1.0)


def _trace(x):
    t = np.arange(len(x), dtype=float)
    z = np.zeros(len(x))
    return Trace(t, np.asarray(x, float), z, z, z)


GOOD_FIT = RateFit(0.5, 1.0, 0.99, (0.0, 1.0))


@pytest.mark.parametrize("x, fit, ok, label", [
    ([0.1, np.nan, 0.2], GOOD_FIT, True, "diverged"),
    ([0.0, 1.0, 1e6], GOOD_FIT, True, "diverged"),
    (np.abs(np.sin(np.linspace(0, 20, 300))), GOOD_FIT, True, "oscillating"),
    (np.abs(np.sin(np.linspace(0, 20, 300))), GOOD_FIT, False, "oscillating"),
    (1 - np.exp(-np.linspace(0, 10, 300)), GOOD_FIT, True, "decaying"),
    (1 - np.exp(-np.linspace(0, 10, 300)), GOOD_FIT, False, "unresolved"),
    (1 - np.exp(-np.linspace(0, 10, 300)), RateFit(-0.1, 1.0, 0.99, (0, 1)), True, "unresolved"),
    (1 - np.exp(-np.linspace(0, 10, 300)), RateFit(0.5, 1.0, 0.5, (0, 1)), True, "unresolved"),
])
def test_classify_synthetic(x, fit, ok, label):
    assert classify(_trace(x), fit, ok, cap=10.0)[0] == label


def test_lyapunov_bound_solves_drift_ode():
    spec = SPEC
    alpha, b = spec.lam, spec.lam + spec.jump.gamma_sup * spec.firing.f_max
    t = np.linspace(0, 10, 21)
    sol = integrate.solve_ivp(lambda _, w: -alpha * w + b, (0, 10), [3.0], t_eval=t,
                              rtol=1e-11, atol=1e-12)
    assert np.allclose(lyapunov_bound(spec, 3.0, t), sol.y[0], rtol=1e-8)


def test_lyapunov_check_on_depression_run():
    spec = depression_preset(0.5)
    g = GridSpec(20.0, 200, 0.0, 1.0, 40)
    trace, _ = run_nonlinear(spec, gaussian_lognormal(g, m_median=0.3, m_cap=1.0), 10.0)
    excess, ok = lyapunov_check(spec, trace)
    assert ok and excess <= 1e-3
