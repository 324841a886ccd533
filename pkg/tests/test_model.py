import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leakypop.model import (FiringRate, InteractionKernel, JumpMap, ModelError, ModelSpec,
                            additive_preset, apply_jump, asrm0_preset, check_assumptions,
                            constant_rate_preset, depression_preset, evaluate_rate,
                            lyapunov_constants, memory_tail_bound, time_elapsed_preset)


def _spec(**kw):
    md = dict(lam=kw.pop("lam", 1.0))
    return ModelSpec(firing=kw.pop("firing", FiringRate(kind="constant", f_max=2.0)),
                     jump=kw.pop("jump", JumpMap(kind="additive", gamma_hat=0.5)), **md)


def test_constant_rate_returns_c():
    s = constant_rate_preset(c=1.7)
    assert float(evaluate_rate(s, 3.0, 0.4, 0.2)) == 1.7


def test_rate_vanishes_during_absolute_refractoriness():
    s = asrm0_preset()
    a = np.linspace(0, s.firing.delta_abs, 20, endpoint=False)
    assert np.all(evaluate_rate(s, a, 0.5, 3.0) == 0.0)
    assert float(evaluate_rate(s, s.firing.delta_abs, 0.5, 0.0)) >= s.firing.sigma


def test_sampled_slopes_below_reported_lipschitz_constant():
    s = asrm0_preset()
    fr = s.firing
    rng = np.random.default_rng(1)
    a1, a2 = rng.uniform(fr.delta_abs, 5, (2, 10_000))
    m1, m2 = rng.uniform(0, 5, (2, 10_000))
    x1, x2 = rng.uniform(-3, 3, (2, 10_000))
    # small perturbations so the probe sees local slopes
    a2 = np.maximum(a1 + (a2 - a1) * 1e-3, fr.delta_abs)
    m2 = m1 + (m2 - m1) * 1e-3
    x2 = x1 + (x2 - x1) * 1e-3
    df = np.abs(fr.evaluate(a1, m1, x1) - fr.evaluate(a2, m2, x2))
    dist = np.abs(a1 - a2) + np.abs(m1 - m2) + np.abs(x1 - x2)
    assert np.max(df / dist) <= fr.lipschitz


def test_jump_examples():
    assert float(apply_jump(constant_rate_preset(), 1.0)) == pytest.approx(1.5)
    d = depression_preset()
    assert float(apply_jump(d, 1e-12)) == pytest.approx(0.5)
    assert float(apply_jump(d, 1.0)) == 1.0


def test_depression_jacobian():
    jm = depression_preset().jump
    assert float(jm.gamma_inv_prime(0.7)) == pytest.approx(2.0)
    assert jm.compact_bound == 1.0


@pytest.mark.parametrize("spec, expected", [
    (_spec(jump=JumpMap(kind="additive", gamma_hat=0.5)), (1.0, 2.0)),
    (_spec(jump=JumpMap(kind="additive", gamma_hat=0.0)), (1.0, 1.0)),
    (ModelSpec(lam=2.0, firing=FiringRate(kind="constant", f_max=1.0),
               jump=JumpMap(kind="depression", upsilon=0.3)), (2.0, 2.7)),
])
def test_lyapunov_constants(spec, expected):
    assert lyapunov_constants(spec) == pytest.approx(expected)


def test_domain_errors():
    s = depression_preset()
    with pytest.raises(ModelError):
        evaluate_rate(s, -0.1, 0.5, 0.0)
    with pytest.raises(ModelError):
        evaluate_rate(s, 1.0, 1.5, 0.0)
    with pytest.raises(ModelError):
        apply_jump(s, 2.0)


def test_invalid_parameters_rejected():
    with pytest.raises(ModelError):
        JumpMap(kind="additive", gamma_hat=-0.1)
    with pytest.raises(ModelError):
        JumpMap(kind="depression", upsilon=1.0)
    with pytest.raises(ModelError):
        JumpMap(kind="custom", nodes_m=(0, 1), nodes_gamma=(0.5, 1.0))  # gamma' = 1.5
    with pytest.raises(ModelError):
        ModelSpec(lam=0.0)


def test_assumption_report_for_depression():
    notes = dict((n, (ok, note)) for n, ok, note in check_assumptions(depression_preset()))
    ok, note = notes["A4 compact memory"]
    assert ok and "G=1" in note


@given(a=st.floats(0, 50), m=st.floats(0, 60), x=st.floats(-20, 20),
       which=st.sampled_from(["asrm0", "time_elapsed", "additive"]))
def test_rate_bounded(a, m, x, which):
    s = {"asrm0": asrm0_preset, "time_elapsed": time_elapsed_preset,
         "additive": additive_preset}[which]()
    f = float(s.firing.evaluate(a, m, x))
    assert 0.0 <= f <= s.firing.f_max
    if a >= s.firing.delta_abs:
        assert f >= s.firing.sigma


@given(a=st.floats(0.1, 30), m=st.floats(0, 40), dm=st.floats(0, 5), x=st.floats(-5, 5),
       dx=st.floats(0, 5))
def test_asrm0_monotone_adaptation(a, m, dm, x, dx):
    fr = asrm0_preset().firing
    assert fr.evaluate(a, m + dm, x) <= fr.evaluate(a, m, x)
    assert fr.evaluate(a, m, x + dx) >= fr.evaluate(a, m, x)


jump_maps = st.one_of(
    st.builds(lambda g: JumpMap(kind="additive", gamma_hat=g), st.floats(0.01, 3)),
    st.builds(lambda u: JumpMap(kind="depression", upsilon=u), st.floats(0.05, 0.95)),
    st.builds(lambda g0, s: JumpMap(kind="custom", nodes_m=(0.0, 1.0, 2.0),
                                    nodes_gamma=(g0, g0 * (1 - s), g0 * (1 - s) ** 2)),
              st.floats(0.1, 2), st.floats(0.0, 0.5)),
)


@given(jm=jump_maps, u=st.floats(0.001, 0.99), v=st.floats(0.001, 0.99))
def test_gamma_monotone_with_bounded_slope(jm, u, v):
    top = 0.999 if jm.kind == "depression" else 5.0
    m1, m2 = sorted((u * top, v * top))
    g1, g2 = float(jm.gamma(m1)), float(jm.gamma(m2))
    assert g1 > m1
    if m2 - m1 > 1e-9:
        q = (g2 - g1) / (m2 - m1)
        assert jm.c_gamma - 1e-9 <= q <= 1 + 1e-9
        assert g2 > g1
    assert float(jm.gamma_inv(g1)) == pytest.approx(m1, abs=1e-12)


def test_kernel_step_factors_match_continuous_steady_state():
    k = InteractionKernel(amplitude=10.0, decay=10.0)
    for dt in (0.001, 0.05, 0.1, 0.5):
        decay, gain = k.step_factors(dt)
        N = 3.0
        # fixed point of x = decay x + gain N dt (geometric series)
        assert gain * N * dt / (1 - decay) == pytest.approx(k.amplitude * N / k.decay, rel=1e-12)


def test_memory_truncation_bound():
    s = asrm0_preset()
    assert memory_tail_bound(s, s.m_max) <= s.tail_tol * (1 + 1e-6)
    assert memory_tail_bound(s, 0.5 * s.m_max) >= memory_tail_bound(s, s.m_max)
    # refractory cap: at most one jump per delta_abs, each followed by leak
    cap = s.jump.gamma_hat / (1 - math.exp(-s.lam * s.firing.delta_abs))
    assert s.m_max <= cap * (1 + 1e-8)
