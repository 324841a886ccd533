"""Model specification: firing rate, jump map, interaction kernel.

All objects here are frozen dataclasses and their methods are pure, so a
ModelSpec can be shared freely between threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special

FIRING_KINDS = ("constant", "srm0", "asrm0", "tabulated")
JUMP_KINDS = ("additive", "depression", "custom")
KERNEL_KINDS = ("exponential", "depression")


class ModelError(ValueError):
    """Invalid model parameters or out-of-domain evaluation."""


def _as_tuple(values):
    if values is None:
        return ()
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class FiringRate:
    """Stochastic intensity f(a, m, x).

    kind:
      constant   f = f_max for a >= delta_abs
      srm0       f = fhat(eta(a) + x), independent of m
      asrm0      f = fhat(eta(a) - m + x)
      tabulated  f = piecewise-linear table in age, independent of m and x

    fhat(u) = sigma + (f_max - sigma) / (1 + exp(-beta (u - threshold))) and
    eta(a) = -eta_amplitude exp(-a / eta_tau). f vanishes for a < delta_abs.
    """
    kind: str = "asrm0"
    f_max: float = 5.0
    beta: float = 4.0
    sigma_floor: float = 0.5
    delta_abs: float = 0.0
    eta_amplitude: float = 0.0
    eta_tau: float = 1.0
    threshold: float = 0.0
    table_a: tuple = ()
    table_f: tuple = ()

    def __post_init__(self):
        if self.kind not in FIRING_KINDS:
            raise ModelError(f"firing.kind: unknown kind {self.kind!r}")
        object.__setattr__(self, "table_a", _as_tuple(self.table_a))
        object.__setattr__(self, "table_f", _as_tuple(self.table_f))
        if self.delta_abs < 0:
            raise ModelError("firing.delta_abs: must be >= 0")
        if self.kind == "tabulated":
            ta, tf = np.asarray(self.table_a), np.asarray(self.table_f)
            if ta.size < 2 or ta.size != tf.size:
                raise ModelError("firing.table_a/table_f: need >= 2 nodes of equal length")
            if np.any(np.diff(ta) <= 0):
                raise ModelError("firing.table_a: nodes must be strictly increasing")
            if np.any(tf < 0):
                raise ModelError("firing.table_f: rates must be >= 0")
            object.__setattr__(self, "f_max", float(tf.max()))
        elif self.f_max < 0:
            raise ModelError("firing.f_max: must be >= 0")
        if self.kind in ("srm0", "asrm0"):
            if not 0 <= self.sigma_floor <= self.f_max:
                raise ModelError("firing.sigma_floor: must lie in [0, f_max]")
            if self.beta < 0:
                raise ModelError("firing.beta: must be >= 0")
            if self.eta_tau <= 0:
                raise ModelError("firing.eta_tau: must be > 0")

    @property
    def depends_on_m(self) -> bool:
        return self.kind == "asrm0"

    @property
    def depends_on_x(self) -> bool:
        return self.kind in ("srm0", "asrm0")

    @property
    def sigma(self) -> float:
        """Lower bound of f beyond the absolute refractory period."""
        if self.kind == "constant":
            return self.f_max
        if self.kind == "tabulated":
            ta, tf = np.asarray(self.table_a), np.asarray(self.table_f)
            inside = tf[ta >= self.delta_abs]
            lo = float(np.interp(self.delta_abs, ta, tf))
            return float(min(lo, inside.min())) if inside.size else lo
        return self.sigma_floor

    @property
    def lipschitz(self) -> float:
        """L_f on each side of delta_abs (f jumps there when delta_abs > 0)."""
        if self.kind == "constant":
            return 0.0
        if self.kind == "tabulated":
            ta, tf = np.asarray(self.table_a), np.asarray(self.table_f)
            return float(np.max(np.abs(np.diff(tf) / np.diff(ta))))
        slope = (self.f_max - self.sigma_floor) * self.beta / 4.0
        return float(slope * max(self.eta_amplitude / self.eta_tau, 1.0))

    def eta(self, a):
        return -self.eta_amplitude * np.exp(-np.asarray(a, dtype=float) / self.eta_tau)

    def evaluate(self, a, m, x):
        """Vectorised f(a, m, x); no domain checks."""
        a = np.asarray(a, dtype=float)
        if self.kind == "constant":
            val = np.full(np.broadcast(a, np.asarray(m), np.asarray(x)).shape, self.f_max)
        elif self.kind == "tabulated":
            val = np.interp(a, self.table_a, self.table_f)
            val = np.broadcast_to(val, np.broadcast(a, np.asarray(m), np.asarray(x)).shape)
        else:
            u = self.eta(a) + x - self.threshold
            if self.kind == "asrm0":
                u = u - m
            s = self.sigma_floor
            val = s + (self.f_max - s) * special.expit(self.beta * u)
            val = np.broadcast_to(val, np.broadcast(a, np.asarray(m), np.asarray(x)).shape)
        return np.where(a >= self.delta_abs, val, 0.0)


@dataclass(frozen=True)
class JumpMap:
    """Post-spike memory map gamma(m) = m + Gamma(m).

    additive    gamma(m) = m + gamma_hat
    depression  gamma(m) = 1 - upsilon + upsilon m on (0, 1)
    custom      Gamma piecewise linear through (nodes_m, nodes_gamma), held
                constant past the last node
    """
    kind: str = "additive"
    gamma_hat: float = 0.5
    upsilon: float = 0.5
    nodes_m: tuple = ()
    nodes_gamma: tuple = ()

    def __post_init__(self):
        if self.kind not in JUMP_KINDS:
            raise ModelError(f"jump.kind: unknown kind {self.kind!r}")
        object.__setattr__(self, "nodes_m", _as_tuple(self.nodes_m))
        object.__setattr__(self, "nodes_gamma", _as_tuple(self.nodes_gamma))
        if self.kind == "additive" and self.gamma_hat < 0:
            raise ModelError("jump.gamma_hat: Gamma > 0 required (got negative increment)")
        if self.kind == "depression" and not 0 < self.upsilon < 1:
            raise ModelError("jump.upsilon: must lie in (0, 1)")
        if self.kind == "custom":
            nm, ng = np.asarray(self.nodes_m), np.asarray(self.nodes_gamma)
            if nm.size < 2 or nm.size != ng.size:
                raise ModelError("jump.nodes_m/nodes_gamma: need >= 2 nodes of equal length")
            if nm[0] != 0 or np.any(np.diff(nm) <= 0):
                raise ModelError("jump.nodes_m: must start at 0 and increase strictly")
            if np.any(ng <= 0):
                raise ModelError("jump.nodes_gamma: Gamma > 0 required")
            slopes = 1.0 + np.diff(ng) / np.diff(nm)
            if np.any(slopes <= 0):
                raise ModelError("jump.nodes_gamma: gamma must be strictly increasing")
            if np.any(slopes > 1 + 1e-12):
                raise ModelError("jump.nodes_gamma: gamma' <= 1 required (Gamma non-increasing)")

    @property
    def compact_bound(self) -> float:
        """G with gamma(m) < G on the state space, or inf."""
        return 1.0 if self.kind == "depression" else math.inf

    @property
    def c_gamma(self) -> float:
        """Lower bound of gamma'."""
        if self.kind == "depression":
            return self.upsilon
        if self.kind == "custom":
            nm, ng = np.asarray(self.nodes_m), np.asarray(self.nodes_gamma)
            return float(np.min(1.0 + np.diff(ng) / np.diff(nm)))
        return 1.0

    @property
    def gamma_sup(self) -> float:
        """sup of Gamma(m) = gamma(m) - m."""
        if self.kind == "depression":
            return 1.0 - self.upsilon
        if self.kind == "custom":
            return float(max(self.nodes_gamma))
        return self.gamma_hat

    @property
    def gamma0(self) -> float:
        return float(self.gamma(0.0))

    def gamma(self, m):
        m = np.asarray(m, dtype=float)
        if self.kind == "additive":
            return m + self.gamma_hat
        if self.kind == "depression":
            return 1.0 - self.upsilon + self.upsilon * m
        return m + np.interp(m, self.nodes_m, self.nodes_gamma)

    def gamma_inv(self, m):
        """Inverse jump map; values below gamma(0) map to negative memories."""
        m = np.asarray(m, dtype=float)
        if self.kind == "additive":
            return m - self.gamma_hat
        if self.kind == "depression":
            return (m - 1.0 + self.upsilon) / self.upsilon
        nm = np.asarray(self.nodes_m)
        gm = nm + np.asarray(self.nodes_gamma)
        inner = np.interp(m, gm, nm)
        return np.where(m > gm[-1], m - self.nodes_gamma[-1],
                        np.where(m < gm[0], m - self.nodes_gamma[0], inner))

    def gamma_inv_prime(self, m):
        """|(gamma^{-1})'(m)|."""
        m = np.asarray(m, dtype=float)
        if self.kind == "additive":
            return np.ones_like(m)
        if self.kind == "depression":
            return np.full_like(m, 1.0 / self.upsilon)
        nm = np.asarray(self.nodes_m)
        gm = nm + np.asarray(self.nodes_gamma)
        slopes = np.diff(gm) / np.diff(nm)
        idx = np.clip(np.searchsorted(gm, m, side="right") - 1, 0, slopes.size - 1)
        return np.where(m >= gm[-1], 1.0, 1.0 / slopes[idx])


@dataclass(frozen=True)
class InteractionKernel:
    """h(t, a, m) = amplitude exp(-decay t) kappa(m); kappa = 1 or 1 - m."""
    kind: str = "exponential"
    amplitude: float = 1.0
    decay: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ModelError(f"kernel.kind: unknown kind {self.kind!r}")
        if self.decay <= 0:
            raise ModelError("kernel.decay: must be > 0")
        if self.amplitude < 0:
            raise ModelError("kernel.amplitude: must be >= 0")

    @property
    def integral(self) -> float:
        """Time integral of the scalar kernel C_h / decay."""
        return self.amplitude / self.decay

    def step_factors(self, dt: float):
        """(decay, gain) for x <- decay x + gain * (spike mass fired in the step).

        The fired mass is spread uniformly over the step and convolved exactly
        with the exponential, so the discrete steady state equals the
        continuous one, C_h N / decay.
        """
        z = self.decay * dt
        return math.exp(-z), self.amplitude * -math.expm1(-z) / z

    def kappa(self, m):
        m = np.asarray(m, dtype=float)
        if self.kind == "depression":
            return 1.0 - m
        return np.ones_like(m)

    def h(self, t, a, m):
        return self.amplitude * np.exp(-self.decay * np.asarray(t, dtype=float)) * self.kappa(m)

    def h_bar(self, a, m):
        return self.integral * self.kappa(m)

    @property
    def h_bar_sup(self) -> float:
        return self.integral


@dataclass(frozen=True)
class ModelSpec:
    lam: float = 1.0
    epsilon: float = 0.0
    firing: FiringRate = field(default_factory=FiringRate)
    jump: JumpMap = field(default_factory=JumpMap)
    kernel: InteractionKernel = field(default_factory=InteractionKernel)
    tail_tol: float = 1e-8
    m_max: float | None = None  # grid truncation for unbounded jump maps

    def __post_init__(self):
        if not self.lam > 0:
            raise ModelError("model.lambda: must be > 0")
        if not 0 < self.tail_tol < 1:
            raise ModelError("model.tail_tol: must lie in (0, 1)")
        if self.kernel.kind == "depression" and self.jump.kind != "depression":
            raise ModelError("kernel.kind: depression kernel needs the depression jump map")
        if self.m_max is None:
            object.__setattr__(self, "m_max", memory_truncation(self))
        elif self.m_max <= 0:
            raise ModelError("model.m_max: must be > 0")

    @property
    def m_domain(self):
        return (0.0, float(self.m_max))

    def with_epsilon(self, epsilon: float) -> "ModelSpec":
        return replace(self, epsilon=float(epsilon))


def _check_domain(spec: ModelSpec, a, m):
    a = np.asarray(a, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a < 0):
        raise ModelError("age must be finite and >= 0")
    G = spec.jump.compact_bound
    if np.any(~np.isfinite(m)) or np.any(m <= 0) or np.any(m > G):
        raise ModelError(f"memory must lie in (0, {G}]")
    return a, m


def evaluate_rate(spec: ModelSpec, a, m, x):
    """Firing rate f(a, m, x); x is the already scaled input eps * x_t."""
    a, m = _check_domain(spec, a, m)
    return spec.firing.evaluate(a, m, x)


def apply_jump(spec: ModelSpec, m):
    """Post-spike memory gamma(m)."""
    _, m = _check_domain(spec, 0.0, m)
    return spec.jump.gamma(m)


def lyapunov_constants(spec: ModelSpec):
    """(alpha, b) of the drift bound for w = 1 + m."""
    gs = spec.jump.gamma_sup
    if not math.isfinite(gs):
        raise ModelError("unsupported model: Gamma is unbounded")
    return spec.lam, spec.lam + gs * spec.firing.f_max


def _shot_noise_log_mgf(theta, jump, rate, lam):
    # log E exp(theta M) for Poisson(rate) shots of size `jump` decaying at lam
    z = theta * jump
    ein = special.expi(z) - math.log(z) - np.euler_gamma if z > 1e-8 else z
    return rate / lam * ein


def memory_tail_bound(spec: ModelSpec, m: float) -> float:
    """Upper bound on the stationary mass above memory m.

    The memory is dominated pathwise by shot noise driven by a Poisson train
    of rate f_max with jumps sup Gamma (thinning coupling); a Chernoff bound on
    that process gives the tail. With an absolute refractory period the
    memory never exceeds sup Gamma / (1 - exp(-lam delta_abs)).
    """
    jump, rate, lam = spec.jump.gamma_sup, spec.firing.f_max, spec.lam
    if jump == 0 or rate == 0:
        return 0.0
    d = spec.firing.delta_abs
    if d > 0 and m >= jump / (-math.expm1(-lam * d)):
        return 0.0
    if m <= jump * rate / lam:
        return 1.0

    def obj(log_theta):
        th = math.exp(log_theta)
        return -th * m + _shot_noise_log_mgf(th, jump, rate, lam)

    res = optimize.minimize_scalar(obj, bounds=(-20.0, math.log(700.0 / jump)), method="bounded")
    return float(min(1.0, math.exp(min(0.0, res.fun))))


def memory_truncation(spec: ModelSpec) -> float:
    """Grid truncation m_max with stationary tail mass below spec.tail_tol."""
    G = spec.jump.compact_bound
    if math.isfinite(G):
        return G
    jump, rate, lam = spec.jump.gamma_sup, spec.firing.f_max, spec.lam
    if jump == 0 or rate == 0:
        return 1.0
    hi = jump * rate / lam + jump
    d = spec.firing.delta_abs
    cap = jump / (-math.expm1(-lam * d)) if d > 0 else math.inf
    while memory_tail_bound(spec, hi) > spec.tail_tol and hi < cap:
        hi *= 2.0
    if hi >= cap:
        return float(cap * (1 + 1e-9))
    lo = jump * rate / lam
    m = optimize.brentq(lambda v: math.log(memory_tail_bound(spec, v) + 1e-300)
                        - math.log(spec.tail_tol), lo, hi, xtol=1e-10)
    return float(m)


def check_assumptions(spec: ModelSpec):
    """Return a list of (name, satisfied, note) for the model assumptions."""
    fr, jm, ker = spec.firing, spec.jump, spec.kernel
    out = []
    out.append(("A1 bounded Lipschitz rate", math.isfinite(fr.f_max),
                f"f_max={fr.f_max:g}, L_f={fr.lipschitz:g} (piecewise in age about delta_abs)"))
    out.append(("A2 bounded positive Gamma", jm.gamma_sup > 0 or jm.kind == "additive",
                f"sup Gamma={jm.gamma_sup:g}" + (" (degenerate, no memory jumps)" if jm.gamma_sup == 0 else "")))
    out.append(("A3(i) rate floor after refractoriness", fr.sigma > 0,
                f"sigma={fr.sigma:g}, delta_abs={fr.delta_abs:g}"))
    out.append(("A3(ii) C_gamma <= gamma' <= 1", 0 < jm.c_gamma <= 1, f"C_gamma={jm.c_gamma:g}"))
    out.append(("A3(iii) bounded kernel integral", math.isfinite(ker.h_bar_sup),
                f"sup h_bar={ker.h_bar_sup:g}"))
    G = jm.compact_bound
    out.append(("A4 compact memory", math.isfinite(G),
                f"G={G:g}" if math.isfinite(G) else "unbounded memory, truncated at "
                f"m_max={spec.m_max:.6g} (tail <= {spec.tail_tol:g})"))
    out.append(("A5 exponential kernel domination", True,
                f"C_h={ker.amplitude:g}, decay={ker.decay:g}"))
    return out


# presets ---------------------------------------------------------------

def asrm0_preset(epsilon: float = 0.0, **overrides) -> ModelSpec:
    """Adaptive SRM0 with sigmoid escape rate and slow additive adaptation.

    Relaxes to a stationary state for small epsilon and produces
    adaptation-terminated population bursts around epsilon = 5.
    """
    fr = dict(kind="asrm0", f_max=10.0, beta=4.0, sigma_floor=0.5, delta_abs=0.1,
              eta_amplitude=2.0, eta_tau=0.5, threshold=1.0)
    jp = dict(kind="additive", gamma_hat=1.0)
    kn = dict(kind="exponential", amplitude=10.0, decay=10.0)
    md = dict(lam=0.2, epsilon=epsilon)
    return _build(md, fr, jp, kn, overrides)


def additive_preset(epsilon: float = 0.0, **overrides) -> ModelSpec:
    """aSRM0 firing with unit additive jumps and unit leak rate."""
    overrides.setdefault("lam", 1.0)
    return asrm0_preset(epsilon, **overrides)


def time_elapsed_preset(epsilon: float = 0.0, **overrides) -> ModelSpec:
    """One-dimensional age model: no memory jumps, rate independent of m.

    Strong refractoriness keeps firing age-locked, so strong excitation
    (epsilon around 4) synchronises the population into periodic volleys.
    """
    fr = dict(kind="srm0", f_max=10.0, beta=5.0, sigma_floor=0.5, delta_abs=0.1,
              eta_amplitude=20.0, eta_tau=1.0, threshold=0.0)
    jp = dict(kind="additive", gamma_hat=0.0)
    kn = dict(kind="exponential", amplitude=10.0, decay=10.0)
    md = dict(lam=1.0, epsilon=epsilon, m_max=1.0)
    return _build(md, fr, jp, kn, overrides)


def depression_preset(epsilon: float = 0.0, **overrides) -> ModelSpec:
    """Short-term synaptic depression with constant hazard."""
    fr = dict(kind="constant", f_max=1.0, delta_abs=0.0)
    jp = dict(kind="depression", upsilon=0.5)
    kn = dict(kind="depression", amplitude=1.0, decay=1.0)
    md = dict(lam=1.0, epsilon=epsilon)
    return _build(md, fr, jp, kn, overrides)


def constant_rate_preset(c: float = 1.0, epsilon: float = 0.0, **overrides) -> ModelSpec:
    """Constant hazard with additive jumps (renewal oracle)."""
    fr = dict(kind="constant", f_max=c, delta_abs=0.0)
    jp = dict(kind="additive", gamma_hat=0.5)
    kn = dict(kind="exponential", amplitude=1.0, decay=1.0)
    md = dict(lam=1.0, epsilon=epsilon)
    return _build(md, fr, jp, kn, overrides)


def _build(md, fr, jp, kn, overrides):
    for key, val in overrides.items():
        section, _, name = key.partition("__")
        if not name:
            md[section] = val
        else:
            {"firing": fr, "jump": jp, "kernel": kn}[section][name] = val
    return ModelSpec(firing=FiringRate(**fr), jump=JumpMap(**jp),
                     kernel=InteractionKernel(**kn), **md)


PRESETS = {
    "asrm0": asrm0_preset,
    "additive": additive_preset,
    "time_elapsed": time_elapsed_preset,
    "depression": depression_preset,
    "constant": constant_rate_preset,
}

# coupling strengths at which the presets oscillate (bursting regime)
LARGE_EPSILON = {"asrm0": 5.0, "time_elapsed": 4.0}
