"""Numerical checks of the long-time theory.

Doeblin minoration window and constant, empirical minoration from
point-mass initial data, Harris contraction rate, Lyapunov bound
monitoring and the weak-coupling stability sweep.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .grids import DensityGrid, GridSpec, dirac_cell
from .model import ModelSpec, lyapunov_constants
from .pde import Stepper, _resolve_dt, check_grid, run_frozen, run_nonlinear
from .stationary import lift_to_density, solve_stationary

log = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class DoeblinWindow:
    R: float
    T: float
    a_bar: float
    m_lower: float
    m_upper: float
    nu_constant: float


def window_bounds(spec: ModelSpec, R: float, a_bar: float, T: float):
    """(m_lower, m_upper) of the minoration rectangle."""
    g, lam, d = spec.jump.gamma, spec.lam, spec.firing.delta_abs
    lower = float(g(math.exp(-lam * (T - a_bar - d)) * g(math.exp(-lam * d) * R)))
    upper = float(math.exp(-lam * a_bar) * g(math.exp(-lam * d) * spec.jump.gamma0))
    return lower, upper


def nu_constant(spec: ModelSpec, T: float, m_upper: float) -> float:
    fr = spec.firing
    return (math.exp(-3.0 * fr.f_max * T) * fr.sigma ** 2 * spec.jump.c_gamma
            / (spec.lam * m_upper))


def doeblin_window(spec: ModelSpec, R: float, margin: float = 0.01, n_grid: int = 20) -> DoeblinWindow:
    """Window (a_bar, T) with the smallest T such that m_lower <= (1 - margin) m_upper.

    a_bar is scanned on a coarse interior grid of the feasible interval and,
    for each a_bar, T is the smallest admissible time (closed form). T grows
    with a_bar, so the continuous optimum degenerates to a_bar -> 0; the
    coarse grid keeps the rectangle [0, a_bar] non-trivial.
    """
    if not R > 0:
        raise ValueError("R must be > 0")
    jm, lam, d = spec.jump, spec.lam, spec.firing.delta_abs
    g0 = jm.gamma0
    top = float(jm.gamma(math.exp(-lam * d) * g0))
    c_R = float(jm.gamma(math.exp(-lam * d) * R))
    if g0 <= 0 or (1 - margin) * top <= g0:
        raise InfeasibleError("no feasible window: gamma(0) leaves no room below m_upper")
    a_hi = math.log((1 - margin) * top / g0) / lam

    def T_of(a_bar):
        target = (1 - margin) * math.exp(-lam * a_bar) * top
        z = float(jm.gamma_inv(target))
        if z <= 0:
            return math.inf
        return a_bar + d + max(math.log(c_R / z) / lam, 1e-9)

    grid = np.linspace(0.0, a_hi, n_grid + 2)[1:-1]
    Ts = np.array([T_of(a) for a in grid])
    k = int(np.argmin(Ts))
    if not math.isfinite(Ts[k]):
        raise InfeasibleError("no feasible window on the search grid")
    a_bar = float(grid[k])
    T = float(Ts[k])
    ml, mu = window_bounds(spec, R, a_bar, T)
    return DoeblinWindow(R=R, T=T, a_bar=a_bar, m_lower=ml, m_upper=mu,
                         nu_constant=nu_constant(spec, T, mu))


def a_star(spec: ModelSpec, a, m):
    """Minimal time between the last two jumps reaching (a, m)."""
    jm, lam = spec.jump, spec.lam
    return (math.log(jm.gamma0) - np.log(jm.gamma_inv(np.exp(lam * a) * m))) / lam


def psi(spec: ModelSpec, T, a, m, ap):
    jm, lam = spec.jump, spec.lam
    inner = jm.gamma_inv(np.exp(lam * a) * m)
    return np.exp(lam * (T - a - ap)) * jm.gamma_inv(np.exp(lam * ap) * inner)


def psi_prime(spec: ModelSpec, T, a, m, ap):
    jm, lam = spec.jump, spec.lam
    inner = jm.gamma_inv(np.exp(lam * a) * m)
    arg = np.exp(lam * ap) * inner
    return lam * np.exp(lam * (T - a - ap)) * (jm.gamma_inv_prime(arg) * arg - jm.gamma_inv(arg))


@dataclass
class ProbeResult:
    a0: float
    m0: float
    included: bool
    min_density: float
    ratio: float


@dataclass
class DoeblinReport:
    window: DoeblinWindow
    probes: list
    min_density: float
    ratio: float
    all_positive: bool
    n_cells: int


def rectangle_cells(grid: GridSpec, window: DoeblinWindow):
    """Masks of age and memory cells overlapping [0, a_bar] x [m_lower, m_upper]."""
    ea, em = grid.a_edges, grid.m_edges
    sel_a = ea[:-1] < window.a_bar
    sel_m = (em[1:] > window.m_lower) & (em[:-1] < window.m_upper)
    if not sel_a.any() or not sel_m.any():
        raise ValueError("window rectangle lies outside the grid")
    return sel_a, sel_m


def doeblin_empirical(spec: ModelSpec, window: DoeblinWindow, x_tilde: float = 0.0,
                      probes: int = 25, grid: GridSpec | None = None, dt=None,
                      extra_outside: bool = True) -> DoeblinReport:
    """Minimum density on the window rectangle after time T from point masses."""
    if grid is None:
        fr = spec.firing
        grid = GridSpec(fr.delta_abs + 10.0 / fr.sigma, 800, 0.0, spec.m_max, 200)
    side = max(1, int(round(math.sqrt(probes))))
    pts = []
    for i in range(side):
        for j in range(side):
            a0 = grid.a_max * (i + 0.5) / side
            m0 = min(window.R, grid.m_max) * (j + 0.5) / side
            pts.append((a0, m0, True))
    if extra_outside and window.R * 1.5 < grid.m_max:
        pts.append((grid.a_max * 0.1, 0.5 * (window.R + grid.m_max), False))
    sel_a, sel_m = rectangle_cells(grid, window)
    n_cells = int(sel_a.sum() * sel_m.sum())
    results = []
    for a0, m0, inc in pts:
        u0 = dirac_cell(grid, a0, m0)
        _, fin = run_frozen(spec, x_tilde, u0, window.T, dt, record_stride=10 ** 9)
        mn = float(fin.values[np.ix_(sel_a, sel_m)].min())
        results.append(ProbeResult(a0, m0, inc, mn, mn / window.nu_constant))
    inside = [r for r in results if r.included]
    mn = min(r.min_density for r in inside)
    return DoeblinReport(window=window, probes=results, min_density=mn,
                         ratio=mn / window.nu_constant,
                         all_positive=all(r.min_density > 0 for r in inside), n_cells=n_cells)


@dataclass
class RateFit:
    rate: float
    prefactor: float
    r_squared: float
    window: tuple
    degenerate: bool = False
    times: np.ndarray = field(default=None, repr=False)
    distance: np.ndarray = field(default=None, repr=False)


def fit_decay(t, d, transient: float = 0.2, floor: float = 1e-12) -> RateFit:
    """Least-squares fit of log d(t) = log K - rate t after the transient."""
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    t0 = t[0] + transient * (t[-1] - t[0])
    keep = t >= t0
    above = d > floor
    # truncate at the first time the distance reaches the floor
    if not above.all():
        first = int(np.argmin(above))
        keep &= np.arange(t.size) < first
    if keep.sum() < 3:
        return RateFit(math.nan, math.nan, math.nan, (t0, t0), True, t, d)
    tt, ld = t[keep], np.log(d[keep])
    slope, icpt = np.polyfit(tt, ld, 1)
    pred = icpt + slope * tt
    ss_res = float(np.sum((ld - pred) ** 2))
    ss_tot = float(np.sum((ld - ld.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return RateFit(float(-slope), float(math.exp(icpt)), r2, (float(tt[0]), float(tt[-1])),
                   False, t, d)


def harris_rate(spec: ModelSpec, x_tilde: float, u0: DensityGrid, v0: DensityGrid,
                t_end: float, dt=None, transient: float = 0.2, floor: float = 1e-12) -> RateFit:
    """Decay rate of ||S_t u0 - S_t v0|| in the weighted L1 norm."""
    for name, d in (("u0", u0), ("v0", v0)):
        if abs(d.mass - 1) > 1e-9:
            raise ValueError(f"{name} must have mass 1")
    grid = u0.grid
    check_grid(spec, grid)
    dt, n = _resolve_dt(grid, t_end, dt)
    st = Stepper(spec, grid, dt)
    f, surv = st.rate(x_tilde)
    A, B = u0.masses.copy(), v0.masses.copy()
    W = grid.weight
    ts = np.arange(n + 1) * dt
    dist = np.empty(n + 1)
    dist[0] = float(np.sum(W * np.abs(A - B)))
    for k in range(n):
        st.step(A, f, surv)
        st.step(B, f, surv)
        dist[k + 1] = float(np.sum(W * np.abs(A - B)))
    return fit_decay(ts, dist, transient, floor)


def lyapunov_bound(spec: ModelSpec, w0: float, t):
    alpha, b = lyapunov_constants(spec)
    t = np.asarray(t, dtype=float)
    return w0 * np.exp(-alpha * t) + b / alpha * (1.0 - np.exp(-alpha * t))


def lyapunov_check(spec: ModelSpec, trace, slack: float = 1e-3):
    """(max excess over the bound, passed) for a trace with weighted norms."""
    bound = lyapunov_bound(spec, trace.weighted_norm[0], trace.times - trace.times[0])
    excess = float(np.max(trace.weighted_norm - bound))
    return excess, excess <= slack


@dataclass
class SweepRow:
    epsilon: float
    label: str
    rate: float
    r_squared: float
    amplitude_ratio: float
    x_inf: float
    x_discrete: float
    stationary_converged: bool
    fit: RateFit = field(repr=False, default=None)
    trace: object = field(repr=False, default=None)


def classify(trace, fit: RateFit, stationary_ok: bool, cap: float):
    x = trace.x_values
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 10 * max(cap, 1e-300):
        return "diverged", math.nan
    third = x[x.size * 2 // 3:]
    peak = float(np.max(np.abs(x)))
    ratio = float(np.ptp(third) / peak) if peak > 0 else 0.0
    if ratio >= 0.5:
        return "oscillating", ratio
    if not stationary_ok:
        return "unresolved", ratio
    if not fit.degenerate and fit.rate > 0 and fit.r_squared > 0.9:
        return "decaying", ratio
    return "unresolved", ratio


def weak_coupling_experiment(spec: ModelSpec, epsilons, u0: DensityGrid, t_end: float,
                             dt=None, transient: float = 0.2, floor: float = 1e-11,
                             stationary_kw=None):
    """Per-epsilon nonlinear runs, distance to the stationary state and a label.

    The reference state is the stationary solution from the boundary-density
    solver, polished by running the discrete nonlinear scheme from its lift so
    that the distance is measured against the fixed point of the same
    discretisation (otherwise it would plateau at the discretisation error).
    """
    rows = []
    cap = spec.kernel.h_bar_sup * spec.firing.f_max
    grid = u0.grid
    for eps in epsilons:
        s = spec.with_epsilon(eps)
        stat = solve_stationary(s, lift=False, **(stationary_kw or {}))
        ok = stat.converged
        trace, _ = run_nonlinear(s, u0, t_end, dt)
        ref_rho = lift_to_density(s, stat.u, eps * stat.x_inf, grid)
        ref_x = stat.x_inf
        ptrace, pfin = run_nonlinear(s, ref_rho, t_end, dt, x0=ref_x)
        px = ptrace.x_values
        tail = px[int(px.size * 0.9):]
        polished = bool(np.ptp(tail) <= 1e-9 * max(1.0, abs(tail[-1])))
        if polished:
            ref_rho, ref_x = pfin.normalized(), float(px[-1])
        dist = _distance_series(s, u0, ref_rho, ref_x, t_end, dt)
        fit = fit_decay(trace.times, dist, transient, floor)
        label, ratio = classify(trace, fit, ok, cap)
        rows.append(SweepRow(eps, label, fit.rate, fit.r_squared, ratio, stat.x_inf, ref_x,
                             ok, fit, trace))
    return rows


def _distance_series(spec, u0, ref_rho, ref_x, t_end, dt):
    """d(t) = ||rho_t - rho_ref||_w + |x_t - x_ref| along the nonlinear run."""
    grid = u0.grid
    dt, n = _resolve_dt(grid, t_end, dt)
    st = Stepper(spec, grid, dt)
    M = u0.masses.copy()
    R = ref_rho.masses
    W = grid.weight
    x = 0.0
    decay, amp = spec.kernel.step_factors(dt)
    out = np.empty(n + 1)
    for k in range(n + 1):
        out[k] = float(np.sum(W * np.abs(M - R))) + abs(x - ref_x)
        if k == n:
            break
        f, surv = st.rate(spec.epsilon * x)
        col, _, _ = st.step(M, f, surv)
        x = x * decay + amp * float(st.kappa @ col)
    return out
