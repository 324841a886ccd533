"""Stationary states: boundary density, lift to (a, m), input fixed point.

The boundary density u(m) is the law of the post-spike memory. Its map
Phi_1 is the one-step transition of the embedded spike chain
    y  ->  gamma(y exp(-lam A)),
with A the inter-spike interval started from memory y under frozen input.
The chain is discretised on memory cells (gamma(0), m_max]: each source cell
is sampled at Gauss-Legendre points and the probability of landing in a
target cell is the exact difference of the interval survival function at
the two cell edges, so the discrete operator is column stochastic and
preserves mass to rounding.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .grids import DensityGrid, GridSpec, tail_age_cutoff
from .model import ModelSpec

log = logging.getLogger(__name__)

_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)
_GL4_T = 0.5 * (_GL4_X + 1.0)
_GL4_W = 0.5 * _GL4_W


class ConvergenceError(RuntimeError):
    pass


def _hermite_basis(t):
    t2, t3 = t * t, t * t * t
    return 2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2


_HB4 = _hermite_basis(_GL4_T)


@dataclass(frozen=True, eq=False)
class BoundaryDensity:
    """Piecewise-constant density on memory cells."""
    edges: np.ndarray
    values: np.ndarray

    @property
    def m_nodes(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def u_values(self):
        return self.values

    @property
    def weights(self):
        return np.diff(self.edges)

    @property
    def masses(self):
        return self.values * self.weights

    @property
    def mass(self) -> float:
        return float(self.masses.sum())

    def first_moment(self) -> float:
        """int u(m) m dm, exact for the piecewise-constant density."""
        e = self.edges
        return float(np.sum(self.values * 0.5 * (e[1:] ** 2 - e[:-1] ** 2)))

    def cumulative(self, y):
        """U(y) = int_{edges[0]}^{y} u."""
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        return np.interp(y, self.edges, cum, left=0.0, right=cum[-1])

    def normalized(self) -> "BoundaryDensity":
        return BoundaryDensity(self.edges, self.values / self.mass)

    @classmethod
    def from_masses(cls, edges, masses):
        edges = np.asarray(edges, dtype=float)
        return cls(edges, np.asarray(masses, dtype=float) / np.diff(edges))


def boundary_edges(spec: ModelSpec, n_cells: int = 400, spacing: str = "uniform",
                   m_max: float | None = None):
    """Cell edges on (gamma(0), m_max]."""
    lo = spec.jump.gamma0
    hi = spec.m_max if m_max is None else m_max
    if not hi > lo:
        raise ValueError(f"memory truncation {hi:g} must exceed gamma(0)={lo:g}")
    if spacing == "geometric":
        d = np.geomspace((hi - lo) * 1e-6, hi - lo, n_cells)
        e = lo + np.concatenate([[0.0], d])
    else:
        e = np.linspace(lo, hi, n_cells + 1)
    e[0], e[-1] = lo, hi
    return e


def point_mass(edges, m0=None) -> BoundaryDensity:
    """Unit mass in one cell (the middle one by default)."""
    n = len(edges) - 1
    j = n // 2 if m0 is None else int(np.clip(np.searchsorted(edges, m0) - 1, 0, n - 1))
    masses = np.zeros(n)
    masses[j] = 1.0
    return BoundaryDensity.from_masses(edges, masses)


class SpikeChain:
    """Discretised Phi_1 at frozen input x_tilde on the given memory cells.

    Attributes
    ----------
    P : (n, n) column-stochastic matrix acting on cell masses.
    mean_isi : expected inter-spike interval per source cell.
    laplace : E[exp(-lam A)] per source cell.
    mean_pre : E[y exp(-lam A)], the expected pre-spike memory, per cell.
    tail : probability of landing above m_max per source cell (lumped into
           the top cell).
    """

    def __init__(self, spec: ModelSpec, x_tilde: float, edges, n_sub: int = 3,
                 h: float | None = None, f_cut: float = 40.0):
        fr = spec.firing
        if fr.sigma <= 0:
            raise ValueError("rate floor sigma must be > 0 for stationary states")
        self.spec, self.x_tilde = spec, float(x_tilde)
        self.edges = np.asarray(edges, dtype=float)
        self.n = self.edges.size - 1
        self.lam = spec.lam
        self.delta = fr.delta_abs
        self.h = h if h is not None else min(0.02, 0.2 / max(fr.f_max, 1e-12))
        self.f_cut = f_cut
        gx, gw = np.polynomial.legendre.leggauss(n_sub)
        self._sub_t = 0.5 * (gx + 1.0)
        self._sub_w = 0.5 * gw
        self.n_sub = n_sub
        with np.errstate(divide="ignore"):
            self._log_z = np.log(np.maximum(spec.jump.gamma_inv(self.edges), 0.0))
        self._log_z[0] = -np.inf
        self._build()

    # survival tables along characteristics --------------------------------
    def _tables(self, ys):
        """Node values of F(a) = int_0^a f and f along paths from memories ys."""
        sp, fr, lam, h, x = self.spec, self.spec.firing, self.lam, self.h, self.x_tilde
        ys = np.asarray(ys, dtype=float)
        Fs, fs = [np.zeros((ys.size, 1))], []
        a0 = self.delta
        fs.append(fr.evaluate(a0, ys * math.exp(-lam * a0), x)[:, None])
        F0 = np.zeros(ys.size)
        B = 256
        a_hard = tail_age_cutoff(fr.sigma, self.delta, math.exp(-self.f_cut)) + 10 * h
        while True:
            left = a0 + h * np.arange(B)
            s = left[:, None] + h * _GL4_T[None, :]
            mem = ys[:, None, None] * np.exp(-lam * s)[None]
            fv = fr.evaluate(s[None], mem, x)
            inc = h * np.tensordot(fv, _GL4_W, axes=([2], [0]))
            F = F0[:, None] + np.cumsum(inc, axis=1)
            right = left + h
            fs.append(fr.evaluate(right[None], ys[:, None] * np.exp(-lam * right)[None], x))
            Fs.append(F)
            F0 = F[:, -1]
            a0 += B * h
            if F0.min() >= self.f_cut or a0 > a_hard:
                break
        return np.concatenate(Fs, axis=1), np.concatenate(fs, axis=1)

    def _survival(self, Fn, fn, A):
        """exp(-F(A)) by cubic Hermite interpolation; A shape (rows, q)."""
        h, d = self.h, self.delta
        K = Fn.shape[1] - 1
        pos = (A - d) / h
        with np.errstate(invalid="ignore"):
            k = np.clip(np.floor(np.nan_to_num(pos, posinf=K, neginf=-1)), 0, K - 1).astype(np.int64)
        t = np.clip(np.nan_to_num(pos, posinf=K, neginf=0.0) - k, 0.0, 1.0)
        rows = np.arange(Fn.shape[0])[:, None] if Fn.shape[0] > 1 else np.zeros((1, 1), dtype=np.int64)
        F0, F1 = Fn[rows, k], Fn[rows, k + 1]
        f0, f1 = fn[rows, k], fn[rows, k + 1]
        b = _hermite_basis(t)
        F = b[0] * F0 + b[1] * h * f0 + b[2] * F1 + b[3] * h * f1
        S = np.exp(-F)
        S = np.where(A <= d, 1.0, S)
        S = np.where(pos >= K, 0.0, S)
        return S

    def _moments(self, Fn, fn):
        """(E[A], E[exp(-lam A)]) for each table row."""
        h, d, lam = self.h, self.delta, self.lam
        F0, F1, f0, f1 = Fn[:, :-1], Fn[:, 1:], fn[:, :-1], fn[:, 1:]
        Fq = (F0[..., None] * _HB4[0] + h * f0[..., None] * _HB4[1]
              + F1[..., None] * _HB4[2] + h * f1[..., None] * _HB4[3])
        K = F0.shape[1]
        s = d + h * (np.arange(K)[:, None] + _GL4_T[None, :])
        Sq = np.exp(-Fq)
        isi = d + h * np.sum(Sq * _GL4_W, axis=(1, 2))
        lap = math.exp(-lam * d) - lam * h * np.sum(Sq * np.exp(-lam * s) * _GL4_W, axis=(1, 2))
        return isi, lap

    def _build(self):
        n, ns = self.n, self.n_sub
        e = self.edges
        width = np.diff(e)
        m_dep = self.spec.firing.depends_on_m
        P = np.zeros((n, n))
        isi = np.zeros(n)
        lap = np.zeros(n)
        pre = np.zeros(n)
        tail = np.zeros(n)
        if not m_dep:
            Fn1, fn1 = self._tables(np.array([1.0]))
            i1, l1 = self._moments(Fn1, fn1)
        chunk = max(1, 512 // ns)
        for c0 in range(0, n, chunk):
            c1 = min(n, c0 + chunk)
            ys = (e[c0:c1, None] + width[c0:c1, None] * self._sub_t[None, :]).ravel()
            if m_dep:
                Fn, fn = self._tables(ys)
                si, sl = self._moments(Fn, fn)
            else:
                Fn, fn = Fn1, fn1
                si, sl = np.full(ys.size, i1[0]), np.full(ys.size, l1[0])
            with np.errstate(invalid="ignore"):
                A = (np.log(ys)[:, None] - self._log_z[None, :]) / self.lam
            S = self._survival(Fn, fn, A)
            S = np.maximum.accumulate(S, axis=1)
            prob = np.diff(S, axis=1)
            over = 1.0 - S[:, -1]
            prob[:, -1] += over
            w = self._sub_w
            m = c1 - c0
            P[:, c0:c1] = np.einsum("jqi,q->ij", prob.reshape(m, ns, n), w)
            isi[c0:c1] = si.reshape(m, ns) @ w
            lap[c0:c1] = sl.reshape(m, ns) @ w
            pre[c0:c1] = (ys * sl).reshape(m, ns) @ w
            tail[c0:c1] = over.reshape(m, ns) @ w
        self.P, self.mean_isi, self.laplace, self.mean_pre, self.tail = P, isi, lap, pre, tail

    # operations ------------------------------------------------------------
    def apply(self, u: BoundaryDensity) -> BoundaryDensity:
        return BoundaryDensity.from_masses(self.edges, self.P @ u.masses)

    def stationary(self, u0: BoundaryDensity | None = None, tol: float = 1e-13,
                   max_iter: int = 200000):
        """Power iteration on cell masses. Returns (u, iterations, residual)."""
        p = (point_mass(self.edges) if u0 is None else u0).masses
        p = p / p.sum()
        P = self.P
        res = math.inf
        for it in range(1, max_iter + 1):
            q = P @ p
            q /= q.sum()
            res = float(np.abs(q - p).sum())
            p = q
            if res < tol:
                return BoundaryDensity.from_masses(self.edges, p), it, res
            if it % 64 == 0 and self.n <= 1200:
                # squaring keeps this a power method but takes larger strides
                P = P @ P
        raise ConvergenceError(f"Phi_1 power iteration stalled at residual {res:.3g}")

    def firing_rate(self, u: BoundaryDensity) -> float:
        p = u.masses / u.mass
        return 1.0 / float(p @ self.mean_isi)

    def upsilon_value(self, u: BoundaryDensity) -> float:
        """int int h_bar f rho_inf for the stationary density lifted from u."""
        ker = self.spec.kernel
        p = u.masses / u.mass
        rate = 1.0 / float(p @ self.mean_isi)
        kappa = 1.0 - float(p @ self.mean_pre) if ker.kind == "depression" else 1.0
        return ker.integral * rate * kappa


def phi1_apply(spec: ModelSpec, u: BoundaryDensity, x_tilde: float, **kw) -> BoundaryDensity:
    """Phi_1(u, x_tilde) on the cells of u."""
    return SpikeChain(spec, x_tilde, u.edges, **kw).apply(u)


def _path_hazard(spec: ModelSpec, a, y, x_tilde, panels=24, order=6):
    """int_0^a f(s, y exp(-lam s), x) ds for arrays a, y (same shape)."""
    fr = spec.firing
    d = fr.delta_abs
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    length = np.maximum(a - d, 0.0)
    gx, gw = np.polynomial.legendre.leggauss(order)
    t = (np.arange(panels)[:, None] + 0.5 * (gx[None, :] + 1.0)).ravel() / panels
    w = np.tile(0.5 * gw, panels) / panels
    s = d + length[..., None] * t
    fv = fr.evaluate(s, y[..., None] * np.exp(-spec.lam * s), x_tilde)
    return length * (fv @ w)


def lift_to_density(spec: ModelSpec, u: BoundaryDensity, x_tilde: float, grid: GridSpec,
                    return_defect: bool = False):
    """rho(a, m) = u(e^{lam a} m) exp(lam a - int_0^a f) on grid cells, mass 1.

    The memory factor is averaged exactly over each cell through the
    cumulative of the piecewise-constant u; the survival is evaluated on the
    characteristic through the cell centre.
    """
    fr = spec.firing
    if fr.sigma <= 0:
        raise ValueError("rate floor sigma must be > 0: the stationary lift is not integrable")
    lam = spec.lam
    a = grid.a_centers[:, None]
    grow = np.exp(lam * a)
    mlo, mhi = grid.m_edges[:-1][None, :], grid.m_edges[1:][None, :]
    umass = u.cumulative(grow * mhi) - u.cumulative(grow * mlo)
    y = grow * grid.m_centers[None, :]
    surv = np.exp(-_path_hazard(spec, np.broadcast_to(a, y.shape), y, x_tilde))
    values = surv * umass / (grid.dm[None, :] * u.mass)
    dens = DensityGrid(grid, values)
    raw = dens.mass
    if not raw > 0:
        raise ValueError("lift has no mass on the grid")
    out = DensityGrid(grid, values / raw)
    if return_defect:
        return out, raw
    return out


@dataclass
class StationaryResult:
    u: BoundaryDensity
    rho_inf: DensityGrid | None
    x_inf: float
    iterations: int
    residuals: dict
    converged: bool = True
    checks: list = field(default_factory=list)
    rate: float = float("nan")
    mass_defect: float = float("nan")
    message: str = ""

    @property
    def all_checks_passed(self) -> bool:
        return all(c["passed"] for it in self.checks for c in it["checks"])


def apriori_checks(spec: ModelSpec, chain: SpikeChain, u: BoundaryDensity, upsilon_x: float,
                   tol: float = 1e-8, beta: float | None = None):
    """Bounds satisfied by Phi_1 and Upsilon, evaluated on one iterate."""
    fr, jm, lam = spec.firing, spec.jump, spec.lam
    v = chain.apply(u)
    norm_u = u.mass
    fmax = fr.f_max
    out = []
    rel = abs(v.mass - norm_u) / norm_u
    out.append(dict(name="mass identity", value=rel, bound=tol, passed=rel <= tol))
    # sup over each cell of |(gamma^-1)'(m)| f_max / (lam gamma^-1(m)) ||u||; the
    # Jacobian factor is 1 for additive jumps and 1/upsilon for depression
    e = u.edges
    z_lo = jm.gamma_inv(e[:-1])
    jac = np.maximum.reduce([jm.gamma_inv_prime(e[:-1]), jm.gamma_inv_prime(e[1:]),
                             jm.gamma_inv_prime(0.5 * (e[1:] + e[:-1]))])
    with np.errstate(divide="ignore"):
        bare = np.where(z_lo > 0, fmax / (lam * z_lo), np.inf) * norm_u
    ratio = float(np.max(v.values / (jac * bare)))
    printed = float(np.max(v.values / bare))
    out.append(dict(name="pointwise bound", value=ratio, bound=1.0 + tol, passed=ratio <= 1.0 + tol,
                    printed_ratio=printed))
    theta = 1.0 - (1.0 - math.exp(-lam)) * math.exp(-fmax)
    m1 = v.first_moment()
    b3 = max(u.first_moment(), jm.gamma0 / (1.0 - theta) * norm_u)
    out.append(dict(name="first moment", value=m1, bound=b3, passed=m1 <= b3 * (1 + tol)))
    fmin = fr.sigma if fr.delta_abs == 0 else 0.0
    if fmin > 0 and jm.gamma0 > 0:
        beta = fmin / (2 * lam) if beta is None else beta
        zc = jm.gamma_inv(v.m_nodes)
        lhs = float(np.sum(v.masses * zc ** (-beta)))
        rhs = fmax / (lam * jm.gamma0 ** beta) * norm_u / (fmin / lam - beta)
        printed = fmax / (lam * jm.gamma0 ** beta) * norm_u * (fmin / lam - beta)
        out.append(dict(name="weighted moment", value=lhs, bound=rhs, passed=lhs <= rhs * (1 + tol),
                        printed_bound=printed))
    else:
        log.info("weighted-moment check skipped: inf f = 0")
    cap = spec.kernel.h_bar_sup * fmax
    out.append(dict(name="upsilon bound", value=upsilon_x, bound=cap, passed=upsilon_x <= cap * (1 + tol)))
    return out


def default_lift_grid(spec: ModelSpec, n_a: int = 200, n_m: int = 100) -> GridSpec:
    fr = spec.firing
    a_max = max(fr.delta_abs + 10.0 / fr.sigma,
                tail_age_cutoff(fr.sigma, fr.delta_abs, spec.tail_tol))
    return GridSpec(a_max, n_a, 0.0, spec.m_max, n_m)


def upsilon(spec: ModelSpec, x: float, n_cells: int = 400, spacing: str = "uniform",
            return_state: bool = False, u0=None, **chain_kw):
    """Upsilon(x): stationary output potential under frozen input eps x."""
    edges = boundary_edges(spec, n_cells, spacing)
    chain = SpikeChain(spec, spec.epsilon * x, edges, **chain_kw)
    u, it, res = chain.stationary(u0)
    val = chain.upsilon_value(u)
    if return_state:
        return val, chain, u, it, res
    return val


def solve_stationary(spec: ModelSpec, tol: float = 1e-10, *, x0: float = 0.0,
                     omega: float = 0.5, max_outer: int = 200, n_cells: int = 400,
                     spacing: str = "uniform", grid: GridSpec | None = None,
                     lift: bool = True, check_tol: float = 1e-8, **chain_kw) -> StationaryResult:
    """Root of Upsilon(x) - x by safeguarded secant steps, Phi_1 solved inside.

    Upsilon maps [0, cap] into itself, so g = Upsilon - x has g(0) >= 0 and
    g(cap) <= 0 and a bracket is maintained throughout. The first step is a
    damped fixed-point step with weight omega; steps leaving the bracket
    fall back to bisection.
    """
    cap = spec.kernel.h_bar_sup * spec.firing.f_max
    x = float(np.clip(x0, 0.0, cap))
    lo, hi = 0.0, cap
    u = None
    checks, ups_res, phi_res = [], [], []
    converged = False
    it = 0
    prev = None
    for it in range(1, max_outer + 1):
        val, chain, u, _, pres = upsilon(spec, x, n_cells, spacing, True, u, **chain_kw)
        phi_res.append(pres)
        checks.append(dict(iteration=it, x=x, checks=apriori_checks(spec, chain, u, val, check_tol)))
        g = val - x
        ups_res.append(abs(g))
        if spec.epsilon == 0:
            x = val
            converged = True
            break
        if abs(g) < tol:
            converged = True
            break
        if g > 0:
            lo = max(lo, x)
        else:
            hi = min(hi, x)
        if prev is None or prev[1] == g:
            nxt = x + omega * g
        else:
            px, pg = prev
            nxt = x - g * (x - px) / (g - pg)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        prev = (x, g)
        x = float(nxt)
        if hi - lo < tol * 1e-3:
            break
    x_inf = x
    x_tilde = spec.epsilon * x_inf
    rho = None
    defect = float("nan")
    if lift:
        g = grid or default_lift_grid(spec)
        rho, raw = lift_to_density(spec, u, x_tilde, g, return_defect=True)
        expected = float((u.masses / u.mass) @ chain.mean_isi)
        defect = raw / expected - 1.0
    res = StationaryResult(u=u, rho_inf=rho, x_inf=x_inf, iterations=it,
                           residuals=dict(phi=np.array(phi_res), upsilon=np.array(ups_res)),
                           converged=converged, checks=checks, rate=chain.firing_rate(u),
                           mass_defect=defect)
    if not converged:
        res.message = f"no convergence after {it} outer iterations, last residual {ups_res[-1]:.3g}"
        log.warning(res.message)
    return res


@dataclass(frozen=True)
class StdClosedForm:
    I: float
    P: float
    X: float
    I_identity: float  # int a f exp(-int f) da
    tail_bound: float


def std_closed_form(spec: ModelSpec, x_tilde: float) -> StdClosedForm:
    """Stationary output potential of the depression model at frozen input."""
    fr, lam = spec.firing, spec.lam
    if spec.jump.kind != "depression":
        raise ValueError("closed form needs the depression jump map")
    if fr.depends_on_m:
        raise ValueError("closed form needs a rate independent of memory")
    if fr.sigma <= 0:
        raise ValueError("rate floor sigma must be > 0")
    d = fr.delta_abs
    ups = spec.jump.upsilon

    def rhs(a, s):
        f = float(fr.evaluate(a, 0.5, x_tilde))
        S = math.exp(-s[0])
        return [f, S, math.exp(-lam * a) * f * S, a * f * S]

    a_cut = tail_age_cutoff(fr.sigma, d, 1e-18)
    sol = integrate.solve_ivp(rhs, (d, a_cut), [0.0, 0.0, 0.0, 0.0], method="DOP853",
                              rtol=1e-13, atol=1e-15)
    if not sol.success:
        raise ConvergenceError(f"quadrature failed: {sol.message}")
    F, I_rest, P, Ia = sol.y[:, -1]
    S_end = math.exp(-F)
    tail = S_end / fr.sigma
    I = d + I_rest
    X = spec.kernel.integral * (1.0 / I) * (1.0 - P) / (1.0 - ups * P)
    return StdClosedForm(I=I, P=P, X=X, I_identity=Ia, tail_bound=tail)
