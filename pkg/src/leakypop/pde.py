"""Finite-volume solver for the age / leaky-memory population equation.

One step is split symmetrically: conservative upwind transport in memory
(speed -lam m, sub-cycled to satisfy its own CFL bound) over dt / 2, the
firing sink exp(-f dt), upwind transport in age (speed 1, the last cell
holding all ages >= a_max), re-injection of the fired mass at age 0 on the
image cells gamma([m_lo, m_hi]), and a second memory half step.
"""
from __future__ import annotations

import logging
import math

import numpy as np

from .grids import DensityGrid, GridSpec, Trace, TraceRecorder
from .model import JumpMap, ModelSpec

log = logging.getLogger(__name__)


class CFLError(ValueError):
    pass


class PositivityError(RuntimeError):
    pass


def reinjection_matrix(jump: JumpMap, grid: GridSpec):
    """Overlap-proportional push-forward of memory cells through gamma.

    Returns (R, above) with R[k, j] the fraction of source cell j landing in
    target cell k and above[j] the fraction mapped above m_max. That part is
    lumped into the top cell, so every column of R sums to 1.
    """
    e = grid.m_edges
    lo, hi = jump.gamma(e[:-1]), jump.gamma(e[1:])
    width = hi - lo
    tlo, thi = e[:-1][:, None], e[1:][:, None]
    overlap = np.clip(np.minimum(hi[None, :], thi) - np.maximum(lo[None, :], tlo), 0.0, None)
    R = overlap / width[None, :]
    above = np.clip(hi - np.maximum(lo, e[-1]), 0.0, None) / width
    below = np.clip(np.minimum(hi, e[0]) - lo, 0.0, None) / width
    if np.any(below > 0):
        # images below m_min land in the bottom cell (closed lower boundary)
        R[0] += below
    R[-1] += above
    return R, above


def check_grid(spec: ModelSpec, grid: GridSpec):
    """Tail criterion a_max >= delta_abs + 10 / sigma and memory coverage."""
    fr = spec.firing
    sigma = fr.sigma
    if sigma <= 0:
        raise ValueError("grid check: rate floor sigma must be > 0 for the age tail criterion")
    need = fr.delta_abs + 10.0 / sigma
    if grid.a_max < need:
        raise ValueError(f"grid.a_max={grid.a_max:g} below delta_abs + 10/sigma = {need:g}")
    tail = math.exp(-sigma * (grid.a_max - fr.delta_abs))
    if tail > spec.tail_tol:
        # not lost: ages beyond a_max are lumped into the last cell
        log.info("age tail exp(-sigma (a_max - delta_abs)) = %.3g exceeds tail_tol %.3g",
                 tail, spec.tail_tol)
    G = spec.jump.compact_bound
    if math.isfinite(G) and grid.m_max > G * (1 + 1e-12):
        raise ValueError(f"grid.m_max={grid.m_max:g} exceeds the compact memory bound {G:g}")


def max_stable_dt(spec: ModelSpec, grid: GridSpec) -> float:
    """Largest admissible step: dt <= da (memory transport is sub-cycled)."""
    return grid.da


class Stepper:
    """Precomputed operators for repeated steps on one grid."""

    def __init__(self, spec: ModelSpec, grid: GridSpec, dt: float):
        if not dt > 0:
            raise CFLError("dt must be > 0")
        if dt > grid.da * (1 + 1e-12):
            raise CFLError(f"CFL violated: dt={dt:g} > da={grid.da:g}")
        self.spec, self.grid, self.dt = spec, grid, float(dt)
        self.nu = min(1.0, dt / grid.da)
        # memory transport: fraction of a cell leaving through its lower face
        lo = grid.m_edges[:-1]
        rate = spec.lam * lo / grid.dm
        rate[0] = 0.0  # closed at m_min
        peak = rate.max()
        # two half steps of dt / 2 around the firing and re-injection stage
        self.n_sub = max(1, math.ceil(0.5 * dt * peak * (1 - 1e-12))) if peak > 0 else 1
        self.m_frac = rate * 0.5 * dt / self.n_sub
        self.R, self.R_above = reinjection_matrix(spec.jump, grid)
        self.kappa = spec.kernel.kappa(grid.m_centers)
        A, M = np.meshgrid(grid.a_centers, grid.m_centers, indexing="ij")
        self._A, self._M = A, M
        self._frozen_key = None
        self._frozen = None

    def rate(self, xeff: float):
        fr = self.spec.firing
        if not fr.depends_on_x:
            xeff = 0.0
        if self._frozen_key == xeff:
            return self._frozen
        f = fr.evaluate(self._A, self._M, xeff)
        surv = np.exp(-f * self.dt)
        self._frozen_key, self._frozen = xeff, (f, surv)
        return f, surv

    def _decay_memory(self, M):
        if self.m_frac.any():
            frac = self.m_frac
            for _ in range(self.n_sub):
                down = M * frac
                M -= down
                M[:, :-1] += down[:, 1:]

    def step(self, M, f, surv):
        """Advance cell masses M in place. Returns (removed column, overflow, injected).

        Memory decays for dt / 2 on either side of the firing stage, so fired
        mass jumps from its mid-step memory and the new mass then decays for
        the remaining half step. The sink uses f at the cell centres: for
        dt = da the mass of age cell i traverses ages [i da, (i + 1) da], so
        this is the midpoint rule in age.
        """
        self._decay_memory(M)
        removed = M * -np.expm1(-f * self.dt) if surv is None else M * (1.0 - surv)
        M -= removed
        col = removed.sum(axis=0)
        moved = self.nu * M
        moved[-1] = 0.0  # ages beyond a_max are lumped into the last cell
        M -= moved
        M[1:] += moved[:-1]
        inj = self.R @ col
        M[0] += inj
        self._decay_memory(M)
        overflow = float(self.R_above @ col)
        if M.min() < -1e-14 * max(1.0, M.max()):
            raise PositivityError("negative density after step")
        return col, overflow, inj


def pde_step(spec: ModelSpec, rho: DensityGrid, x: float, dt: float):
    """One split step at input potential x (scaled by epsilon inside).

    Returns (new density, boundary density rho(0, m), N = int f rho).
    """
    st = Stepper(spec, rho.grid, dt)
    f, surv = st.rate(spec.epsilon * x)
    M = rho.masses.copy()
    rate_integral = float(np.sum(f * M))
    _, over, inj = st.step(M, f, surv)
    boundary = inj / (dt * rho.grid.dm)
    return DensityGrid.from_masses(rho.grid, M, rho.overflow_mass + over), boundary, rate_integral


def _resolve_dt(grid: GridSpec, t_end: float, dt):
    dmax = grid.da
    if dt is None:
        dt = dmax
    if dt > dmax * (1 + 1e-12):
        raise CFLError(f"CFL violated: dt={dt:g} > da={dmax:g}")
    n = max(1, math.ceil(t_end / dt - 1e-9))
    return t_end / n, n


def _run(spec, u0, t_end, dt, frozen_x, x0, stride, snapshot_times, check=True):
    grid = u0.grid
    if check:
        check_grid(spec, grid)
    dt, n = _resolve_dt(grid, t_end, dt)
    st = Stepper(spec, grid, dt)
    M = u0.masses.copy()
    over = u0.overflow_mass
    W = grid.weight
    rec = TraceRecorder()
    decay, amp = spec.kernel.step_factors(dt)
    x = float(x0)
    snaps = {}
    snap_steps = {}
    for ts in snapshot_times or ():
        snap_steps.setdefault(min(n, max(0, int(round(ts / dt)))), []).append(ts)
    for k in range(n + 1):
        xeff = frozen_x if frozen_x is not None else spec.epsilon * x
        f, surv = st.rate(xeff)
        if k % stride == 0 or k == n:
            shown = frozen_x if frozen_x is not None else x
            rec.add(k * dt, shown, float(np.sum(f * M)), float(M.sum()), float(np.sum(W * M)))
        if k in snap_steps:
            for ts in snap_steps[k]:
                snaps[ts] = DensityGrid.from_masses(grid, M.copy(), over)
        if k == n:
            break
        col, lk, _ = st.step(M, f, surv)
        over += lk
        if frozen_x is None:
            x = x * decay + amp * float(st.kappa @ col)
    if over > spec.tail_tol:
        log.warning("mass %.3g was lumped into the top memory cell (tail_tol %.3g)",
                    over, spec.tail_tol)
    final = DensityGrid.from_masses(grid, M, over)
    trace = rec.build()
    trace.snapshots = snaps
    return trace, final


def run_nonlinear(spec: ModelSpec, u0: DensityGrid, t_end: float, dt=None, *, x0=0.0,
                  record_stride=1, snapshot_times=None, check=True):
    """Joint evolution of the density and the potential x_t."""
    if abs(u0.mass - 1.0) > 1e-9:
        raise ValueError(f"initial datum must have mass 1 (got {u0.mass:.12g})")
    return _run(spec, u0, t_end, dt, None, x0, record_stride, snapshot_times, check)


def run_frozen(spec: ModelSpec, x_tilde: float, u0: DensityGrid, t_end: float, dt=None, *,
               record_stride=1, snapshot_times=None, check=True):
    """Linear semigroup with the rate input frozen at x_tilde (already scaled)."""
    if abs(u0.mass - 1.0) > 1e-9:
        raise ValueError(f"initial datum must have mass 1 (got {u0.mass:.12g})")
    return _run(spec, u0, t_end, dt, float(x_tilde), 0.0, record_stride, snapshot_times, check)
