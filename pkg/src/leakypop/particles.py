"""Microscopic N-neuron simulation of the age / leaky-memory PDMP.

Explicit time stepping with first-order thinning: during a step of length dt
a neuron fires with probability 1 - exp(-f dt), f taken at the midpoint of
the deterministic flow over the step (age a + dt/2, memory m exp(-lam dt/2)). Uniform variates come from a counter-based hash of (seed, step,
neuron), so the draws do not depend on how neurons are split over threads.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import os

import numba
import numpy as np

from .grids import DensityGrid, GridSpec, Trace, TraceRecorder
from .model import ModelSpec

log = logging.getLogger(__name__)

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

BLOCK = 4096  # fixed partition size for deterministic reductions
THINNING_GUARD = 0.1


@dataclass(frozen=True, eq=False)
class ParticleState:
    ages: np.ndarray
    memories: np.ndarray
    x: float = 0.0
    t: float = 0.0
    seed: int = 0
    counter: int = 0  # number of steps taken, drives the RNG stream

    @property
    def n(self) -> int:
        return self.ages.size

    def copy(self) -> "ParticleState":
        return replace(self, ages=self.ages.copy(), memories=self.memories.copy())


@dataclass(frozen=True)
class RecordConfig:
    stride: int = 1
    raster_neurons: int = 0  # record spikes of neurons 0..k-1


@numba.njit(inline="always")
def _mix64(z):
    # splitmix64 finaliser
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _step_key(seed, counter):
    return _mix64(np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15)
                  + _mix64(np.uint64(counter) + np.uint64(0x632BE59BD9B4E019)))


@numba.njit(cache=True)
def uniforms(seed, counter, n):
    """Counter-based uniforms in (0, 1) for neurons 0..n-1 at one step."""
    key = _step_key(np.uint64(seed), np.uint64(counter))
    out = np.empty(n)
    for i in range(n):
        z = _mix64(key + np.uint64(i) * np.uint64(0xD1B54A32D192ED03))
        out[i] = ((z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
    return out


@numba.njit(parallel=True, cache=True)
def _advance(ages, mems, f, dt, decay, seed, counter, jump_kind, jp0, jkm, jkg,
             depress, spiked, block_sums):
    key = _step_key(seed, counter)
    n = ages.size
    nblocks = block_sums.size
    for b in numba.prange(nblocks):
        lo = b * BLOCK
        hi = min(n, lo + BLOCK)
        acc = 0.0
        for i in range(lo, hi):
            z = _mix64(key + np.uint64(i) * np.uint64(0xD1B54A32D192ED03))
            u = ((z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
            p = -math.expm1(-f[i] * dt)
            m = mems[i] * decay
            if u < p:
                spiked[i] = True
                acc += (1.0 - m) if depress else 1.0
                ages[i] = 0.0
                if jump_kind == 0:
                    m = m + jp0
                elif jump_kind == 1:
                    m = 1.0 - jp0 + jp0 * m
                else:
                    m = m + np.interp(m, jkm, jkg)
            else:
                spiked[i] = False
                ages[i] += dt
            mems[i] = m
        block_sums[b] = acc


class _Engine:
    def __init__(self, spec: ModelSpec, n: int, dt: float):
        fr = spec.firing
        if not dt > 0:
            raise ValueError("dt must be > 0")
        if fr.f_max * dt > THINNING_GUARD * (1 + 1e-12):
            raise ValueError(f"dt={dt:g} too large: f_max*dt must be <= {THINNING_GUARD}")
        if fr.delta_abs < dt:
            log.info("delta_abs=%g < dt=%g: at most one spike per step is assumed",
                     fr.delta_abs, dt)
        jm = spec.jump
        self.spec, self.dt = spec, dt
        self.decay = math.exp(-spec.lam * dt)
        self.half_decay = math.exp(-0.5 * spec.lam * dt)
        self.jump_kind = {"additive": 0, "depression": 1, "custom": 2}[jm.kind]
        self.jp0 = jm.gamma_hat if jm.kind == "additive" else jm.upsilon
        self.jkm = np.asarray(jm.nodes_m if jm.kind == "custom" else (0.0, 1.0))
        self.jkg = np.asarray(jm.nodes_gamma if jm.kind == "custom" else (0.0, 0.0))
        self.depress = spec.kernel.kind == "depression"
        self.spiked = np.zeros(n, dtype=np.bool_)
        self.block_sums = np.zeros(max(1, -(-n // BLOCK)))
        self.kdecay, self.kgain = spec.kernel.step_factors(dt)

    def step(self, ages, mems, x, seed, counter):
        spec = self.spec
        f = spec.firing.evaluate(ages + 0.5 * self.dt, mems * self.half_decay, spec.epsilon * x)
        _advance(ages, mems, np.ascontiguousarray(f, dtype=np.float64), self.dt, self.decay,
                 np.uint64(seed), np.uint64(counter), self.jump_kind, self.jp0,
                 self.jkm, self.jkg, self.depress,
                 self.spiked, self.block_sums)
        total = 0.0
        for v in self.block_sums:  # partition order
            total += v
        n = ages.size
        x_new = x * self.kdecay + self.kgain * total / n
        return x_new, f


def set_threads(threads):
    if threads:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


def step(spec: ModelSpec, state: ParticleState, dt: float) -> ParticleState:
    """One explicit step; returns a new state."""
    eng = _Engine(spec, state.n, dt)
    ages, mems = state.ages.copy(), state.memories.copy()
    x, _ = eng.step(ages, mems, state.x, state.seed, state.counter)
    return ParticleState(ages, mems, x, state.t + dt, state.seed, state.counter + 1)


def run(spec: ModelSpec, initial: ParticleState, t_end: float, dt: float,
        record: RecordConfig = RecordConfig(), grid: GridSpec | None = None):
    """Simulate to t_end. Returns (Trace, final ParticleState).

    Trace rows are at the step ends; pop_rate is the spike count of the
    preceding step over N dt (the first row holds the mean intensity).
    mass_in_window is the fraction of neurons inside `grid` (1 without grid).
    """
    n_steps = max(1, math.ceil(t_end / dt - 1e-9))
    dt = t_end / n_steps
    eng = _Engine(spec, initial.n, dt)
    ages, mems = initial.ages.copy(), initial.memories.copy()
    x, seed, counter = initial.x, initial.seed, initial.counter
    t0 = initial.t
    n = initial.n
    rec = TraceRecorder()
    n_raster = min(record.raster_neurons, n)

    def window_mass():
        if grid is None:
            return 1.0
        inside = (ages < grid.a_max) & (mems >= grid.m_min) & (mems <= grid.m_max)
        return inside.mean()

    f0 = spec.firing.evaluate(ages, mems, spec.epsilon * x)
    rec.add(t0, x, float(f0.mean()), window_mass(), float(np.mean(1.0 + mems)))
    for k in range(n_steps):
        x, _ = eng.step(ages, mems, x, seed, counter)
        counter += 1
        t = t0 + (k + 1) * dt
        if n_raster:
            for i in np.flatnonzero(eng.spiked[:n_raster]):
                rec.raster.append((int(i), t))
        if (k + 1) % record.stride == 0 or k == n_steps - 1:
            rate = np.count_nonzero(eng.spiked) / (n * dt)
            rec.add(t, x, rate, window_mass(), float(np.mean(1.0 + mems)))
    final = ParticleState(ages, mems, x, t0 + n_steps * dt, seed, counter)
    return rec.build(), final


def initial_state(spec: ModelSpec, n: int, seed: int, a_mean=1.0, a_std=0.5,
                  m_median=0.5, m_sigma=0.5) -> ParticleState:
    """Truncated Gaussian ages and log-normal memories (capped to the domain)."""
    rng = np.random.default_rng([seed, 0x5EED])
    ages = np.abs(rng.normal(a_mean, a_std, n))
    mems = rng.lognormal(math.log(m_median), m_sigma, n)
    G = spec.jump.compact_bound
    if math.isfinite(G):
        bad = mems >= G
        while bad.any():
            mems[bad] = rng.lognormal(math.log(m_median), m_sigma, bad.sum())
            bad = mems >= G
    return ParticleState(ages, mems, 0.0, 0.0, int(seed), 0)


def sample_density(rho: DensityGrid, n: int, seed: int) -> ParticleState:
    """Draw N neurons from a density grid (uniform within the chosen cell)."""
    rng = np.random.default_rng([seed, 0xD15C])
    g = rho.grid
    p = rho.masses.ravel() / rho.mass
    idx = rng.choice(p.size, size=n, p=p)
    ia, im = np.divmod(idx, g.n_m)
    ages = g.a_edges[ia] + rng.random(n) * g.da
    lo, hi = g.m_edges[im], g.m_edges[im + 1]
    mems = lo + rng.random(n) * (hi - lo)
    mems = np.where(mems > 0, mems, hi * 0.5)
    return ParticleState(ages, mems, 0.0, 0.0, int(seed), 0)


def empirical_density(state: ParticleState, grid: GridSpec) -> DensityGrid:
    """Histogram estimate: counts / (N cell area)."""
    ia, im = grid.locate(state.ages, state.memories)
    ok = ia >= 0
    counts = np.zeros(grid.n_a * grid.n_m)
    np.add.at(counts, ia[ok] * grid.n_m + im[ok], 1.0)
    masses = counts.reshape(grid.n_a, grid.n_m) / state.n
    return DensityGrid.from_masses(grid, masses)
