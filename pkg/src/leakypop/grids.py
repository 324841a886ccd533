"""Finite-volume grids on (age, memory), densities and time traces."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class GridSpec:
    a_max: float
    n_a: int
    m_min: float
    m_max: float
    n_m: int
    spacing: str = "uniform"  # or "geometric"

    def __post_init__(self):
        if self.n_a < 4 or self.n_m < 4:
            raise ValueError("grid: n_a and n_m must be >= 4")
        if not self.a_max > 0:
            raise ValueError("grid: a_max must be > 0")
        if not (0 <= self.m_min < self.m_max):
            raise ValueError("grid: need 0 <= m_min < m_max")
        if self.spacing not in ("uniform", "geometric"):
            raise ValueError(f"grid: unknown spacing {self.spacing!r}")
        if self.spacing == "geometric" and self.m_min <= 0:
            raise ValueError("grid: geometric spacing needs m_min > 0")

    @cached_property
    def a_edges(self):
        return np.linspace(0.0, self.a_max, self.n_a + 1)

    @cached_property
    def m_edges(self):
        if self.spacing == "geometric":
            e = np.geomspace(self.m_min, self.m_max, self.n_m + 1)
        else:
            e = np.linspace(self.m_min, self.m_max, self.n_m + 1)
        e[0], e[-1] = self.m_min, self.m_max
        return e

    @property
    def da(self) -> float:
        return self.a_max / self.n_a

    @cached_property
    def dm(self):
        return np.diff(self.m_edges)

    @cached_property
    def a_centers(self):
        e = self.a_edges
        return 0.5 * (e[1:] + e[:-1])

    @cached_property
    def m_centers(self):
        e = self.m_edges
        return 0.5 * (e[1:] + e[:-1])

    @cached_property
    def areas(self):
        return np.outer(np.full(self.n_a, self.da), self.dm)

    @cached_property
    def weight(self):
        """Lyapunov weight 1 + m at cell centres, broadcast over age."""
        return np.broadcast_to(1.0 + self.m_centers, (self.n_a, self.n_m))

    def locate(self, a, m):
        """Cell indices (ia, im) of points; -1 when outside the window."""
        a = np.asarray(a, dtype=float)
        m = np.asarray(m, dtype=float)
        ia = np.floor(a / self.da).astype(np.int64)
        im = np.searchsorted(self.m_edges, m, side="right") - 1
        inside = (a >= 0) & (a < self.a_max) & (m >= self.m_min) & (m <= self.m_max)
        im = np.minimum(im, self.n_m - 1)
        ia = np.where(inside, ia, -1)
        im = np.where(inside, im, -1)
        return ia, im


@dataclass(frozen=True, eq=False)
class DensityGrid:
    grid: GridSpec
    values: np.ndarray  # cell-averaged density, shape (n_a, n_m)
    overflow_mass: float = 0.0  # mass lumped into the top memory cell so far (already in mass)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_a, self.grid.n_m):
            raise ValueError(f"density shape {v.shape} does not match grid")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_masses(cls, grid: GridSpec, masses, overflow_mass: float = 0.0):
        return cls(grid, np.asarray(masses) / grid.areas, overflow_mass)

    @cached_property
    def masses(self):
        return self.values * self.grid.areas

    @cached_property
    def mass(self) -> float:
        return float(self.masses.sum())

    def weighted_norm(self) -> float:
        return float(np.sum(self.grid.weight * self.masses))

    def age_marginal(self):
        """Density in age (integrated over memory)."""
        return self.masses.sum(axis=1) / self.grid.da

    def memory_marginal(self):
        return self.masses.sum(axis=0) / self.grid.dm

    def l1_distance(self, other: "DensityGrid") -> float:
        return float(np.sum(np.abs(self.masses - other.masses)))

    def weighted_distance(self, other: "DensityGrid") -> float:
        return float(np.sum(self.grid.weight * np.abs(self.masses - other.masses)))

    def normalized(self) -> "DensityGrid":
        return DensityGrid(self.grid, self.values / self.mass, self.overflow_mass)


def gaussian_lognormal(grid: GridSpec, a_mean=1.0, a_std=0.5, m_median=0.5,
                       m_sigma=0.5, m_cap=None) -> DensityGrid:
    """Truncated Gaussian in age times log-normal in memory, mass 1 on the grid.

    Cell masses are exact CDF differences, so the datum is well resolved even
    on coarse grids. m_cap truncates the memory factor (e.g. 1 for depression).
    """
    ea = grid.a_edges
    pa = np.diff(stats.norm.cdf(ea, loc=a_mean, scale=a_std))
    em = grid.m_edges.copy()
    if m_cap is not None:
        em = np.minimum(em, m_cap)
    pm = np.diff(stats.lognorm.cdf(em, s=m_sigma, scale=m_median))
    masses = np.outer(pa, pm)
    total = masses.sum()
    if not total > 0:
        raise ValueError("initial datum has no mass on the grid")
    return DensityGrid.from_masses(grid, masses / total)


def dirac_cell(grid: GridSpec, a0: float, m0: float) -> DensityGrid:
    """All mass in the cell containing (a0, m0)."""
    ia, im = grid.locate(a0, m0)
    if ia < 0 or im < 0:
        raise ValueError(f"point ({a0}, {m0}) lies outside the grid")
    masses = np.zeros((grid.n_a, grid.n_m))
    masses[int(ia), int(im)] = 1.0
    return DensityGrid.from_masses(grid, masses)


def tail_age_cutoff(sigma: float, delta_abs: float, tail_tol: float) -> float:
    """Age beyond which the survival is below tail_tol when f >= sigma."""
    if sigma <= 0:
        return math.inf
    return delta_abs + math.log(1.0 / tail_tol) / sigma


@dataclass
class Trace:
    times: np.ndarray
    x_values: np.ndarray
    pop_rate: np.ndarray
    mass_in_window: np.ndarray
    weighted_norm: np.ndarray
    raster: list = field(default_factory=list)  # (neuron_id, spike_time)
    snapshots: dict = field(default_factory=dict)  # time -> DensityGrid

    def __post_init__(self):
        n = len(self.times)
        for name in ("x_values", "pop_rate", "mass_in_window", "weighted_norm"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trace: {name} length differs from times")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trace: times must be strictly increasing")

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        return cls(z, z.copy(), z.copy(), z.copy(), z.copy())


class TraceRecorder:
    """Accumulates trace rows; converts to a Trace at the end."""

    def __init__(self):
        self.rows = []
        self.raster = []

    def add(self, t, x, rate, mass, wnorm):
        self.rows.append((t, x, rate, mass, wnorm))

    def build(self) -> Trace:
        if not self.rows:
            return Trace.empty()
        arr = np.array(self.rows, dtype=float)
        return Trace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], self.raster)
