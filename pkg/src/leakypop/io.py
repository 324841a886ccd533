"""CSV writers and run manifests.

Floats are written with 17 significant digits so that values round-trip
exactly; rows are in a deterministic order.
"""
from __future__ import annotations

import datetime as _dt
import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grids import DensityGrid, Trace

TRACE_HEADER = ("t", "x", "pop_rate", "mass_in_window", "weighted_norm")
RASTER_HEADER = ("neuron_id", "spike_time")
DENSITY_HEADER = ("a_lo", "a_hi", "m_lo", "m_hi", "density", "mass")
BOUNDARY_HEADER = ("m_lo", "m_hi", "u", "mass")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                if len(row) != len(header):
                    raise ValueError(f"{path}: row has {len(row)} fields, header has {len(header)}")
                fh.write(",".join(_cell(v) for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    return path


def write_trace(path, trace: Trace) -> Path:
    cols = (trace.times, trace.x_values, trace.pop_rate, trace.mass_in_window, trace.weighted_norm)
    return write_csv(path, TRACE_HEADER, zip(*(np.asarray(c, dtype=float) for c in cols)))


def write_raster(path, raster) -> Path:
    return write_csv(path, RASTER_HEADER, ((int(i), float(t)) for i, t in raster))


def write_density(path, rho: DensityGrid) -> Path:
    g = rho.grid
    ea, em = g.a_edges, g.m_edges
    vals, masses = rho.values, rho.masses

    def rows():
        for i in range(g.n_a):
            for j in range(g.n_m):
                yield ea[i], ea[i + 1], em[j], em[j + 1], vals[i, j], masses[i, j]
    return write_csv(path, DENSITY_HEADER, rows())


def write_boundary(path, u) -> Path:
    e = u.edges
    return write_csv(path, BOUNDARY_HEADER,
                     zip(e[:-1], e[1:], np.asarray(u.values, float), np.asarray(u.masses, float)))


def write_report(path, rows, fields=None) -> Path:
    """List of dicts (or dataclasses) to CSV; columns in `fields` or first-row order."""
    rows = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]
    if fields is None:
        fields = list(rows[0]) if rows else []
    return write_csv(path, fields, ([r[k] for k in fields] for r in rows))


def read_csv(path):
    """(header, float array) of a file written by write_csv."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    with path.open() as fh:
        fh.readline()
        body = fh.read()
    if not body.strip():
        return header, np.zeros((0, len(header)))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def versions() -> dict:
    import numba
    import scipy

    from . import __version__
    return {"leakypop": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


@dataclass
class RunManifest:
    config_hash: str
    seed: int | None
    subcommand: str
    parameters: dict
    outputs: list
    threads: int | None = None
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())
    versions: dict = field(default_factory=versions)

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        try:
            path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        except OSError as exc:
            raise OSError(f"{path}: {exc.strerror or exc}") from exc
        return path
