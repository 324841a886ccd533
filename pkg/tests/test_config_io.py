import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leakypop import io
from leakypop.config import (ConfigError, config_hash, parse_config, parse_config_text,
                             serialize_config)
from leakypop.grids import GridSpec, Trace, gaussian_lognormal
from leakypop.model import asrm0_preset
from leakypop.stationary import boundary_edges, point_mass

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
EXPLICIT = """
[model]
lambda = 1
epsilon = 0.5

[firing]
kind = constant
f_max = 1
delta_abs = 0

[jump]
kind = depression
upsilon = 0.5

[kernel]
kind = depression
amplitude = 1
decay = 1
"""


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_round_trip(path):
    cfg = parse_config(path)
    again = parse_config_text(serialize_config(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_depression_reports_compact_memory():
    cfg = parse_config_text(EXPLICIT)
    note = [n for n in cfg.notes if n.startswith("A4")]
    assert note == ["A4 compact memory: satisfied; G=1"]
    assert cfg.spec.m_max == 1.0


def test_unbounded_memory_is_noted_not_rejected():
    cfg = parse_config_text("[model]\npreset = asrm0\n")
    (note,) = [n for n in cfg.notes if n.startswith("A4")]
    assert "not satisfied" in note and "truncated" in note


@pytest.mark.parametrize("text, fragment", [
    ("[model]\npreset = asrm0\n[jump]\ngamma_hat = -1\n", "gamma_hat"),
    ("[model]\npreset = asrm0\n[firing]\nspeed = 3\n", "[firing].speed"),
    ("[model]\npreset = asrm0\n[plots]\ndpi = 100\n", "[plots]"),
    ("[model]\npreset = nope\n", "preset"),
    ("[model]\npreset = asrm0\n[grid]\nn_a = many\n", "[grid].n_a"),
    (EXPLICIT.replace("lambda = 1\n", ""), "[model].lambda"),
    (EXPLICIT.replace("kind = constant\n", ""), "[firing].kind"),
    (EXPLICIT.replace("kind = depression\nupsilon = 0.5",
                      "kind = custom\nnodes_m = 0, 1\nnodes_gamma = 0.5, 1.0"), "gamma'"),
    ("[model]\npreset = asrm0\n[firing]\nsigma_floor = 0\n", "A3(i)"),
])
def test_bad_configs_name_the_offending_key(text, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert fragment in str(err.value)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "absent.ini")


def test_hash_ignores_key_and_section_order():
    a = parse_config_text("[model]\npreset = asrm0\nepsilon = 0.3\n[grid]\nn_a = 50\nn_m = 20\n")
    b = parse_config_text("[grid]\nn_m = 20\nn_a = 50\n[model]\nepsilon = 0.3\npreset = asrm0\n")
    c = parse_config_text("[model]\npreset = asrm0\nepsilon = 0.30000000000000004\n"
                          "[grid]\nn_a = 50\nn_m = 20\n")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)


@given(eps=st.floats(0, 20, allow_nan=False), lam=st.floats(0.05, 5),
       n_a=st.integers(10, 2000), t_end=st.floats(0.1, 1e3),
       epsilons=st.lists(st.floats(0, 10), min_size=1, max_size=4))
def test_round_trip_property(eps, lam, n_a, t_end, epsilons):
    text = (f"[model]\npreset = asrm0\nepsilon = {eps!r}\nlambda = {lam!r}\n"
            f"[grid]\nn_a = {n_a}\n[run]\nt_end = {t_end!r}\n"
            f"[verify]\nepsilons = {', '.join(repr(e) for e in epsilons)}\n")
    cfg = parse_config_text(text)
    again = parse_config_text(serialize_config(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_trace_csv_header_and_empty_trace(tmp_path):
    p = io.write_trace(tmp_path / "t.csv", Trace.empty())
    assert p.read_text() == ",".join(io.TRACE_HEADER) + "\n"
    header, data = io.read_csv(p)
    assert tuple(header) == io.TRACE_HEADER and data.shape == (0, 5)


def test_floats_round_trip_exactly(tmp_path):
    vals = np.array([0.1, 1 / 3, math.pi * 1e-300, 2.0 ** -1074, 1e308, -0.0])
    t = np.arange(vals.size, dtype=float)
    tr = Trace(t, vals, vals, vals, vals)
    _, data = io.read_csv(io.write_trace(tmp_path / "t.csv", tr))
    assert np.array_equal(data[:, 1], vals)


def test_density_csv_mass_column(tmp_path):
    g = GridSpec(5.0, 12, 0.0, 3.0, 7)
    rho = gaussian_lognormal(g)
    header, data = io.read_csv(io.write_density(tmp_path / "d.csv", rho))
    assert tuple(header) == io.DENSITY_HEADER
    assert data.shape == (12 * 7, 6)
    assert abs(data[:, 5].sum() - 1.0) <= 1e-12
    cell = (data[:, 1] - data[:, 0]) * (data[:, 3] - data[:, 2])
    assert np.allclose(data[:, 4] * cell, data[:, 5], rtol=1e-12, atol=1e-300)


def test_boundary_csv(tmp_path):
    spec = asrm0_preset(0.0)
    u = point_mass(boundary_edges(spec, 30))
    header, data = io.read_csv(io.write_boundary(tmp_path / "u.csv", u))
    assert tuple(header) == io.BOUNDARY_HEADER
    assert data.shape == (30, 4) and data[:, 3].sum() == pytest.approx(1.0, abs=1e-12)


def test_report_and_row_length_check(tmp_path):
    p = io.write_report(tmp_path / "r.csv", [{"a": 1, "b": True, "c": 0.5}])
    assert p.read_text() == "a,b,c\n1,1,0.5\n"
    with pytest.raises(ValueError, match="row has"):
        io.write_csv(tmp_path / "x.csv", ("a", "b"), [(1,)])


def test_unwritable_path_names_the_file(tmp_path):
    target = tmp_path / "missing" / "t.csv"
    with pytest.raises(OSError, match="t.csv"):
        io.write_trace(target, Trace.empty())


def test_manifest_contents(tmp_path):
    m = io.RunManifest(config_hash="abc", seed=3, subcommand="solve-pde",
                       parameters={"x": 1.0}, outputs=["trace.csv"], threads=1)
    data = json.loads(m.write(tmp_path).read_text())
    assert data["config_hash"] == "abc" and data["seed"] == 3
    assert set(data["versions"]) >= {"leakypop", "python", "numpy", "scipy", "numba"}
    assert data["outputs"] == ["trace.csv"]
