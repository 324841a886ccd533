"""Command-line entry point: ``leakypop <subcommand> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io, particles, pde, stationary, verify
from .config import ConfigError, RunConfig, config_dict, config_hash, parse_config
from .grids import GridSpec, gaussian_lognormal

log = logging.getLogger("leakypop")


def _grid_arg(text: str):
    try:
        na, nm = text.lower().split("x")
        return int(na), int(nm)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 400x100, got {text!r}") from None


def _floats(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="model / run configuration file")
    common.add_argument("--out", default=None, help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=0, help="RNG seed (u64)")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="leakypop", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-particles", parents=[common], help="N-neuron simulation")
    s.add_argument("--n", type=int)
    s.add_argument("--t-end", type=float)
    s.add_argument("--dt", type=float)

    s = sub.add_parser("solve-pde", parents=[common], help="finite-volume population equation")
    s.add_argument("--grid", type=_grid_arg)
    s.add_argument("--a-max", type=float)
    s.add_argument("--m-max", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--frozen-x", type=float)

    s = sub.add_parser("stationary", parents=[common], help="stationary state via boundary densities")
    s.add_argument("--tol", type=float)

    s = sub.add_parser("verify-std-formula", parents=[common], help="depression closed form")
    s.add_argument("--x", type=float, help="frozen (scaled) input x_tilde")

    s = sub.add_parser("doeblin-check", parents=[common], help="minoration window and probes")
    s.add_argument("--R", type=float)
    s.add_argument("--probes", type=int)
    s.add_argument("--grid", type=_grid_arg)

    s = sub.add_parser("harris-rate", parents=[common], help="contraction rate of the frozen semigroup")
    s.add_argument("--t-end", type=float)
    s.add_argument("--x", type=float, help="frozen (scaled) input x_tilde")

    s = sub.add_parser("stability-sweep", parents=[common], help="weak-coupling sweep over epsilon")
    s.add_argument("--epsilons", type=_floats)
    s.add_argument("--t-end", type=float)

    s = sub.add_parser("compare", parents=[common], help="particle vs PDE potential traces")
    s.add_argument("--n", type=int)
    s.add_argument("--t-end", type=float)
    s.add_argument("--dt", type=float, help="particle time step")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out or f"out-{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, cfg: RunConfig, out: Path, outputs, extra=None):
    params = {"config": config_dict(cfg), "assumptions": list(cfg.notes)}
    params["cli"] = {k: v for k, v in vars(args).items() if k not in ("config", "out", "verbose")}
    params.update(extra or {})
    io.RunManifest(config_hash=config_hash(cfg), seed=args.seed, subcommand=args.command,
                   parameters=params, outputs=list(outputs), threads=args.threads).write(out)


def _initial_density(cfg: RunConfig, grid: GridSpec, **shift):
    ip = asdict(cfg.initial)
    ip.update(shift)
    G = cfg.spec.jump.compact_bound
    return gaussian_lognormal(grid, m_cap=G if math.isfinite(G) else None, **ip)


def _particle_dt(cfg: RunConfig, dt):
    if dt is not None:
        return dt
    if cfg.run.dt is not None:
        return cfg.run.dt
    return particles.THINNING_GUARD / max(cfg.spec.firing.f_max, 1e-300)


def cmd_simulate_particles(args, cfg: RunConfig):
    out = _out_dir(args)
    n = args.n or cfg.run.n_particles
    t_end = args.t_end or cfg.run.t_end
    dt = _particle_dt(cfg, args.dt)
    files = ["trace.csv", "raster.csv", "density_final.csv"]
    _manifest(args, cfg, out, files, {"n": n, "t_end": t_end, "dt": dt})
    particles.set_threads(args.threads)
    ip = cfg.initial
    init = particles.initial_state(cfg.spec, n, args.seed, ip.a_mean, ip.a_std, ip.m_median, ip.m_sigma)
    grid = cfg.grid_spec()
    rec = particles.RecordConfig(cfg.run.record_stride, cfg.run.raster_neurons)
    trace, final = particles.run(cfg.spec, init, t_end, dt, rec, grid)
    io.write_trace(out / files[0], trace)
    io.write_raster(out / files[1], trace.raster)
    io.write_density(out / files[2], particles.empirical_density(final, grid))
    print(f"simulated N={n} to t={t_end:g}: final x = {trace.x_values[-1]:.6g}")
    return 0


def cmd_solve_pde(args, cfg: RunConfig):
    out = _out_dir(args)
    g = cfg.grid_spec()
    na, nm = args.grid or (g.n_a, g.n_m)
    grid = GridSpec(args.a_max or g.a_max, na, g.m_min, args.m_max or g.m_max, nm, g.spacing)
    t_end = args.t_end or cfg.run.t_end
    dt = args.dt or cfg.run.dt
    frozen = args.frozen_x if args.frozen_x is not None else cfg.run.frozen_x
    snaps = tuple(cfg.run.snapshot_times)
    files = ["trace.csv", *(f"density_t{t:g}.csv" for t in snaps), "density_final.csv"]
    _manifest(args, cfg, out, files, {"grid": [na, nm], "t_end": t_end, "dt": dt, "frozen_x": frozen})
    u0 = _initial_density(cfg, grid)
    kw = dict(record_stride=cfg.run.record_stride, snapshot_times=snaps)
    if frozen is None:
        trace, final = pde.run_nonlinear(cfg.spec, u0, t_end, dt, **kw)
    else:
        trace, final = pde.run_frozen(cfg.spec, frozen, u0, t_end, dt, **kw)
    io.write_trace(out / files[0], trace)
    for t in snaps:
        io.write_density(out / f"density_t{t:g}.csv", trace.snapshots[t])
    io.write_density(out / files[-1], final)
    print(f"PDE on {na}x{nm} to t={t_end:g}: mass = {final.mass:.15g}, final x = {trace.x_values[-1]:.6g}")
    return 0


def cmd_stationary(args, cfg: RunConfig):
    out = _out_dir(args)
    sp = cfg.stationary
    tol = args.tol or sp.tol
    files = ["stationary_u.csv", "stationary_density.csv", "stationary_report.csv",
             "stationary_checks.csv"]
    _manifest(args, cfg, out, files, {"tol": tol})
    res = stationary.solve_stationary(cfg.spec, tol, omega=sp.omega, max_outer=sp.max_outer,
                                      n_cells=sp.n_cells, grid=cfg.grid_spec())
    io.write_boundary(out / files[0], res.u)
    io.write_density(out / files[1], res.rho_inf)
    last = res.checks[-1]["checks"]
    report = {"x_inf": res.x_inf, "iterations": res.iterations, "converged": res.converged,
              "upsilon_residual": float(res.residuals["upsilon"][-1]),
              "phi_residual": float(res.residuals["phi"][-1]), "firing_rate": res.rate,
              "lift_mass_defect": res.mass_defect, "all_checks_passed": res.all_checks_passed}
    for c in last:
        report[c["name"].replace(" ", "_") + "_ok"] = bool(c["passed"])
    io.write_report(out / files[2], [report])
    rows = []
    for entry in res.checks:
        for c in entry["checks"]:
            rows.append({"iteration": entry["iteration"], "x": entry["x"], "check": c["name"],
                         "value": float(c["value"]), "bound": float(c["bound"]),
                         "ok": bool(c["passed"])})
    io.write_report(out / files[3], rows, ["iteration", "x", "check", "value", "bound", "ok"])
    state = "converged" if res.converged else "NOT converged"
    print(f"stationary {state}: x_inf = {res.x_inf:.12g} after {res.iterations} iterations; "
          f"a-priori checks {'pass' if res.all_checks_passed else 'FAIL'}")
    return 0 if res.converged else 2


def cmd_verify_std(args, cfg: RunConfig):
    x = args.x if args.x is not None else cfg.stationary.x_tilde
    spec = cfg.spec
    cf = stationary.std_closed_form(spec, x)
    print(f"I = {cf.I:.17g}\nP(lambda) = {cf.P:.17g}\nX = {cf.X:.17g}")
    rows = [{"x_tilde": x, "I": cf.I, "P": cf.P, "X": cf.X, "I_identity": cf.I_identity}]
    fr = spec.firing
    if fr.kind == "constant":
        c, lam, d = fr.f_max, spec.lam, fr.delta_abs
        I = d + 1.0 / c
        P = math.exp(-lam * d) * c / (c + lam)
        ups = spec.jump.upsilon
        X = spec.kernel.integral / I * (1 - P) / (1 - ups * P)
        print(f"analytic (constant rate): I = {I:.17g}, P = {P:.17g}, X = {X:.17g}, "
              f"|X - X_analytic| = {abs(cf.X - X):.3g}")
        rows[0].update({"I_analytic": I, "P_analytic": P, "X_analytic": X})
    if args.out:
        out = _out_dir(args)
        _manifest(args, cfg, out, ["std_formula.csv"], {"x_tilde": x})
        io.write_report(out / "std_formula.csv", rows)
    return 0


def cmd_doeblin(args, cfg: RunConfig):
    out = _out_dir(args)
    vp = cfg.verify
    R = args.R or vp.R
    probes = args.probes or vp.probes
    g = cfg.grid_spec()
    na, nm = args.grid or (g.n_a, g.n_m)
    grid = GridSpec(g.a_max, na, g.m_min, g.m_max, nm, g.spacing)
    files = ["doeblin_window.csv", "doeblin_probes.csv"]
    _manifest(args, cfg, out, files, {"R": R, "probes": probes, "grid": [na, nm]})
    w = verify.doeblin_window(cfg.spec, R)
    rep = verify.doeblin_empirical(cfg.spec, w, vp.x_tilde, probes, grid)
    row = asdict(w)
    row.update(min_density=rep.min_density, ratio=rep.ratio, all_positive=rep.all_positive,
               rectangle_cells=rep.n_cells)
    io.write_report(out / files[0], [row])
    io.write_report(out / files[1], rep.probes)
    print(f"window T={w.T:.6g} a_bar={w.a_bar:.6g} m in [{w.m_lower:.6g}, {w.m_upper:.6g}], "
          f"nu={w.nu_constant:.4g}; min density {rep.min_density:.4g} (ratio {rep.ratio:.4g})")
    return 0


def cmd_harris(args, cfg: RunConfig):
    out = _out_dir(args)
    vp = cfg.verify
    t_end = args.t_end or vp.harris_t_end
    x = args.x if args.x is not None else vp.x_tilde
    grid = cfg.grid_spec()
    files = ["harris_rate.csv", "harris_distance.csv"]
    _manifest(args, cfg, out, files, {"t_end": t_end, "x_tilde": x})
    u0 = _initial_density(cfg, grid)
    ip = cfg.initial
    v0 = _initial_density(cfg, grid, a_mean=ip.a_mean + 4 * ip.a_std,
                          m_median=min(4 * ip.m_median, 0.5 * (ip.m_median + grid.m_max)))
    fit = verify.harris_rate(cfg.spec, x, u0, v0, t_end, cfg.run.dt, vp.transient)
    io.write_report(out / files[0], [{"rate": fit.rate, "prefactor": fit.prefactor,
                                      "r_squared": fit.r_squared, "t_start": fit.window[0],
                                      "t_end": fit.window[1], "degenerate": fit.degenerate}])
    io.write_csv(out / files[1], ("t", "distance"), zip(fit.times, fit.distance))
    print(f"harris rate = {fit.rate:.6g} (r^2 = {fit.r_squared:.6f})")
    return 0


def cmd_sweep(args, cfg: RunConfig):
    out = _out_dir(args)
    vp = cfg.verify
    eps = args.epsilons or vp.epsilons
    t_end = args.t_end or vp.sweep_t_end
    grid = cfg.grid_spec()
    files = ["stability_sweep.csv", *(f"trace_eps{k}.csv" for k in range(len(eps)))]
    _manifest(args, cfg, out, files, {"epsilons": list(eps), "t_end": t_end})
    u0 = _initial_density(cfg, grid)
    sp = cfg.stationary
    rows = verify.weak_coupling_experiment(
        cfg.spec, eps, u0, t_end, cfg.run.dt, vp.transient,
        stationary_kw=dict(tol=sp.tol, n_cells=sp.n_cells, max_outer=sp.max_outer))
    fields = ["epsilon", "label", "rate", "r_squared", "amplitude_ratio", "x_inf", "x_discrete",
              "stationary_converged"]
    io.write_report(out / files[0], [{k: getattr(r, k) for k in fields} for r in rows], fields)
    for k, r in enumerate(rows):
        io.write_trace(out / f"trace_eps{k}.csv", r.trace)
        print(f"eps={r.epsilon:g}: {r.label} (rate {r.rate:.4g}, r^2 {r.r_squared:.4f}, "
              f"amplitude ratio {r.amplitude_ratio:.3g})")
    return 0


def cmd_compare(args, cfg: RunConfig):
    out = _out_dir(args)
    n = args.n or cfg.run.n_particles
    t_end = args.t_end or cfg.run.t_end
    dt = _particle_dt(cfg, args.dt)
    files = ["compare.csv", "compare_summary.csv"]
    _manifest(args, cfg, out, files, {"n": n, "t_end": t_end, "dt": dt})
    particles.set_threads(args.threads)
    res = compare_traces(cfg, n, t_end, dt, args.seed)
    io.write_csv(out / files[0], ("t", "x_particle", "x_pde", "abs_diff"),
                 zip(res["t"], res["x_particle"], res["x_pde"], res["abs_diff"]))
    io.write_report(out / files[1], [{"n": n, "sup_abs_diff": res["sup"]}])
    print(f"N={n}: sup_t |x_particle - x_pde| = {res['sup']:.6g}")
    return 0


def compare_traces(cfg: RunConfig, n: int, t_end: float, dt: float, seed: int, pde_trace=None):
    """Particle and PDE potentials on the particle record times."""
    spec = cfg.spec
    grid = cfg.grid_spec()
    if pde_trace is None:
        pde_trace, _ = pde.run_nonlinear(spec, _initial_density(cfg, grid), t_end, cfg.run.dt)
    ip = cfg.initial
    init = particles.initial_state(spec, n, seed, ip.a_mean, ip.a_std, ip.m_median, ip.m_sigma)
    ptrace, _ = particles.run(spec, init, t_end, dt, particles.RecordConfig(cfg.run.record_stride))
    x_pde = np.interp(ptrace.times, pde_trace.times, pde_trace.x_values)
    diff = np.abs(ptrace.x_values - x_pde)
    return {"t": ptrace.times, "x_particle": ptrace.x_values, "x_pde": x_pde, "abs_diff": diff,
            "sup": float(diff.max())}


COMMANDS = {
    "simulate-particles": cmd_simulate_particles,
    "solve-pde": cmd_solve_pde,
    "stationary": cmd_stationary,
    "verify-std-formula": cmd_verify_std,
    "doeblin-check": cmd_doeblin,
    "harris-rate": cmd_harris,
    "stability-sweep": cmd_sweep,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, pde.CFLError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
