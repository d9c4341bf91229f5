"""Command line: ``ksjko run``, ``ksjko validate`` and ``ksjko sweep``.

Exit codes: 0 success, 1 monitor failure, 2 solver failure, 3 configuration
failure.  Output directories are resolved against ``$KSJKO_OUTPUT_ROOT``
(default: the working directory).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shutil
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import poisson
from .config import load_config, resolve_key, serialize_config
from .energy import ENTROPY, Nonlinearity, regularized, total_energy
from .exceptions import ConfigurationError, KsJkoError, SolverError
from .flow import (
    JkoConfig,
    jko_step,
    kkt_residual,
    linf_monitor,
    run_flow,
    step_transport,
)
from .grid import DensityField, build_grid, interval, linf_norm, rectangle

log = logging.getLogger(__name__)

EXIT_OK, EXIT_MONITOR, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "KSJKO_OUTPUT_ROOT"

SERIES_COLUMNS = (
    "k", "t", "linf", "inv_linf", "required_inv_linf_bound", "J", "internal", "interaction",
    "w2_sq_over_tau", "dissipation_slack", "kkt_residual", "active_fraction", "monitor_pass",
)
MASS_TOL = 1e-9
SYMMETRY_TOL = 1e-9
DISSIPATION_TOL_REL = 1e-6
AUDIT_RTOL = 1e-9


def fmt(x):
    """Shortest text that round-trips a float exactly."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


# --------------------------------------------------------------------------
# series and snapshots
# --------------------------------------------------------------------------
def series_rows(traj, jcfg, nl, domain):
    if not traj.states:
        return []
    rho0 = traj.states[0]
    u0 = traj.potentials[0] if traj.potentials else None
    e0 = total_energy(rho0, nl, jcfg.chi, domain, potential=u0)
    m0 = linf_norm(rho0)[0]
    M = jcfg.cap
    rows = [{
        "k": 0, "t": 0.0, "linf": m0, "inv_linf": 1.0 / m0, "required_inv_linf_bound": math.nan,
        "J": e0.total, "internal": e0.internal, "interaction": e0.interaction,
        "w2_sq_over_tau": 0.0, "dissipation_slack": 0.0, "kkt_residual": math.nan,
        "active_fraction": float(np.mean(rho0.values >= M)) if math.isfinite(M) else 0.0,
        "monitor_pass": True,
    }]
    for k, rep in enumerate(traj.reports, start=1):
        rows.append({
            "k": k, "t": traj.times[k], "linf": rep.linf, "inv_linf": 1.0 / rep.linf,
            "required_inv_linf_bound": 1.0 / rep.prev_linf - jcfg.lambda_monitor * jcfg.tau * jcfg.chi,
            "J": rep.energy.total, "internal": rep.energy.internal, "interaction": rep.energy.interaction,
            "w2_sq_over_tau": rep.w2_squared / jcfg.tau, "dissipation_slack": rep.dissipation_slack,
            "kkt_residual": rep.kkt_residual, "active_fraction": rep.active_fraction,
            "monitor_pass": bool(rep.monitor_pass and rep.xy_pass),
        })
    return rows


def write_series(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for row in rows:
            w.writerow([fmt(row[c]) for c in SERIES_COLUMNS])


def read_series(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def snapshot_name(k, ext):
    return f"snapshot_{k:06d}.{ext}"


def write_snapshot(directory, k, t, rho, u, formats):
    grid = rho.grid
    uu = u.values if u is not None else np.zeros(grid.shape)
    coords = ["x", "y"][: grid.dimension]
    paths = []
    if "csv" in formats:
        p = Path(directory) / snapshot_name(k, "csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(coords + ["rho", "u"])
            for pt, r, v in zip(grid.points, rho.values.ravel(), uu.ravel()):
                w.writerow([fmt(c) for c in pt] + [fmt(r), fmt(v)])
        paths.append(p)
    if "json" in formats:
        p = Path(directory) / snapshot_name(k, "json")
        doc = {
            "k": k, "t": fmt(t), "shape": list(grid.shape),
            "extent": [[fmt(a), fmt(b)] for a, b in grid.domain.extent],
            "rho": [fmt(v) for v in rho.values.ravel()], "u": [fmt(v) for v in uu.ravel()],
        }
        p.write_text(json.dumps(doc, indent=1) + "\n")
        paths.append(p)
    return paths


def read_snapshot(path, grid):
    """Density and potential arrays from a CSV or JSON snapshot."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        rho = np.array([float(v) for v in doc["rho"]])
        u = np.array([float(v) for v in doc["u"]])
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        rho = np.array([float(r["rho"]) for r in rows])
        u = np.array([float(r["u"]) for r in rows])
    return DensityField(grid, rho.reshape(grid.shape)), u.reshape(grid.shape)


def snapshot_steps(n_states, stride):
    return [k for k in range(n_states) if k % stride == 0]


# --------------------------------------------------------------------------
# run-level monitors
# --------------------------------------------------------------------------
def _is_mirror_symmetric(rho, tol):
    v = rho.values
    flips = [np.flip(v, axis=ax) for ax in range(v.ndim)]
    if v.ndim == 2 and v.shape[0] == v.shape[1]:
        flips.append(v.T)
    return [bool(np.max(np.abs(v - f)) <= tol * max(1.0, float(np.max(v)))) for f in flips]


def invariant_report(traj, jcfg):
    """Mass, sign, cap and symmetry checks over every state of a trajectory."""
    out = {"mass_defect": 0.0, "min_value": math.inf, "cap_excess": 0.0, "symmetry_defect": 0.0}
    if not traj.states:
        return out, True
    rho0 = traj.states[0]
    mass0 = float(rho0.values.sum() * rho0.grid.cell_volume)
    sym0 = _is_mirror_symmetric(rho0, 1e-14)
    M = jcfg.cap
    for k, rho in enumerate(traj.states):
        v = rho.values
        out["mass_defect"] = max(out["mass_defect"], abs(float(v.sum() * rho.grid.cell_volume) - mass0))
        out["min_value"] = min(out["min_value"], float(v.min()))
        if k > 0 and math.isfinite(M):
            out["cap_excess"] = max(out["cap_excess"], float(np.max(v - M)))
        flips = [np.flip(v, axis=ax) for ax in range(v.ndim)]
        if v.ndim == 2 and v.shape[0] == v.shape[1]:
            flips.append(v.T)
        for is_sym, f in zip(sym0, flips):
            if is_sym:
                out["symmetry_defect"] = max(out["symmetry_defect"], float(np.max(np.abs(v - f))))
    ok = (out["mass_defect"] <= MASS_TOL and out["min_value"] >= 0.0 and out["cap_excess"] <= 0.0
          and out["symmetry_defect"] <= SYMMETRY_TOL)
    return out, bool(ok)


def monitor_summary(traj, jcfg, rows):
    reps = traj.reports
    J0 = rows[0]["J"] if rows else 0.0
    slack_floor = -DISSIPATION_TOL_REL * abs(J0)
    first_fail = lambda pred: next((k for k, r in enumerate(reps, 1) if not pred(r)), None)  # noqa: E731
    inv, inv_ok = invariant_report(traj, jcfg)
    # summed form of the per-step slack: sum W2^2/(2 tau) <= J0 - J_N
    action = sum(r.w2_squared for r in reps) / (2.0 * jcfg.tau)
    budget = J0 - min([J0] + [r.energy.total for r in reps]) + 1e-6
    monitors = {
        "linf_step": {"pass": first_fail(lambda r: r.monitor_pass) is None,
                      "first_failure": first_fail(lambda r: r.monitor_pass)},
        "xy": {"pass": first_fail(lambda r: r.xy_pass) is None, "first_failure": first_fail(lambda r: r.xy_pass)},
        "cumulative": {"pass": first_fail(lambda r: r.cumulative_pass) is None,
                       "first_failure": first_fail(lambda r: r.cumulative_pass)},
        "dissipation": {"pass": first_fail(lambda r: r.dissipation_slack >= slack_floor) is None,
                        "first_failure": first_fail(lambda r: r.dissipation_slack >= slack_floor),
                        "min_slack": min((r.dissipation_slack for r in reps), default=0.0),
                        "action": action, "energy_budget": budget, "action_within_budget": action <= budget},
        "invariants": {"pass": inv_ok, **inv},
    }
    monitors["dissipation"]["pass"] = monitors["dissipation"]["pass"] and action <= budget
    return monitors


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------
def write_outputs(traj, cfg, directory, wall_time=None, exit_code=None, monitors=None):
    """Write series.csv, snapshots, config.ini and summary.json into ``directory``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        jcfg, nl, domain = cfg.jko_config(), cfg.nonlinearity, cfg.domain
        rows = series_rows(traj, jcfg, nl, domain)
        write_series(directory / "series.csv", rows)
        for old in directory.glob("snapshot_*"):
            old.unlink()
        for k in snapshot_steps(len(traj.states), cfg.stride):
            u = traj.potentials[k] if k < len(traj.potentials) else None
            write_snapshot(directory, k, traj.times[k], traj.states[k], u, cfg.formats)
        (directory / "config.ini").write_text(serialize_config(cfg))
        _copy_profile_source(cfg, directory)
        if monitors is None:
            monitors = monitor_summary(traj, jcfg, rows)
        summary = {
            "status": traj.status,
            "exit_code": exit_code,
            "failed_step": traj.failed_step,
            "message": traj.message,
            "steps_completed": len(traj.reports),
            "steps_requested": jcfg.n_steps,
            "final_time": traj.times[-1] if traj.times else 0.0,
            "max_linf": max((r["linf"] for r in rows), default=None),
            "final_J": rows[-1]["J"] if rows else None,
            "monitors": monitors,
            "wall_time_s": wall_time,
        }
        (directory / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write outputs to {directory}: {exc}") from exc
    return directory


def _copy_profile_source(cfg, directory):
    spec = cfg.get("physics", "initial")
    if spec.startswith("from_file"):
        rel = spec.split("path=", 1)[1].rstrip(") ").strip()
        src = Path(cfg.source_dir) / rel
        dst = directory / rel
        if src.resolve() != dst.resolve():
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def exit_code_for(traj, monitors):
    if traj.status == "solver_error":
        return EXIT_SOLVER
    if traj.status != "completed":
        return EXIT_MONITOR
    return EXIT_OK if all(m["pass"] for m in monitors.values()) else EXIT_MONITOR


# --------------------------------------------------------------------------
# audit
# --------------------------------------------------------------------------
def audit_run(directory, rtol=AUDIT_RTOL):
    """Recompute series.csv columns from config.ini and the snapshots alone.

    Columns that depend on the previous state are checked only where the
    previous snapshot exists (stride 1).  In 2D the transport columns come
    from the solver's own entropic plan and are skipped.  Returns a dict of
    column -> worst relative deviation.
    """
    directory = Path(directory)
    cfg = load_config(directory / "config.ini")
    jcfg, nl, domain, grid = cfg.jko_config(), cfg.nonlinearity, cfg.domain, cfg.grid()
    series = {int(r["k"]): r for r in read_series(directory / "series.csv")}
    ext = "csv" if "csv" in cfg.formats else "json"
    snaps = {}
    for k in series:
        p = directory / snapshot_name(k, ext)
        if p.exists():
            snaps[k] = read_snapshot(p, grid)[0]
    worst = {}

    def check(col, k, value):
        ref = series[k][col]
        if math.isnan(ref) and math.isnan(value):
            return
        dev = abs(value - ref) / max(1.0, abs(ref))
        worst[col] = max(worst.get(col, 0.0), dev)

    M = jcfg.cap
    energies = {}
    for k, rho in snaps.items():
        u = poisson.solve_potential(rho, domain).u if jcfg.chi > 0 else None
        e = total_energy(rho, nl, jcfg.chi, domain, potential=u)
        energies[k] = e
        linf = linf_norm(rho)[0]
        check("linf", k, linf)
        check("inv_linf", k, 1.0 / linf)
        check("J", k, e.total)
        check("internal", k, e.internal)
        check("interaction", k, e.interaction)
        check("active_fraction", k, float(np.mean(rho.values >= M)) if math.isfinite(M) else 0.0)
        if k == 0 or k - 1 not in snaps:
            continue
        g = snaps[k - 1]
        g_linf = linf_norm(g)[0]
        check("required_inv_linf_bound", k, 1.0 / g_linf - jcfg.lambda_monitor * jcfg.tau * jcfg.chi)
        v = linf_monitor(g_linf, linf, jcfg, jcfg.slack_tol_rel * linf, grid.dimension)
        check("monitor_pass", k, float(v.passed and v.xy_passed))
        if grid.dimension == 1:
            res = step_transport(rho, g, jcfg)
            check("w2_sq_over_tau", k, res.w2_squared / jcfg.tau)
            check("dissipation_slack", k, energies[k - 1].total - e.total - res.w2_squared / (2 * jcfg.tau))
            check("kkt_residual", k, kkt_residual(rho, g, u, res.phi, jcfg, nl)[0])
    bad = {c: d for c, d in worst.items() if d > rtol}
    return worst, bad


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------
def resolve_output(cfg, override=None):
    if override is not None:
        return Path(override)
    d = Path(cfg.output_directory)
    return d if d.is_absolute() else output_root() / d


def cmd_run(cfg, out_dir=None, quiet=False):
    """Run the configured flow, write outputs, return the exit code."""
    directory = resolve_output(cfg, out_dir)
    jcfg = cfg.jko_config()
    nl, domain = cfg.nonlinearity, cfg.domain
    rho0 = cfg.initial_density()
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        traj = run_flow(rho0, jcfg, nl, domain)
    for w in caught:
        log.warning("%s", w.message)
    wall = time.perf_counter() - start
    rows = series_rows(traj, jcfg, nl, domain)
    monitors = monitor_summary(traj, jcfg, rows)
    code = exit_code_for(traj, monitors)
    write_outputs(traj, cfg, directory, wall_time=wall, exit_code=code, monitors=monitors)
    if not quiet:
        failed = [name for name, m in monitors.items() if not m["pass"]]
        print(f"{traj.status}: {len(traj.reports)}/{jcfg.n_steps} steps, "
              f"max linf {max(r['linf'] for r in rows):.6g}, wall {wall:.2f}s -> {directory}")
        if traj.message:
            print(traj.message, file=sys.stderr)
        if failed:
            print("failed monitors: " + ", ".join(failed), file=sys.stderr)
    return code


def cmd_sweep(cfg, key, values, out_dir=None, quiet=False):
    """One run per value of ``key``; writes sweep.csv and returns the worst exit code."""
    section, name = resolve_key(key)
    base = resolve_output(cfg, out_dir)
    base.mkdir(parents=True, exist_ok=True)
    records, worst = [], EXIT_OK
    for value in values:
        sub = base / f"{name}={value}"
        try:
            variant = cfg.with_value(f"{section}.{name}", value)
        except ConfigurationError as exc:
            print(f"{name}={value}: {exc}", file=sys.stderr)
            records.append([value, "config_error", EXIT_CONFIG, "nan", "nan", "nan"])
            worst = max(worst, EXIT_CONFIG)
            continue
        code = cmd_run(variant, sub, quiet=quiet)
        summary = json.loads((sub / "summary.json").read_text())
        rows = read_series(sub / "series.csv")
        records.append([value, summary["status"], code, fmt(summary["max_linf"]), fmt(rows[-1]["J"]),
                        fmt(summary["monitors"]["dissipation"]["min_slack"])])
        worst = max(worst, code)
    with open(base / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name, "status", "exit_code", "max_linf", "final_J", "min_dissipation_slack"])
        w.writerows(records)
    return worst


# --------------------------------------------------------------------------
# validation suites
# --------------------------------------------------------------------------
def _suite_oracle():
    from .energy import ENTROPY as nl
    from .reference import brute_force_jko, step_objective

    rng = np.random.default_rng(7)
    grid = build_grid(interval(), 6)
    worst = 0.0
    for i in range(4):
        v = rng.uniform(0.2, 2.0, 6)
        g = DensityField(grid, v / (v.sum() * grid.h))
        cfg = JkoConfig(chi=float(i % 2), tau=0.05, t0=0.1)
        rho, _ = jko_step(g, cfg, nl)
        J = step_objective(rho.values, g, cfg.chi, nl, cfg.tau, grid.domain)
        _, Jb = brute_force_jko(g, cfg, nl, starts=5)
        worst = max(worst, (J - Jb) / abs(Jb))
    return [("oracle: step objective vs brute force", worst <= 1e-6, f"worst relative excess {worst:.2e}")]


def _suite_poisson():
    out = []
    errs = []
    for n in (20, 40, 80):
        grid = build_grid(interval(), n)
        x = grid.centers[0]
        u = poisson.solve_potential(DensityField.uniform(grid)).u.values
        errs.append(np.max(np.abs(u - x * (1 - x) / 2)))
    order = math.log2(errs[1] / errs[2]) if errs[2] > 0 else math.inf
    out.append(("poisson: dirichlet quadratic order", order >= 1.9, f"order {order:.3f}"))
    errs = []
    for n in (16, 32, 64):
        grid = build_grid(interval(coupling="periodic"), n)
        x = grid.centers[0]
        u = poisson.solve_potential(DensityField(grid, 1 + np.cos(2 * np.pi * x))).u.values
        errs.append(np.max(np.abs(u - np.cos(2 * np.pi * x) / (4 * np.pi**2))))
    order = math.log2(errs[1] / errs[2])
    out.append(("poisson: periodic cosine order", order >= 1.9, f"order {order:.3f}"))
    rng = np.random.default_rng(3)
    grid = build_grid(rectangle(), 12)
    ok = True
    for _ in range(100):
        u = poisson.solve_potential(DensityField(grid, rng.random(grid.shape))).u.values
        ok &= bool(u.min() >= 0)
    out.append(("poisson: dirichlet maximum principle", ok, "100 random densities"))
    return out


def _suite_transport():
    from .transport import lp_transport_oracle, sinkhorn_entropic, w2_quantile_1d

    out = []
    rng = np.random.default_rng(5)
    worst = 0.0
    for n in (4, 8, 16):
        grid = build_grid(interval(), n)
        a = DensityField.from_function(grid, lambda x: rng.random(x.shape) + 0.05)
        b = DensityField.from_function(grid, lambda x: rng.random(x.shape) + 0.05)
        worst = max(worst, abs(w2_quantile_1d(a, b, atomic=True).w2_squared - lp_transport_oracle(a, b).w2_squared))
    out.append(("transport: quantile vs LP", worst <= 1e-10, f"max gap {worst:.2e}"))
    grid = build_grid(rectangle(), (2, 4))
    eps = 1e-2
    worst = 0.0
    for _ in range(2):
        a = DensityField.from_function(grid, lambda x, y: rng.random(x.shape) + 0.05)
        b = DensityField.from_function(grid, lambda x, y: rng.random(x.shape) + 0.05)
        worst = max(worst, abs(sinkhorn_entropic(a, b, eps).w2_squared - lp_transport_oracle(a, b).w2_squared))
    bound = 2 * eps * math.log(grid.size)
    out.append(("transport: sinkhorn vs LP", worst <= bound, f"gap {worst:.2e} <= {bound:.2e}"))
    grid = build_grid(interval(), 400)
    x = grid.centers[0]
    block = DensityField(grid, np.where(x < 0.5, 2.0, 0.0))
    w2 = w2_quantile_1d(block, DensityField.uniform(grid)).w2_squared
    out.append(("transport: uniform block", abs(w2 - 1 / 12) <= 1e-3, f"W2^2 = {w2:.6f}"))
    return out


def _suite_monitors():
    grid = build_grid(interval(), 100)
    rho0 = DensityField.from_function(grid, lambda x: 1 - np.cos(2 * np.pi * x))
    nl = regularized(Nonlinearity("zero"), 1e-2)
    jcfg = JkoConfig(chi=10.0, tau=2e-3, t0=0.04, lambda_monitor=1.1, eps0=0.05)
    traj = run_flow(rho0, jcfg, nl)
    rows = series_rows(traj, jcfg, nl, grid.domain)
    mons = monitor_summary(traj, jcfg, rows)
    out = [(f"monitors: {name}", m["pass"], traj.status) for name, m in mons.items()]
    out.append(("monitors: step count", len(traj.reports) == jcfg.n_steps, f"{len(traj.reports)} steps"))
    return out


CALIBRATION_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
CALIBRATION_LAMBDA = 1.1


def _calibration_fixtures():
    zero = regularized(Nonlinearity("zero"), 1e-3)
    fixtures = []
    g1 = build_grid(interval(), 60)
    for width in (0.1, 0.25, 0.45):
        for nl in (zero, ENTROPY):
            rho = DensityField.from_function(
                g1, lambda x, w=width: 0.02 + np.where(abs(x - 0.5) < w, 1 + np.cos(np.pi * (x - 0.5) / w), 0.0))
            fixtures.append((f"1d_w{width}_{nl.kind}", rho, nl))
    g2 = build_grid(rectangle(), 10)
    for width in (0.25, 0.4):
        def prof(x, y, w=width):
            r = np.hypot(x - 0.5, y - 0.5)
            return 0.02 + np.where(r < w, 1 + np.cos(np.pi * r / w), 0.0)
        fixtures.append((f"2d_w{width}_zero", DensityField.from_function(g2, prof), zero))
    return fixtures


def calibration_sweep(grid=CALIBRATION_GRID, lam=CALIBRATION_LAMBDA, chi=1.0):
    """One step per fixture at each ``kappa = tau chi |g|_inf``; monitor pass rate at ``lam``.

    Returns ``(rows, c0)`` where ``c0`` is the largest grid value up to which
    every fixture passed (a lower bound on the true threshold).
    """
    fixtures = _calibration_fixtures()
    rows = []
    for kappa in grid:
        n_pass, margins, ratios, needed = 0, [], [], []
        for _, g, nl in fixtures:
            m = linf_norm(g)[0]
            jcfg = JkoConfig(chi=chi, tau=kappa / (chi * m), t0=1.0, lambda_monitor=lam, c0_empirical=1.0)
            rho, rep = jko_step(g, jcfg, nl)
            n_pass += bool(rep.monitor_pass)
            # margin of the inverse bound, in units of 1/|g|_inf
            margins.append((1.0 / rep.linf - (1.0 / m - lam * jcfg.tau * chi)) * m)
            ratios.append(rep.linf / m)
            needed.append((1.0 / m - 1.0 / rep.linf) / (jcfg.tau * chi))
        rows.append({"kappa": kappa, "n_fixtures": len(fixtures), "n_pass": n_pass,
                     "pass_rate": n_pass / len(fixtures), "min_margin": min(margins),
                     "max_linf_ratio": max(ratios), "lambda_needed": max(needed)})
    c0 = 0.0
    for r in rows:
        if r["pass_rate"] < 1.0:
            break
        c0 = r["kappa"]
    return rows, c0


def write_calibration(path, rows, c0):
    cols = ["kappa", "n_fixtures", "n_pass", "pass_rate", "min_margin", "max_linf_ratio", "lambda_needed",
            "c0_empirical"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt(r[c]) for c in cols[:-1]] + [fmt(c0)])


def _suite_calibration(directory):
    rows, c0 = calibration_sweep()
    write_calibration(Path(directory) / "calibration.csv", rows, c0)
    rates = [r["pass_rate"] for r in rows]
    monotone = all(b <= a for a, b in zip(rates, rates[1:]))
    return [
        ("calibration: table nonempty", len(rows) > 0, f"{len(rows)} rows"),
        ("calibration: pass rate nonincreasing", monotone, " ".join(f"{r:.2f}" for r in rates)),
        ("calibration: empirical c0 > 0", c0 > 0, f"c0 >= {c0:g}"),
    ]


SUITES = ("oracle", "poisson", "transport", "monitors", "calibration")


def cmd_validate(suite=None, out_dir=None, quiet=False):
    """Run the named suite (or all); nonzero exit listing failures."""
    names = SUITES if suite in (None, "all") else (suite,)
    for name in names:
        if name not in SUITES:
            raise ConfigurationError(f"unknown suite {name!r}; expected one of {SUITES}", "suite")
    directory = Path(out_dir) if out_dir is not None else output_root() / "validate"
    directory.mkdir(parents=True, exist_ok=True)
    results, timings = [], {}
    for name in names:
        t = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                res = _suite_calibration(directory) if name == "calibration" else globals()[f"_suite_{name}"]()
            except KsJkoError as exc:
                res = [(f"{name}: raised", False, str(exc))]
        timings[name] = time.perf_counter() - t
        results.extend(res)
        if not quiet:
            for label, ok, detail in res:
                print(f"{'PASS' if ok else 'FAIL'}  {label}  ({detail})")
    failures = [label for label, ok, _ in results if not ok]
    summary = {"suites": list(names), "timings_s": timings, "failures": failures,
               "checks": [{"name": l, "pass": bool(o), "detail": d} for l, o, d in results]}
    (directory / "validate_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if failures:
        print("validation failures:\n  " + "\n  ".join(failures), file=sys.stderr)
        return EXIT_MONITOR
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="ksjko", description="Density-capped JKO flows for Keller-Segel energies.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one configured flow")
    r.add_argument("--config", required=True)
    r.add_argument("--output", help="output directory (default: [output] directory under the output root)")
    v = sub.add_parser("validate", help="run the validation suites and the calibration sweep")
    v.add_argument("--suite", choices=SUITES + ("all",), default="all")
    v.add_argument("--output")
    s = sub.add_parser("sweep", help="repeat a run over values of one key")
    s.add_argument("--config", required=True)
    s.add_argument("--vary", required=True, help="key=v1,v2,... (key may be section.key)")
    s.add_argument("--output")
    a = sub.add_parser("audit", help="recompute series.csv from a run directory's snapshots")
    a.add_argument("directory")
    return p


def _parse_vary(text):
    key, sep, vals = text.partition("=")
    if not sep or not vals:
        raise ConfigurationError(f"--vary expects key=v1,v2,... got {text!r}", "vary")
    return key.strip(), [v.strip() for v in vals.split(",") if v.strip()]


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(load_config(args.config), args.output)
        if args.command == "sweep":
            key, values = _parse_vary(args.vary)
            return cmd_sweep(load_config(args.config), key, values, args.output)
        if args.command == "audit":
            worst, bad = audit_run(args.directory)
            for col, dev in sorted(worst.items()):
                print(f"{'FAIL' if col in bad else 'ok  '}  {col}  {dev:.3e}")
            return EXIT_MONITOR if bad else EXIT_OK
        return cmd_validate(args.suite, args.output)
    except ConfigurationError as exc:
        print(f"configuration error [{exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
