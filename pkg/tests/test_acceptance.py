"""The twelve acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict that the terminal summary prints
under "acceptance criteria".
"""
import csv
import math
import time

import numpy as np
import pytest
from conftest import record
from fixtures import (
    SMOOTH_STEP_CONFIG,
    blowup_fixture,
    cap_fixture,
    consistency_fixture,
    oracle_fixtures,
    peak_config,
    peak_fixture,
    smooth_step,
)

from ksjko import poisson
from ksjko.cli import EXIT_OK, cmd_validate, invariant_report
from ksjko.flow import jko_step, linf_monitor, monge_ampere_residual_1d, run_flow
from ksjko.grid import DensityField, build_grid, interval, rectangle
from ksjko.reference import brute_force_jko, compare_l1, fv_solve, step_objective, zero_diffusion_linf
from ksjko.transport import lp_transport_oracle, sinkhorn_entropic, w2_quantile_1d

PEAK_TAUS = (2e-3, 1e-3)
CONSISTENCY_TAUS = (4e-3, 2e-3, 1e-3)


# --------------------------------------------------------------------------
# shared runs
# --------------------------------------------------------------------------
@pytest.fixture(scope="module")
def oracle_steps():
    fixtures, nl = oracle_fixtures()
    start = time.perf_counter()
    out = []
    for g, cfg in fixtures:
        rho, rep = jko_step(g, cfg, nl)
        J = step_objective(rho.values, g, cfg.chi, nl, cfg.tau, g.grid.domain)
        rb, Jb = brute_force_jko(g, cfg, nl)
        out.append({"g": g, "cfg": cfg, "rho": rho, "rep": rep, "J": J, "Jb": Jb, "rb": rb})
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def peak_runs():
    rho0, nl = peak_fixture()
    return {tau: (run_flow(rho0, peak_config(tau), nl), peak_config(tau)) for tau in PEAK_TAUS}


@pytest.fixture(scope="module")
def blowup_run():
    rho0, nl, cfg = blowup_fixture()
    return run_flow(rho0, cfg, nl), cfg


@pytest.fixture(scope="module")
def consistency_runs():
    rho0, nl = consistency_fixture()
    from ksjko.flow import JkoConfig

    ref = fv_solve(rho0, 0.1, 1.0, nl)
    runs = {tau: (run_flow(rho0, JkoConfig(chi=1.0, tau=tau, t0=0.1, eps0=0.05), nl),
                  JkoConfig(chi=1.0, tau=tau, t0=0.1, eps0=0.05)) for tau in CONSISTENCY_TAUS}
    return runs, ref


@pytest.fixture(scope="module")
def cap_step():
    g, cfg, nl = cap_fixture()
    rho, rep = jko_step(g, cfg, nl)
    return g, cfg, nl, rho, rep


def _all_runs(peak_runs, blowup_run, consistency_runs):
    runs = [(f"peak tau={t:g}", tr, cfg) for t, (tr, cfg) in peak_runs.items()]
    runs.append(("blow-up", *blowup_run))
    runs += [(f"consistency tau={t:g}", tr, cfg) for t, (tr, cfg) in consistency_runs[0].items()]
    return runs


# --------------------------------------------------------------------------
# criteria
# --------------------------------------------------------------------------
def test_c01_oracle_equivalence(oracle_steps):
    steps, elapsed = oracle_steps
    worst = max((s["J"] - s["Jb"]) / abs(s["Jb"]) for s in steps)
    worst_abs = max(abs(s["J"] - s["Jb"]) / abs(s["Jb"]) for s in steps)
    ok = worst_abs <= 1e-6 and elapsed < 60
    record(1, "oracle equivalence", ok, f"max rel objective gap {worst_abs:.2e} over {len(steps)} fixtures, {elapsed:.1f}s")
    assert worst_abs <= 1e-6
    assert worst <= 1e-6
    assert elapsed < 60


def test_c02_per_step_linf(peak_runs):
    details, ok = [], True
    for tau, (traj, cfg) in peak_runs.items():
        monitor = peak_config(tau, lam=1.5)
        L = traj.linf
        passes = [linf_monitor(L[k], L[k + 1], monitor, 1e-3 * L[k + 1]).passed for k in range(len(L) - 1)]
        # the grid samples the peak of 2 slightly below its nominal height
        horizon_ok = traj.times[-1] >= 0.8 / (cfg.chi * 2.0) - 1e-12
        ok &= all(passes) and horizon_ok and traj.status == "completed"
        details.append(f"tau={tau:g}: {sum(passes)}/{len(passes)} steps to t={traj.times[-1]:.3f}")
    record(2, "per-step L-infinity estimate (lambda=1.5)", ok, "; ".join(details))
    assert ok


def test_c03_cumulative_bound(peak_runs):
    details, ok = [], True
    for tau, (traj, cfg) in peak_runs.items():
        max_linf = float(traj.linf.max())
        steps_ok = len(traj.reports) == math.floor(cfg.t0 / cfg.tau + 1e-9)
        ok &= max_linf <= 1 / cfg.eps0 and steps_ok
        details.append(f"tau={tau:g}: max {max_linf:.4f} <= {1 / cfg.eps0:g}, {len(traj.reports)} steps")
    record(3, "cumulative bound and step count", ok, "; ".join(details))
    assert ok


def test_c04_energy_dissipation(oracle_steps, peak_runs, blowup_run, consistency_runs):
    # stated form uses W2^2 / tau; the minimality slack with W2^2 / (2 tau) is tracked alongside
    worst_lit, worst_min, worst_sum = math.inf, math.inf, -math.inf
    for _, traj, cfg in _all_runs(peak_runs, blowup_run, consistency_runs):
        J = traj.energies
        J0 = J[0]
        for k, r in enumerate(traj.reports):
            worst_lit = min(worst_lit, (J[k] - J[k + 1] - r.w2_squared / cfg.tau) / abs(J0))
            worst_min = min(worst_min, r.dissipation_slack / abs(J0))
        action = sum(r.w2_squared for r in traj.reports) / cfg.tau
        worst_sum = max(worst_sum, action - (J0 - J.min() + 1e-6))
    for s in oracle_steps[0]:
        rep, tau = s["rep"], s["cfg"].tau
        worst_lit = min(worst_lit, (rep.prev_energy - rep.energy.total - rep.w2_squared / tau) / abs(rep.prev_energy))
        worst_min = min(worst_min, rep.dissipation_slack / abs(rep.prev_energy))
    ok = worst_lit >= -1e-6 and worst_min >= -1e-6 and worst_sum <= 0
    record(4, "energy dissipation", ok,
           f"min slack/|J0| {worst_lit:.2e} (W2^2/tau), {worst_min:.2e} (W2^2/(2tau)); "
           f"max (sum W2^2/tau - budget) {worst_sum:.2e}")
    assert ok


def test_c05_kkt(oracle_steps, cap_step):
    worst = max(s["rep"].kkt_residual for s in oracle_steps[0])
    g, cfg, nl, rho, rep = cap_step
    capped = rho.values >= cfg.cap
    ok = (worst <= 1e-3 and rep.kkt_residual <= 1e-3 and rep.complementarity_defect <= 1e-8
          and capped.any() and rep.pressure_max > 0)
    record(5, "KKT conditions", ok,
           f"max residual {max(worst, rep.kkt_residual):.2e}; cap fixture complementarity "
           f"{rep.complementarity_defect:.1e}, active fraction {rep.active_fraction:.3f}")
    assert ok


def test_c06_monge_ampere_order():
    res = []
    for n in (50, 100, 200):
        g = smooth_step(n)
        rho, rep = jko_step(g, SMOOTH_STEP_CONFIG, __import__("ksjko").ENTROPY)
        res.append(monge_ampere_residual_1d(rho, g, rep.transport))
    orders = [math.log2(res[i] / res[i + 1]) for i in range(2)]
    ok = min(orders) >= 0.8
    record(6, "Monge-Ampere refinement order", ok,
           "residuals " + ", ".join(f"{r:.2e}" for r in res) + "; orders " + ", ".join(f"{o:.2f}" for o in orders))
    assert ok


def test_c07_blowup_tracking(blowup_run):
    traj, cfg = blowup_run
    m0 = float(traj.linf[0])
    horizon = 0.5 / cfg.chi  # nominal peak height 1
    dev = 0.0
    for t, L in zip(traj.times, traj.linf):
        if t <= horizon + 1e-12 and t < 1 / (cfg.chi * m0):
            ref = zero_diffusion_linf(m0, cfg.chi, t)
            dev = max(dev, abs(1 / L - 1 / ref) * ref)
    ok = traj.status == "completed" and traj.times[-1] >= horizon - 1e-9 and dev <= 0.25
    record(7, "blow-up tracking", ok, f"max relative deviation of 1/linf {dev:.2%} up to t={horizon:.3f}")
    assert ok


def test_c08_pde_consistency(consistency_runs):
    runs, ref = consistency_runs
    gaps = [compare_l1(runs[tau][0].states[-1], ref) for tau in CONSISTENCY_TAUS]
    orders = [math.log2(gaps[i] / gaps[i + 1]) for i in range(2)]
    ok = min(orders) >= 0.8 and gaps[-1] <= 0.05
    record(8, "PDE consistency", ok,
           "L1 gaps " + ", ".join(f"{g:.2e}" for g in gaps) + "; orders " + ", ".join(f"{o:.2f}" for o in orders))
    assert ok


def _order(errs):
    return math.log2(errs[-2] / errs[-1])


def test_c09_poisson_analytics():
    errs = []
    for n in (20, 40, 80):
        grid = build_grid(interval(), n)
        x = grid.centers[0]
        errs.append(np.max(np.abs(poisson.solve_potential(DensityField.uniform(grid)).u.values - x * (1 - x) / 2)))
    o1 = _order(errs)
    errs = []
    for n in (16, 32, 64):
        grid = build_grid(interval(coupling="periodic"), n)
        x = grid.centers[0]
        u = poisson.solve_potential(DensityField(grid, 1 + np.cos(2 * np.pi * x))).u.values
        errs.append(np.max(np.abs(u - np.cos(2 * np.pi * x) / (4 * np.pi**2))))
    o2 = _order(errs)
    rng = np.random.default_rng(11)
    minima = []
    for i in range(100):
        grid = build_grid(interval(), 40) if i % 2 else build_grid(rectangle(), 12)
        rho = DensityField.from_function(grid, lambda *xs: rng.random(xs[0].shape) ** 3)
        minima.append(float(poisson.solve_potential(rho).u.values.min()))
    ok = o1 >= 1.9 and o2 >= 1.9 and min(minima) >= 0
    record(9, "Poisson analytics", ok, f"orders {o1:.3f} (Dirichlet), {o2:.3f} (periodic); min u {min(minima):.2e}")
    assert ok


def test_c10_transport_exactness(oracle_steps, cap_step):
    pairs = [(s["rho"], s["g"]) for s in oracle_steps[0]]
    g, _, _, rho, _ = cap_step
    pairs.append((rho, g))
    rng = np.random.default_rng(4)
    for n in (3, 8, 16, 40):
        grid = build_grid(interval(), n)
        pairs.append(tuple(DensityField.from_function(grid, lambda x: rng.random(x.shape) + 0.01) for _ in range(2)))
    gap_1d = 0.0
    for a, b in pairs:
        q = w2_quantile_1d(a, b, atomic=True).w2_squared
        lp = lp_transport_oracle(a, b).w2_squared
        gap_1d = max(gap_1d, abs(q - lp) / max(lp, 1e-300))
    grid = build_grid(rectangle(), (2, 4))
    eps = 1e-2
    bound = 2 * eps * math.log(grid.size)
    gap_2d = 0.0
    for _ in range(3):
        a, b = (DensityField.from_function(grid, lambda x, y: rng.random(x.shape) + 0.05) for _ in range(2))
        gap_2d = max(gap_2d, abs(sinkhorn_entropic(a, b, eps).w2_squared - lp_transport_oracle(a, b).w2_squared))
    grid = build_grid(interval(), 400)
    x = grid.centers[0]
    w2 = w2_quantile_1d(DensityField(grid, np.where(x < 0.5, 2.0, 0.0)), DensityField.uniform(grid)).w2_squared
    ok = gap_1d <= 1e-10 and gap_2d <= bound and abs(w2 - 1 / 12) <= 1e-3
    record(10, "transport exactness", ok,
           f"quantile/LP rel gap {gap_1d:.1e}; Sinkhorn/LP gap {gap_2d:.2e} <= {bound:.2e}; block W2^2 {w2:.6f}")
    assert ok


def test_c11_invariants(peak_runs, blowup_run, consistency_runs, cap_step, oracle_steps):
    worst = {"mass_defect": 0.0, "min_value": math.inf, "cap_excess": -math.inf, "symmetry_defect": 0.0}
    all_ok = True
    symmetric_runs = 0
    for name, traj, cfg in _all_runs(peak_runs, blowup_run, consistency_runs):
        inv, ok = invariant_report(traj, cfg)
        all_ok &= ok
        worst["mass_defect"] = max(worst["mass_defect"], inv["mass_defect"])
        worst["min_value"] = min(worst["min_value"], inv["min_value"])
        worst["cap_excess"] = max(worst["cap_excess"], inv["cap_excess"])
        worst["symmetry_defect"] = max(worst["symmetry_defect"], inv["symmetry_defect"])
        v0 = traj.states[0].values
        symmetric_runs += bool(np.max(np.abs(v0 - v0[::-1])) <= 1e-14 * v0.max())
    _, cfg, _, rho, _ = cap_step
    all_ok &= bool(rho.values.max() <= cfg.cap) and abs(rho.values.sum() * rho.grid.h - 1) <= 1e-9
    for s in oracle_steps[0]:
        r = s["rho"]
        all_ok &= abs(r.values.sum() * r.grid.h - 1) <= 1e-9 and bool(r.values.min() >= 0)
    ok = all_ok and symmetric_runs >= 3
    record(11, "conservation and structure", ok,
           f"mass {worst['mass_defect']:.1e}, min {worst['min_value']:.2e}, cap excess {worst['cap_excess']:.1e}, "
           f"asymmetry {worst['symmetry_defect']:.1e} over {symmetric_runs} symmetric runs")
    assert ok


def test_c12_calibration(tmp_path):
    start = time.perf_counter()
    code = cmd_validate(None, tmp_path, quiet=True)
    elapsed = time.perf_counter() - start
    with open(tmp_path / "calibration.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    rates = [float(r["pass_rate"]) for r in rows]
    c0 = float(rows[0]["c0_empirical"]) if rows else 0.0
    monotone = all(b <= a for a, b in zip(rates, rates[1:]))
    ok = code == EXIT_OK and len(rows) > 0 and monotone and c0 > 0 and elapsed < 900
    record(12, "calibration", ok, f"{len(rows)} rows, empirical c0 >= {c0:g}, validate took {elapsed:.1f}s")
    assert ok
