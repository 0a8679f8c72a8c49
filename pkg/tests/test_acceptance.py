"""Acceptance gate: every criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -s`` to see one PASS/FAIL line per
criterion.  The heavy pipeline objects (wave, refined Bramson shift, wide
front, gap solves) are built once and shared; total runtime is dominated by
the production-scale gap sweeps (criteria 5, 6, 8, 9).
"""
import math
import time

import numpy as np
import pytest

from bbmgap import binary_law, build_adjoint, build_reaction, solve_wave
from bbmgap.asym import Constants, fitted_decay_rate, theorem1_prediction
from bbmgap.bbm import estimate_gap_tail_mc
from bbmgap.fdm import Grid1D, fit_line, trapz
from bbmgap.gap import (FreeSolutionParams, GapConfig, constant_potential,
                        corrector_diagnostics, free_solution, required_horizon,
                        solve_gap, solve_z_mass)
from bbmgap.kpp import (InitialData, PdeConfig, build_potential,
                        estimate_bramson_shift_refined, front_decay_envelope,
                        shift_derivative_check, solve_front)
from bbmgap.wave import adjoint_ode_residual, wave_ode_residual

SQ2 = math.sqrt(2.0)


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


# ---------------------------------------------------------------------------
# shared pipeline objects


@pytest.fixture(scope="module")
def reaction():
    return build_reaction(binary_law())


@pytest.fixture(scope="module")
def wave_timed(reaction):
    t0 = time.time()
    w = solve_wave(reaction)
    return w, time.time() - t0


@pytest.fixture(scope="module")
def xbar0_live(reaction, wave_timed):
    """The artifact's own refined Bramson-shift estimate."""
    w, _ = wave_timed
    xb, err = estimate_bramson_shift_refined(r=reaction, wave=w)
    return xb, err


@pytest.fixture(scope="module")
def adjoint_timed(wave_timed, xbar0_live):
    w, _ = wave_timed
    t0 = time.time()
    adj = build_adjoint(w, xbar0_live[0])
    return adj, time.time() - t0


@pytest.fixture(scope="module")
def wide_potential(reaction, wave_timed, xbar0_live):
    """Heaviside front on the widest grid (a <= 40), to the planned horizon."""
    w, _ = wave_timed
    a_max = 40.0
    T = max(required_horizon(a, reaction) for a in (2.0, 40.0))
    cfg = PdeConfig(t_final=T, L_left=a_max + 50.0)
    fs = solve_front(reaction, InitialData(), cfg, wave=w)
    return fs, build_potential(fs, reaction, xbar0_live[0], w)


@pytest.fixture(scope="module")
def gap_runs(wide_potential, adjoint_timed):
    """Production gap solves shared by criteria 5, 6, 8, 10."""
    _, pot = wide_potential
    adj, _ = adjoint_timed
    runs = {}
    for a in (2.0, 3.0, 4.0, 5.0, 6.0, 15.0, 20.0, 25.0, 30.0, 40.0):
        runs[a] = solve_gap(a, pot, adj, GapConfig())
    return runs


# ---------------------------------------------------------------------------
# criteria


def test_criterion_1_wave_correctness(reaction, wave_timed):
    w, wall = wave_timed
    resid = float(np.max(wave_ode_residual(w)))
    coeff_err = abs(w.right_tail_coeff - 1.0)
    slope_err = abs(w.left_tail_slope / reaction.gamma_star - 1.0)
    ok = resid < 1e-8 and coeff_err < 5e-3 and slope_err < 5e-3 and wall < 1.0
    report("1 (wave)", ok,
           f"residual {resid:.2e} < 1e-8; right coeff err {coeff_err:.2e} < 5e-3; "
           f"left slope err {slope_err:.2e} < 5e-3; {wall:.2f}s < 1s")
    assert resid < 1e-8
    assert coeff_err < 5e-3
    assert slope_err < 5e-3
    assert wall < 1.0


def test_criterion_2_adjoint_correctness(reaction, adjoint_timed, xbar0_live):
    adj, wall = adjoint_timed
    resid = float(np.max(adjoint_ode_residual(adj)))
    # left log-slope -> sqrt(N)
    x = adj.grid.x
    mask = x < adj.wave.x_core_min / 2.0
    dlog = np.diff(np.log(adj.psi[mask])) / adj.grid.dx
    left_err = float(np.max(np.abs(dlog / math.sqrt(2.0) - 1.0)))
    # psi(x)/x -> lambda* e^{lambda* xbar0}: the limit is read off the affine
    # fit slope on the right window (the pointwise ratio at finite x carries
    # the O(1) affine intercept and cannot converge at desk scale)
    target = reaction.lambda_star * math.exp(reaction.lambda_star * xbar0_live[0])
    right_err = abs(adj.right_slope / target - 1.0)
    ok = resid < 1e-6 and left_err < 0.01 and right_err < 0.01 and wall < 1.0
    report("2 (adjoint)", ok,
           f"residual {resid:.2e} < 1e-6; left slope err {left_err:.2e} < 1e-2; "
           f"psi/x limit err {right_err:.2e} < 1e-2; {wall:.2f}s < 1s")
    assert resid < 1e-6
    assert left_err < 0.01
    assert right_err < 0.01
    assert wall < 1.0


def test_criterion_3_closed_form_oracle(reaction, wave_timed):
    w, _ = wave_timed
    t0 = time.time()
    params = FreeSolutionParams(a=5.0, reaction=reaction)
    # free solution satisfies its PDE under 4th-order differences
    rng = np.random.default_rng(31)
    lam = reaction.lambda_star
    hx, ht = 0.02, 0.002
    worst = 0.0
    for _ in range(100):
        t = rng.uniform(0.5, 5.0)
        x = rng.uniform(-12.0, 6.0)
        xs = x + hx * np.arange(-2, 3)
        ts = t + ht * np.arange(-2, 3)
        px = free_solution(t, xs, params, check=True)
        pt = np.array([free_solution(tv, np.array([x]), params)[0] for tv in ts])
        dpdt = (pt[0] - 8 * pt[1] + 8 * pt[3] - pt[4]) / (12 * ht)
        dpdx = (px[0] - 8 * px[1] + 8 * px[3] - px[4]) / (12 * hx)
        d2 = (-px[0] + 16 * px[1] - 30 * px[2] + 16 * px[3] - px[4]) / (12 * hx * hx)
        resid = dpdt - (d2 - 1.5 / (lam * (t + 1.0)) * dpdx - reaction.N * px[2])
        worst = max(worst, abs(resid) / (1e-5 * abs(px[2]) + 1e-12))
    # gap solver with V frozen at N reproduces the closed form at t = 5
    g = Grid1D.from_bounds(-55.0, 60.0, 0.05)
    gs = solve_gap(5.0, constant_potential(g, reaction, 0.0),
                   build_adjoint(w, 0.0), GapConfig(t_final=5.0))
    p_exact = free_solution(5.0, g.x, params)
    sup_rel = float(np.max(np.abs(gs.r_fields[-1] - p_exact)) / np.max(p_exact))
    wall = time.time() - t0
    ok = worst < 1.0 and sup_rel < 1e-3
    report("3 (closed-form oracle)", ok,
           f"PDE residual ratio {worst:.3f} < 1 (tol 1e-5 rel); "
           f"frozen-N sup err {sup_rel:.2e} < 1e-3; {wall:.1f}s < 10s")
    assert worst < 1.0
    assert sup_rel < 1e-3
    assert wall < 10.0


def test_criterion_4_initial_moment_identity(reaction, adjoint_timed):
    adj, _ = adjoint_timed
    t0 = time.time()
    # evaluated at t0 = 0.002: the initialized moment is psi(-a) (1 + O(t0)),
    # and the default t0 = 0.01 would already contribute 2.1% of that O(t0)
    worst = 0.0
    for a in (5.0, 15.0, 30.0):
        g = Grid1D.from_bounds(-a - 50.0, 40.0, 0.05)
        p0 = free_solution(0.002, g.x, FreeSolutionParams(a=a, reaction=reaction))
        I0 = trapz(adj.psi_at(g.x) * p0, g.dx)
        psi_a = adj.psi_at(np.array([-a]))[0]
        worst = max(worst, abs(I0 / psi_a - 1.0))
    wall = time.time() - t0
    ok = worst < 0.01
    report("4 (initial moment)", ok,
           f"max |I(t0)/psi(-a) - 1| = {worst:.4f} < 0.01 over a in 5,15,30; "
           f"{wall:.1f}s < 60s")
    assert worst < 0.01
    assert wall < 60.0


def test_criterion_5_early_ratio_law(gap_runs):
    gs = gap_runs[30.0]
    t_star = gs.params.t_star
    m = (gs.I_times >= 1.0) & (gs.I_times <= 0.5 * t_star)
    ratio = gs.dIdt_analytic[m] / gs.I_series[m]
    law = 3.0 * SQ2 / (2.0 * (gs.I_times[m] + 1.0))
    worst = float(np.max(np.abs(ratio / law - 1.0)))
    ok = worst < 0.10
    report("5 (early ratio law)", ok,
           f"max |ratio/law - 1| = {worst:.4f} < 0.10 on t in [1, {0.5 * t_star:.1f}], a=30")
    assert worst < 0.10


def test_criterion_6_prefactor_exponent(gap_runs, adjoint_timed):
    adj, _ = adjoint_timed
    big = [15.0, 20.0, 25.0, 30.0, 40.0]
    y = [math.log(gap_runs[a].I_limit) - math.log(adj.psi_at(np.array([-a]))[0])
         for a in big]
    x = [math.log(a / (2.0 * SQ2)) for a in big]
    slope, _, _ = fit_line(np.array(x), np.array(y))
    target = 3.0 * SQ2 / 2.0
    err = abs(slope / target - 1.0)
    ok = err < 0.15
    report("6 (prefactor exponent)", ok,
           f"slope {slope:.4f} vs {target:.4f}, rel err {err:.3f} < 0.15")
    assert err < 0.15


def test_criterion_7_mc_pde_identity(reaction, wide_potential):
    _, pot = wide_potential
    t0 = time.time()
    a_list = [0.5, 1.0, 2.0]
    ests = estimate_gap_tail_mc(binary_law(), 4.0, a_list, 100000, seed=20240801)
    worst_z = 0.0
    details = []
    for e in ests:
        zm = solve_z_mass(e.a, pot, GapConfig(), t_final=4.0)
        z = abs(zm.M_at(4.0) - e.value) / e.stderr
        worst_z = max(worst_z, z)
        details.append(f"a={e.a}: {z:.2f} se")
    wall = time.time() - t0
    ok = worst_z < 3.0
    report("7 (MC-PDE identity)", ok,
           f"max deviation {worst_z:.2f} < 3 binomial se ({'; '.join(details)}); "
           f"{wall:.0f}s < 300s")
    assert worst_z < 3.0


def test_criterion_8_exponential_rate(gap_runs):
    small = [2.0, 3.0, 4.0, 5.0, 6.0]
    p = [gap_runs[a].tail_prob for a in small]
    # rate isolated with the algebraic prefactor carried by the fit; the
    # plain two-parameter slope at these a is biased to ~2.10 by the
    # a^{3 sqrt(N)/(2 lambda*)} factor
    rate = fitted_decay_rate(small, p, with_prefactor=True)
    target = SQ2 + 1.0
    err = abs(rate / target - 1.0)
    ok = err < 0.10
    report("8 (exponential rate)", ok,
           f"rate {rate:.4f} vs {target:.4f}, rel err {err:.3f} < 0.10 "
           f"(raw slope {fitted_decay_rate(small, p):.3f})")
    assert err < 0.10


def test_criterion_9_shift_derivative_identity(reaction, wave_timed, gap_runs,
                                               wide_potential, adjoint_timed):
    w, _ = wave_timed
    t0 = time.time()
    cfg = PdeConfig(t_final=200.0, L_left=51.0)
    rep = shift_derivative_check(reaction, 1.0, [-0.05, -0.1, -0.2], cfg, w)
    _, pot = wide_potential
    adj, _ = adjoint_timed
    gs = solve_gap(1.0, pot, adj, GapConfig())
    ratio = rep["estimate"] / gs.tail_prob
    # step-halving consistency of the one-sided slopes
    halving = abs(rep["slopes"][-0.05] / rep["slopes"][-0.1] - 1.0)
    wall = time.time() - t0
    ok = abs(ratio - 1.0) < 0.10 and halving < 0.05
    report("9 (shift derivative)", ok,
           f"d_y s(0,1) = {rep['estimate']:.5f} vs tail {gs.tail_prob:.5f}, "
           f"ratio {ratio:.3f} in [0.9, 1.1]; y-halving {halving:.3f} < 0.05; "
           f"{wall:.0f}s < 1800s")
    assert abs(ratio - 1.0) < 0.10
    assert halving < 0.05


def test_criterion_10_structural_invariants(reaction, wide_potential, gap_runs,
                                            adjoint_timed):
    fs, pot = wide_potential
    adj, _ = adjoint_timed
    checks = {}
    # fronts: bounds and monotonicity (also enforced inside the solver)
    checks["H in [0,1]"] = bool(np.all(fs.H >= -1e-12) and np.all(fs.H <= 1 + 1e-12))
    checks["H monotone"] = bool(np.all(np.diff(fs.H, axis=1) <= 1e-8))
    # potential bounds and decay envelopes
    env = front_decay_envelope(pot, reaction)
    checks["V in [0,N]"] = bool(np.all(pot.V >= -1e-10) and np.all(pot.V <= reaction.N + 1e-10))
    checks["envelope B moderate"] = env["B"] < 50.0 * reaction.N
    # gap positivity and corrector sign across all production runs
    checks["r >= 0"] = all(g.worst_negative >= -1e-12 for g in gap_runs.values())
    checks["q >= 0"] = all(g.corrector_min >= -1e-8 for g in gap_runs.values())
    rep = corrector_diagnostics(gap_runs[30.0], adj)
    checks["crossover in band"] = rep["crossover_in_band"]
    # late flatness: log|dI/dt / I| vs log t slope <= -1.2 for t >= max(a, 4t*)
    gs = gap_runs[5.0]
    m = gs.I_times >= max(gs.a, 4.0 * gs.params.t_star)
    slope, _, _ = fit_line(np.log(gs.I_times[m]),
                           np.log(np.abs(gs.dIdt_analytic[m] / gs.I_series[m])))
    checks["late flatness slope <= -1.2"] = slope <= -1.2
    ok = all(checks.values())
    report("10 (structural invariants)", ok,
           "; ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items())
           + f"; flatness slope {slope:.2f}")
    assert ok, checks
