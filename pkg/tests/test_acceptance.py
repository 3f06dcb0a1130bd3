"""End-to-end acceptance checks.

Each test records one ``ACCEPTANCE n PASS|FAIL`` line (shown in the
terminal summary) and then asserts.  Runtime limits are part of the
criteria and are asserted like any other check.
"""
from pathlib import Path

import numpy as np

from nscbf import safeset as ss
from nscbf.controllers import AllComponentsConfig, QPController, verify_assumption2
from nscbf.dynamics import PiecewiseDynamics
from nscbf.qp import QPProblem, solve_qp, verify_kkt
from nscbf.scenarios import load_scenario, sample_states
from nscbf.sim import IntegratorConfig, continuity_probe, simulate
from support import (Stopwatch, grid_minimum, member, random_components, random_feasible_qp,
                     random_tree, report_criterion, semicontinuous_at)

CORNER = np.array([1.0, 0.0])
ZERO_INPUT = Path(__file__).resolve().parents[1] / "demos" / "configs" / "zero-input.yaml"


def x1_closed_form(t):
    return 1.5 - 0.5 * np.exp(-2 * np.asarray(t) / 3)


def test_criterion_1_counterexample(ex1):
    ctl = ex1.controller(0)
    cfg = IntegratorConfig(dt=1e-3, t_final=1.0, sliding_mode="equiv")
    with Stopwatch() as sw:
        traj, rep = simulate(CORNER, ctl, ex1.dnf, ex1.dyn, cfg)
    errs = []
    for t in (0.25, 0.5, 1.0):
        k = int(np.argmin(np.abs(traj.times - t)))
        errs.append(abs(traj.states[k, 0] - x1_closed_form(t)))
    checks = {
        "x1 within 5e-3": max(errs) <= 5e-3,
        "min_h <= -0.23": rep.min_h <= -0.23,
        "runtime < 1 s": sw.seconds < 1.0,
    }
    ok = report_criterion(1, f"u_act leaves C from the corner (max x1 error {max(errs):.1e}, "
                             f"min_h {rep.min_h:.4f}, {sw.seconds:.2f} s)", checks)
    assert ok, checks


def _starts_near_corner(sc, n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        x = CORNER + rng.uniform(-0.5, 0.5, size=2)
        if np.linalg.norm(x - CORNER) <= 0.5 and ss.eval_h(sc.dnf, x) >= 0:
            out.append(x)
    return out


def test_criterion_2_repair(ex1):
    starts = _starts_near_corner(ex1, 20, seed=2)
    cfg = IntegratorConfig(dt=1e-3, t_final=1.0, sliding_mode="equiv")
    with Stopwatch() as sw:
        rec = ex1.recommend_params(alpha_grid=[1.0])
        ctl = QPController("all", ex1.dnf, ex1.dyn, ex1.objective(0), AllComponentsConfig(1.0, rec.M))
        reports = [simulate(x0, ctl, ex1.dnf, ex1.dyn, cfg)[1] for x0 in starts]
    worst = min(r.min_h for r in reports)
    checks = {
        "M found": rec.found,
        "min_h >= -1e-3 on all starts": worst >= -1e-3,
        "runtime < 5 s": sw.seconds < 5.0,
    }
    ok = report_criterion(2, f"u_all keeps 20 starts safe (alpha 1, M {rec.M}, worst min_h {worst:.2e}, "
                             f"{sw.seconds:.2f} s)", checks)
    assert ok, checks


def _clause_choices(dnf, L, agent):
    """Which of agent's two region components the active clauses use."""
    first, second = 2 * agent - 1, 2 * agent
    out = set()
    for ell in L:
        clause = dnf.clauses[ell]
        if first in clause:
            out.add(1)
        if second in clause:
            out.add(2)
    return out


def test_criterion_3_multiagent(multiagent):
    sc = multiagent
    with Stopwatch() as sw:
        traj, rep = simulate(sc.config.initial_states[0], sc.controller(0), sc.dnf, sc.dyn,
                             sc.integrator(t_final=20.0))
    final = traj.states[-1].reshape(5, 2)
    goals = sc.goal(0).reshape(5, 2)
    dist = np.linalg.norm(final - goals, axis=1)
    switched = []
    for agent in range(1, 6):
        choices = [_clause_choices(sc.dnf, L, agent) for L in traj.active_L]
        seen_second = [k for k, c in enumerate(choices) if c == {2}]
        later_first = seen_second and any(c == {1} for c in choices[seen_second[0]:])
        switched.append(bool(later_first))
    checks = {
        "agents within 0.1 of goals": np.all(dist <= 0.1),
        "min_h >= -1e-3": rep.min_h >= -1e-3,
        "zero infeasible steps": rep.infeasible_steps == 0,
        "every agent switches clause choice": all(switched),
        "runtime < 30 s": sw.seconds < 30.0,
    }
    ok = report_criterion(3, f"adaptive QP reconfigures 5 agents (max goal distance {dist.max():.3f}, "
                             f"min_h {rep.min_h:.2e}, {sw.seconds:.2f} s)", checks)
    assert ok, checks


def test_criterion_4_dnf_oracle():
    rng = np.random.default_rng(404)
    worst, sign_mismatch, bool_mismatch = 0.0, 0, 0
    for _ in range(50):
        comps = random_components(rng, int(rng.integers(1, 9)))
        expr = random_tree(rng, list(comps), 4)
        dnf = ss.to_dnf(expr, comps)
        X = rng.uniform(-2, 2, size=(10_000, 2))
        tree = ss.eval_tree(expr, comps, X.T)
        h = dnf.evaluate(X.T).h
        worst = max(worst, float(np.max(np.abs(tree - h))))
        sign_mismatch += int(np.sum((tree >= 0) != (h >= 0)))
        for x, hx in zip(X[:200], h[:200]):
            bool_mismatch += (hx >= 0) != member(expr, comps, x)
    checks = {
        "values agree within 1e-12": worst <= 1e-12,
        "membership signs agree": sign_mismatch == 0,
        "boolean membership agrees": bool_mismatch == 0,
    }
    ok = report_criterion(4, f"normal form matches the tree on 50 x 10^4 states (max gap {worst:.1e})", checks)
    assert ok, checks


def test_criterion_5_qp():
    rng = np.random.default_rng(505)
    gaps, kkt_ok, below_grid, scale_err = [], True, True, 0.0
    for _ in range(100):
        p = random_feasible_qp(rng)
        s = solve_qp(p)
        g = grid_minimum(p)
        gaps.append(g - s.objective)
        below_grid &= s.objective <= g + 1e-9
        kkt_ok &= s.optimal and verify_kkt(p, s, 1e-6).ok
        for gamma in (1e-3, 0.5, 7.0, 1e3):
            zg = solve_qp(QPProblem(gamma * p.P, gamma * p.q, p.A, p.c, p.lower, p.upper)).minimizer
            scale_err = max(scale_err, float(np.max(np.abs(zg - s.minimizer))))
    checks = {
        "objective gap <= 1e-3": max(gaps) <= 1e-3 and below_grid,
        "KKT at 1e-6": kkt_ok,
        "scaling invariance 1e-8": scale_err <= 1e-8,
    }
    ok = report_criterion(5, f"QP matches grid oracle on 100 programs (max gap {max(gaps):.1e}, "
                             f"scaling drift {scale_err:.1e})", checks)
    assert ok, checks


def test_criterion_6_beta(three_scenarios):
    M = 100.0
    rng = np.random.default_rng(606)
    low_ok, active_ok, checked = True, True, 0
    for sc in three_scenarios:
        eps = sc.tolerances.eps_L
        # boundary points add the ties that uniform states almost never hit
        X = np.vstack([sample_states(sc, 10_000, rng), sc.boundary_samples(300, seed=6)])
        for x in X:
            ev = sc.dnf.evaluate(x)
            beta = ss.transition_betas(sc.dnf, ev, M)
            low_ok &= bool(np.all(beta >= -M * eps))
            tilde = ss.tilde_I(sc.dnf, ev, sc.tolerances)
            for k, i in enumerate(sc.dnf.component_ids):
                if i in tilde:
                    active_ok &= bool(beta[k] <= M * eps)
                    checked += 1
    checks = {"beta >= -M eps_L": low_ok, "beta <= M eps_L on tilde_I": active_ok}
    ok = report_criterion(6, f"transition bounds on 3 x (10^4 + 300) states ({checked} enlarged-active pairs)", checks)
    assert ok, checks


def test_criterion_7_index_sets(three_scenarios):
    rng = np.random.default_rng(707)
    inclusion, semi = 0, 0
    n_incl = n_semi = 0
    for sc in three_scenarios:
        tol = sc.tolerances
        for x in sample_states(sc, 10_000, rng):
            ev = sc.dnf.evaluate(x)
            inclusion += ss.active_I(sc.dnf, ev, tol) <= ss.tilde_I(sc.dnf, ev, tol)
            n_incl += 1
        # half the base points on the boundary, where the activity sets change
        base = np.vstack([sc.boundary_samples(50, seed=7), sample_states(sc, 50, rng)])
        for x in base:
            semi += semicontinuous_at(sc.dnf, x, rng, tol)
            n_semi += 1
    checks = {"inclusion 100%": inclusion == n_incl, "semicontinuity 100%": semi == n_semi}
    ok = report_criterion(7, f"index-set properties (inclusion {inclusion}/{n_incl}, "
                             f"semicontinuity {semi}/{n_semi})", checks)
    assert ok, checks


def test_criterion_8_continuity_dichotomy(ex1):
    # same set and drift as example1-corner, but one input matrix everywhere
    smooth = PiecewiseDynamics.single(lambda x: np.array([1.0, 0.0]), lambda x: np.array([[-2.0], [1.0]]), 2, 1)
    ctl_all = QPController("all", ex1.dnf, smooth, ex1.objective(0), AllComponentsConfig(1.0, 10.0))
    path = lambda s: np.array([0.8, -0.2 + 0.4 * s])  # noqa: E731
    cont = continuity_probe(ctl_all, path, 400, refinements=2)
    disc = continuity_probe(ex1.controller(0), path, 400)
    expected = 2 * 0.8 / 3
    checks = {
        "u_all ratios >= 1.8": all(r >= 1.8 for r in cont.ratios),
        "u_act jump 2x1/3 +- 1e-3": abs(disc.max_jumps[0] - expected) <= 1e-3,
    }
    ok = report_criterion(8, f"continuity dichotomy (u_all ratios {[round(r, 3) for r in cont.ratios]}, "
                             f"u_act jump {disc.max_jumps[0]:.4f})", checks)
    assert ok, checks


def test_criterion_9_verifier(ex1, multiagent):
    zero = load_scenario(str(ZERO_INPUT))
    with Stopwatch() as sw:
        reps = {sc.name: verify_assumption2(sc.dnf, sc.dyn, sc.boundary_samples(200), sc.bounds,
                                            sc.tolerances)
                for sc in (ex1, multiagent, zero)}
    checks = {
        "example1-corner passes": reps["example1-corner"].passed,
        "multiagent-reconfig passes": reps["multiagent-reconfig"].passed,
        "200 samples each": all(len(reps[n].margins) == 200 for n in ("example1-corner", "multiagent-reconfig")),
        "zero-input control fails": not reps[zero.name].passed,
        "runtime < 10 s": sw.seconds < 10.0,
    }
    margins = ", ".join(f"{n} {r.min_margin:.3g}" for n, r in reps.items())
    ok = report_criterion(9, f"strict-feasibility verifier (min margins: {margins}; {sw.seconds:.2f} s)", checks)
    assert ok, checks
