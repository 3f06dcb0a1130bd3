import numpy as np
import pytest

from nscbf import safeset as ss
from nscbf.controllers import (ActiveComponentConfig, AdaptiveConfig, AllComponentsConfig,
                               InputBox, ObjectiveSpec, QPController, adaptive_rows, cbf_rows,
                               search_feasible_params, u_act, u_adp, u_all, verify_assumption2)
from nscbf.dynamics import PiecewiseDynamics, active_J
from nscbf.qp import QPProblem, QPStatus, max_strict_margin, solve_qp
from nscbf.scenarios import sample_states
from support import affine_component, quadratic_component

UNIT = ObjectiveSpec.explicit([[1.0]], [0.0])


def _nominal(sc):
    return sc.objective(0)


# --- active-component program -------------------------------------------------

@pytest.mark.parametrize("x", [(0.5, -0.2), (0.5, 0.2), (0.9, -0.05), (0.2, 0.6)])
def test_u_act_matches_closed_forms(ex1, x):
    r = u_act(np.array(x), ex1.dnf, ex1.dyn, UNIT)
    x1, x2 = x
    expected = (x1 - x2) / 3 if x2 < 0 else (x1 + x2) / 3
    assert r.feasible
    assert r.input[0] == pytest.approx(expected, abs=1e-12)


def test_u_act_on_the_surface_uses_lowest_piece(ex1):
    r = u_act(np.array([1.0, 0.0]), ex1.dnf, ex1.dyn, UNIT)
    assert r.pieces == (1,) and r.active_J == {1, 2} and r.active_I == {1, 2}
    assert r.input[0] == pytest.approx(1.0, abs=1e-12)


def test_u_act_interior_gives_free_minimizer(ex1):
    obj = ObjectiveSpec.explicit([[2.0]], [-1.0])
    r = u_act(np.array([-0.5, -0.3]), ex1.dnf, ex1.dyn, obj)
    assert r.input[0] == pytest.approx(0.25, abs=1e-12)
    assert r.min_margin > 0


def test_u_act_infeasible_is_reported():
    comps = {1: affine_component(1, [-1.0], 1.0)}
    dnf = ss.to_dnf(ss.Leaf(1), comps)
    dyn = PiecewiseDynamics.single(lambda x: np.ones(1), lambda x: np.ones((1, 1)), 1, 1)
    r = u_act(np.array([1.0]), dnf, dyn, UNIT, bounds=InputBox([0.0], [0.0]))
    assert r.status is QPStatus.INFEASIBLE and r.input is None and not r.feasible
    assert "infeasible" in r.message


def test_strict_boundary_constrains_both_pieces(ex1):
    r = u_act(np.array([1.0, 0.0]), ex1.dnf, ex1.dyn, UNIT, ActiveComponentConfig(strict_boundary=True))
    assert r.pieces == (1, 2) and len(r.margins) == 4
    assert r.min_margin >= -1e-8


# --- all-components program ---------------------------------------------------

def test_single_component_set_agrees_with_u_act(disks):
    comps = {1: quadratic_component(1, [0.0, 0.0], 1.0)}
    dnf = ss.to_dnf(ss.Leaf(1), comps)
    dyn = disks.dyn
    obj = ObjectiveSpec.track_nominal(lambda x: np.array([1.0, 0.5]) - x, 2)
    for x in np.random.default_rng(0).uniform(-0.7, 0.7, size=(100, 2)):
        a = u_act(x, dnf, dyn, obj)
        b = u_all(x, dnf, dyn, obj, AllComponentsConfig(1.0, 25.0))
        assert np.linalg.norm(a.input - b.input) <= 1e-8


def test_u_all_agrees_with_u_act_where_extra_rows_are_slack(ex1):
    rng = np.random.default_rng(1)
    checked = 0
    for x in sample_states(ex1, 400, rng, inside=True):
        a = u_act(x, ex1.dnf, ex1.dyn, UNIT)
        b = u_all(x, ex1.dnf, ex1.dyn, UNIT, AllComponentsConfig(1.0, 10.0))
        A, c = cbf_rows(ex1.dnf, ex1.dyn, x, ex1.dnf.component_ids, a.pieces, 1.0)
        if np.all(A @ a.input - c > 1e-9):
            checked += 1
            assert np.linalg.norm(a.input - b.input) <= 1e-8
    assert checked > 50


def test_u_all_at_corner(ex1):
    x = np.array([1.0, 0.0])
    r = u_all(x, ex1.dnf, ex1.dyn, UNIT, AllComponentsConfig(1.0, 10.0))
    assert r.feasible and len(r.margins) == 2
    ev = ex1.dnf.evaluate(x)
    assert np.all(ss.transition_betas(ex1.dnf, ev, 10.0) == 0)
    A, c = cbf_rows(ex1.dnf, ex1.dyn, x, [1, 2], (1,), 1.0)
    assert max_strict_margin(A, c)[0] > 0
    assert r.input[0] == pytest.approx(1.0, abs=1e-10)


def test_far_component_is_relaxed_by_transition(multiagent):
    sc = multiagent
    x = np.array(sc.config.initial_states[0], float)
    x[:2] = [-3.0, -3.0]  # agent 1 deep in C_{1,2}, far from C_{1,1}
    cfg = AllComponentsConfig(1.0, 100.0)
    r = u_all(x, sc.dnf, sc.dyn, _nominal(sc), cfg)
    assert r.feasible
    k = sc.dnf.component_ids.index(1)
    assert r.margins[k] > 1.0
    assert r.qp.duals[k] == 0.0
    # dropping the far component entirely leaves the input unchanged
    ids = [i for i in sc.dnf.component_ids if i != 1]
    beta = ss.transition_betas(sc.dnf, sc.dnf.evaluate(x), 100.0)
    A, c = cbf_rows(sc.dnf, sc.dyn, x, ids, (1,), 1.0, np.delete(beta, k))
    s = solve_qp(QPProblem(2 * np.eye(10), -2 * (sc.goal(0) - x), A, c))
    assert np.allclose(s.minimizer, r.input, atol=1e-9)


# --- adaptive program -----------------------------------------------------------

def test_adaptive_interior_returns_lower_bounds(multiagent):
    sc = multiagent
    cfg = AdaptiveConfig()
    # near the goals every agent is far from the obstacle and the others
    x = sc.goal(0) + np.random.default_rng(2).uniform(-0.2, 0.2, size=10)
    u_nom = sc.goal(0) - x
    A, c, _ = adaptive_rows(sc.dnf, sc.dyn, x, (1,))
    z0 = np.concatenate([u_nom, [cfg.c_alpha, cfg.c_M]])
    assert np.all(A @ z0 - c > 0)  # every constraint slack at the nominal point
    r = u_adp(x, sc.dnf, sc.dyn, _nominal(sc), cfg)
    assert np.allclose(r.input, u_nom, atol=1e-8)
    assert r.adaptive_alpha == pytest.approx(cfg.c_alpha, abs=1e-8)
    assert r.adaptive_M == pytest.approx(cfg.c_M, abs=1e-8)


def test_adaptive_at_corner(ex1):
    r = u_adp(np.array([1.0, 0.0]), ex1.dnf, ex1.dyn, UNIT, AdaptiveConfig(1.0, 1.0, 0.1, 0.1))
    assert r.feasible and r.min_margin >= -1e-8
    # the resulting field does not leave through either edge
    u = r.input[0]
    for g in ([-1.0, 1.0], [-1.0, -1.0]):
        assert np.dot(g, [1.0 - 2 * u, u]) >= -1e-8


def test_adaptive_keeps_one_row_per_component_and_piece(multiagent):
    x = np.array(multiagent.config.initial_states[0], float)
    A, c, _ = adaptive_rows(multiagent.dnf, multiagent.dyn, x, (1,))
    assert A.shape == (20, 12)
    # the kept M coefficient is the smallest over the clauses holding i
    ev = multiagent.dnf.evaluate(x)
    for k, i in enumerate(multiagent.dnf.component_ids):
        coefs = [ev.h - ev.h_ell[l] for l in multiagent.dnf.inverted[i]]
        assert A[k, 11] == pytest.approx(min(coefs))


def test_adaptive_bounds_hold(multiagent, ex1):
    rng = np.random.default_rng(5)
    for sc, obj in ((multiagent, _nominal(multiagent)), (ex1, UNIT)):
        cfg = AdaptiveConfig(1.0, 100.0, 0.1, 0.1)
        for x in sample_states(sc, 30, rng, inside=True):
            r = u_adp(x, sc.dnf, sc.dyn, obj, cfg)
            assert r.feasible
            assert r.adaptive_alpha >= cfg.c_alpha - 1e-9 and r.adaptive_M >= cfg.c_M - 1e-9


# --- shared properties ------------------------------------------------------------

def test_constraint_certification(three_scenarios):
    rng = np.random.default_rng(8)
    for sc in three_scenarios:
        obj = sc.objective(0)
        progs = [
            QPController("act", sc.dnf, sc.dyn, obj, bounds=sc.bounds),
            QPController("all", sc.dnf, sc.dyn, obj, AllComponentsConfig(1.0, 50.0), sc.bounds),
            QPController("adp", sc.dnf, sc.dyn, obj, bounds=sc.bounds),
        ]
        X = np.vstack([sample_states(sc, 20, rng, inside=True), sc.boundary_samples(10)])
        for x in X:
            for ctl in progs:
                r = ctl(x)
                if r.feasible:
                    assert r.min_margin >= -1e-8
                    assert r.qp.kkt.ok
                    if sc.bounds is not None:
                        assert sc.bounds.contains(r.input)


def test_config_validation():
    with pytest.raises(ValueError):
        ActiveComponentConfig(alpha_gain=0.0)
    with pytest.raises(ValueError):
        AllComponentsConfig(1.0, -1.0)
    with pytest.raises(ValueError):
        AdaptiveConfig(q_M=0.0)
    with pytest.raises(ValueError):
        InputBox([1.0], [0.0])
    with pytest.raises(ValueError):
        QPController("mpc", None, None, None)


def test_track_nominal_expands_objective():
    obj = ObjectiveSpec.track_nominal(lambda x: np.array([1.0, -2.0]), 2)
    assert np.array_equal(obj.Q(None), np.eye(2))
    assert np.array_equal(obj.b(None), [-2.0, 4.0])


# --- feasibility assumption and parameter search --------------------------------

def test_assumption_holds_on_builtins(ex1, multiagent):
    for sc in (ex1, multiagent):
        rep = verify_assumption2(sc.dnf, sc.dyn, sc.boundary_samples(200), sc.bounds, sc.tolerances)
        assert rep.passed and rep.min_margin > 0 and len(rep.margins) == 200


def _zero_input_problem():
    comps = {1: affine_component(1, [-1.0], 1.0)}  # C = {x <= 1}
    dnf = ss.to_dnf(ss.Leaf(1), comps)
    dyn = PiecewiseDynamics.single(lambda x: np.ones(1), lambda x: np.ones((1, 1)), 1, 1)
    return dnf, dyn, InputBox([0.0], [0.0])


def test_assumption_fails_with_zero_input_and_outward_drift():
    dnf, dyn, box = _zero_input_problem()
    rep = verify_assumption2(dnf, dyn, [np.array([1.0])], box)
    assert not rep.passed and rep.min_margin < 0
    assert np.array_equal(rep.worst_sample, [1.0])


def test_assumption_skips_interior_samples(ex1):
    rep = verify_assumption2(ex1.dnf, ex1.dyn, [np.array([0.0, 0.0]), np.array([1.0, 0.0])])
    assert rep.skipped == 1 and len(rep.margins) == 1


def test_search_returns_smallest_pair_for_easy_set():
    comps = {1: affine_component(1, [-1.0], 1.0)}
    dnf = ss.to_dnf(ss.Leaf(1), comps)
    dyn = PiecewiseDynamics.single(lambda x: np.zeros(1), lambda x: np.ones((1, 1)), 1, 1)
    res = search_feasible_params(dnf, dyn, [np.array([v]) for v in (-1.0, 0.0, 1.0)], [0.5, 1.0], [1.0, 10.0])
    assert res.found and (res.alpha, res.M) == (0.5, 1.0)


def test_search_on_example1_returns_first_feasible_entry(ex1):
    rng = np.random.default_rng(0)
    samples = np.vstack([ex1.boundary_samples(50), sample_states(ex1, 50, rng, inside=True)])
    grid = [1.0, 10.0, 100.0]
    res = search_feasible_params(ex1.dnf, ex1.dyn, samples, [1.0], grid)
    assert res.found and res.alpha == 1.0
    # independent scan: first M for which every sample is strictly feasible under every active piece
    first = None
    for M in grid:
        ok = True
        for x in samples:
            ev = ex1.dnf.evaluate(x)
            beta = ss.transition_betas(ex1.dnf, ev, M)
            A, c = cbf_rows(ex1.dnf, ex1.dyn, x, ex1.dnf.component_ids, sorted(active_J(ex1.dyn, x)), 1.0, beta)
            ok &= max_strict_margin(A, c)[0] > 0
        if ok:
            first = M
            break
    assert res.M == first


def test_search_reports_not_found():
    # C = {x >= 0} n {x <= 0} has empty interior
    comps = {1: affine_component(1, [1.0], 0.0), 2: affine_component(2, [-1.0], 0.0)}
    dnf = ss.to_dnf(ss.Intersection([ss.Leaf(1), ss.Leaf(2)]), comps)
    dyn = PiecewiseDynamics.single(lambda x: np.zeros(1), lambda x: np.ones((1, 1)), 1, 1)
    res = search_feasible_params(dnf, dyn, [np.array([0.0])], [1.0, 2.0], [1.0, 10.0])
    assert not res.found and res.alpha is None
    assert np.array_equal(res.worst_sample, [0.0]) and res.worst_margin <= 0


def test_search_rejects_bad_grids(ex1):
    with pytest.raises(ValueError):
        search_feasible_params(ex1.dnf, ex1.dyn, [np.zeros(2)], [1.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        search_feasible_params(ex1.dnf, ex1.dyn, [np.zeros(2)], [1.0], [-1.0])
