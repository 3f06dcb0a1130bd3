"""Why constraining only the active component is not enough, and the fix.

The safe set is the wedge {x2 - x1 + 1 >= 0} and {-x2 - x1 + 1 >= 0},
whose tip sits at (1, 0).  The input matrix flips sign across x2 = 0.

Starting at the tip, the active-component QP steers each side toward the
surface x2 = 0.  The two one-sided fields meet there and the state slides
along the surface with x1(t) = 3/2 - exp(-2t/3)/2, out of the wedge.

The all-components QP also constrains the inactive edge (relaxed by the
transition term), so the sliding motion can no longer push x1 past 1.

Run:  python demos/corner_counterexample.py [--out DIR]
"""
import argparse
from pathlib import Path

import numpy as np

from nscbf.controllers import AllComponentsConfig, QPController
from nscbf.scenarios import load_scenario
from nscbf.sim import IntegratorConfig, simulate


def closed_form_x1(t):
    return 1.5 - 0.5 * np.exp(-2.0 * t / 3.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, help="write both trajectories as CSV here")
    args = ap.parse_args(argv)

    sc = load_scenario("example1-corner")
    cfg = IntegratorConfig(dt=1e-3, t_final=1.0, sliding_mode="equiv")
    x0 = np.array([1.0, 0.0])

    act = sc.controller(0)
    traj_act, rep_act = simulate(x0, act, sc.dnf, sc.dyn, cfg)

    print("active-component QP from the corner")
    print(f"{'t':>6} {'x1 sim':>10} {'x1 closed':>10} {'x2':>10} {'h':>9}")
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        k = int(round(t / cfg.dt))
        x = traj_act.states[k]
        print(f"{t:6.2f} {x[0]:10.5f} {closed_form_x1(t):10.5f} {x[1]:10.1e} {traj_act.h_values[k]:9.4f}")
    print(f"min h = {rep_act.min_h:.4f}, first violation at t = {rep_act.first_violation_time}")
    print(f"sliding on {int(traj_act.sliding.sum())} of {len(traj_act)} steps\n")

    # smallest M on the grid that makes the all-components rows strictly feasible
    rec = sc.recommend_params(alpha_grid=[1.0])
    print(f"recommended transition weight: alpha = {rec.alpha}, M = {rec.M}")
    repaired = QPController("all", sc.dnf, sc.dyn, sc.objective(0), AllComponentsConfig(1.0, rec.M))
    traj_all, rep_all = simulate(x0, repaired, sc.dnf, sc.dyn, cfg)
    print("all-components QP from the corner")
    print(f"final state {np.round(traj_all.states[-1], 6).tolist()}, min h = {rep_all.min_h:.2e}, "
          f"infeasible steps = {rep_all.infeasible_steps}")

    # a handful of other starts inside the wedge
    rng = np.random.default_rng(0)
    worst = np.inf
    for _ in range(5):
        while True:
            x = x0 + rng.uniform(-0.5, 0.5, 2)
            if sc.dnf.evaluate(x).h >= 0:
                break
        worst = min(worst, simulate(x, repaired, sc.dnf, sc.dyn, cfg)[1].min_h)
    print(f"worst min h over 5 random starts near the corner: {worst:.2e}")

    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        traj_act.to_csv(args.out / "active_component.csv")
        traj_all.to_csv(args.out / "all_components.csv")
        print(f"trajectories written to {args.out}")


if __name__ == "__main__":
    main()
