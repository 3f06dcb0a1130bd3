"""Checking the strict-feasibility assumption before trusting a controller.

On the boundary of the safe set, some admissible input has to push every
nearly-active component strictly inward under every dynamics piece that is
active there.  The verifier samples boundary points and solves a small LP
per point for the largest uniform margin (capped at 1).

Both built-in scenarios pass.  The zero-input config in demos/configs
fails: its only input is pinned to zero while the drift pushes out of the
set, so the margin is negative everywhere on the boundary.

Run:  python demos/verify_assumption.py
"""
from pathlib import Path

from nscbf.controllers import verify_assumption2
from nscbf.scenarios import load_scenario

HERE = Path(__file__).resolve().parent


def check(source, n=200):
    sc = load_scenario(source)
    rep = verify_assumption2(sc.dnf, sc.dyn, sc.boundary_samples(n), sc.bounds, sc.tolerances)
    verdict = "pass" if rep.passed else "FAIL"
    print(f"{sc.name:22s} {verdict:4s}  samples {len(rep.margins):3d}  skipped {rep.skipped:3d}  "
          f"min margin {rep.min_margin:+.3f}")
    if not rep.passed:
        print(f"{'':22s} worst sample {rep.worst_sample.tolist()}")
    return sc, rep


def main():
    for name in ("example1-corner", "multiagent-reconfig", "disk-union"):
        check(name)
    check(str(HERE / "configs" / "zero-input.yaml"))

    sc = load_scenario("example1-corner")
    rec = sc.recommend_params()
    print(f"\nexample1-corner: smallest grid (alpha, M) with strictly feasible "
          f"all-components rows = ({rec.alpha}, {rec.M}), worst margin {rec.worst_margin:.3f}")


if __name__ == "__main__":
    main()
