"""Command line entry point.

    nscbf list-scenarios
    nscbf dump-config --scenario NAME [--out FILE]
    nscbf run --scenario NAME|FILE [--controller act|all|adp] [--alpha A] [--M M]
              [--dt DT] [--tf TF] [--sliding chatter|equiv] [--seed S]
              [--random-starts N] [--strict-boundary] [--out DIR]
    nscbf verify --scenario NAME|FILE [--seed S] [--samples N] [--recommend] [--out DIR]

Exit codes: 0 success, 1 usage or configuration error, 2 safety violation,
3 infeasible QP fallback used, 4 solver failure, 5 verification failed.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import safeset as ss
from .controllers import verify_assumption2
from .qp import QPSolverError
from .scenarios import ConfigError, builtin_names, dump_config, load_scenario, sample_states
from .sim import simulate

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3, 4, 5

log = logging.getLogger("nscbf")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would read as a violation
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nscbf", description="Safety filters for nonsmooth safe sets under piecewise dynamics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("list-scenarios", help="list the built-in scenarios")

    d = sub.add_parser("dump-config", help="print a scenario as YAML")
    d.add_argument("--scenario", required=True)
    d.add_argument("--out", help="write to this file instead of stdout")

    r = sub.add_parser("run", help="simulate the closed loop and export trajectories")
    r.add_argument("--scenario", required=True)
    r.add_argument("--controller", choices=["act", "all", "adp"])
    r.add_argument("--alpha", type=float, help="class-K gain (act/all) or its lower bound c_alpha (adp)")
    r.add_argument("--M", type=float, help="transition weight (all) or its lower bound c_M (adp)")
    r.add_argument("--dt", type=float)
    r.add_argument("--tf", type=float)
    r.add_argument("--sliding", choices=["chatter", "equiv"])
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--random-starts", type=int, default=0,
                   help="also simulate N seeded random initial states inside the safe set")
    r.add_argument("--strict-boundary", action="store_true",
                   help="constrain every dynamics piece active at a switching surface")
    r.add_argument("--out", default="out")

    v = sub.add_parser("verify", help="check the feasibility assumption and the scenario data")
    v.add_argument("--scenario", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--samples", type=int, help="number of boundary samples")
    v.add_argument("--recommend", action="store_true", help="search the (alpha, M) grid")
    v.add_argument("--out", help="also write the report to DIR/verify.json")
    return p


def _controller_spec(sc, args):
    spec = dataclasses.replace(sc.config.controller)
    if args.controller:
        spec.type = args.controller
    if args.strict_boundary:
        spec.strict_boundary = True
    if spec.type == "adp":
        if args.alpha is not None:
            spec.c_alpha = args.alpha
        if args.M is not None:
            spec.c_M = args.M
    else:
        if args.alpha is not None:
            spec.alpha = args.alpha
        if args.M is not None:
            spec.M = args.M
    return spec


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    spec = _controller_spec(sc, args)
    if spec.type == "all" and spec.M is None:
        rec = sc.recommend_params(alpha_grid=[spec.alpha], seed=args.seed)
        if not rec.found:
            log.error("no transition weight on the grid makes the constraints strictly feasible")
            return EXIT_INFEASIBLE
        spec.M = rec.M
        log.info("using M = %g from the parameter search", spec.M)
    integ = sc.integrator(dt=args.dt, t_final=args.tf, sliding_mode=args.sliding)

    starts = [np.array(x) for x in sc.config.initial_states]
    goal_idx = list(range(len(starts)))
    if args.random_starts:
        extra = sample_states(sc, args.random_starts, np.random.default_rng(args.seed), inside=True)
        starts += list(extra)
        goal_idx += [0] * len(extra)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    flags = {"aborted": False, "violated": False, "infeasible": False}
    for k, (x0, gk) in enumerate(zip(starts, goal_idx)):
        ctl = sc.controller(gk, spec)
        t0 = time.perf_counter()
        try:
            traj, rep = simulate(x0, ctl, sc.dnf, sc.dyn, integ, sc.tolerances)
        except QPSolverError as exc:
            log.error("run %d: solver failed at the initial state: %s", k, exc)
            runs.append({"index": k, "x0": x0, "aborted": True})
            flags["aborted"] = True
            continue
        log.info("run %d: %d steps in %.2f s", k, len(traj) - 1, time.perf_counter() - t0)
        fname = f"trajectory_{k}.csv"
        traj.to_csv(out / fname)
        entry = {
            "index": k,
            "x0": x0,
            "trajectory": fname,
            "min_h": rep.min_h,
            "first_violation_time": rep.first_violation_time,
            "violation_tol": rep.violation_tol,
            "infeasible_steps": rep.infeasible_steps,
            "aborted": rep.aborted,
            "sliding_steps": int(traj.sliding.sum()),
            "final_state": traj.states[-1],
        }
        goal = sc.goal(gk)
        if goal is not None:
            entry["final_goal_distance"] = float(np.linalg.norm(traj.states[-1] - goal))
        runs.append(entry)
        flags["aborted"] |= rep.aborted
        flags["violated"] |= rep.violated
        flags["infeasible"] |= rep.infeasible_steps > 0
    # the most severe outcome decides
    code = (EXIT_SOLVER if flags["aborted"] else EXIT_VIOLATION if flags["violated"]
            else EXIT_INFEASIBLE if flags["infeasible"] else EXIT_OK)
    report = {
        "scenario": sc.name,
        "controller": dataclasses.asdict(spec),
        "integrator": {"dt": integ.dt, "t_final": integ.t_final, "scheme": integ.scheme.value,
                       "sliding": integ.sliding_mode.value},
        "seed": args.seed,
        "runs": runs,
        "exit_code": code,
    }
    _write_json(out / "report.json", report)
    worst = min((r.get("min_h", np.inf) for r in runs), default=np.inf)
    print(f"{sc.name}: {len(runs)} run(s), controller {spec.type}, min h = {worst:.6g}, exit {code}")
    return code


def dnf_spot_check(sc, n: int, rng) -> dict:
    """Compare the tree and the DNF evaluation at random states."""
    X = sample_states(sc, n, rng)
    tree = np.array([ss.eval_tree(sc.dnf.source, sc.components, x) for x in X])
    dnf = sc.dnf.evaluate(X.T).h
    return {"samples": n, "max_abs_diff": float(np.max(np.abs(tree - dnf))),
            "sign_agreement": float(np.mean((tree >= 0) == (dnf >= 0)))}


def cmd_verify(args) -> int:
    sc = load_scenario(args.scenario)
    rng = np.random.default_rng(args.seed)
    samples = sc.boundary_samples(args.samples, seed=args.seed)
    a1 = verify_assumption2(sc.dnf, sc.dyn, samples, sc.bounds, sc.tolerances)
    report = {
        "scenario": sc.name,
        "n_clauses": sc.dnf.n_clauses,
        "n_components": len(sc.dnf.component_ids),
        "assumption": {"passed": a1.passed, "min_margin": a1.min_margin,
                       "worst_sample": a1.worst_sample, "samples": len(a1.margins),
                       "skipped": a1.skipped},
        "gradient_check": sc.check_report.get("gradient_errors", {}),
        "dnf_check": dnf_spot_check(sc, 1000, rng),
    }
    if args.recommend:
        rec = sc.recommend_params(seed=args.seed)
        report["recommended"] = {"found": rec.found, "alpha": rec.alpha, "M": rec.M,
                                 "worst_margin": rec.worst_margin}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "verify.json", report)
    print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    return EXIT_OK if a1.passed else EXIT_VERIFY


def cmd_dump(args) -> int:
    sc = load_scenario(args.scenario, run_checks=False)
    text = dump_config(sc.config)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-scenarios":
            for name in builtin_names():
                sc = load_scenario(name, run_checks=False)
                print(f"{name:22s} {sc.config.description}")
            return EXIT_OK
        if args.command == "dump-config":
            return cmd_dump(args)
        if args.command == "run":
            return cmd_run(args)
        return cmd_verify(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
