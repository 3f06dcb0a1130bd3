"""Scenario configurations: a YAML-backed description of a problem, the
built-in scenarios, and the code that turns a description into live
objects (DNF form, piecewise dynamics, controllers).

Config layout (YAML; all keys lower case)::

    name: example1-corner
    state_dim: 2
    input_dim: 1
    dynamics:
      eps_j: 1.0e-9
      builtin: single-integrator        # or a list of pieces:
      pieces:
        - {id: 1, drift: [1, 0], input_matrix: [[-2], [1]], guard: {a: [0, 1], b: 0}}
    components:                         # ids are 1-based list positions
      - {name: h1, kind: affine, a: [-1, 1], b: 1}
      - {name: d, kind: quadratic-norm, center: [0, 0], radius: 1, outside: false}
      - {name: p, kind: pairwise-distance, first: [0, 1], second: [2, 3], distance: 1}
    safe_set: {intersection: [h1, {union: [d, p]}]}
    controller: {type: act, alpha: 1.0, M: null, ...}
    objective: {kind: explicit, Q: [[1]], b: [0]}     # or kind: nominal, goals: [...]
    integrator: {dt: 0.001, t_final: 1.0, scheme: euler, sliding: equiv}
    initial_states: [[1, 0]]
    input_bounds: null                  # or {lower: [...], upper: [...]}
    verification: {sample_lower: [...], sample_upper: [...], ...}

Drifts are either a constant vector or ``{A: matrix, b: vector}`` for
``A x + b``; input matrices are constant; guards are affine ``a.x + b``
(negative inside the piece's region).
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import safeset as ss
from .controllers import (ActiveComponentConfig, AdaptiveConfig, AllComponentsConfig, InputBox,
                          ObjectiveSpec, QPController, search_feasible_params)
from .dynamics import DynamicsPiece, PiecewiseDynamics, check_partition
from .sim import IntegratorConfig

__all__ = [
    "ConfigError",
    "ComponentSpec",
    "PieceSpec",
    "DynamicsSpec",
    "ControllerSpec",
    "ObjectiveConfig",
    "IntegratorSpec",
    "BoundsSpec",
    "VerificationSpec",
    "ScenarioConfig",
    "Scenario",
    "BUILTINS",
    "builtin_names",
    "load_scenario",
    "parse_config",
    "dump_config",
    "build",
    "sample_boundary",
    "sample_states",
]


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


# ---------------------------------------------------------------------------
# config dataclasses


@dataclass
class ComponentSpec:
    name: str
    kind: str
    params: dict


@dataclass
class PieceSpec:
    id: int
    drift: Any
    input_matrix: list
    guard: dict


@dataclass
class DynamicsSpec:
    builtin: str | None = None
    pieces: list | None = None
    eps_j: float = 1e-9


@dataclass
class ControllerSpec:
    type: str = "act"
    alpha: float = 1.0
    M: float | None = None
    c_alpha: float = 1.0
    c_M: float = 100.0
    q_alpha: float = 0.1
    q_M: float = 0.1
    strict_boundary: bool = False
    eps_L: float = 1e-9
    eps_I: float = 1e-9


@dataclass
class ObjectiveConfig:
    kind: str = "explicit"
    Q: list | None = None
    b: list | None = None
    goals: list | None = None
    gain: float = 1.0


@dataclass
class IntegratorSpec:
    dt: float = 1e-3
    t_final: float = 1.0
    scheme: str = "euler"
    sliding: str = "equiv"


@dataclass
class BoundsSpec:
    lower: list
    upper: list


@dataclass
class VerificationSpec:
    sample_lower: list
    sample_upper: list
    n_boundary_samples: int = 200
    extra_boundary_points: list = field(default_factory=list)
    alpha_grid: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 5.0])
    M_grid: list = field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0])
    n_param_samples: int = 200


@dataclass
class ScenarioConfig:
    name: str
    state_dim: int
    input_dim: int
    dynamics: DynamicsSpec
    components: list
    safe_set: Any
    controller: ControllerSpec
    objective: ObjectiveConfig
    integrator: IntegratorSpec
    initial_states: list
    verification: VerificationSpec
    input_bounds: BoundsSpec | None = None
    description: str = ""

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["components"] = [{"name": c.name, "kind": c.kind, **c.params} for c in self.components]
        d["dynamics"] = {k: v for k, v in d["dynamics"].items() if v is not None}
        return d


# ---------------------------------------------------------------------------
# parsing and validation


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if not np.isfinite(v):
        raise ConfigError(path, "must be finite")
    return float(v)


def _vec(v, path, n=None):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(path, f"expected a list of numbers, got {v!r}")
    out = [_num(x, f"{path}[{k}]") for k, x in enumerate(v)]
    if n is not None and len(out) != n:
        raise ConfigError(path, f"expected {n} entries, got {len(out)}")
    return out


def _mat(v, path, rows, cols):
    if not isinstance(v, (list, tuple)) or len(v) != rows:
        raise ConfigError(path, f"expected a {rows}x{cols} matrix")
    return [_vec(r, f"{path}[{k}]", cols) for k, r in enumerate(v)]


def _int(v, path, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}")
    return v


def _map(v, path):
    if not isinstance(v, dict):
        raise ConfigError(path, f"expected a mapping, got {type(v).__name__}")
    return v


def _known(d, path, allowed):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown key")


def _indices(v, path, n):
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(path, "expected a non-empty list of state indices")
    out = [_int(k, f"{path}[{j}]", 0) for j, k in enumerate(v)]
    if max(out) >= n:
        raise ConfigError(path, f"index out of range for state_dim {n}")
    return out


_COMPONENT_KEYS = {
    "affine": ({"a", "b"}, set()),
    "quadratic-norm": ({"center", "radius"}, {"indices", "outside"}),
    "pairwise-distance": ({"first", "second", "distance"}, set()),
}


def _component(d, path, n) -> ComponentSpec:
    d = _map(d, path)
    name = d.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{path}.name", "missing or not a string")
    kind = d.get("kind")
    if kind not in _COMPONENT_KEYS:
        raise ConfigError(f"{path}.kind", f"expected one of {sorted(_COMPONENT_KEYS)}, got {kind!r}")
    required, optional = _COMPONENT_KEYS[kind]
    _known(d, path, required | optional | {"name", "kind"})
    for k in sorted(required):
        if k not in d:
            raise ConfigError(f"{path}.{k}", "missing")
    p: dict = {}
    if kind == "affine":
        p["a"] = _vec(d["a"], f"{path}.a", n)
        p["b"] = _num(d["b"], f"{path}.b")
    elif kind == "quadratic-norm":
        idx = _indices(d.get("indices", list(range(n))), f"{path}.indices", n)
        if "indices" in d:
            p["indices"] = idx
        p["center"] = _vec(d["center"], f"{path}.center", len(idx))
        p["radius"] = _num(d["radius"], f"{path}.radius")
        if p["radius"] <= 0:
            raise ConfigError(f"{path}.radius", "must be > 0")
        if "outside" in d:
            if not isinstance(d["outside"], bool):
                raise ConfigError(f"{path}.outside", "expected true or false")
            p["outside"] = d["outside"]
    else:
        p["first"] = _indices(d["first"], f"{path}.first", n)
        p["second"] = _indices(d["second"], f"{path}.second", n)
        if len(p["first"]) != len(p["second"]):
            raise ConfigError(f"{path}.second", "must have the same length as first")
        p["distance"] = _num(d["distance"], f"{path}.distance")
        if p["distance"] <= 0:
            raise ConfigError(f"{path}.distance", "must be > 0")
    return ComponentSpec(name, kind, p)


def _set_expr(e, path, names):
    if isinstance(e, str):
        if e not in names:
            raise ConfigError(path, f"unknown component {e!r}")
        return e
    e = _map(e, path)
    if len(e) != 1 or next(iter(e)) not in ("union", "intersection"):
        raise ConfigError(path, "expected a component name or a single 'union'/'intersection' key")
    op, kids = next(iter(e.items()))
    if not isinstance(kids, list) or not kids:
        raise ConfigError(f"{path}.{op}", "expected a non-empty list")
    return {op: [_set_expr(k, f"{path}.{op}[{j}]", names) for j, k in enumerate(kids)]}


def _dynamics(d, path, n, m) -> DynamicsSpec:
    d = _map(d, path)
    _known(d, path, {"builtin", "pieces", "eps_j"})
    eps = _num(d.get("eps_j", 1e-9), f"{path}.eps_j")
    if eps < 0:
        raise ConfigError(f"{path}.eps_j", "must be >= 0")
    d = {k: v for k, v in d.items() if v is not None}
    if ("builtin" in d) == ("pieces" in d):
        raise ConfigError(path, "give exactly one of 'builtin' or 'pieces'")
    if "builtin" in d:
        if d["builtin"] != "single-integrator":
            raise ConfigError(f"{path}.builtin", f"unknown dynamics {d['builtin']!r}")
        if n != m:
            raise ConfigError(f"{path}.builtin", "single-integrator needs state_dim == input_dim")
        return DynamicsSpec(builtin="single-integrator", eps_j=eps)
    raw = d["pieces"]
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}.pieces", "expected a non-empty list")
    pieces, seen = [], set()
    for k, pd in enumerate(raw):
        pp = f"{path}.pieces[{k}]"
        pd = _map(pd, pp)
        _known(pd, pp, {"id", "drift", "input_matrix", "guard"})
        for key in ("id", "drift", "input_matrix", "guard"):
            if key not in pd:
                raise ConfigError(f"{pp}.{key}", "missing")
        pid = _int(pd["id"], f"{pp}.id")
        if pid in seen:
            raise ConfigError(f"{pp}.id", f"duplicate piece id {pid}")
        seen.add(pid)
        if isinstance(pd["drift"], dict):
            dd = pd["drift"]
            _known(dd, f"{pp}.drift", {"A", "b"})
            drift = {"A": _mat(dd.get("A"), f"{pp}.drift.A", n, n),
                     "b": _vec(dd.get("b", [0.0] * n), f"{pp}.drift.b", n)}
        else:
            drift = _vec(pd["drift"], f"{pp}.drift", n)
        G = _mat(pd["input_matrix"], f"{pp}.input_matrix", n, m)
        g = _map(pd["guard"], f"{pp}.guard")
        _known(g, f"{pp}.guard", {"a", "b"})
        guard = {"a": _vec(g.get("a"), f"{pp}.guard.a", n), "b": _num(g.get("b", 0.0), f"{pp}.guard.b")}
        pieces.append(PieceSpec(pid, drift, G, guard))
    return DynamicsSpec(pieces=pieces, eps_j=eps)


def parse_config(d: dict) -> ScenarioConfig:
    """Validate a plain mapping (as read from YAML) into a ScenarioConfig."""
    d = _map(d, "<root>")
    _known(d, "<root>", {f.name for f in dataclasses.fields(ScenarioConfig)})
    for key in ("name", "state_dim", "input_dim", "dynamics", "components", "safe_set",
                "initial_states", "verification"):
        if key not in d:
            raise ConfigError(key, "missing")
    name = d["name"]
    if not isinstance(name, str) or not name:
        raise ConfigError("name", "expected a non-empty string")
    n = _int(d["state_dim"], "state_dim", 1)
    m = _int(d["input_dim"], "input_dim", 1)
    dyn = _dynamics(d["dynamics"], "dynamics", n, m)

    if not isinstance(d["components"], list) or not d["components"]:
        raise ConfigError("components", "expected a non-empty list")
    comps = [_component(c, f"components[{k}]", n) for k, c in enumerate(d["components"])]
    names = [c.name for c in comps]
    if len(set(names)) != len(names):
        dup = next(x for x in names if names.count(x) > 1)
        raise ConfigError("components", f"duplicate component name {dup!r}")
    safe = _set_expr(d["safe_set"], "safe_set", set(names))

    cd = _map(d.get("controller", {}), "controller")
    _known(cd, "controller", {f.name for f in dataclasses.fields(ControllerSpec)})
    ctl = ControllerSpec()
    if "type" in cd:
        if cd["type"] not in ("act", "all", "adp"):
            raise ConfigError("controller.type", f"expected act, all or adp, got {cd['type']!r}")
        ctl.type = cd["type"]
    for key in ("alpha", "c_alpha", "c_M", "q_alpha", "q_M", "eps_L", "eps_I"):
        if key in cd:
            setattr(ctl, key, _num(cd[key], f"controller.{key}"))
            if getattr(ctl, key) < 0 or (key not in ("eps_L", "eps_I") and getattr(ctl, key) == 0):
                raise ConfigError(f"controller.{key}", "out of range")
    if cd.get("M") is not None:
        ctl.M = _num(cd["M"], "controller.M")
        if ctl.M < 0:
            raise ConfigError("controller.M", "must be >= 0")
    if "strict_boundary" in cd:
        if not isinstance(cd["strict_boundary"], bool):
            raise ConfigError("controller.strict_boundary", "expected true or false")
        ctl.strict_boundary = cd["strict_boundary"]

    if not isinstance(d["initial_states"], list) or not d["initial_states"]:
        raise ConfigError("initial_states", "expected a non-empty list of states")
    x0s = [_vec(x, f"initial_states[{k}]", n) for k, x in enumerate(d["initial_states"])]

    od = _map(d.get("objective", {"kind": "explicit", "Q": np.eye(m).tolist(), "b": [0.0] * m}),
              "objective")
    _known(od, "objective", {"kind", "Q", "b", "goals", "gain"})
    kind = od.get("kind", "explicit")
    if kind == "explicit":
        Q = _mat(od.get("Q"), "objective.Q", m, m)
        Qa = np.array(Q)
        if not np.allclose(Qa, Qa.T) or np.min(np.linalg.eigvalsh(0.5 * (Qa + Qa.T))) <= 0:
            raise ConfigError("objective.Q", "must be symmetric positive definite")
        obj = ObjectiveConfig("explicit", Q=Q, b=_vec(od.get("b", [0.0] * m), "objective.b", m))
    elif kind == "nominal":
        if m != n:
            raise ConfigError("objective.kind", "nominal goal tracking needs input_dim == state_dim")
        goals = od.get("goals")
        if not isinstance(goals, list) or len(goals) not in (1, len(x0s)):
            raise ConfigError("objective.goals", "expected one goal or one per initial state")
        obj = ObjectiveConfig("nominal", goals=[_vec(g, f"objective.goals[{k}]", n) for k, g in enumerate(goals)],
                              gain=_num(od.get("gain", 1.0), "objective.gain"))
    else:
        raise ConfigError("objective.kind", f"expected explicit or nominal, got {kind!r}")

    idf = _map(d.get("integrator", {}), "integrator")
    _known(idf, "integrator", {"dt", "t_final", "scheme", "sliding"})
    integ = IntegratorSpec()
    for key in ("dt", "t_final"):
        if key in idf:
            setattr(integ, key, _num(idf[key], f"integrator.{key}"))
            if getattr(integ, key) <= 0:
                raise ConfigError(f"integrator.{key}", "must be > 0")
    if integ.dt > integ.t_final:
        raise ConfigError("integrator.dt", "must not exceed t_final")
    if idf.get("scheme", "euler") not in ("euler", "rk4"):
        raise ConfigError("integrator.scheme", "expected euler or rk4")
    if idf.get("sliding", "equiv") not in ("equiv", "chatter"):
        raise ConfigError("integrator.sliding", "expected equiv or chatter")
    integ.scheme = idf.get("scheme", "euler")
    integ.sliding = idf.get("sliding", "equiv")

    bounds = None
    if d.get("input_bounds") is not None:
        bd = _map(d["input_bounds"], "input_bounds")
        _known(bd, "input_bounds", {"lower", "upper"})
        lo = _vec(bd.get("lower"), "input_bounds.lower", m)
        hi = _vec(bd.get("upper"), "input_bounds.upper", m)
        if any(a > b for a, b in zip(lo, hi)):
            raise ConfigError("input_bounds", "lower must not exceed upper")
        bounds = BoundsSpec(lo, hi)

    vd = _map(d["verification"], "verification")
    _known(vd, "verification", {f.name for f in dataclasses.fields(VerificationSpec)})
    ver = VerificationSpec(_vec(vd.get("sample_lower"), "verification.sample_lower", n),
                           _vec(vd.get("sample_upper"), "verification.sample_upper", n))
    if "n_boundary_samples" in vd:
        ver.n_boundary_samples = _int(vd["n_boundary_samples"], "verification.n_boundary_samples", 1)
    if "n_param_samples" in vd:
        ver.n_param_samples = _int(vd["n_param_samples"], "verification.n_param_samples", 1)
    if "extra_boundary_points" in vd:
        ver.extra_boundary_points = [_vec(x, f"verification.extra_boundary_points[{k}]", n)
                                     for k, x in enumerate(vd["extra_boundary_points"])]
    for key in ("alpha_grid", "M_grid"):
        if key in vd:
            g = _vec(vd[key], f"verification.{key}")
            if not g or any(v <= 0 for v in g) or any(b <= a for a, b in zip(g, g[1:])):
                raise ConfigError(f"verification.{key}", "must be positive and strictly increasing")
            setattr(ver, key, g)

    desc = d.get("description", "")
    if not isinstance(desc, str):
        raise ConfigError("description", "expected a string")
    return ScenarioConfig(name, n, m, dyn, comps, safe, ctl, obj, integ, x0s, ver, bounds, desc)


# ---------------------------------------------------------------------------
# component library


def _make_component(cid: int, spec: ComponentSpec, n: int) -> ss.SmoothComponent:
    p = spec.params
    if spec.kind == "affine":
        a = np.array(p["a"])
        b = p["b"]
        return ss.SmoothComponent(cid, lambda x: x @ a + b if np.ndim(x) == 1 else np.tensordot(a, x, 1) + b,
                                  lambda x: a.copy(), spec.name)
    if spec.kind == "quadratic-norm":
        idx = np.array(p.get("indices", list(range(n))))
        center = np.array(p["center"])
        r2 = p["radius"] ** 2
        sign = 1.0 if p.get("outside", False) else -1.0

        def value(x):
            d = x[idx] - (center if np.ndim(x) == 1 else center[:, None])
            return sign * (np.sum(d * d, axis=0) - r2)

        def grad(x):
            g = np.zeros(n)
            g[idx] = sign * 2.0 * (x[idx] - center)
            return g

        return ss.SmoothComponent(cid, value, grad, spec.name)
    i1, i2 = np.array(p["first"]), np.array(p["second"])
    d2 = p["distance"] ** 2

    def value(x):
        d = x[i1] - x[i2]
        return np.sum(d * d, axis=0) - d2

    def grad(x):
        g = np.zeros(n)
        d = x[i1] - x[i2]
        g[i1] += 2.0 * d
        g[i2] -= 2.0 * d
        return g

    return ss.SmoothComponent(cid, value, grad, spec.name)


def _tree(e, ids):
    if isinstance(e, str):
        return ss.Leaf(ids[e])
    op, kids = next(iter(e.items()))
    cls = ss.Union if op == "union" else ss.Intersection
    return cls([_tree(k, ids) for k in kids])


def _affine_fn(v):
    arr = np.array(v, float)
    return lambda x: arr


def _make_dynamics(spec: DynamicsSpec, n: int, m: int) -> PiecewiseDynamics:
    if spec.builtin == "single-integrator":
        zero, eye = np.zeros(n), np.eye(n)
        dyn = PiecewiseDynamics.single(lambda x: zero, lambda x: eye, n, m)
        return dataclasses.replace(dyn, eps_J=spec.eps_j)
    pieces = []
    for ps in spec.pieces:
        if isinstance(ps.drift, dict):
            A, b = np.array(ps.drift["A"]), np.array(ps.drift["b"])
            drift = (lambda A, b: lambda x: A @ x + b)(A, b)
        else:
            drift = _affine_fn(ps.drift)
        ga, gb = np.array(ps.guard["a"]), ps.guard["b"]
        pieces.append(DynamicsPiece(
            ps.id, drift, _affine_fn(ps.input_matrix),
            (lambda a, b: lambda x: float(a @ x + b))(ga, gb),
            (lambda a: lambda x: a.copy())(ga)))
    return PiecewiseDynamics(tuple(pieces), n, m, spec.eps_j)


# ---------------------------------------------------------------------------
# built scenario


@dataclass
class Scenario:
    """A validated config together with the objects it describes."""

    config: ScenarioConfig
    components: dict
    dnf: ss.DNFForm
    dyn: PiecewiseDynamics
    bounds: InputBox | None
    check_report: dict

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def tolerances(self) -> ss.ActivityTolerances:
        c = self.config.controller
        return ss.ActivityTolerances(c.eps_L, c.eps_I)

    def integrator(self, **overrides) -> IntegratorConfig:
        i = self.config.integrator
        kw = dict(dt=i.dt, t_final=i.t_final, scheme=i.scheme, sliding_mode=i.sliding)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return IntegratorConfig(**kw)

    def objective(self, k: int = 0) -> ObjectiveSpec:
        o = self.config.objective
        m = self.config.input_dim
        if o.kind == "explicit":
            return ObjectiveSpec.explicit(np.array(o.Q), np.array(o.b))
        goal = np.array(o.goals[k if len(o.goals) > 1 else 0])
        gain = o.gain
        return ObjectiveSpec.track_nominal(lambda x: gain * (goal - np.asarray(x, float)), m)

    def goal(self, k: int = 0):
        o = self.config.objective
        if o.kind != "nominal":
            return None
        return np.array(o.goals[k if len(o.goals) > 1 else 0])

    def controller(self, k: int = 0, spec: ControllerSpec | None = None) -> QPController:
        c = spec or self.config.controller
        tol = ss.ActivityTolerances(c.eps_L, c.eps_I)
        if c.type == "act":
            cfg = ActiveComponentConfig(c.alpha, tol, c.strict_boundary)
        elif c.type == "all":
            M = c.M if c.M is not None else self.recommend_params(alpha_grid=[c.alpha]).M
            if M is None:
                raise RuntimeError("no feasible transition weight M on the verification grid")
            cfg = AllComponentsConfig(c.alpha, M, tol, c.strict_boundary)
        else:
            cfg = AdaptiveConfig(c.c_alpha, c.c_M, c.q_alpha, c.q_M, tol, c.strict_boundary)
        return QPController(c.type, self.dnf, self.dyn, self.objective(k), cfg, self.bounds)

    def boundary_samples(self, n: int | None = None, seed: int = 0) -> np.ndarray:
        v = self.config.verification
        n = v.n_boundary_samples if n is None else n
        return sample_boundary(self, n, np.random.default_rng(seed))

    def recommend_params(self, alpha_grid=None, M_grid=None, seed: int = 0):
        """Grid search for (alpha, M) making the all-components rows
        strictly feasible at sampled states of C (boundary plus interior)."""
        v = self.config.verification
        rng = np.random.default_rng(seed)
        k = v.n_param_samples
        pts = list(sample_boundary(self, k // 2, rng))
        pts += list(sample_states(self, k - len(pts), rng, inside=True))
        return search_feasible_params(self.dnf, self.dyn, pts,
                                      alpha_grid if alpha_grid is not None else v.alpha_grid,
                                      M_grid if M_grid is not None else v.M_grid, self.bounds)


def sample_states(sc: Scenario, n: int, rng, inside: bool | None = None, max_tries: int = 200) -> np.ndarray:
    """Uniform states in the verification box, optionally restricted to
    C (``inside=True``) or its complement (``inside=False``)."""
    v = sc.config.verification
    lo, hi = np.array(v.sample_lower), np.array(v.sample_upper)
    out = []
    for _ in range(max_tries):
        X = rng.uniform(lo, hi, size=(max(4 * n, 64), lo.size))
        if inside is not None:
            h = sc.dnf.evaluate(X.T).h
            X = X[(h >= 0) == inside]
        out.extend(X[: n - len(out)])
        if len(out) >= n:
            break
    return np.array(out[:n]).reshape(-1, lo.size)


def sample_boundary(sc: Scenario, n: int, rng, tol: float = 1e-12) -> np.ndarray:
    """Points on the boundary of C: the configured extra points first, then
    bisection between random inside and outside states."""
    v = sc.config.verification
    pts = [np.array(x, float) for x in v.extra_boundary_points][:n]
    need = n - len(pts)
    if need > 0:
        ins = sample_states(sc, need, rng, inside=True)
        outs = sample_states(sc, need, rng, inside=False)
        for a, b in zip(ins, outs):
            for _ in range(200):
                mid = 0.5 * (a + b)
                if ss.eval_h(sc.dnf, mid) >= 0:
                    a = mid
                else:
                    b = mid
                if np.linalg.norm(a - b) <= tol:
                    break
            pts.append(a)
    return np.array(pts)


def _run_checks(sc: Scenario, seed: int = 0, n: int = 50) -> dict:
    rng = np.random.default_rng(seed)
    X = sample_states(sc, n, rng)
    grad_err = {}
    for k, (cid, comp) in enumerate(sorted(sc.components.items())):
        err = max(ss.check_gradients_fd(comp, x) for x in X)
        grad_err[comp.name] = err
        if err > 1e-5:
            raise ConfigError(f"components[{k}]", f"gradient check failed (error {err:.2e})")
    part = check_partition(sc.dyn, X)
    if part.uncovered:
        raise ConfigError("dynamics.pieces", f"regions do not cover {part.uncovered[0].tolist()}")
    if part.overlapping:
        raise ConfigError("dynamics.pieces", f"regions overlap at {part.overlapping[0].tolist()}")
    return {"gradient_errors": grad_err, "partition_samples": part.n_samples}


def build(cfg: ScenarioConfig, run_checks: bool = True) -> Scenario:
    n, m = cfg.state_dim, cfg.input_dim
    comps = {k + 1: _make_component(k + 1, c, n) for k, c in enumerate(cfg.components)}
    ids = {c.name: k + 1 for k, c in enumerate(cfg.components)}
    dnf = ss.to_dnf(_tree(cfg.safe_set, ids), comps)
    dyn = _make_dynamics(cfg.dynamics, n, m)
    bounds = None if cfg.input_bounds is None else InputBox(cfg.input_bounds.lower, cfg.input_bounds.upper)
    sc = Scenario(cfg, comps, dnf, dyn, bounds, {})
    if run_checks:
        sc.check_report = _run_checks(sc)
    return sc


# ---------------------------------------------------------------------------
# built-in scenarios


def _example1() -> dict:
    return {
        "name": "example1-corner",
        "description": "Two-piece dynamics with a switching surface through the corner of a wedge; "
                       "the active-component controller leaves the set while sliding.",
        "state_dim": 2,
        "input_dim": 1,
        "dynamics": {"eps_j": 1e-9, "pieces": [
            {"id": 1, "drift": [1.0, 0.0], "input_matrix": [[-2.0], [1.0]], "guard": {"a": [0.0, 1.0], "b": 0.0}},
            {"id": 2, "drift": [1.0, 0.0], "input_matrix": [[-2.0], [-1.0]], "guard": {"a": [0.0, -1.0], "b": 0.0}},
        ]},
        "components": [
            {"name": "h1", "kind": "affine", "a": [-1.0, 1.0], "b": 1.0},
            {"name": "h2", "kind": "affine", "a": [-1.0, -1.0], "b": 1.0},
        ],
        "safe_set": {"intersection": ["h1", "h2"]},
        "controller": {"type": "act", "alpha": 1.0},
        "objective": {"kind": "explicit", "Q": [[1.0]], "b": [0.0]},
        "integrator": {"dt": 1e-3, "t_final": 1.0, "scheme": "euler", "sliding": "equiv"},
        "initial_states": [[1.0, 0.0]],
        "input_bounds": None,
        "verification": {"sample_lower": [-1.0, -1.5], "sample_upper": [2.0, 1.5],
                         "n_boundary_samples": 200, "extra_boundary_points": [[1.0, 0.0]],
                         "alpha_grid": [1.0], "M_grid": [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
                         "n_param_samples": 200},
    }


DELTA = 0.5
# reconstruction: starts below the obstacle (x2 <= -delta), goals right of it (x1 >= delta)
_MA_STARTS = [[-4.0, -1.0], [-3.0, -2.5], [-5.0, -3.5], [-1.5, -4.0], [-3.5, -5.0]]
_MA_GOALS = [[2.0, 4.0], [3.5, 2.5], [5.0, 1.0], [4.5, 4.5], [6.0, 3.0]]


def _multiagent() -> dict:
    comps = []
    for i in range(5):
        a1 = [0.0] * 10
        a1[2 * i] = 1.0
        a2 = [0.0] * 10
        a2[2 * i + 1] = -1.0
        comps.append({"name": f"c{i + 1}_1", "kind": "affine", "a": a1, "b": -DELTA})
        comps.append({"name": f"c{i + 1}_2", "kind": "affine", "a": a2, "b": -DELTA})
    pairs = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    for i, j in pairs:
        comps.append({"name": f"col{i + 1}{j + 1}", "kind": "pairwise-distance",
                      "first": [2 * i, 2 * i + 1], "second": [2 * j, 2 * j + 1], "distance": 2 * DELTA})
    safe = {"intersection": [{"union": [f"c{i + 1}_1", f"c{i + 1}_2"]} for i in range(5)]
            + [f"col{i + 1}{j + 1}" for i, j in pairs]}
    x0 = [v for p in _MA_STARTS for v in p]
    xf = [v for p in _MA_GOALS for v in p]
    return {
        "name": "multiagent-reconfig",
        "description": "Five single-integrator agents of radius 0.5 move around an L-shaped obstacle "
                       "while avoiding each other. Start and goal positions are a reconstruction.",
        "state_dim": 10,
        "input_dim": 10,
        "dynamics": {"builtin": "single-integrator", "eps_j": 1e-9},
        "components": comps,
        "safe_set": safe,
        "controller": {"type": "adp", "c_alpha": 1.0, "c_M": 100.0, "q_alpha": 0.1, "q_M": 0.1},
        "objective": {"kind": "nominal", "goals": [xf], "gain": 1.0},
        "integrator": {"dt": 0.01, "t_final": 20.0, "scheme": "euler", "sliding": "equiv"},
        "initial_states": [x0],
        "input_bounds": None,
        "verification": {"sample_lower": [-6.0, -6.0] * 5, "sample_upper": [6.0, 6.0] * 5,
                         "n_boundary_samples": 200},
    }


def _disk_union() -> dict:
    return {
        "name": "disk-union",
        "description": "Union of two disks intersected with a union of an obstacle exterior and a "
                       "half-plane, under two-piece dynamics switching at x1 = 0.",
        "state_dim": 2,
        "input_dim": 2,
        "dynamics": {"eps_j": 1e-9, "pieces": [
            {"id": 1, "drift": [0.2, 0.0], "input_matrix": [[1.0, 0.0], [0.0, 1.0]],
             "guard": {"a": [1.0, 0.0], "b": 0.0}},
            {"id": 2, "drift": {"A": [[0.0, 0.0], [0.0, -0.1]], "b": [0.0, 0.1]},
             "input_matrix": [[1.0, 0.3], [0.0, 1.0]], "guard": {"a": [-1.0, 0.0], "b": 0.0}},
        ]},
        "components": [
            {"name": "left", "kind": "quadratic-norm", "center": [-0.6, 0.0], "radius": 1.0},
            {"name": "right", "kind": "quadratic-norm", "center": [0.6, 0.0], "radius": 1.0},
            {"name": "hole", "kind": "quadratic-norm", "center": [0.0, 0.6], "radius": 0.3, "outside": True},
            {"name": "floor", "kind": "affine", "a": [0.0, -1.0], "b": 0.4},
        ],
        "safe_set": {"intersection": [{"union": ["left", "right"]}, {"union": ["hole", "floor"]}]},
        "controller": {"type": "all", "alpha": 1.0, "M": 10.0},
        "objective": {"kind": "nominal", "goals": [[1.2, 0.5]], "gain": 1.0},
        "integrator": {"dt": 0.005, "t_final": 5.0, "scheme": "euler", "sliding": "equiv"},
        "initial_states": [[-1.2, -0.3]],
        "input_bounds": {"lower": [-3.0, -3.0], "upper": [3.0, 3.0]},
        "verification": {"sample_lower": [-2.0, -1.5], "sample_upper": [2.0, 1.5],
                         "n_boundary_samples": 200},
    }


BUILTINS = {
    "example1-corner": _example1,
    "multiagent-reconfig": _multiagent,
    "disk-union": _disk_union,
}


def builtin_names() -> list:
    return list(BUILTINS)


def load_scenario(source, run_checks: bool = True) -> Scenario:
    """Load a built-in scenario by name or a YAML file by path."""
    if isinstance(source, ScenarioConfig):
        return build(source, run_checks)
    if isinstance(source, str) and source in BUILTINS:
        raw = copy.deepcopy(BUILTINS[source]())
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError("<file>", f"no built-in scenario or file named {str(source)!r}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"YAML parse error: {exc}") from None
    return build(parse_config(raw), run_checks)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
