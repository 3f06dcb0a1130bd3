"""Per-state QP safety controllers for nonsmooth safe sets.

Three programs share one objective ``u'Q(x)u + b(x)'u`` over a box ``U``:

* ``u_act`` -- CBF constraints only for the active components at x;
* ``u_all`` -- constraints for every component, each relaxed by the
  transition term ``beta_i = M (h - max_{l containing i} h^l)``;
* ``u_adp`` -- like ``u_all`` but with the gain ``alpha`` and the
  transition weight ``M`` as extra decision variables.

All class-K functions are linear, ``alpha(r) = alpha * r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import safeset as ss
from .dynamics import PiecewiseDynamics, active_J, eval_dynamics, select_piece
from .qp import QPProblem, QPStatus, max_strict_margin, solve_qp

__all__ = [
    "ObjectiveSpec",
    "InputBox",
    "ActiveComponentConfig",
    "AllComponentsConfig",
    "AdaptiveConfig",
    "ControlResult",
    "QPController",
    "u_act",
    "u_all",
    "u_adp",
    "cbf_rows",
    "verify_assumption2",
    "Assumption2Report",
    "search_feasible_params",
    "ParamSearchResult",
]


def _const(v):
    arr = np.array(v, dtype=float)
    return lambda x: arr


@dataclass(frozen=True)
class ObjectiveSpec:
    """``u'Q(x)u + b(x)'u``.  ``track_nominal`` gives ``||u - u_nom(x)||^2``
    up to a constant (Q = I, b = -2 u_nom)."""

    Q: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    mode: str = "explicit"
    u_nom: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def explicit(cls, Q, b) -> "ObjectiveSpec":
        return cls(Q if callable(Q) else _const(np.atleast_2d(Q)),
                   b if callable(b) else _const(np.atleast_1d(b)))

    @classmethod
    def track_nominal(cls, u_nom, m: int) -> "ObjectiveSpec":
        eye = np.eye(m)
        return cls(lambda x: eye, lambda x: -2.0 * np.asarray(u_nom(x), float),
                   mode="track", u_nom=u_nom)


@dataclass(frozen=True)
class InputBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, float))
        hi = np.atleast_1d(np.asarray(self.upper, float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("input box needs matching shapes and lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, u, tol=1e-9) -> bool:
        u = np.asarray(u, float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


@dataclass(frozen=True)
class ActiveComponentConfig:
    alpha_gain: float = 1.0
    tolerances: ss.ActivityTolerances = ss.DEFAULT_TOL
    strict_boundary: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.alpha_gain) and self.alpha_gain > 0):
            raise ValueError("alpha_gain must be finite and > 0")


@dataclass(frozen=True)
class AllComponentsConfig:
    alpha_gain: float = 1.0
    transition_M: float = 10.0
    tolerances: ss.ActivityTolerances = ss.DEFAULT_TOL
    strict_boundary: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.alpha_gain) and self.alpha_gain > 0):
            raise ValueError("alpha_gain must be finite and > 0")
        if not (np.isfinite(self.transition_M) and self.transition_M >= 0):
            raise ValueError("transition_M must be finite and >= 0")


@dataclass(frozen=True)
class AdaptiveConfig:
    c_alpha: float = 1.0
    c_M: float = 100.0
    q_alpha: float = 0.1
    q_M: float = 0.1
    tolerances: ss.ActivityTolerances = ss.DEFAULT_TOL
    strict_boundary: bool = False

    def __post_init__(self):
        for name in ("c_alpha", "c_M", "q_alpha", "q_M"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0")


@dataclass
class ControlResult:
    input: np.ndarray | None
    status: QPStatus
    active_I: frozenset
    active_L: frozenset
    active_J: frozenset
    pieces: tuple
    h: float
    margins: np.ndarray
    adaptive_alpha: float | None = None
    adaptive_M: float | None = None
    message: str = ""
    qp: object = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status is QPStatus.OPTIMAL

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins, initial=np.inf))


def _pieces(dyn, x, strict: bool):
    g = dyn.guards(x)
    J = active_J(dyn, x, g)
    pieces = tuple(sorted(J)) if strict else (select_piece(dyn, x, g),)
    return J, pieces


def cbf_rows(dnf: ss.DNFForm, dyn: PiecewiseDynamics, x, ids, pieces, alpha: float, beta=None,
             ev: ss.SetEvaluation | None = None):
    """Rows ``a u >= c`` for ``grad h_i'(f_j + G_j u) + alpha h_i + beta_i >= 0``
    over ``i in ids`` and ``j in pieces``."""
    x = np.asarray(x, float)
    if ev is None:
        ev = dnf.evaluate(x)
    ids = list(ids)
    grads = dnf.gradients(x, ids)
    hv = np.array([ev.H[dnf.position(i)] for i in ids])
    bv = np.zeros(len(ids)) if beta is None else np.asarray(beta, float)
    A, c = [], []
    for j in pieces:
        f, G = eval_dynamics(dyn, x, j)
        A.append(grads @ G)
        c.append(-(grads @ f) - alpha * hv - bv)
    if not A:
        return np.zeros((0, dyn.m)), np.zeros(0)
    return np.vstack(A), np.concatenate(c)


def _objective_terms(obj: ObjectiveSpec, x, m):
    Q = np.atleast_2d(np.asarray(obj.Q(x), float)).reshape(m, m)
    b = np.atleast_1d(np.asarray(obj.b(x), float)).reshape(m)
    # u'Qu == 1/2 u'(Q + Q')u, matching the QP module's 1/2 z'Pz form
    return Q + Q.T, b


def _solve(P, q, A, c, lower, upper):
    prob = QPProblem(P=P, q=q, A=A, c=c, lower=lower, upper=upper)
    return prob, solve_qp(prob)


def _box(bounds: InputBox | None, m):
    if bounds is None:
        return None, None
    return bounds.lower.reshape(m), bounds.upper.reshape(m)


def u_act(x, dnf: ss.DNFForm, dyn: PiecewiseDynamics, obj: ObjectiveSpec,
          cfg: ActiveComponentConfig = ActiveComponentConfig(),
          bounds: InputBox | None = None) -> ControlResult:
    """Active-component QP: constrain only ``i`` in the active set and only
    the dynamics selected at x."""
    x = np.asarray(x, float)
    ev = dnf.evaluate(x)
    L = ss.active_L(dnf, ev, cfg.tolerances)
    I = ss.active_I(dnf, ev, cfg.tolerances, L)
    J, pieces = _pieces(dyn, x, cfg.strict_boundary)
    A, c = cbf_rows(dnf, dyn, x, sorted(I), pieces, cfg.alpha_gain, ev=ev)
    P, q = _objective_terms(obj, x, dyn.m)
    lo, hi = _box(bounds, dyn.m)
    _, sol = _solve(P, q, A, c, lo, hi)
    return _result(sol, A, c, I, L, J, pieces, float(ev.h), dyn.m,
                   "active-component QP infeasible")


def u_all(x, dnf: ss.DNFForm, dyn: PiecewiseDynamics, obj: ObjectiveSpec,
          cfg: AllComponentsConfig = AllComponentsConfig(),
          bounds: InputBox | None = None) -> ControlResult:
    """All-components QP with transition functions."""
    x = np.asarray(x, float)
    ev = dnf.evaluate(x)
    L = ss.active_L(dnf, ev, cfg.tolerances)
    I = ss.active_I(dnf, ev, cfg.tolerances, L)
    J, pieces = _pieces(dyn, x, cfg.strict_boundary)
    ids = dnf.component_ids
    beta = ss.transition_betas(dnf, ev, cfg.transition_M)
    A, c = cbf_rows(dnf, dyn, x, ids, pieces, cfg.alpha_gain, beta, ev=ev)
    P, q = _objective_terms(obj, x, dyn.m)
    lo, hi = _box(bounds, dyn.m)
    _, sol = _solve(P, q, A, c, lo, hi)
    return _result(sol, A, c, I, L, J, pieces, float(ev.h), dyn.m,
                   "all-components QP infeasible; try larger alpha and M")


def adaptive_rows(dnf: ss.DNFForm, dyn: PiecewiseDynamics, x, pieces):
    """Rows over ``(u, alpha, M)`` for every ``(l, i in I^l)`` and piece.

    Rows sharing ``(i, j)`` differ only in the M coefficient
    ``h - h^l >= 0``; since ``M >= c_M > 0`` the row with the smallest
    coefficient implies the others, so only that one is kept.
    """
    x = np.asarray(x, float)
    ev = dnf.evaluate(x)
    ids = dnf.component_ids
    grads = dnf.gradients(x, ids)
    hv = ev.H
    mcoef = np.array([ev.h - dnf.clause_best(ev, i) for i in ids])
    A, c = [], []
    for j in pieces:
        f, G = eval_dynamics(dyn, x, j)
        A.append(np.hstack([grads @ G, hv[:, None], mcoef[:, None]]))
        c.append(-(grads @ f))
    A = np.vstack(A)
    c = np.concatenate(c)
    _, first = np.unique(np.hstack([A, c[:, None]]), axis=0, return_index=True)
    keep = np.sort(first)
    return A[keep], c[keep], ev


def u_adp(x, dnf: ss.DNFForm, dyn: PiecewiseDynamics, obj: ObjectiveSpec,
          cfg: AdaptiveConfig = AdaptiveConfig(),
          bounds: InputBox | None = None) -> ControlResult:
    """Adaptive all-components QP over ``(u, alpha, M)``."""
    x = np.asarray(x, float)
    m = dyn.m
    J, pieces = _pieces(dyn, x, cfg.strict_boundary)
    A, c, ev = adaptive_rows(dnf, dyn, x, pieces)
    L = ss.active_L(dnf, ev, cfg.tolerances)
    I = ss.active_I(dnf, ev, cfg.tolerances, L)
    Qp, bq = _objective_terms(obj, x, m)
    P = np.zeros((m + 2, m + 2))
    P[:m, :m] = Qp
    P[m, m] = 2.0 * cfg.q_alpha
    P[m + 1, m + 1] = 2.0 * cfg.q_M
    q = np.concatenate([bq, [0.0, 0.0]])
    lo_u, hi_u = _box(bounds, m)
    lo = np.concatenate([np.full(m, -np.inf) if lo_u is None else lo_u, [cfg.c_alpha, cfg.c_M]])
    hi = np.concatenate([np.full(m, np.inf) if hi_u is None else hi_u, [np.inf, np.inf]])
    _, sol = _solve(P, q, A, c, lo, hi)
    res = _result(sol, A, c, I, L, J, pieces, float(ev.h), m,
                  "adaptive QP infeasible")
    if sol.optimal:
        res.adaptive_alpha = float(sol.minimizer[m])
        res.adaptive_M = float(sol.minimizer[m + 1])
    return res


def _result(sol, A, c, I, L, J, pieces, h, m, infeasible_msg):
    if sol.optimal:
        z = sol.minimizer
        return ControlResult(z[:m].copy(), sol.status, I, L, J, pieces, h,
                             A @ z - c, qp=sol)
    return ControlResult(None, sol.status, I, L, J, pieces, h, np.zeros(0),
                         message=infeasible_msg, qp=sol)


class QPController:
    """Callable ``x -> ControlResult`` bundling one of the three programs
    with its data."""

    _programs = {"act": u_act, "all": u_all, "adp": u_adp}

    def __init__(self, kind, dnf, dyn, objective, config=None, bounds=None):
        if kind not in self._programs:
            raise ValueError(f"unknown controller kind {kind!r}")
        defaults = {"act": ActiveComponentConfig, "all": AllComponentsConfig, "adp": AdaptiveConfig}
        self.kind = kind
        self.dnf = dnf
        self.dyn = dyn
        self.objective = objective
        self.config = config if config is not None else defaults[kind]()
        self.bounds = bounds

    def __call__(self, x) -> ControlResult:
        return self._programs[self.kind](x, self.dnf, self.dyn, self.objective, self.config, self.bounds)

    def __repr__(self):
        return f"QPController({self.kind!r}, {self.config})"


@dataclass
class Assumption2Report:
    margins: np.ndarray
    samples: np.ndarray
    skipped: int

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins, initial=np.inf))

    @property
    def worst_sample(self):
        if not len(self.margins):
            return None
        return self.samples[int(np.argmin(self.margins))]

    @property
    def passed(self) -> bool:
        return len(self.margins) > 0 and self.min_margin > 0


def verify_assumption2(dnf: ss.DNFForm, dyn: PiecewiseDynamics, boundary_samples: Sequence,
                       bounds: InputBox | None = None,
                       tol: ss.ActivityTolerances = ss.DEFAULT_TOL,
                       band: float = 1e-3) -> Assumption2Report:
    """At each boundary sample, check that some input in U strictly
    increases every component in the enlarged activity set under every
    active piece.  Samples with ``|h| > band`` are skipped."""
    lo, hi = _box(bounds, dyn.m)
    margins, kept, skipped = [], [], 0
    for x in boundary_samples:
        x = np.asarray(x, float)
        ev = dnf.evaluate(x)
        if abs(ev.h) > band:
            skipped += 1
            continue
        ids = sorted(ss.tilde_I(dnf, ev, tol))
        pieces = sorted(active_J(dyn, x))
        # alpha = 0: the strict condition on grad h_i'(f_j + G_j u) alone
        A, c = cbf_rows(dnf, dyn, x, ids, pieces, 0.0, ev=ev)
        margin, _ = max_strict_margin(A, c, lo, hi)
        margins.append(margin)
        kept.append(x)
    return Assumption2Report(np.array(margins), np.array(kept), skipped)


@dataclass
class ParamSearchResult:
    found: bool
    alpha: float | None
    M: float | None
    worst_sample: np.ndarray | None = None
    worst_margin: float | None = None


def _all_rows_margin(dnf, dyn, x, alpha, M, lo, hi):
    ev = dnf.evaluate(x)
    beta = ss.transition_betas(dnf, ev, M)
    pieces = sorted(active_J(dyn, x))
    A, c = cbf_rows(dnf, dyn, x, dnf.component_ids, pieces, alpha, beta, ev=ev)
    return max_strict_margin(A, c, lo, hi)[0]


def search_feasible_params(dnf: ss.DNFForm, dyn: PiecewiseDynamics, samples: Sequence,
                           alpha_grid: Sequence[float], M_grid: Sequence[float],
                           bounds: InputBox | None = None) -> ParamSearchResult:
    """Smallest ``(alpha, M)`` on the grid (alpha first) for which the
    all-components constraints are strictly feasible at every sample for
    every active piece."""
    for grid, name in ((alpha_grid, "alpha_grid"), (M_grid, "M_grid")):
        g = np.asarray(grid, float)
        if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ValueError(f"{name} must be positive and strictly increasing")
    lo, hi = _box(bounds, dyn.m)
    samples = [np.asarray(x, float) for x in samples]
    worst = (None, np.inf)
    for alpha in alpha_grid:
        for M in M_grid:
            worst = (None, np.inf)
            for x in samples:
                margin = _all_rows_margin(dnf, dyn, x, alpha, M, lo, hi)
                if margin < worst[1]:
                    worst = (x, margin)
                if margin <= 0:
                    break
            if worst[1] > 0:
                return ParamSearchResult(True, float(alpha), float(M), worst[0], float(worst[1]))
    return ParamSearchResult(False, None, None, worst[0], float(worst[1]))
