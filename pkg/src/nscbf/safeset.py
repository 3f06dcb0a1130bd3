"""Nonsmooth safe sets built from nested unions and intersections.

A safe set is a tree whose leaves are 0-superlevel sets of smooth
component functions ``h_i``.  The tree is flattened into a union of
intersections (``DNFForm``) and the barrier function is evaluated as

    h(x) = max_l min_{i in I^l} h_i(x).

Component functions may be vectorized: when every component accepts an
``(N, n)`` array and returns ``(N,)`` values, :func:`eval_tree` and
:func:`eval_h` evaluate batches of states in one call.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "SmoothComponent",
    "Leaf",
    "Union",
    "Intersection",
    "DNFForm",
    "ActivityTolerances",
    "ComponentNotInSetError",
    "SetEvaluation",
    "to_dnf",
    "eval_tree",
    "eval_h",
    "eval_h_ell",
    "active_L",
    "active_I",
    "tilde_I",
    "generalized_gradient_vertices",
    "transition_beta",
    "check_gradients_fd",
    "check_sufficiently_different",
    "DifferenceReport",
]


class ComponentNotInSetError(KeyError):
    """Raised when a component index does not appear in any clause."""


@dataclass(frozen=True)
class SmoothComponent:
    """A C^1 function ``h_i`` with its gradient; ``C_i = {h_i >= 0}``."""

    id: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"SmoothComponent({self.id}{label})"


@dataclass(frozen=True)
class Leaf:
    id: int


@dataclass(frozen=True)
class Union:
    children: tuple

    def __init__(self, children: Iterable):
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Intersection:
    children: tuple

    def __init__(self, children: Iterable):
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class ActivityTolerances:
    """Width of the bands that stand in for exact equality of values."""

    eps_L: float = 1e-9
    eps_I: float = 1e-9

    def __post_init__(self):
        for name in ("eps_L", "eps_I"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")

    def widened(self, extra: float) -> "ActivityTolerances":
        return ActivityTolerances(self.eps_L + extra, self.eps_I + extra)


DEFAULT_TOL = ActivityTolerances()


def _validate(expr, registry: Mapping[int, SmoothComponent] | None):
    if isinstance(expr, Leaf):
        if registry is not None and expr.id not in registry:
            raise ValueError(f"leaf references unknown component {expr.id}")
        return
    if isinstance(expr, (Union, Intersection)):
        if not expr.children:
            raise ValueError(f"{type(expr).__name__} needs at least one child")
        for child in expr.children:
            _validate(child, registry)
        return
    raise TypeError(f"not a set expression: {expr!r}")


def leaf_ids(expr) -> set[int]:
    if isinstance(expr, Leaf):
        return {expr.id}
    return set().union(*(leaf_ids(c) for c in expr.children))


def _clauses(expr) -> list[frozenset]:
    if isinstance(expr, Leaf):
        return [frozenset([expr.id])]
    parts = [_clauses(c) for c in expr.children]
    if isinstance(expr, Union):
        return [cl for part in parts for cl in part]
    # distribute the conjunction over the children's disjunctions
    return [frozenset().union(*combo) for combo in itertools.product(*parts)]


def _absorb(clauses: list[frozenset]) -> list[frozenset]:
    """Drop duplicates and clauses that strictly contain another clause."""
    unique = list(dict.fromkeys(clauses))
    return [c for c in unique if not any(o < c for o in unique)]


@dataclass(frozen=True)
class SetEvaluation:
    """Component values, clause values and h at one state (or a batch)."""

    H: np.ndarray
    h_ell: np.ndarray
    h: float | np.ndarray


@dataclass(frozen=True, eq=False)
class DNFForm:
    """Union-of-intersections form ``C = U_l  n_{i in I^l} C_i``.

    ``clauses[l]`` is a sorted tuple of component ids; clause indices are
    0-based positions in that list.  ``inverted[i]`` lists the clauses that
    contain component ``i``.
    """

    clauses: tuple
    components: Mapping[int, SmoothComponent]
    inverted: Mapping[int, tuple] = field(repr=False)
    source: object = field(default=None, repr=False)

    def __post_init__(self):
        ids = tuple(sorted(self.inverted))
        pos = {i: k for k, i in enumerate(ids)}
        object.__setattr__(self, "_ids", ids)
        object.__setattr__(self, "_pos", pos)
        object.__setattr__(self, "_clause_pos", tuple(np.array([pos[i] for i in cl]) for cl in self.clauses))
        object.__setattr__(self, "_inv_pos", {i: np.array(ls) for i, ls in self.inverted.items()})
        B = np.zeros((len(self.clauses), len(ids)), dtype=bool)
        for l, cp in enumerate(self._clause_pos):
            B[l, cp] = True
        object.__setattr__(self, "_B", B)

    @property
    def component_ids(self) -> tuple:
        """Ids of the components that appear in at least one clause."""
        return self._ids

    @property
    def n_clauses(self) -> int:
        return len(self.clauses)

    def membership(self) -> np.ndarray:
        """Boolean matrix ``B[l, k]``: clause l contains component_ids[k]."""
        return self._B.copy()

    def evaluate(self, x) -> SetEvaluation:
        x = np.asarray(x, dtype=float)
        H = np.array([self.components[i].value(x) for i in self._ids], dtype=float)
        if H.ndim == 1:
            h_ell = np.where(self._B, H, np.inf).min(axis=1)
            h = h_ell.max()
        else:
            h_ell = np.array([np.min(H[cp], axis=0) for cp in self._clause_pos])
            h = np.max(h_ell, axis=0)
        return SetEvaluation(H=H, h_ell=h_ell, h=h)

    def position(self, i: int) -> int:
        return self._pos[i]

    def clause_best(self, ev: SetEvaluation, i: int):
        """``max_{l containing i} h^l`` from a precomputed evaluation."""
        return np.max(ev.h_ell[self._inv_pos[i]], axis=0)

    def gradients(self, x, ids: Sequence[int] | None = None) -> np.ndarray:
        ids = self.component_ids if ids is None else ids
        x = np.asarray(x, dtype=float)
        return np.array([np.asarray(self.components[i].gradient(x), float) for i in ids])


def to_dnf(expr, components: Mapping[int, SmoothComponent] | Sequence[SmoothComponent]) -> DNFForm:
    """Flatten a set expression into a union of intersections.

    Only duplicate clauses and clauses absorbed by a smaller one are
    removed; no further logic minimization is attempted.

    >>> comps = {i: SmoothComponent(i, lambda x: 0.0, lambda x: 0.0) for i in (1, 2, 3)}
    >>> to_dnf(Intersection([Union([Leaf(1), Leaf(2)]), Leaf(3)]), comps).clauses
    ((1, 3), (2, 3))
    """
    if not isinstance(components, Mapping):
        components = {c.id: c for c in components}
    _validate(expr, components)
    clauses = tuple(tuple(sorted(c)) for c in _absorb(_clauses(expr)))
    inverted: dict[int, list[int]] = {}
    for l, cl in enumerate(clauses):
        for i in cl:
            inverted.setdefault(i, []).append(l)
    return DNFForm(
        clauses=clauses,
        components=dict(components),
        inverted={i: tuple(ls) for i, ls in inverted.items()},
        source=expr,
    )


def eval_tree(expr, components: Mapping[int, SmoothComponent], x):
    """Evaluate the tree directly: min over intersections, max over unions."""
    if isinstance(expr, Leaf):
        return np.asarray(components[expr.id].value(np.asarray(x, float)), float)[()]
    vals = [eval_tree(c, components, x) for c in expr.children]
    if isinstance(expr, Union):
        return np.maximum.reduce(vals)[()]
    return np.minimum.reduce(vals)[()]


def eval_h(dnf: DNFForm, x):
    return dnf.evaluate(x).h[()]


def eval_h_ell(dnf: DNFForm, ell: int, x):
    if not 0 <= ell < dnf.n_clauses:
        raise IndexError(f"unknown clause index {ell}")
    cl = dnf.clauses[ell]
    x = np.asarray(x, float)
    return np.minimum.reduce([np.asarray(dnf.components[i].value(x), float) for i in cl])[()]


def _as_eval(dnf, x_or_ev) -> SetEvaluation:
    if isinstance(x_or_ev, SetEvaluation):
        return x_or_ev
    return dnf.evaluate(x_or_ev)


def active_L(dnf: DNFForm, x, tol: ActivityTolerances = DEFAULT_TOL) -> frozenset:
    """Clauses whose value is within ``eps_L`` of h(x)."""
    ev = _as_eval(dnf, x)
    return frozenset(np.flatnonzero(ev.h - ev.h_ell <= tol.eps_L).tolist())


def active_I(dnf: DNFForm, x, tol: ActivityTolerances = DEFAULT_TOL, L=None) -> frozenset:
    """Components realizing h(x) through an active clause.

    A component counts when it lies in an active clause, is within
    ``eps_I`` of h(x), and is within ``eps_I`` of that clause's minimum.
    ``L`` may pass a precomputed :func:`active_L`.
    """
    ev = _as_eval(dnf, x)
    out = set()
    for l in (active_L(dnf, ev, tol) if L is None else L):
        for i in dnf.clauses[l]:
            hi = ev.H[dnf.position(i)]
            if abs(hi - ev.h) <= tol.eps_I and abs(hi - ev.h_ell[l]) <= tol.eps_I:
                out.add(i)
    return frozenset(out)


def tilde_I(dnf: DNFForm, x, tol: ActivityTolerances = DEFAULT_TOL) -> frozenset:
    """Enlarged activity set: ``i`` is a minimizer of some active clause."""
    ev = _as_eval(dnf, x)
    ids = dnf.component_ids
    out = set()
    for k, i in enumerate(ids):
        for l in dnf.inverted[i]:
            if ev.h - ev.h_ell[l] <= tol.eps_L and abs(ev.H[k] - ev.h_ell[l]) <= tol.eps_I:
                out.add(i)
                break
    return frozenset(out)


def generalized_gradient_vertices(dnf: DNFForm, x, tol: ActivityTolerances = DEFAULT_TOL) -> list:
    """Gradients of the active components; their convex hull is the
    generalized gradient of h at x."""
    x = np.asarray(x, float)
    return [np.asarray(dnf.components[i].gradient(x), float) for i in sorted(active_I(dnf, x, tol))]


def transition_beta(dnf: DNFForm, i: int, x, M: float) -> float:
    """``M * (h(x) - max_{l containing i} h^l(x))``; nonnegative."""
    if i not in dnf.inverted:
        raise ComponentNotInSetError(i)
    if M < 0:
        raise ValueError("M must be >= 0")
    ev = _as_eval(dnf, x)
    return (M * (ev.h - dnf.clause_best(ev, i)))[()]


def transition_betas(dnf: DNFForm, ev: SetEvaluation, M: float) -> np.ndarray:
    """Vector of transition values ordered like ``dnf.component_ids``."""
    if np.ndim(ev.h) == 0:
        best = np.where(dnf._B, ev.h_ell[:, None], -np.inf).max(axis=0)
        return M * (ev.h - best)
    return np.array([M * (ev.h - dnf.clause_best(ev, i)) for i in dnf.component_ids])


def check_gradients_fd(component: SmoothComponent, x, step: float = 1e-4) -> float:
    """Largest discrepancy between the supplied gradient and central
    differences, relative to ``max(1, |grad|_inf)``."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    g = np.asarray(component.gradient(x), dtype=float).reshape(-1)
    fd = np.empty_like(x)
    for k in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[k] += step
        lo[k] -= step
        # divide by the representable spacing, not the nominal one
        fd[k] = (component.value(hi) - component.value(lo)) / (hi[k] - lo[k])
    return float(np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(g))))


@dataclass
class DifferenceReport:
    flagged: list
    coincidence_rate: dict
    n_samples: int

    @property
    def ok(self) -> bool:
        return not self.flagged


def check_sufficiently_different(
    components: Sequence[SmoothComponent],
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    n_samples: int = 1000,
    rng: np.random.Generator | int | None = 0,
    atol: float = 1e-12,
    max_rate: float = 0.01,
) -> DifferenceReport:
    """Flag component pairs that coincide on more than ``max_rate`` of
    random states drawn by ``sampler(rng, n)``."""
    if len(components) < 2:
        raise ValueError("need at least two components")
    rng = np.random.default_rng(rng)
    X = sampler(rng, n_samples)
    vals = np.array([[c.value(x) for x in X] for c in components])
    flagged, rates = [], {}
    for a, b in itertools.combinations(range(len(components)), 2):
        rate = float(np.mean(np.abs(vals[a] - vals[b]) <= atol))
        key = (components[a].id, components[b].id)
        rates[key] = rate
        if rate > max_rate:
            flagged.append(key)
    return DifferenceReport(flagged=flagged, coincidence_rate=rates, n_samples=n_samples)
