"""Piecewise-continuous control-affine dynamics ``xdot = f_j(x) + G_j(x) u``.

Each piece carries a scalar guard that is negative strictly inside its
region, positive strictly outside and zero on the boundary.  The drift
and input matrix of every piece must be defined on the whole state
space so that boundary points can be evaluated with any adjacent piece.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DynamicsPiece",
    "PiecewiseDynamics",
    "CoverageError",
    "active_J",
    "eval_dynamics",
    "closed_loop_field",
    "select_piece",
    "check_partition",
]


class CoverageError(RuntimeError):
    """No piece claims the state: the regions do not cover the domain."""


@dataclass(frozen=True)
class DynamicsPiece:
    id: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_matrix: Callable[[np.ndarray], np.ndarray]
    guard: Callable[[np.ndarray], float]
    guard_gradient: Callable[[np.ndarray], np.ndarray] | None = None

    def guard_grad(self, x, step: float = 1e-7) -> np.ndarray:
        x = np.asarray(x, float)
        if self.guard_gradient is not None:
            return np.asarray(self.guard_gradient(x), float)
        g = np.empty_like(x)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = step
            g[k] = (self.guard(x + e) - self.guard(x - e)) / (2 * step)
        return g


@dataclass(frozen=True)
class PiecewiseDynamics:
    pieces: tuple
    n: int
    m: int
    eps_J: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        ids = [p.id for p in self.pieces]
        if not ids:
            raise ValueError("at least one piece is required")
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate piece ids: {ids}")
        if self.eps_J < 0:
            raise ValueError("eps_J must be >= 0")
        object.__setattr__(self, "_by_id", {p.id: p for p in self.pieces})

    @classmethod
    def single(cls, drift, input_matrix, n: int, m: int) -> "PiecewiseDynamics":
        """One piece covering everything."""
        piece = DynamicsPiece(1, drift, input_matrix, lambda x: -1.0, lambda x: np.zeros(n))
        return cls((piece,), n, m)

    def piece(self, j: int) -> DynamicsPiece:
        try:
            return self._by_id[j]
        except KeyError:
            raise KeyError(f"unknown piece id {j}") from None

    @property
    def ids(self) -> tuple:
        return tuple(p.id for p in self.pieces)

    def guards(self, x) -> list:
        x = np.asarray(x, float)
        return [float(p.guard(x)) for p in self.pieces]


def active_J(dyn: PiecewiseDynamics, x, guards=None) -> frozenset:
    """Pieces whose closed region contains x (guard within ``eps_J``)."""
    g = dyn.guards(x) if guards is None else guards
    out = frozenset(p.id for p, gv in zip(dyn.pieces, g) if gv <= dyn.eps_J)
    if not out:
        raise CoverageError(f"no dynamics piece covers x={np.asarray(x).tolist()}")
    return out


def select_piece(dyn: PiecewiseDynamics, x, guards=None) -> int:
    """The piece with the smallest guard value; ties go to the lowest id."""
    g = dyn.guards(x) if guards is None else guards
    best = min(g)
    if best > dyn.eps_J:
        raise CoverageError(f"no dynamics piece covers x={np.asarray(x).tolist()}")
    return min(p.id for p, gv in zip(dyn.pieces, g) if gv == best)


def eval_dynamics(dyn: PiecewiseDynamics, x, j: int):
    """``(f_j(x), G_j(x))`` with G reshaped to ``(n, m)``."""
    p = dyn.piece(j)
    x = np.asarray(x, float)
    f = np.asarray(p.drift(x), float).reshape(dyn.n)
    G = np.asarray(p.input_matrix(x), float).reshape(dyn.n, dyn.m)
    return f, G


def closed_loop_field(dyn: PiecewiseDynamics, x, u, j: int) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, float))
    if u.shape != (dyn.m,):
        raise ValueError(f"input has shape {u.shape}, expected ({dyn.m},)")
    f, G = eval_dynamics(dyn, x, j)
    return f + G @ u


@dataclass
class PartitionReport:
    n_samples: int
    uncovered: list
    overlapping: list

    @property
    def ok(self) -> bool:
        return not self.uncovered and not self.overlapping


def check_partition(dyn: PiecewiseDynamics, samples: Sequence) -> PartitionReport:
    """Coverage (some guard <= eps_J) and disjointness (at most one guard
    < -eps_J) at the given states."""
    uncovered, overlapping = [], []
    for x in samples:
        g = np.array(dyn.guards(x))
        if np.min(g) > dyn.eps_J:
            uncovered.append(np.asarray(x, float))
        if np.sum(g < -dyn.eps_J) > 1:
            overlapping.append(np.asarray(x, float))
    return PartitionReport(len(samples), uncovered, overlapping)
