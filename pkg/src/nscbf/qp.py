"""Small dense strictly convex QPs.

    minimize    1/2 z'Pz + q'z
    subject to  A z >= c,   lower <= z <= upper

Solved with a dual active-set method (Goldfarb-Idnani).  The method
starts from the unconstrained minimizer and adds violated constraints one
at a time, so infeasibility shows up as a violated row that is a
nonnegative combination of the active rows; that combination is returned
as a Farkas certificate.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "QPProblem",
    "QPSolution",
    "QPStatus",
    "QPSolverError",
    "KKTReport",
    "Certificate",
    "solve_qp",
    "verify_kkt",
    "dual_objective",
    "max_strict_margin",
]

MAX_ITER = 100_000


class QPSolverError(RuntimeError):
    """The solver did not converge within its iteration cap."""


class QPStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


_INV_CACHE: dict = {}


def _inverse(P):
    """Validated inverse of a symmetric positive definite P.  Controllers
    usually pass the same P at every step, so the last few are cached."""
    key = (P.shape, P.tobytes())
    hit = _INV_CACHE.get(key)
    if hit is not None:
        return hit
    if np.abs(P - P.T).max() > 1e-12 * max(1.0, np.abs(P).max()):
        raise ValueError("P is not symmetric")
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise ValueError("P is not positive definite") from None
    # the programs here are tiny; an explicit inverse is cheapest
    Linv = np.linalg.inv(L)
    Pinv = Linv.T @ Linv
    Pinv.flags.writeable = False
    if len(_INV_CACHE) >= 16:
        _INV_CACHE.clear()
    _INV_CACHE[key] = Pinv
    return Pinv


@dataclass
class QPProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray | None = None
    c: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        d = self.P.shape[0]
        self.q = np.asarray(self.q, dtype=float).reshape(d)
        if self.A is None:
            self.A = np.zeros((0, d))
            self.c = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, d)
        self.c = np.asarray(self.c, dtype=float).reshape(self.A.shape[0])
        self.lower = None if self.lower is None else np.broadcast_to(np.asarray(self.lower, float), (d,)).copy()
        self.upper = None if self.upper is None else np.broadcast_to(np.asarray(self.upper, float), (d,)).copy()

        if self.P.shape != (d, d):
            raise ValueError(f"P must be square, got {self.P.shape}")
        if not (np.isfinite(self.P).all() and np.isfinite(self.q).all()
                and np.isfinite(self.A).all() and np.isfinite(self.c).all()):
            for name in ("P", "q", "A", "c"):
                if not np.isfinite(getattr(self, name)).all():
                    raise ValueError(f"{name} has non-finite entries")
        self.P_inv = _inverse(self.P)
        for name in ("lower", "upper"):
            v = getattr(self, name)
            if v is not None and np.any(np.isnan(v)):
                raise ValueError(f"{name} has NaN entries")

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, float)
        return float(0.5 * z @ self.P @ z + self.q @ z)

    def solve_P(self, v):
        return self.P_inv @ v

    def stacked(self):
        """All constraints as rows of ``N z >= b``, with the origin of each
        row: ('row', k), ('lower', k) or ('upper', k)."""
        d = self.dim
        origin = [("row", k) for k in range(self.A.shape[0])]
        if self.lower is None and self.upper is None:
            return self.A, self.c, origin
        rows, rhs = [self.A], [self.c]
        eye = np.eye(d)
        if self.lower is not None:
            idx = np.flatnonzero(np.isfinite(self.lower))
            rows.append(eye[idx])
            rhs.append(self.lower[idx])
            origin += [("lower", k) for k in idx]
        if self.upper is not None:
            idx = np.flatnonzero(np.isfinite(self.upper))
            rows.append(-eye[idx])
            rhs.append(-self.upper[idx])
            origin += [("upper", k) for k in idx]
        return np.vstack(rows), np.concatenate(rhs), origin


@dataclass
class KKTReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float
    tol: float

    @property
    def ok(self) -> bool:
        return max(self.stationarity, self.primal, self.dual, self.complementarity) <= self.tol

    def __bool__(self):
        return self.ok


@dataclass
class Certificate:
    """``lam, lam_lower, lam_upper >= 0`` with
    ``A'lam + lam_lower - lam_upper = 0`` and
    ``c'lam + lower'lam_lower - upper'lam_upper > 0``."""

    rows: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def residuals(self, p: QPProblem):
        lo = np.where(self.lower > 0, p.lower if p.lower is not None else 0.0, 0.0)
        up = np.where(self.upper > 0, p.upper if p.upper is not None else 0.0, 0.0)
        direction = p.A.T @ self.rows + self.lower - self.upper
        value = p.c @ self.rows + lo @ self.lower - up @ self.upper
        return float(np.max(np.abs(direction), initial=0.0)), float(value)


@dataclass
class QPSolution:
    """Solver output.  ``kkt`` is recomputed from scratch on first access."""

    status: QPStatus
    minimizer: np.ndarray | None
    duals: np.ndarray
    lower_duals: np.ndarray
    upper_duals: np.ndarray
    iterations: int
    certificate: Certificate | None = None
    objective: float = field(default=np.nan)
    problem: QPProblem | None = field(default=None, repr=False)
    tol: float = 1e-8

    @property
    def optimal(self) -> bool:
        return self.status is QPStatus.OPTIMAL

    @property
    def kkt(self) -> KKTReport | None:
        if not self.optimal or self.problem is None:
            return None
        if "_kkt" not in self.__dict__:
            self.__dict__["_kkt"] = verify_kkt(self.problem, self, self.tol)
        return self.__dict__["_kkt"]


def _split(vec, origin, p: QPProblem):
    if p.lower is None and p.upper is None:
        return vec, np.zeros(p.dim), np.zeros(p.dim)
    rows = np.zeros(p.A.shape[0])
    lo = np.zeros(p.dim)
    up = np.zeros(p.dim)
    target = {"row": rows, "lower": lo, "upper": up}
    for i in np.flatnonzero(vec):
        kind, k = origin[i]
        target[kind][k] += vec[i]
    return rows, lo, up


def solve_qp(p: QPProblem, tol: float = 1e-8, max_iter: int = MAX_ITER) -> QPSolution:
    """Solve ``p``; returns an optimal point or an infeasibility certificate.

    Raises :class:`QPSolverError` if the iteration cap is hit.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    N, b, origin = p.stacked()
    Pinv = p.P_inv
    z = -(Pinv @ p.q)
    nb = len(b)

    def done(lam, its):
        rows, lo, up = _split(lam, origin, p)
        return QPSolution(QPStatus.OPTIMAL, z, rows, lo, up, its,
                          objective=p.objective(z), problem=p, tol=tol)

    def infeasible(y, its):
        rows, lo, up = _split(y, origin, p)
        return QPSolution(QPStatus.INFEASIBLE, None, rows * 0, lo * 0, up * 0, its,
                          certificate=Certificate(rows, lo, up), problem=p, tol=tol)

    if nb == 0:
        return done(np.zeros(0), 0)
    norms = np.sqrt(np.einsum("ij,ij->i", N, N))
    zero = norms <= 1e-14
    if zero.any():
        bad = np.flatnonzero(zero & (b > tol))
        if bad.size:
            y = np.zeros(nb)
            y[bad[0]] = 1.0
            return infeasible(y, 0)
    if np.all(N @ z - b >= -tol * norms):
        # the unconstrained minimizer is feasible
        return done(np.zeros(nb), 0)
    keep = np.flatnonzero(~zero)
    # work with unit-norm rows; W[i] = P^-1 n_i and G[i, j] = n_i' P^-1 n_j
    Nn = N[keep] / norms[keep, None]
    bn = b[keep] / norms[keep]
    W = Nn @ Pinv
    G = W @ Nn.T

    active: list[int] = []
    u = np.zeros(0)
    its = 0
    while True:
        s = Nn @ z - bn
        if s.size == 0:
            break
        pk = int(np.argmin(s))
        if s[pk] >= -tol:
            break
        u_p = 0.0
        while True:
            its += 1
            if its > max_iter:
                raise QPSolverError(f"no convergence in {max_iter} iterations")
            if active:
                gA = G[active, pk]
                r = np.linalg.solve(G[np.ix_(active, active)], gA)
                dz = W[pk] - r @ W[active]
                curvature = G[pk, pk] - gA @ r
            else:
                r = u
                dz = W[pk]
                curvature = G[pk, pk]
            t1, drop = np.inf, None
            if r.size:
                rtol = 1e-12 * max(1.0, float(np.abs(r).max()))
                pos = np.flatnonzero(r > rtol)
                if pos.size:
                    ratios = u[pos] / r[pos]
                    k = int(np.argmin(ratios))
                    t1, drop = float(ratios[k]), int(pos[k])
            if curvature <= 1e-12 * G[pk, pk]:
                if drop is None:
                    # n_p is a nonnegative combination of the active rows
                    y = np.zeros(nb)
                    y[keep[pk]] = 1.0 / norms[keep[pk]]
                    for j, rj in zip(active, r):
                        y[keep[j]] += max(-rj, 0.0) / norms[keep[j]]
                    return infeasible(y, its)
                u = u - t1 * r
                u_p += t1
                del active[drop]
                u = np.delete(u, drop)
                continue
            t2 = -(Nn[pk] @ z - bn[pk]) / curvature
            t = min(t1, t2)
            z = z + t * dz
            u = u - t * r
            u_p += t
            if t2 <= t1:
                active.append(pk)
                u = np.append(u, u_p)
                break
            del active[drop]
            u = np.delete(u, drop)

    lam = np.zeros(nb)
    for j, uj in zip(active, u):
        lam[keep[j]] = max(uj, 0.0) / norms[keep[j]]
    return done(lam, its)


def verify_kkt(p: QPProblem, s: QPSolution, tol: float = 1e-8) -> KKTReport:
    """Recompute stationarity, primal and dual feasibility and
    complementarity of an optimal solution from scratch."""
    if s.minimizer is None:
        raise ValueError("solution has no minimizer")
    z = np.asarray(s.minimizer, float)
    grad = p.P @ z + p.q - p.A.T @ s.duals - s.lower_duals + s.upper_duals
    slack = [p.A @ z - p.c]
    duals = [s.duals]
    if p.lower is not None:
        fin = np.isfinite(p.lower)
        slack.append((z - p.lower)[fin])
        duals.append(s.lower_duals[fin])
    if p.upper is not None:
        fin = np.isfinite(p.upper)
        slack.append((p.upper - z)[fin])
        duals.append(s.upper_duals[fin])
    slack = np.concatenate(slack)
    duals = np.concatenate(duals)
    return KKTReport(
        stationarity=float(np.max(np.abs(grad), initial=0.0)),
        primal=float(max(0.0, -np.min(slack, initial=0.0))),
        dual=float(max(0.0, -np.min(duals, initial=0.0))),
        complementarity=float(np.max(np.abs(slack * duals), initial=0.0)),
        tol=tol,
    )


def dual_objective(p: QPProblem, s: QPSolution) -> float:
    """Lagrangian dual value at the solution's multipliers."""
    N, b, origin = p.stacked()
    lam = []
    for kind, k in origin:
        lam.append({"row": s.duals, "lower": s.lower_duals, "upper": s.upper_duals}[kind][k])
    lam = np.array(lam)
    v = N.T @ lam - p.q
    return float(-0.5 * v @ p.solve_P(v) + b @ lam)


def max_strict_margin(A, c, lower=None, upper=None, cap: float = 1.0):
    """Largest ``t <= cap`` such that ``A u >= c + t`` for some ``u`` in the box.

    A positive margin certifies that the constraints can be met strictly.
    Returns ``(margin, witness)``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    c = np.asarray(c, float).reshape(-1)
    k, d = A.shape if c.size else (0, A.shape[1])
    lo = np.full(d, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, float), (d,))
    hi = np.full(d, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), (d,))
    if np.any(lo > hi):
        raise ValueError("empty input box")
    if k == 0:
        return float(cap), np.clip(np.zeros(d), lo, hi)
    # variables (u, t): maximize t  s.t.  -A u + t <= -c
    obj = np.zeros(d + 1)
    obj[-1] = -1.0
    A_ub = np.hstack([-A, np.ones((k, 1))])
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b_) else b_) for a, b_ in zip(lo, hi)]
    bounds.append((None, cap))
    res = linprog(obj, A_ub=A_ub, b_ub=-c, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"margin LP failed: {res.message}")
    return float(res.x[-1]), res.x[:-1]
