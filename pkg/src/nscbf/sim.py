"""Closed-loop simulation with sample-and-hold control.

The controller is evaluated at the start of each step and held constant
over it.  Switching surfaces between two dynamics pieces are handled in
one of two ways:

``chatter``
    integrate the raw piecewise field; the state zig-zags across the
    surface and approximates sliding as ``dt -> 0``.
``equiv``
    when both one-sided closed-loop fields point at the surface, move
    along their tangent convex combination (equivalent control).  The
    one-sided fields use the controller evaluated a small offset into
    each region, which realizes the limits in the Filippov map.

Surfaces where more than two pieces meet fall back to chattering.
"""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import safeset as ss
from .dynamics import PiecewiseDynamics, active_J, eval_dynamics, select_piece
from .qp import QPSolverError, QPStatus

__all__ = [
    "Scheme",
    "SlidingMode",
    "IntegratorConfig",
    "Trajectory",
    "SafetyReport",
    "NotSliding",
    "filippov_sliding_field",
    "simulate",
    "monitor_safety",
    "continuity_probe",
    "ProbeResult",
    "read_trajectory_csv",
]

log = logging.getLogger(__name__)


class Scheme(str, enum.Enum):
    EULER = "euler"
    RK4 = "rk4"


class SlidingMode(str, enum.Enum):
    CHATTER = "chatter"
    EQUIVALENT = "equiv"


class NotSliding(Exception):
    """The two one-sided fields do not both point at the surface."""


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    t_final: float = 1.0
    scheme: Scheme = Scheme.EULER
    sliding_mode: SlidingMode = SlidingMode.EQUIVALENT
    side_offset: float = 1e-8
    violation_tol: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "sliding_mode", SlidingMode(self.sliding_mode))
        if not (self.dt > 0 and self.t_final > 0 and self.dt <= self.t_final):
            raise ValueError("need 0 < dt <= t_final")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    h_values: np.ndarray
    active_L: list
    active_I: list
    active_J: list
    pieces: list
    alpha: np.ndarray
    M: np.ndarray
    statuses: list
    sliding: np.ndarray
    tangency: np.ndarray
    min_margins: np.ndarray
    velocities: np.ndarray
    aborted: bool = False

    def __len__(self):
        return len(self.times)

    def to_csv(self, path, float_fmt: str = "{:.17g}") -> None:
        """Write one row per sample: t, x_1..x_n, u_1..u_m, h, alpha, M,
        qp_status, active_clauses (';'-joined), piece_id (';'-joined when
        sliding)."""
        n = self.states.shape[1]
        m = self.inputs.shape[1]
        header = (["t"] + [f"x_{k + 1}" for k in range(n)] + [f"u_{k + 1}" for k in range(m)]
                  + ["h", "alpha", "M", "qp_status", "active_clauses", "piece_id"])
        fmt = float_fmt.format
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.times)):
                w.writerow(
                    [fmt(self.times[k])]
                    + [fmt(v) for v in self.states[k]]
                    + [fmt(v) for v in self.inputs[k]]
                    + [fmt(self.h_values[k]), fmt(self.alpha[k]), fmt(self.M[k]), self.statuses[k],
                       ";".join(str(l) for l in sorted(self.active_L[k])),
                       ";".join(str(j) for j in self.pieces[k])]
                )


def read_trajectory_csv(path) -> dict:
    """Parse a trajectory file into column arrays (numeric where possible)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for k, name in enumerate(header):
        col = [r[k] for r in body]
        if name in ("qp_status", "active_clauses", "piece_id"):
            out[name] = col
        else:
            out[name] = np.array([float(v) for v in col])
    return out


@dataclass
class SafetyReport:
    min_h: float
    first_violation_time: float | None
    violation_tol: float
    infeasible_steps: int
    aborted: bool = False

    @property
    def violated(self) -> bool:
        return self.first_violation_time is not None


def monitor_safety(traj: Trajectory, tol: float = 1e-3) -> SafetyReport:
    """Smallest recorded h and the first time it drops below ``-tol``."""
    h = np.asarray(traj.h_values)
    below = np.flatnonzero(h < -tol)
    first = float(traj.times[below[0]]) if below.size else None
    infeasible = sum(1 for s in traj.statuses if s != QPStatus.OPTIMAL.value)
    return SafetyReport(float(np.min(h)) if h.size else np.inf, first, tol, infeasible, traj.aborted)


def filippov_sliding_field(dyn: PiecewiseDynamics, x, u, j1: int, j2: int, u2=None) -> np.ndarray:
    """Tangent convex combination of the two one-sided closed-loop fields.

    ``u`` drives piece ``j1`` and ``u2`` (default ``u``) drives ``j2``.
    The surface normal is the gradient of piece ``j1``'s guard, which
    points from region ``j1`` into region ``j2``.  Raises
    :class:`NotSliding` unless region ``j1``'s field points toward the
    surface and region ``j2``'s field points back.
    """
    x = np.asarray(x, float)
    u1 = np.atleast_1d(np.asarray(u, float))
    u2 = u1 if u2 is None else np.atleast_1d(np.asarray(u2, float))
    f1, G1 = eval_dynamics(dyn, x, j1)
    f2, G2 = eval_dynamics(dyn, x, j2)
    F1 = f1 + G1 @ u1
    F2 = f2 + G2 @ u2
    ng = dyn.piece(j1).guard_grad(x)
    a, b = ng @ F1, ng @ F2
    scale = max(np.linalg.norm(ng) * max(np.linalg.norm(F1), np.linalg.norm(F2)), 1e-300)
    if abs(a) <= 1e-14 * scale and abs(b) <= 1e-14 * scale:
        lam = 0.5
    elif a >= 0 >= b and a > b:
        lam = b / (b - a)
    else:
        raise NotSliding(f"normal components {a:.3g}, {b:.3g}")
    field_ = lam * F1 + (1 - lam) * F2
    # remove the rounding residue along the normal
    field_ = field_ - (ng @ field_) / (ng @ ng) * ng
    return field_, lam


@dataclass
class _Log:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    h: list = field(default_factory=list)
    L: list = field(default_factory=list)
    I: list = field(default_factory=list)
    J: list = field(default_factory=list)
    pieces: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    M: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    sliding: list = field(default_factory=list)
    tangency: list = field(default_factory=list)
    margins: list = field(default_factory=list)
    velocities: list = field(default_factory=list)


class _Runner:
    def __init__(self, controller, dnf, dyn, cfg, tol):
        self.controller = controller
        self.dnf = dnf
        self.dyn = dyn
        self.cfg = cfg
        self.tol = tol
        self.last_u = np.zeros(dyn.m)
        self.log = _Log()

    def control(self, x):
        res = self.controller(x)
        if res.feasible:
            self.last_u = np.asarray(res.input, float).copy()
            return self.last_u, res
        return self.last_u, res

    def surface(self, x):
        """Pieces within the boundary band, if exactly two."""
        g = self.dyn.guards(x)
        near = [p.id for p, gv in zip(self.dyn.pieces, g) if abs(gv) <= self.dyn.eps_J]
        if len(near) > 2:
            log.warning("codimension >= 2 switching at %s; chattering", np.asarray(x).tolist())
        return tuple(near) if len(near) == 2 else None

    def try_slide(self, x, pair):
        """Return (field function, one-sided results, lam, residual) or None."""
        j1, j2 = pair
        ng = self.dyn.piece(j1).guard_grad(x)
        nhat = ng / np.linalg.norm(ng)
        off = self.cfg.side_offset
        u1, r1 = self.control(x - off * nhat)
        u2, r2 = self.control(x + off * nhat)
        try:
            F, lam = filippov_sliding_field(self.dyn, x, u1, j1, j2, u2)
        except NotSliding:
            return None

        def field_fn(y):
            if y is x:
                return F
            try:
                return filippov_sliding_field(self.dyn, y, u1, j1, j2, u2)[0]
            except NotSliding:
                return F

        ueq = lam * u1 + (1 - lam) * u2
        return field_fn, (r1, r2), ueq, abs(ng @ F)

    def raw_field(self, u):
        dyn = self.dyn

        def fn(y):
            f, G = eval_dynamics(dyn, y, select_piece(dyn, y))
            return f + G @ u

        return fn

    def integrate(self, fn, x, dt):
        if self.cfg.scheme is Scheme.EULER:
            return x + dt * fn(x)
        k1 = fn(x)
        k2 = fn(x + 0.5 * dt * k1)
        k3 = fn(x + 0.5 * dt * k2)
        k4 = fn(x + dt * k3)
        return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def record(self, t, x, u, results, pieces, sliding, tangency, velocity):
        ev = self.dnf.evaluate(x)
        tol = self.tol
        lg = self.log
        lg.times.append(t)
        lg.states.append(np.array(x, float))
        lg.inputs.append(np.array(u, float))
        lg.h.append(float(ev.h))
        L = ss.active_L(self.dnf, ev, tol)
        lg.L.append(L)
        lg.I.append(ss.active_I(self.dnf, ev, tol, L))
        lg.J.append(active_J(self.dyn, x))
        lg.pieces.append(tuple(pieces))
        feas = [r for r in results if r.feasible]
        lg.alpha.append(feas[0].adaptive_alpha if feas and feas[0].adaptive_alpha is not None else np.nan)
        lg.M.append(feas[0].adaptive_M if feas and feas[0].adaptive_M is not None else np.nan)
        lg.statuses.append(QPStatus.OPTIMAL.value if len(feas) == len(results)
                           else QPStatus.INFEASIBLE.value)
        lg.sliding.append(sliding)
        lg.tangency.append(tangency)
        lg.margins.append(min((r.min_margin for r in feas), default=np.nan))
        lg.velocities.append(np.array(velocity, float))

    def step(self, t, x, last: bool):
        cfg = self.cfg
        equiv = cfg.sliding_mode is SlidingMode.EQUIVALENT
        pair = self.surface(x) if equiv else None
        slide = self.try_slide(x, pair) if pair else None
        if slide is not None:
            fn, results, ueq, resid = slide
            self.record(t, x, ueq, results, pair, True, resid, fn(x))
            return None if last else self.integrate(fn, x, cfg.dt)

        u, res = self.control(x)
        j = select_piece(self.dyn, x)
        raw = self.raw_field(u)
        self.record(t, x, u, (res,), (j,), False, np.nan, raw(x))
        if last:
            return None
        x_new = self.integrate(raw, x, cfg.dt)
        if equiv:
            crossed = self._crossing(x, x_new, j)
            if crossed is not None:
                return crossed
        return x_new

    def _crossing(self, x, x_new, j):
        """If the step leaves piece j's region through a two-piece surface
        that attracts from both sides, stop on it and slide the remainder."""
        piece = self.dyn.piece(j)
        g0, g1 = float(piece.guard(x)), float(piece.guard(x_new))
        if not (g0 < 0 < g1):
            return None
        theta = g0 / (g0 - g1)
        xc = x + theta * (x_new - x)
        j2 = select_piece(self.dyn, x_new)
        if j2 == j:
            return None
        slide = self.try_slide(xc, (j, j2))
        if slide is None:
            return None
        fn = slide[0]
        return self.integrate(fn, xc, (1 - theta) * self.cfg.dt)


def simulate(x0, controller: Callable, dnf: ss.DNFForm, dyn: PiecewiseDynamics,
             cfg: IntegratorConfig = IntegratorConfig(),
             tolerances: ss.ActivityTolerances = ss.DEFAULT_TOL):
    """Integrate the closed loop from ``x0``; returns ``(Trajectory, SafetyReport)``.

    Infeasible programs reuse the last feasible input (zero before the
    first one) and are counted.  A solver failure stops the run and
    returns what was computed so far with ``aborted`` set.
    """
    x = np.asarray(x0, float).copy()
    run = _Runner(controller, dnf, dyn, cfg, tolerances)
    aborted = False
    n = cfg.n_steps
    for k in range(n + 1):
        t = k * cfg.dt
        try:
            x_next = run.step(t, x, last=(k == n))
        except QPSolverError as exc:
            log.error("solver failure at t=%.6g: %s", t, exc)
            aborted = True
            break
        if x_next is None:
            break
        x = x_next
    lg = run.log
    if not lg.times:
        raise QPSolverError("solver failed at the initial state")
    traj = Trajectory(
        times=np.array(lg.times),
        states=np.array(lg.states),
        inputs=np.array(lg.inputs),
        h_values=np.array(lg.h),
        active_L=lg.L,
        active_I=lg.I,
        active_J=lg.J,
        pieces=lg.pieces,
        alpha=np.array(lg.alpha, float),
        M=np.array(lg.M, float),
        statuses=lg.statuses,
        sliding=np.array(lg.sliding, bool),
        tangency=np.array(lg.tangency, float),
        min_margins=np.array(lg.margins, float),
        velocities=np.array(lg.velocities),
        aborted=aborted,
    )
    return traj, monitor_safety(traj, cfg.violation_tol)


@dataclass
class ProbeResult:
    counts: list
    max_jumps: list
    jump_params: list

    @property
    def ratios(self) -> list:
        return [a / b if b > 0 else np.inf for a, b in zip(self.max_jumps, self.max_jumps[1:])]


def continuity_probe(fn: Callable, path: Callable[[float], np.ndarray], samples: int,
                     refinements: int = 1) -> ProbeResult:
    """Largest jump between consecutive evaluations of ``fn`` along
    ``path(s)``, ``s = k / N``, for ``N = samples * 2**r``.

    ``fn`` may return an array or a ControlResult (its input is used).
    For a Lipschitz quantity the jump halves with each doubling; a
    discontinuity leaves it roughly constant.
    """
    counts, jumps, where = [], [], []
    for r in range(refinements + 1):
        N = samples * 2 ** r
        vals = []
        for k in range(N + 1):
            out = fn(path(k / N))
            out = getattr(out, "input", out)
            vals.append(np.atleast_1d(np.asarray(out, float)))
        d = np.linalg.norm(np.diff(np.array(vals), axis=0), axis=1)
        i = int(np.argmax(d))
        counts.append(N)
        jumps.append(float(d[i]))
        where.append((i + 0.5) / N)
    return ProbeResult(counts, jumps, where)
