"""Shared builders for the test suite."""
import time

import numpy as np

from nscbf import safeset as ss
from nscbf.qp import QPProblem

# one verdict line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list = []


def report_criterion(number: int, title: str, checks: dict) -> bool:
    """Record and print ``ACCEPTANCE n PASS|FAIL`` with the failing checks."""
    ok = all(bool(v) for v in checks.values())
    failed = [k for k, v in checks.items() if not v]
    line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title}"
    if failed:
        line += " (failed: " + ", ".join(failed) + ")"
    ACCEPTANCE.append(line)
    print(line)
    return ok


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def affine_component(cid, a, b, name=""):
    a = np.asarray(a, float)
    return ss.SmoothComponent(
        cid,
        lambda x: np.tensordot(a, x, 1) + b,
        lambda x: a.copy(),
        name,
    )


def quadratic_component(cid, center, radius, outside=False):
    center = np.asarray(center, float)
    s = 1.0 if outside else -1.0

    def value(x):
        d = x - (center if np.ndim(x) == 1 else center[:, None])
        return s * (np.sum(d * d, axis=0) - radius**2)

    return ss.SmoothComponent(cid, value, lambda x: s * 2.0 * (x - center))


def random_components(rng, k, n=2):
    comps = {}
    for cid in range(1, k + 1):
        if rng.random() < 0.5:
            comps[cid] = affine_component(cid, rng.normal(size=n), rng.normal())
        else:
            comps[cid] = quadratic_component(cid, rng.uniform(-1, 1, n), rng.uniform(0.3, 1.5),
                                             outside=bool(rng.random() < 0.3))
    return comps


def random_tree(rng, ids, depth):
    """Nested union/intersection tree of depth at most ``depth`` over ``ids``."""
    if depth <= 1 or rng.random() < 0.25:
        return ss.Leaf(int(rng.choice(ids)))
    cls = ss.Union if rng.random() < 0.5 else ss.Intersection
    return cls([random_tree(rng, ids, depth - 1) for _ in range(rng.integers(1, 4))])


def member(expr, comps, x) -> bool:
    """Membership by boolean recursion, independent of any min/max."""
    if isinstance(expr, ss.Leaf):
        return bool(comps[expr.id].value(x) >= 0)
    hits = (member(c, comps, x) for c in expr.children)
    return any(hits) if isinstance(expr, ss.Union) else all(hits)


def lipschitz_estimate(dnf, x, radius, rng, n=20):
    """Largest component gradient norm seen near x (sup-norm ball)."""
    pts = [x] + [x + rng.uniform(-radius, radius, x.size) for _ in range(n)]
    ids = dnf.component_ids
    return 1.1 * max(np.max(np.linalg.norm(dnf.gradients(p, ids), axis=1)) for p in pts)


def semicontinuous_at(dnf, x, rng, tol=ss.DEFAULT_TOL, deltas=(1e-3, 1e-4, 1e-5), n=100):
    """Some radius keeps the activity sets of nearby states inside the
    (band-widened) activity sets at x."""
    x = np.asarray(x, float)
    for d in deltas:
        lip = lipschitz_estimate(dnf, x, d, rng)
        wide = tol.widened(2 * lip * d)
        Lx, Ix = ss.active_L(dnf, x, wide), ss.active_I(dnf, x, wide)
        ok = True
        for _ in range(n):
            u = rng.normal(size=x.size)
            y = x + d * rng.random() ** (1 / x.size) * u / np.linalg.norm(u)
            if not (ss.active_L(dnf, y, tol) <= Lx and ss.active_I(dnf, y, tol) <= Ix):
                ok = False
                break
        if ok:
            return True
    return False


def random_feasible_qp(rng, n_rows=None):
    """Strictly convex 2-variable QP inside [-10, 10]^2.

    The free minimizer lies in [-4, 4]^2 and the rows are tilted so that
    most of them cut it off; the feasible set always holds a disk of
    radius 0.3.  Distances stay short so multipliers stay O(1): on a
    1e-3 lattice the grid oracle resolves an optimum sitting on an
    off-lattice vertex only to about |dual| * 1e-3.  Box bounds sit on
    the lattice.
    """
    B = rng.normal(size=(2, 2))
    P = B @ B.T / 4 + 0.5 * np.eye(2)
    free = rng.uniform(-4, 4, size=2)
    q = -P @ free
    k = rng.integers(1, 5) if n_rows is None else n_rows
    d = rng.normal(size=2)
    d *= rng.uniform(0.3, 0.9) / np.linalg.norm(d)
    center = free + d
    A = d / np.linalg.norm(d) + rng.normal(scale=0.6, size=(k, 2))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    c = A @ center - rng.uniform(0.3, 0.6, size=k)
    lower = upper = None
    if rng.random() < 0.3:
        lower = np.round(center - rng.uniform(0.3, 1.0, size=2), 3)
        upper = np.round(center + rng.uniform(0.3, 1.0, size=2), 3)
    return QPProblem(P, q, A, c, lower, upper)


def _grid_values(p, xs, ys):
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    Z = np.stack([X.ravel(), Y.ravel()])
    f = 0.5 * np.einsum("in,ij,jn->n", Z, p.P, Z) + p.q @ Z
    ok = np.all(p.A @ Z >= p.c[:, None], axis=0)
    if p.lower is not None:
        ok &= np.all(Z >= p.lower[:, None], axis=0) & np.all(Z <= p.upper[:, None], axis=0)
    f = np.where(ok, f, np.inf)
    k = int(np.argmin(f))
    return f[k], Z[:, k]


def grid_minimum(p):
    """Brute force over [-10, 10]^2, refined down to a 1e-3 lattice."""
    lo, hi, step = np.array([-10.0, -10.0]), np.array([10.0, 10.0]), 0.05
    best = None
    for next_step in (5e-3, 1e-3, None):
        xs = np.arange(lo[0], hi[0] + step / 2, step)
        ys = np.arange(lo[1], hi[1] + step / 2, step)
        best, z = _grid_values(p, xs, ys)
        if next_step is None:
            return best
        lo = np.maximum(z - 20 * step, -10.0)
        hi = np.minimum(z + 20 * step, 10.0)
        # stay on the 1e-3 lattice anchored at -10
        lo = -10.0 + np.floor((lo + 10.0) / next_step) * next_step
        step = next_step
