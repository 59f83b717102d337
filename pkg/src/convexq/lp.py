"""Dense linear-program solver with vertex, active-set and dual reporting.

Problems are stated as::

    maximize    c @ x
    subject to  A @ x <= b,   lower <= x <= upper

with possibly infinite bounds.  The solver works directly on the inequality
form: a basis is a set of ``n`` linearly independent tight rows (constraint
rows and finite box rows), so each iterate is a vertex and the optimal basis
gives the active set and the Lagrange multipliers for free.  This is the
revised simplex method applied to the slack form, with Bland's smallest-index
rule on both the entering and the leaving choice.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LinearProgram",
    "LPStatus",
    "NumericalError",
    "SolveReport",
    "solve_lp",
    "dump_lp",
]


class NumericalError(RuntimeError):
    """Raised when the simplex iteration cap is hit or the basis degenerates."""


class LPStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    UNBOUNDED = "Unbounded"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class LinearProgram:
    objective: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        n = c.size
        b = np.asarray(self.b, dtype=float).ravel()
        A = np.asarray(self.A, dtype=float).reshape(-1, n) if n else np.zeros((b.size, 0))
        if A.shape[0] != b.size:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        lo = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float).ravel()
        hi = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float).ravel()
        if lo.size != n or hi.size != n:
            raise ValueError("box bounds must have one entry per variable")
        for name, arr in (("objective", c), ("A", A), ("b", b), ("lower", lo), ("upper", hi)):
            if np.isnan(arr).any():
                raise ValueError(f"{name} contains NaN")
        if not (np.isfinite(c).all() and np.isfinite(A).all() and np.isfinite(b).all()):
            raise ValueError("objective, A and b must be finite")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_constraints(self) -> int:
        return self.b.size


@dataclass
class SolveReport:
    """Outcome of an LP solve.

    ``duals`` are the multipliers of the rows of ``A``; ``box_duals_upper`` and
    ``box_duals_lower`` those of the finite box bounds.  At an optimum
    ``objective = A.T @ duals + box_duals_upper - box_duals_lower``.
    ``ray`` is an improving feasible direction for an unbounded problem and
    ``farkas`` a nonnegative row combination certifying infeasibility.
    """

    status: LPStatus
    theta: np.ndarray | None = None
    objective_value: float = np.nan
    active_set: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    duals: np.ndarray | None = None
    box_duals_lower: np.ndarray | None = None
    box_duals_upper: np.ndarray | None = None
    ray: np.ndarray | None = None
    farkas: np.ndarray | None = None
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is LPStatus.OPTIMAL


def _tight_tol(h: np.ndarray) -> np.ndarray:
    return 1e-7 * (1.0 + np.abs(h))


class _InequalityForm:
    """Rows G x <= h assembled from A x <= b and the finite box bounds."""

    def __init__(self, lp: LinearProgram):
        n = lp.n_vars
        up = np.flatnonzero(np.isfinite(lp.upper))
        lo = np.flatnonzero(np.isfinite(lp.lower))
        eye = np.eye(n)
        self.G = np.vstack([lp.A, eye[up], -eye[lo]])
        self.h = np.concatenate([lp.b, lp.upper[up], -lp.lower[lo]])
        self.m = lp.n_constraints
        self.up = up
        self.lo = lo


def _independent_rows(G: np.ndarray, candidates: list[int], n: int,
                      seed_rows: np.ndarray | None = None, tol: float = 1e-9) -> list[int]:
    """Smallest-index greedy choice of rows independent of each other and of ``seed_rows``."""
    chosen: list[int] = []
    Q = np.zeros((0, n))
    if seed_rows is not None and seed_rows.size:
        Q = np.linalg.qr(seed_rows.T)[0].T
    for i in sorted(candidates):
        if Q.shape[0] >= n:
            break
        g = G[i] / max(np.linalg.norm(G[i]), 1e-300)
        r = g - Q.T @ (Q @ g)
        nr = np.linalg.norm(r)
        if nr > tol:
            Q = np.vstack([Q, r / nr])
            chosen.append(i)
    return chosen


def _null_space(M: np.ndarray, n: int) -> np.ndarray:
    if M.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    rank = int(np.sum(s > 1e-10 * max(1.0, s[0])))
    return vt[rank:].T


class _Simplex:
    """Inequality-form primal simplex with Bland's rule.

    Rows appended by :meth:`to_vertex` for lineality directions orthogonal to
    the objective are pinned in the basis and never released.
    """

    def __init__(self, G, h, c, max_iter):
        self.G = G
        self.h = h
        self.c = c
        self.n = G.shape[1]
        self.max_iter = max_iter
        self.iterations = 0
        self.fixed: set[int] = set()
        norms = np.linalg.norm(G, axis=1)
        self.scale = np.where(norms > 0, norms, 1.0)

    def _slack(self, x):
        return (self.h - self.G @ x) / self.scale

    def to_vertex(self, x):
        """Move a feasible point to a vertex without decreasing the objective.

        Returns ``(basis, x, ray)``; ``ray`` is set when an improving direction
        meets no blocking row.
        """
        G, c, n = self.G, self.c, self.n
        cnorm = max(np.linalg.norm(c), 1.0)
        tol = _tight_tol(self.h) / self.scale
        pins: list[np.ndarray] = []
        for _ in range(4 * n + 4):
            slack = self._slack(x)
            tight = np.flatnonzero(slack <= tol)
            M = np.vstack([G[tight]] + [p[None, :] for p in pins])
            N = _null_space(M, n)
            if N.shape[1] == 0:
                break
            d = N[:, 0]
            if c @ d < 0:
                d = -d
            improving = c @ d > 1e-12 * cnorm
            moved = False
            for dd in ([d] if improving else [d, -d]):
                Gd = (G @ dd) / self.scale
                mask = Gd > 1e-12
                mask[tight] = False
                if mask.any():
                    step = (np.maximum(slack[mask], 0.0) / Gd[mask]).min()
                    x = x + step * dd
                    moved = True
                    break
            if not moved:
                if improving:
                    return None, x, d
                pins.append(d)
        else:
            raise NumericalError("failed to reach a vertex")
        P = np.array(pins).reshape(-1, n)
        m = G.shape[0]
        if pins:
            self.G = np.vstack([G, P])
            self.h = np.concatenate([self.h, P @ x])
            self.scale = np.concatenate([self.scale, np.ones(len(pins))])
            self.fixed = set(range(m, m + len(pins)))
        tight = list(np.flatnonzero(self._slack(x)[:m] <= tol))
        basis = sorted(self.fixed) + _independent_rows(G, tight, n, seed_rows=P)
        if len(basis) != n:
            raise NumericalError("could not assemble a vertex basis")
        return basis, x, None

    def run(self, basis, x):
        G, h, c, n = self.G, self.h, self.c, self.n
        in_basis = np.zeros(G.shape[0], dtype=bool)
        in_basis[basis] = True
        tol_y = 1e-11 * max(1.0, np.abs(c).max(initial=0.0))
        basis = list(basis)
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalError(f"simplex iteration cap {self.max_iter} reached")
            self.iterations += 1
            GB = G[basis]
            try:
                x = np.linalg.solve(GB, h[basis])
                y = np.linalg.solve(GB.T, c)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("singular basis") from exc
            candidates = [(basis[j], j) for j in range(n) if y[j] < -tol_y and basis[j] not in self.fixed]
            if not candidates:
                return basis, x, y
            leave_row, j = min(candidates)
            e = np.zeros(n)
            e[j] = -1.0
            d = np.linalg.solve(GB, e)
            d = d / np.linalg.norm(d)
            dscale = (G @ d) / self.scale
            slack = np.maximum(self._slack(x), 0.0)
            mask = (dscale > 1e-9) & ~in_basis
            if not mask.any():
                return basis, x, ("ray", d)
            idx = np.flatnonzero(mask)
            ratios = slack[idx] / dscale[idx]
            best = ratios.min()
            ties = idx[ratios <= best + 1e-12 * max(1.0, best)]
            # among ratio ties avoid tiny pivots, then fall back to the smallest index
            ties = ties[dscale[ties] >= 1e-3 * dscale[ties].max()]
            enter = int(ties.min())
            in_basis[leave_row] = False
            in_basis[enter] = True
            basis[j] = enter


def _solve_inequality(G, h, c, max_iter):
    """Maximize c@x s.t. G x <= h.  Returns (status, x, y, ray, farkas, iters)."""
    m, n = G.shape
    iters = 0
    # phase 1 on (x, t): maximize -t  s.t.  G x - t <= h,  -t <= 0
    x0 = np.zeros(n)
    t0 = max(0.0, float((G @ x0 - h).max(initial=0.0)))
    if t0 > 0:
        G1 = np.vstack([np.hstack([G, -np.ones((m, 1))]), np.r_[np.zeros(n), -1.0][None, :]])
        h1 = np.r_[h, 0.0]
        c1 = np.r_[np.zeros(n), -1.0]
        ph1 = _Simplex(G1, h1, c1, max_iter)
        basis, z, ray = ph1.to_vertex(np.r_[x0, t0])
        if ray is not None:  # pragma: no cover - phase 1 is bounded
            raise NumericalError("phase 1 reported unbounded")
        basis, z, y1 = ph1.run(basis, z)
        iters += ph1.iterations
        if z[-1] > 1e-9 * (1.0 + np.abs(h).max(initial=0.0)):
            y_full = np.zeros(ph1.G.shape[0])
            y_full[basis] = y1
            return LPStatus.INFEASIBLE, None, None, None, np.clip(y_full[:m], 0.0, None), iters
        x0 = z[:n]
    ph2 = _Simplex(G, h, c, max_iter)
    basis, x, ray = ph2.to_vertex(x0)
    if ray is not None:
        return LPStatus.UNBOUNDED, x, None, ray, None, iters + ph2.iterations
    basis, x, out = ph2.run(basis, x)
    iters += ph2.iterations
    if isinstance(out, tuple):
        return LPStatus.UNBOUNDED, x, None, out[1], None, iters
    y_full = np.zeros(ph2.G.shape[0])
    y_full[basis] = out
    return LPStatus.OPTIMAL, x, y_full[:m], None, None, iters


def solve_lp(lp: LinearProgram, max_iter: int = 100_000) -> SolveReport:
    """Solve ``lp``; an optimal report carries a KKT-consistent dual vector."""
    form = _InequalityForm(lp)
    n = lp.n_vars
    if n == 0:
        feasible = bool(np.all(lp.b >= -_tight_tol(lp.b)))
        if not feasible:
            return SolveReport(LPStatus.INFEASIBLE)
        return SolveReport(LPStatus.OPTIMAL, np.zeros(0), 0.0, duals=np.zeros(lp.n_constraints))
    status, x, y, ray, farkas, iters = _solve_inequality(form.G, form.h, lp.objective, max_iter)
    m = form.m
    if status is LPStatus.INFEASIBLE:
        return SolveReport(status, farkas=farkas, iterations=iters)
    if status is LPStatus.UNBOUNDED:
        ray = ray / np.abs(ray).max()
        return SolveReport(status, theta=x, ray=ray, iterations=iters)
    y = np.where(y > 0, y, 0.0)
    box_up = np.zeros(n)
    box_lo = np.zeros(n)
    box_up[form.up] = y[m:m + form.up.size]
    box_lo[form.lo] = y[m + form.up.size:]
    resid = lp.A @ x - lp.b
    active = np.flatnonzero(np.abs(resid) <= _tight_tol(lp.b))
    return SolveReport(
        LPStatus.OPTIMAL,
        theta=x,
        objective_value=float(lp.objective @ x),
        active_set=active,
        duals=y[:m],
        box_duals_lower=box_lo,
        box_duals_upper=box_up,
        iterations=iters,
    )


def dump_lp(lp: LinearProgram) -> str:
    """Plain-text matrix dump for debugging."""
    lines = [f"# maximize c@x s.t. A x <= b, lower <= x <= upper", f"{lp.n_constraints} {lp.n_vars}"]
    lines.append("c " + " ".join(repr(float(v)) for v in lp.objective))
    for i in range(lp.n_constraints):
        lines.append(" ".join(repr(float(v)) for v in lp.A[i]) + " <= " + repr(float(lp.b[i])))
    lines.append("lower " + " ".join(repr(float(v)) for v in lp.lower))
    lines.append("upper " + " ".join(repr(float(v)) for v in lp.upper))
    return "\n".join(lines) + "\n"
