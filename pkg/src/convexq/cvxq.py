"""Convex Q-learning: sampled constraint systems and their linear programs.

The program solved is::

    maximize  theta @ mu_feature_mean
    s.t.      gbar(theta) = sum_k w_k * (-D_{k+1}(theta)) * zeta_k <= 0
              |theta_j| <= r

with ``w_k = 1/N`` for a trajectory, or steady-state weights for the exact
(model-based) program.  ``gbar`` is convex because ``D_{k+1}`` is a pointwise
minimum of affine functions of ``theta`` and ``zeta_k >= 0``.

Two LP routes are provided and are cross-checked in the test-suite:

* the epigraph lift, with one auxiliary variable per distinct next state
  standing in for ``-min_u theta @ psi(x', u)``;
* constraint generation over policy-indexed linear constraints
  ``gbar(theta, phi) <= 0``, adding the block of the current greedy policy
  until no constraint is violated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, LPStatus, SolveReport, solve_lp
from .mdp_core import FiniteMdp, RandomizedPolicy, stationary_transitions

__all__ = [
    "ConstraintSystem",
    "DegenerateSolution",
    "IterationLimit",
    "GalerkinReport",
    "ExcitationResult",
    "default_box_radius",
    "pmf_feature_mean",
    "sample_feature_mean",
    "solve_cvxq",
    "solve_cvxq_constraint_gen",
    "solve_relative_cvxq",
    "galerkin_report",
    "excitation_check",
    "report_dict",
]


class DegenerateSolution(RuntimeError):
    """Fewer than ``d`` tight constraints at the reported optimizer."""


class IterationLimit(RuntimeError):
    """Constraint generation exceeded its cut budget."""


def pmf_feature_mean(features, pmf: np.ndarray) -> np.ndarray:
    """``sum_z pmf(z) psi(z)`` for a pmf of shape ``(n_states, n_actions)``."""
    pmf = np.asarray(pmf, dtype=float)
    x, u = np.nonzero(pmf > 0)
    return pmf[x, u] @ features.psi(x, u)


def sample_feature_mean(features, states) -> np.ndarray:
    """Feature mean of the empirical distribution of ``states`` crossed with uniform actions."""
    states = np.asarray(states)
    return features.next_psi(states).mean(axis=(0, 1))


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """Weighted transition data defining ``gbar``.

    Row ``k`` holds ``psi(z_k)``, ``c_k``, ``psi(x_{k+1}, u)`` for every ``u``,
    ``zeta_k`` and the weight ``w_k``; the weights sum to one.  With
    ``delta > 0`` the temporal difference is the relative one, shifted by
    ``-delta * theta @ omega_feature_mean``.
    """

    psi: np.ndarray
    cost: np.ndarray
    psi_next: np.ndarray
    zeta: np.ndarray
    weight: np.ndarray
    discount: float
    mu_feature_mean: np.ndarray
    delta: float = 0.0
    omega_feature_mean: np.ndarray | None = None
    n_samples: int | None = None
    next_key: np.ndarray | None = None

    def __post_init__(self):
        K, d = self.psi.shape
        if K < 1:
            raise ValueError("constraint system needs at least one row")
        if self.psi_next.shape[0] != K or self.psi_next.shape[2] != d:
            raise ValueError("psi_next must have shape (K, n_actions, d)")
        if self.zeta.shape[0] != K or self.cost.shape != (K,) or self.weight.shape != (K,):
            raise ValueError("cost, zeta and weight must have one row per transition")
        if np.any(self.zeta < 0):
            raise ValueError("eligibility vectors must be nonnegative")
        if self.mu_feature_mean.shape != (d,):
            raise ValueError("mu_feature_mean must have length d")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.delta > 0 and (self.omega_feature_mean is None or self.omega_feature_mean.shape != (d,)):
            raise ValueError("relative systems need omega_feature_mean of length d")

    # construction ---------------------------------------------------------

    @classmethod
    def from_transitions(cls, features, x, u, cost, x_next, weight, discount, mu_feature_mean,
                         n_samples=None) -> "ConstraintSystem":
        x, u, x_next = np.asarray(x), np.asarray(u, dtype=int), np.asarray(x_next)
        weight = np.asarray(weight, dtype=float)
        return cls(
            psi=np.asarray(features.psi(x, u), dtype=float),
            cost=np.asarray(cost, dtype=float),
            psi_next=np.asarray(features.next_psi(x_next), dtype=float),
            zeta=np.asarray(features.zeta(x, u), dtype=float),
            weight=weight / weight.sum(),
            discount=float(discount),
            mu_feature_mean=np.asarray(mu_feature_mean, dtype=float),
            n_samples=n_samples,
            next_key=x_next if x_next.dtype.kind in "iu" else None,
        )

    @classmethod
    def from_trajectory(cls, traj, features, discount, mu_feature_mean) -> "ConstraintSystem":
        N = traj.N
        return cls.from_transitions(features, traj.x, traj.u, traj.cost, traj.x_next,
                                    np.full(N, 1.0 / N), discount, mu_feature_mean, n_samples=N)

    @classmethod
    def from_counts(cls, mdp: FiniteMdp, features, counts: np.ndarray, mu_feature_mean) -> "ConstraintSystem":
        """Finite-MDP data summarized by transition counts of shape ``(n_pairs, n_states)``.

        Every observed transition keeps its multiplicity through its weight, so
        ``gbar`` equals the trajectory average exactly.
        """
        counts = np.asarray(counts).reshape(mdp.n_pairs, mdp.n_states)
        z, y = np.nonzero(counts)
        x, u = np.divmod(z, mdp.n_actions)
        N = int(counts.sum())
        return cls.from_transitions(features, x, u, mdp.cost[x, u], y, counts[z, y] / N,
                                    mdp.discount, mu_feature_mean, n_samples=N)

    @classmethod
    def exact(cls, mdp: FiniteMdp, policy: RandomizedPolicy, features, mu_feature_mean) -> "ConstraintSystem":
        """Steady-state constraint system: weights ``varpi(x,u) P_u(x,x')``."""
        x, u, y, w = stationary_transitions(mdp, policy)
        return cls.from_transitions(features, x, u, mdp.cost[x, u], y, w, mdp.discount, mu_feature_mean)

    def relative(self, delta: float, omega_feature_mean) -> "ConstraintSystem":
        if delta <= 0:
            raise ValueError("delta must be positive")
        return ConstraintSystem(self.psi, self.cost, self.psi_next, self.zeta, self.weight, self.discount,
                                self.mu_feature_mean, float(delta),
                                np.asarray(omega_feature_mean, dtype=float), self.n_samples, self.next_key)

    def aggregate(self) -> "ConstraintSystem":
        """Merge identical rows, summing their weights; ``gbar`` is unchanged."""
        K = self.psi.shape[0]
        rows = np.hstack([self.psi, self.cost[:, None], self.psi_next.reshape(K, -1), self.zeta])
        _, first, inv = np.unique(rows, axis=0, return_index=True, return_inverse=True)
        w = np.bincount(inv.ravel(), weights=self.weight)
        key = None if self.next_key is None else self.next_key[first]
        return ConstraintSystem(self.psi[first], self.cost[first], self.psi_next[first], self.zeta[first], w,
                                self.discount, self.mu_feature_mean, self.delta, self.omega_feature_mean,
                                self.n_samples, key)

    # evaluation -------------------------------------------------------------

    @property
    def d(self) -> int:
        return self.psi.shape[1]

    @property
    def n_eligibility(self) -> int:
        return self.zeta.shape[1]

    @property
    def n_actions(self) -> int:
        return self.psi_next.shape[1]

    @property
    def shift(self) -> np.ndarray:
        if self.delta == 0:
            return np.zeros(self.d)
        return self.delta * self.omega_feature_mean

    def next_values(self, theta) -> np.ndarray:
        return self.psi_next @ np.asarray(theta, dtype=float)

    def greedy_next(self, theta) -> np.ndarray:
        return np.argmin(self.next_values(theta), axis=1)

    def td(self, theta, next_actions=None) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        nv = self.next_values(theta)
        follow = nv.min(axis=1) if next_actions is None else nv[np.arange(nv.shape[0]), next_actions]
        return -(self.psi + self.shift) @ theta + self.cost + self.discount * follow

    def gbar(self, theta) -> np.ndarray:
        return -(self.weight * self.td(theta)) @ self.zeta

    def gbar_policy(self, theta, next_actions) -> np.ndarray:
        return -(self.weight * self.td(theta, next_actions)) @ self.zeta

    def policy_constraints(self, next_actions):
        """``(A, b)`` with ``gbar_policy(theta, a) = A @ theta - b``."""
        K = self.psi.shape[0]
        follow = self.psi_next[np.arange(K), next_actions]
        Wz = self.weight[:, None] * self.zeta
        A = Wz.T @ (self.psi + self.shift - self.discount * follow)
        b = Wz.T @ self.cost
        return A, b

    def active_rows(self) -> np.ndarray:
        """Eligibility components carrying positive weight somewhere."""
        return np.flatnonzero((self.weight[:, None] * self.zeta).sum(axis=0) > 0)


def default_box_radius(cs: ConstraintSystem) -> float:
    return 1e3 * (1.0 + float(cs.cost.max())) / (1.0 - cs.discount)


def _resolve_radius(cs, box_radius):
    return default_box_radius(cs) if box_radius is None else float(box_radius)


def _finalize(cs: ConstraintSystem, rep: SolveReport, theta, duals_full, info) -> SolveReport:
    g = cs.gbar(theta)
    tol = 1e-7 * (1.0 + np.abs((cs.weight[:, None] * cs.zeta).T @ cs.cost))
    return SolveReport(
        LPStatus.OPTIMAL,
        theta=theta,
        objective_value=float(cs.mu_feature_mean @ theta),
        active_set=np.flatnonzero(np.abs(g) <= tol),
        duals=duals_full,
        iterations=rep.iterations,
        info=info,
    )


def solve_cvxq(cs: ConstraintSystem, box_radius: float | None = None) -> SolveReport:
    """Solve the convex program through its epigraph LP.

    Each distinct next state ``x'`` gets a variable ``s`` with
    ``s >= -theta @ psi(x', u)`` for every ``u``; it enters every constraint
    with coefficient ``gamma * w_k * zeta_k^i >= 0``, so the lifted feasible
    set projects exactly onto ``{gbar(theta) <= 0}``.
    """
    r = _resolve_radius(cs, box_radius)
    if r <= 0:
        raise ValueError("box radius must be positive")
    d, nA = cs.d, cs.n_actions
    K = cs.psi.shape[0]
    if cs.next_key is not None:
        keys, group = np.unique(cs.next_key, return_inverse=True)
        first = np.zeros(keys.size, dtype=int)
        first[group[::-1]] = np.arange(K)[::-1]
    else:
        _, first, group = np.unique(cs.psi_next.reshape(K, -1), axis=0, return_index=True, return_inverse=True)
    group = group.ravel()
    S = first.size
    rows = cs.active_rows()
    Wz = (cs.weight[:, None] * cs.zeta)[:, rows]
    A_theta = Wz.T @ (cs.psi + cs.shift)
    A_s = np.zeros((S, rows.size))
    np.add.at(A_s, group, Wz)
    A_s = cs.discount * A_s.T
    b_main = Wz.T @ cs.cost
    used = np.flatnonzero(np.abs(A_s).sum(axis=0) > 0)
    A_s = A_s[:, used]
    psi_g = cs.psi_next[first[used]]  # (S', nA, d)
    Sp = used.size
    # s-rows: -theta @ psi(g, u) - s_g <= 0
    A_sr_theta = -psi_g.reshape(Sp * nA, d)
    A_sr_s = -np.repeat(np.eye(Sp), nA, axis=0)
    A = np.vstack([np.hstack([A_theta, A_s]), np.hstack([A_sr_theta, A_sr_s])])
    b = np.concatenate([b_main, np.zeros(Sp * nA)])
    c = np.concatenate([cs.mu_feature_mean, np.zeros(Sp)])
    if np.isfinite(r):
        s_bound = r * np.abs(psi_g).sum(axis=2).max(axis=1)
        upper = np.concatenate([np.full(d, r), s_bound])
        lower = -upper
    else:
        upper = lower = None
    rep = solve_lp(LinearProgram(c, A, b, lower, upper))
    info = {"method": "epigraph", "n_vars": d + Sp, "n_rows": A.shape[0], "box_radius": r}
    if rep.status is not LPStatus.OPTIMAL:
        ray = None if rep.ray is None else rep.ray[:d]
        return SolveReport(rep.status, theta=None if rep.theta is None else rep.theta[:d], ray=ray,
                           farkas=rep.farkas, iterations=rep.iterations, info=info)
    duals = np.zeros(cs.n_eligibility)
    duals[rows] = rep.duals[: rows.size]
    info["box_active"] = bool(np.any(np.abs(np.abs(rep.theta[:d]) - r) <= 1e-9 * (1 + r))) if np.isfinite(r) else False
    return _finalize(cs, rep, rep.theta[:d], duals, info)


def solve_relative_cvxq(cs: ConstraintSystem, box_radius: float | None = None,
                        delta: float | None = None, omega_feature_mean=None) -> SolveReport:
    """Relative convex Q-learning: same epigraph LP with the relative temporal difference."""
    if delta is not None:
        cs = cs.relative(delta, omega_feature_mean)
    if cs.delta <= 0:
        raise ValueError("relative CvxQ needs delta > 0")
    rep = solve_cvxq(cs, box_radius)
    rep.info["relative"] = True
    return rep


def solve_cvxq_constraint_gen(cs: ConstraintSystem, box_radius: float | None = None,
                              max_cuts: int = 1000, tol: float = 1e-8) -> SolveReport:
    """Cutting-plane solve over the policy-indexed linear constraints.

    Starts from the greedy policy of ``theta = 0``; after each LP solve the
    block of the current greedy policy is appended if ``gbar`` is violated
    by more than ``tol * (1 + max|b|)``.  Without a box an intermediate LP
    may be unbounded along a ray although the full program is not; the cut
    added then is the greedy policy far out along the ray.  Unbounded is
    reported only when that block is already present, in which case
    ``theta + t * ray`` satisfies the true constraints for all large ``t``.
    """
    r = _resolve_radius(cs, box_radius)
    d = cs.d
    rows = cs.active_rows()
    bounds = (np.full(d, -r), np.full(d, r)) if np.isfinite(r) else (None, None)
    A_blocks, b_blocks = [], []
    seen: set[bytes] = set()
    theta = np.zeros(d)
    a = cs.greedy_next(theta)
    scale = None
    rep = None
    total_iters = 0
    for cut in range(max_cuts + 1):
        key = a.tobytes()
        if key in seen:
            if rep.status is LPStatus.UNBOUNDED:
                info = {"method": "constraint_generation", "cuts": len(A_blocks), "box_radius": r}
                return SolveReport(rep.status, theta=rep.theta, ray=rep.ray, iterations=total_iters, info=info)
            break  # violation is at numerical noise level
        if cut == max_cuts:
            raise IterationLimit(f"constraint generation exceeded {max_cuts} cuts")
        seen.add(key)
        A, b = cs.policy_constraints(a)
        A_blocks.append(A[rows])
        b_blocks.append(b[rows])
        if scale is None:
            scale = tol * (1.0 + np.abs(b[rows]).max(initial=0.0))
        rep = solve_lp(LinearProgram(cs.mu_feature_mean, np.vstack(A_blocks), np.concatenate(b_blocks),
                                     *bounds))
        total_iters += rep.iterations
        if rep.status is LPStatus.UNBOUNDED:
            a = _greedy_along_ray(cs, rep.theta, rep.ray)
            continue
        if rep.status is not LPStatus.OPTIMAL:
            info = {"method": "constraint_generation", "cuts": len(A_blocks), "box_radius": r}
            return SolveReport(rep.status, theta=rep.theta, ray=rep.ray, farkas=rep.farkas,
                               iterations=total_iters, info=info)
        theta = rep.theta
        if cs.gbar(theta)[rows].max(initial=-np.inf) <= scale:
            break
        a = cs.greedy_next(theta)
    duals = np.zeros(cs.n_eligibility)
    duals[rows] = rep.duals.reshape(len(A_blocks), rows.size).sum(axis=0)
    info = {"method": "constraint_generation", "cuts": len(A_blocks), "box_radius": r}
    rep.iterations = total_iters
    return _finalize(cs, rep, theta, duals, info)


def _greedy_along_ray(cs: ConstraintSystem, x, ray) -> np.ndarray:
    """Greedy next actions at ``x + t * ray`` for all large ``t``: minimize along the ray, break ties at ``x``."""
    along = cs.next_values(ray)
    at_x = cs.next_values(x)
    best = along.min(axis=1, keepdims=True)
    tied = along <= best + 1e-9 * (1.0 + np.abs(along).max())
    return np.argmin(np.where(tied, at_x, np.inf), axis=1)


@dataclass
class GalerkinReport:
    tight: np.ndarray
    residuals: np.ndarray
    d: int
    greedy_unique: bool
    inside_box: bool
    tol: float

    @property
    def n_tight(self) -> int:
        return int(self.tight.size)

    @property
    def is_bfs(self) -> bool:
        return self.n_tight >= self.d


def galerkin_report(cs: ConstraintSystem, report: SolveReport, tol: float = 1e-7,
                    strict: bool = False) -> GalerkinReport:
    """Tight constraints ``gbar^i(theta, phi^theta) = 0`` at an optimizer.

    With ``strict=True`` a count below ``d`` raises :class:`DegenerateSolution`;
    otherwise the shortfall is only reported through ``is_bfs``.
    """
    if not report.optimal:
        raise ValueError("galerkin_report needs an optimal solve")
    theta = report.theta
    g = cs.gbar(theta)
    tight = np.flatnonzero(np.abs(g) <= tol)
    nv = np.sort(cs.next_values(theta), axis=1)
    gaps = nv[:, 1] - nv[:, 0] if nv.shape[1] > 1 else np.full(nv.shape[0], np.inf)
    used = (cs.weight[:, None] * cs.zeta).sum(axis=1) > 0
    greedy_unique = bool(np.all(gaps[used] > 1e-9 * (1 + np.abs(nv[used, 0]))))
    r = report.info.get("box_radius", np.inf)
    inside = bool(np.all(np.abs(theta) < r * (1 - 1e-9))) if np.isfinite(r) else True
    out = GalerkinReport(tight, g, cs.d, greedy_unique, inside, tol)
    if strict and not out.is_bfs:
        raise DegenerateSolution(f"only {out.n_tight} of d={cs.d} constraints are tight")
    return out


@dataclass
class ExcitationResult:
    bounded: bool
    witness: np.ndarray | None = None
    optima: np.ndarray = field(default_factory=lambda: np.zeros(0))


def excitation_check(data) -> ExcitationResult:
    """Decide whether ``{v : v @ psi_k >= 0 for all k}`` is the origin.

    ``data`` is a :class:`ConstraintSystem` (rows with positive weight are
    used) or a ``(K, d)`` array of feature vectors.  For each coordinate and
    sign, ``max sign * v_j`` over the cone intersected with the unit box is
    computed by LP; the cone is trivial iff all ``2d`` optima vanish.
    """
    if isinstance(data, ConstraintSystem):
        P = data.psi[data.weight > 0]
    else:
        P = np.asarray(data, dtype=float)
    P = np.unique(P, axis=0)
    d = P.shape[1]
    optima = np.zeros(2 * d)
    witness = None
    for j in range(d):
        for s, sign in enumerate((1.0, -1.0)):
            c = np.zeros(d)
            c[j] = sign
            rep = solve_lp(LinearProgram(c, -P, np.zeros(P.shape[0]), -np.ones(d), np.ones(d)))
            optima[2 * j + s] = rep.objective_value
            if rep.objective_value > 1e-9 and witness is None:
                witness = rep.theta.copy()
    return ExcitationResult(witness is None, witness, optima)


def report_dict(report: SolveReport) -> dict:
    """JSON-ready view of a solve."""
    arr = lambda a: None if a is None else [float(v) for v in np.asarray(a).ravel()]
    return {
        "status": report.status.value,
        "theta": arr(report.theta),
        "objective": None if not report.optimal else float(report.objective_value),
        "active_set": [int(i) for i in report.active_set],
        "duals": arr(report.duals),
        "iterations": int(report.iterations),
        "diagnostics": {k: (v.item() if isinstance(v, np.generic) else v) for k, v in report.info.items()},
    }
