"""Batch convex Q-learning: two-timescale primal-dual iterations.

At stage ``n`` the primal objective is::

    L_n(theta, lam) = -theta @ mu_bar - m_n(theta) + kappa * [m_n(theta)]_-^2 + eps * |theta|^2
    m_n(theta)      = < pi_n, D(theta) zeta @ lam >

with ``lam`` frozen at ``lam_n`` inside the regularizer.  The multiplier
tracks the constraint ``gbar(theta) = -<pi, D zeta> <= 0`` by projected
ascent on the Lagrangian, ``lam <- [lam - alpha * v]_+`` where ``v`` is a
running average of ``<pi, D zeta>``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cvxq import ConstraintSystem

__all__ = [
    "BatchSchedule",
    "DualState",
    "Regularizer",
    "ProxDivergence",
    "BatchTrace",
    "batch_objective",
    "explicit_step",
    "implicit_step",
    "dual_step",
    "split_batches",
    "run_batch_pd",
    "saddle_residuals",
]


class ProxDivergence(RuntimeError):
    """The implicit-step fixed-point iteration failed to make progress."""


@dataclass(frozen=True)
class BatchSchedule:
    """Batch boundaries ``0 = T_0 < ... < T_B = N`` and step sizes.

    ``alpha_n = a / (n + n0)`` and ``beta_n = b / (n + n0)**beta_exponent``;
    ``beta_exponent < 1`` makes ``alpha_n / beta_n -> 0``.
    """

    boundaries: tuple
    a: float = 1.0
    b: float = 1.0
    n0: float = 10.0
    beta_exponent: float = 0.6

    def __post_init__(self):
        T = np.asarray(self.boundaries)
        if T.ndim != 1 or T.size < 2 or T[0] != 0 or np.any(np.diff(T) <= 0):
            raise ValueError("boundaries must start at 0 and increase strictly")
        if min(self.a, self.b) <= 0 or self.n0 < 0:
            raise ValueError("step-size constants must be positive")
        if not 0 < self.beta_exponent < 1:
            raise ValueError("beta_exponent must lie in (0, 1) for the two-timescale condition")
        object.__setattr__(self, "boundaries", tuple(int(t) for t in T))

    @classmethod
    def equal(cls, N: int, n_batches: int = 50, **kw) -> "BatchSchedule":
        if not 1 <= n_batches <= N:
            raise ValueError("need 1 <= n_batches <= N")
        return cls(tuple(np.linspace(0, N, n_batches + 1).round().astype(int)), **kw)

    @property
    def n_batches(self) -> int:
        return len(self.boundaries) - 1

    @property
    def N(self) -> int:
        return self.boundaries[-1]

    def alpha(self, n) -> np.ndarray | float:
        return self.a / (np.asarray(n, dtype=float) + self.n0)

    def beta(self, n) -> np.ndarray | float:
        return self.b / (np.asarray(n, dtype=float) + self.n0) ** self.beta_exponent

    def ratio_vanishes(self, horizon: int = 10**6) -> bool:
        n = np.array([1.0, horizon])
        r = self.alpha(n) / self.beta(n)
        return bool(r[1] < r[0])


@dataclass(frozen=True)
class Regularizer:
    kappa: float = 1.0
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.kappa <= 0 or self.epsilon <= 0:
            raise ValueError("kappa and epsilon must be strictly positive")


@dataclass
class DualState:
    lam: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if np.any(self.lam < 0):
            raise ValueError("multipliers must be nonnegative")

    @classmethod
    def zeros(cls, D: int) -> "DualState":
        return cls(np.zeros(D), np.zeros(D))


def _pieces(cs: ConstraintSystem, theta, lam):
    D = cs.td(theta)
    a = cs.greedy_next(theta)
    dD = -(cs.psi + cs.shift) + cs.discount * cs.psi_next[np.arange(a.size), a]
    wl = cs.weight * (cs.zeta @ lam)
    return wl @ D, wl @ dD


def batch_objective(cs: ConstraintSystem, theta, lam, reg: Regularizer):
    """Value and a subgradient of ``L_n(theta, lam)`` on one batch."""
    theta = np.asarray(theta, dtype=float)
    m, dm = _pieces(cs, theta, np.asarray(lam, dtype=float))
    neg = max(0.0, -m)
    value = -theta @ cs.mu_feature_mean - m + reg.kappa * neg**2 + reg.epsilon * theta @ theta
    grad = -cs.mu_feature_mean - dm - 2.0 * reg.kappa * neg * dm + 2.0 * reg.epsilon * theta
    return float(value), grad


def explicit_step(cs, theta, lam, reg, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return np.asarray(theta, dtype=float) - alpha * batch_objective(cs, theta, lam, reg)[1]


def _prox_epigraph(cs: ConstraintSystem, theta, lam, reg: Regularizer, alpha: float, start) -> np.ndarray:
    """Exact proximal point through the epigraph form.

    ``-m(t)`` is ``y(t) = sum_k wl_k (psi_k t - c_k) + gamma sum_k wl_k max_u(-psi'_{k,u} t)``
    and ``L = -t mu_bar + y + kappa [y]_+^2 + eps |t|^2`` is nondecreasing in
    ``y``, so replacing each max by a variable ``s_k >= -psi'_{k,u} t`` is exact.
    The lifted problem is smooth with linear constraints.
    """
    from scipy.optimize import minimize

    lam = np.asarray(lam, dtype=float)
    wl = cs.weight * (cs.zeta @ lam)
    keep = np.flatnonzero(wl > 0)
    d, nA = cs.d, cs.n_actions
    lin = wl @ (cs.psi + cs.shift)
    const = -wl @ cs.cost
    gw = cs.discount * wl[keep]
    Pn = cs.psi_next[keep]
    S = keep.size
    mu_bar, kap, eps = cs.mu_feature_mean, reg.kappa, reg.epsilon

    def fun(z):
        t, sv = z[:d], z[d:]
        y = lin @ t + const + gw @ sv
        pos = max(y, 0.0)
        val = -t @ mu_bar + y + kap * pos**2 + eps * t @ t + (t - theta) @ (t - theta) / (2 * alpha)
        dy = 1.0 + 2.0 * kap * pos
        grad = np.concatenate([-mu_bar + dy * lin + 2 * eps * t + (t - theta) / alpha, dy * gw])
        return val, grad

    # s_k + psi'_{k,u} t >= 0
    A = np.hstack([Pn.reshape(S * nA, d), np.repeat(np.eye(S), nA, axis=0)])
    t0 = np.asarray(start, dtype=float)
    z0 = np.concatenate([t0, (-(Pn @ t0)).max(axis=1)])
    res = minimize(fun, z0, jac=True, method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda z: A @ z, "jac": lambda z: A}],
                   options={"ftol": 1e-15, "maxiter": 500})
    return res.x[:d]


def _piece_solve(cs: ConstraintSystem, theta, lam, reg: Regularizer, alpha: float, actions) -> np.ndarray:
    """Solve the implicit equation with the next-state actions held fixed.

    On such a piece ``y(t) = -m(t) = l @ t + c0`` is affine and the equation
    ``t = theta - alpha grad L(t)`` is linear, with matrix ``rho I`` or
    ``rho I + 2 kappa l l^T`` depending on the sign of ``y``.
    """
    wl = cs.weight * (cs.zeta @ lam)
    K = actions.size
    l = wl @ (cs.psi + cs.shift - cs.discount * cs.psi_next[np.arange(K), actions])
    c0 = -wl @ cs.cost
    rho = 1.0 / alpha + 2.0 * reg.epsilon
    rhs = theta / alpha + cs.mu_feature_mean - l
    t = rhs / rho
    if l @ t + c0 > 0:
        k2 = 2.0 * reg.kappa
        b = rhs - k2 * c0 * l
        t = (b - k2 * l * (l @ b) / (rho + k2 * (l @ l))) / rho
    return t


def implicit_step(cs, theta, lam, reg, alpha: float, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Proximal step ``argmin L_n(., lam) + |. - theta|^2 / (2 alpha)``.

    Solves ``t = theta - alpha * grad L_n(t)`` by fixed-point iteration over
    greedy pieces: the equation is solved exactly with the greedy actions of
    the current iterate, then the actions are refreshed, until the residual
    falls below ``tol``.  If the pieces cycle (the proximal point sits on a
    greedy-action tie, where no single-gradient fixed point exists) the step
    is finished by an exact solve of the epigraph form.  Raises
    :class:`ProxDivergence` on non-finite values or if the result does not
    lower the proximal objective relative to ``theta``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)

    def evaluate(t):
        val, grad = batch_objective(cs, t, lam, reg)
        return val + (t - theta) @ (t - theta) / (2 * alpha), theta - alpha * grad

    P0, _ = evaluate(theta)
    t = theta
    converged = False
    seen: set[bytes] = set()
    for _ in range(max_iter):
        actions = cs.greedy_next(t)
        key = actions.tobytes()
        if key in seen:
            break  # pieces cycle
        seen.add(key)
        t = _piece_solve(cs, theta, lam, reg, alpha, actions)
        P, F = evaluate(t)
        res = float(np.abs(F - t).max())
        if not (np.isfinite(res) and np.isfinite(P)):
            raise ProxDivergence("non-finite value in the implicit step")
        if res <= tol * (1.0 + np.abs(t).max()):
            converged = True
            break
    if not converged:
        t_exact = _prox_epigraph(cs, theta, lam, reg, alpha, t)
        P_exact = evaluate(t_exact)[0]
        if np.isfinite(P_exact) and (P_exact <= P or not np.isfinite(P)):
            t, P = t_exact, P_exact
    if not np.isfinite(P) or P > P0 + 1e-12 * (1.0 + abs(P0)):
        raise ProxDivergence(f"implicit step failed to lower the proximal objective (alpha={alpha:g})")
    return t


def dual_step(state: DualState, batch_mean: np.ndarray, alpha: float, beta: float) -> DualState:
    """``v <- v + beta (<pi, D zeta> - v)`` then ``lam <- [lam - alpha v]_+``.

    The minus sign makes this ascent on the Lagrangian in ``lam``: a
    violated constraint has negative mean ``D zeta`` and pushes ``lam`` up.
    """
    v = state.v + beta * (np.asarray(batch_mean, dtype=float) - state.v)
    lam = np.maximum(state.lam - alpha * v, 0.0)
    return DualState(lam, v)


def split_batches(traj, features, discount: float, mu_feature_mean, schedule: BatchSchedule,
                  aggregate: bool = True):
    """One uniformly weighted constraint system per batch of the trajectory.

    With ``aggregate`` repeated transitions are merged into weighted rows,
    which leaves every batch average unchanged.
    """
    if schedule.N != traj.N:
        raise ValueError(f"schedule covers {schedule.N} steps but the trajectory has {traj.N}")
    out = []
    T = schedule.boundaries
    for lo, hi in zip(T[:-1], T[1:]):
        s = slice(lo, hi)
        out.append(ConstraintSystem.from_transitions(
            features, traj.x[s], traj.u[s], traj.cost[s], traj.x_next[s], np.ones(hi - lo),
            discount, mu_feature_mean, n_samples=hi - lo))
        if aggregate:
            out[-1] = out[-1].aggregate()
    return out


@dataclass
class BatchTrace:
    theta: np.ndarray
    lam: np.ndarray
    v: np.ndarray
    mode: str
    residuals: dict = field(default_factory=dict)

    @property
    def final_theta(self) -> np.ndarray:
        return self.theta[-1]

    @property
    def final_lam(self) -> np.ndarray:
        return self.lam[-1]

    def averaged_theta(self, tail: float = 0.5) -> np.ndarray:
        """Mean of the last ``tail`` fraction of the primal iterates (Polyak-Ruppert averaging)."""
        if not 0.0 < tail <= 1.0:
            raise ValueError("tail must lie in (0, 1]")
        start = min(int((1.0 - tail) * self.theta.shape[0]), self.theta.shape[0] - 1)
        return self.theta[start:].mean(axis=0)

    def averaged_residuals(self, batches: Sequence[ConstraintSystem], reg: "Regularizer",
                           tail: float = 0.5) -> dict:
        """Saddle residuals on the pooled data at the tail-averaged primal and dual iterates."""
        start = min(int((1.0 - tail) * self.lam.shape[0]), self.lam.shape[0] - 1)
        return saddle_residuals(_pooled(batches), self.averaged_theta(tail), self.lam[start:].mean(axis=0), reg)

    def to_csv(self, path) -> None:
        d = self.theta.shape[1]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n"] + [f"theta_{j}" for j in range(d)] + ["lambda_norm", "v_norm"])
            for n in range(self.theta.shape[0]):
                w.writerow([n] + [repr(float(t)) for t in self.theta[n]]
                           + [repr(float(np.linalg.norm(self.lam[n]))), repr(float(np.linalg.norm(self.v[n])))])


def _pooled(batches: Sequence[ConstraintSystem]) -> ConstraintSystem:
    sizes = np.array([b.n_samples or 1 for b in batches], dtype=float)
    sizes /= sizes.sum()
    cat = lambda name: np.concatenate([getattr(b, name) for b in batches])
    b0 = batches[0]
    return ConstraintSystem(cat("psi"), cat("cost"), cat("psi_next"), cat("zeta"),
                            np.concatenate([s * b.weight for s, b in zip(sizes, batches)]),
                            b0.discount, b0.mu_feature_mean, b0.delta, b0.omega_feature_mean,
                            int(sum(b.n_samples or 0 for b in batches)) or None)


def saddle_residuals(cs: ConstraintSystem, theta, lam, reg: Regularizer) -> dict:
    """Primal subgradient norm, constraint violation and complementarity on pooled data."""
    _, grad = batch_objective(cs, theta, lam, reg)
    g = cs.gbar(theta)
    return {
        "primal_subgradient_norm": float(np.linalg.norm(grad)),
        "dual_feasibility": float(np.linalg.norm(np.maximum(g, 0.0))),
        "complementarity": float(abs(lam @ g)),
    }


def run_batch_pd(batches: Sequence[ConstraintSystem], schedule: BatchSchedule, reg: Regularizer | None = None,
                 mode: str = "implicit", theta0=None, lam0=None, n_iterations: int | None = None,
                 implicit_kw: dict | None = None) -> BatchTrace:
    """Primal-dual iterations over the batches.

    ``n_iterations`` defaults to one pass (``B`` updates); longer runs revisit
    the batches cyclically, stage ``n`` using batch ``n mod B``.  The dual
    average at stage ``n+1`` uses the next batch in that cycle.
    """
    if mode not in ("implicit", "explicit"):
        raise ValueError("mode must be 'implicit' or 'explicit'")
    if len(batches) != schedule.n_batches:
        raise ValueError("one constraint system per scheduled batch is required")
    reg = reg or Regularizer()
    B = len(batches)
    n_iter = B if n_iterations is None else int(n_iterations)
    d, D = batches[0].d, batches[0].n_eligibility
    theta = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    state = DualState.zeros(D) if lam0 is None else DualState(lam0, np.zeros(D))
    thetas, lams, vs = [theta], [state.lam], [state.v]
    kw = implicit_kw or {}
    for n in range(n_iter):
        cs = batches[n % B]
        alpha, beta = float(schedule.alpha(n + 1)), float(schedule.beta(n + 1))
        if mode == "implicit":
            theta = implicit_step(cs, theta, state.lam, reg, alpha, **kw)
        else:
            theta = explicit_step(cs, theta, state.lam, reg, alpha)
        nxt = batches[(n + 1) % B]
        mean = (nxt.weight * nxt.td(theta)) @ nxt.zeta
        state = dual_step(state, mean, alpha, beta)
        thetas.append(theta)
        lams.append(state.lam)
        vs.append(state.v)
    trace = BatchTrace(np.array(thetas), np.array(lams), np.array(vs), mode)
    trace.residuals = saddle_residuals(_pooled(batches), theta, state.lam, reg)
    return trace
