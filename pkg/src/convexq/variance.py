"""Asymptotic covariance of sampled convex Q-learning and a CLT laboratory.

At a nondegenerate optimum ``theta*`` with active eligibility indices
``I+ = {j_1..j_d}`` the tight constraints read ``Abar+ theta = betabar+``
where, for the greedy policy ``phi*`` of ``theta*``::

    [A_k+]_{i,:} = zeta^{j_i}_{k-1} (psi_{k-1} - gamma psi(x_k, phi*(x_k)))
    [beta_k+]_i  = c_{k-1} zeta^{j_i}_{k-1}

(the sign that makes ``gbar^{j_i}(theta, phi*) = Abar+ theta - betabar+``).
With ``W_k = beta_k+ - betabar+ - (A_k+ - Abar+) theta*`` the sampled
solution satisfies ``theta_N - theta* ~ [Abar+]^{-1} Wbar_N`` and

    Sigma_theta = [Abar+]^{-1} Sigma_W [Abar+]^{-T},  Sigma_W = lim N E[Wbar_N Wbar_N^T].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cvxq import ConstraintSystem, galerkin_report, solve_cvxq
from .lp import SolveReport
from .mdp_core import FiniteMdp, RandomizedPolicy, joint_invariant_pmf

__all__ = [
    "SingularAbar",
    "InfeasibleLab",
    "CovarianceReport",
    "active_indices",
    "linearization",
    "build_W",
    "estimate_sigma",
    "batch_means_sigma",
    "sigma_theta",
    "project_box",
    "markov_asymptotic_covariance",
    "transition_chain",
    "exact_sigma_W",
    "covariance_report",
    "QuadraticConstraints",
    "solve_quadratic_program",
    "RandomConstraintLab",
    "LabResult",
    "clt_lab_run",
    "histogram_rows",
    "frobenius_gap",
]

MAX_CONDITION = 1e10


class SingularAbar(np.linalg.LinAlgError):
    """The active-constraint matrix is singular or too ill-conditioned."""


class InfeasibleLab(RuntimeError):
    """A sampled quadratic program has an empty feasible set."""


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def frobenius_gap(estimate: np.ndarray, reference: np.ndarray) -> float:
    """``|estimate - reference|_F / |reference|_F``."""
    return float(np.linalg.norm(estimate - reference) / np.linalg.norm(reference))


# ---------------------------------------------------------------------------
# MDP side


def active_indices(cs: ConstraintSystem, report: SolveReport, tol: float = 1e-7) -> np.ndarray:
    """Indices tight at the optimizer, cross-checked against positive duals.

    Tight constraints with zero duals are discarded when more than ``d``
    are tight; the result must contain exactly ``d`` indices.
    """
    gr = galerkin_report(cs, report, tol=tol)
    tight = gr.tight
    if tight.size > cs.d and report.duals is not None:
        scale = max(1.0, float(np.abs(report.duals).max()))
        tight = tight[report.duals[tight] > 1e-9 * scale]
    if tight.size != cs.d:
        raise SingularAbar(f"{tight.size} active constraints found, expected d={cs.d}")
    return tight


def _check(Abar: np.ndarray) -> float:
    if Abar.shape[0] != Abar.shape[1]:
        raise SingularAbar("Abar+ must be square")
    cond = float(np.linalg.cond(Abar))
    if not cond <= MAX_CONDITION:
        raise SingularAbar(f"condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    return cond


def linearization(cs: ConstraintSystem, theta_star, active) -> tuple[np.ndarray, np.ndarray]:
    """``(Abar+, betabar+)``: the weighted means of ``A_k+`` and ``beta_k+``."""
    A, b = cs.policy_constraints(cs.greedy_next(theta_star))
    return A[active], b[active]


def build_W(cs: ConstraintSystem, theta_star, active, Abar=None, betabar=None):
    """Per-row disturbances ``W_k`` and their weighted mean.

    ``cs`` holds the transitions in time order (``from_trajectory``).  Means
    default to the empirical ones; pass the steady-state ``(Abar+, betabar+)``
    to centre exactly.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    active = np.asarray(active)
    if active.size != cs.d:
        raise SingularAbar(f"need exactly d={cs.d} active indices, got {active.size}")
    K = cs.psi.shape[0]
    a = cs.greedy_next(theta_star)
    rows = cs.psi + cs.shift - cs.discount * cs.psi_next[np.arange(K), a]  # (K, d)
    z = cs.zeta[:, active]  # (K, d)
    if Abar is None or betabar is None:
        Abar, betabar = linearization(cs, theta_star, active)
    _check(Abar)
    # beta_k - A_k theta* per row; subtract the means
    resid = (cs.cost - rows @ theta_star)[:, None] * z
    W = resid - (betabar - Abar @ theta_star)
    return W, cs.weight @ W


def estimate_sigma(Wbar_replicates, N: int) -> np.ndarray:
    """``N cov(Wbar_N)`` from independent replicates (rows)."""
    Wr = np.atleast_2d(np.asarray(Wbar_replicates, dtype=float))
    if Wr.shape[0] < 2:
        raise ValueError("need at least two replicates")
    return _sym(N * np.cov(Wr, rowvar=False).reshape(Wr.shape[1], Wr.shape[1]))


def batch_means_sigma(W, n_batches: int = 30) -> np.ndarray:
    """Batch-means estimate of the asymptotic covariance of a single stream."""
    W = np.asarray(W, dtype=float)
    L = W.shape[0] // n_batches
    if L < 1:
        raise ValueError("stream shorter than the number of batches")
    means = W[: L * n_batches].reshape(n_batches, L, -1).mean(axis=1)
    return _sym(L * np.cov(means, rowvar=False).reshape(W.shape[1], W.shape[1]))


def sigma_theta(Abar, Sigma_W) -> np.ndarray:
    _check(np.asarray(Abar))
    Ainv = np.linalg.inv(Abar)
    return _sym(Ainv @ Sigma_W @ Ainv.T)


def project_box(theta, radius: float, report: SolveReport | None = None) -> np.ndarray:
    """L-infinity projection onto ``|theta_i| <= radius``; zero for a failed solve."""
    if report is not None and not report.optimal:
        return np.zeros_like(np.asarray(report.theta if report.theta is not None else theta, dtype=float))
    return np.clip(np.asarray(theta, dtype=float), -radius, radius)


def markov_asymptotic_covariance(P: np.ndarray, pi: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``lim N cov(mean of F(Y_k))`` for an ergodic chain via its fundamental matrix.

    ``F`` has one row per state; it is centred under ``pi`` first.
    """
    n = P.shape[0]
    Fc = F - pi @ F
    Z = np.linalg.inv(np.eye(n) - P + np.outer(np.ones(n), pi))
    G = (Z - np.eye(n)) @ Fc  # sum_{j>=1} P^j Fc
    D = pi[:, None]
    S = Fc.T @ (D * Fc) + Fc.T @ (D * G) + G.T @ (D * Fc)
    return _sym(S)


def transition_chain(mdp: FiniteMdp, policy: RandomizedPolicy):
    """Chain on ``y = (z, x')`` pairs: returns ``(P, pi, x, u, x_next)`` restricted to the support."""
    nS, nA = mdp.n_states, mdp.n_actions
    varpi = joint_invariant_pmf(mdp, policy)
    Pxy = np.transpose(mdp.transitions, (1, 0, 2))  # (x, u, y)
    w = varpi[:, :, None] * Pxy
    x, u, y = np.nonzero(w > 0)
    pi = w[x, u, y]
    # pair i = (x, u, y) moves to pair j = (y, u', y') w.p. policy(u'|y) P_{u'}(y, y')
    step = policy.probs[x, u][None, :] * Pxy[x, u, y][None, :]
    P = np.where(y[:, None] == x[None, :], step, 0.0)
    return P, pi / pi.sum(), x, u, y


def exact_sigma_W(mdp: FiniteMdp, policy: RandomizedPolicy, features, theta_star, active) -> np.ndarray:
    """Steady-state ``Sigma_W`` of the disturbance sequence by exact Markov-chain algebra."""
    P, pi, x, u, y = transition_chain(mdp, policy)
    theta_star = np.asarray(theta_star, dtype=float)
    nxt = features.next_psi(y) @ theta_star
    td = mdp.cost[x, u] - features.psi(x, u) @ theta_star + mdp.discount * nxt.min(axis=1)
    F = td[:, None] * features.zeta(x, u)[:, np.asarray(active)]
    return markov_asymptotic_covariance(P, pi, F)


@dataclass
class CovarianceReport:
    active_indices: np.ndarray
    Abar_plus: np.ndarray
    betabar_plus: np.ndarray
    Sigma_W: np.ndarray
    Sigma_theta: np.ndarray
    theta_star: np.ndarray
    condition_number: float
    empirical_cov: np.ndarray | None = None

    def as_dict(self) -> dict:
        lst = lambda a: None if a is None else np.asarray(a).tolist()
        return {
            "active_indices": [int(i) for i in self.active_indices],
            "Abar_plus": lst(self.Abar_plus),
            "betabar_plus": lst(self.betabar_plus),
            "Sigma_W": lst(self.Sigma_W),
            "Sigma_theta": lst(self.Sigma_theta),
            "theta_star": lst(self.theta_star),
            "condition_number": self.condition_number,
            "empirical_cov": lst(self.empirical_cov),
        }


def covariance_report(mdp: FiniteMdp, policy: RandomizedPolicy, features, mu_feature_mean,
                      box_radius: float | None = None) -> CovarianceReport:
    """Exact ``Abar+``, ``Sigma_W`` and ``Sigma_theta`` for a finite MDP."""
    cs = ConstraintSystem.exact(mdp, policy, features, mu_feature_mean)
    rep = solve_cvxq(cs, box_radius)
    if not rep.optimal:
        raise SingularAbar(f"limit program is {rep.status.value}")
    active = active_indices(cs, rep)
    Abar, betabar = linearization(cs, rep.theta, active)
    cond = _check(Abar)
    SW = exact_sigma_W(mdp, policy, features, rep.theta, active)
    return CovarianceReport(active, Abar, betabar, SW, sigma_theta(Abar, SW), rep.theta, cond)


# ---------------------------------------------------------------------------
# quadratic-constraint laboratory


@dataclass(frozen=True, eq=False)
class QuadraticConstraints:
    """``q_i(theta) = (a_i @ theta)^2 + lin_i @ theta + const_i <= 0``."""

    a: np.ndarray  # (m, n)
    lin: np.ndarray  # (m, n)
    const: np.ndarray  # (m,)

    def value(self, theta) -> np.ndarray:
        p = self.a @ theta
        return p * p + self.lin @ theta + self.const

    def grad(self, theta) -> np.ndarray:
        return 2.0 * (self.a @ theta)[:, None] * self.a + self.lin

    def hess(self) -> np.ndarray:
        return 2.0 * np.einsum("mi,mj->mij", self.a, self.a)


def _centering(obj, cons: QuadraticConstraints, x, t, tol=1e-10, max_newton=200):
    """Minimize ``t obj@x - sum log(-q_i(x))`` from a strictly feasible ``x``."""
    H_i = cons.hess()
    for _ in range(max_newton):
        q = cons.value(x)
        G = cons.grad(x)
        inv = 1.0 / (-q)
        g = t * obj + G.T @ inv
        H = (G.T * inv**2) @ G + np.einsum("m,mij->ij", inv, H_i)
        try:
            dx = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(H, g, rcond=None)[0]
        dec = float(-g @ dx)
        if dec / 2.0 <= tol:
            break
        f0 = t * obj @ x - np.log(-q).sum()
        s = 1.0
        while s > 1e-20:
            xn = x + s * dx
            qn = cons.value(xn)
            if np.all(qn < 0) and t * obj @ xn - np.log(-qn).sum() <= f0 - 0.25 * s * dec:
                break
            s *= 0.5
        else:
            break
        x = xn
    return x


def _barrier(obj, cons, x, t0=1.0, t_max=1e8, stop=None):
    t = t0
    while True:
        x = _centering(obj, cons, x, t)
        if stop is not None and stop(x):
            return x, t
        if t >= t_max:
            return x, t
        t = min(2.0 * t, t_max)


def _with_box(cons: QuadraticConstraints, box: float) -> QuadraticConstraints:
    n = cons.a.shape[1]
    eye = np.eye(n)
    return QuadraticConstraints(np.vstack([cons.a, np.zeros((2 * n, n))]),
                                np.vstack([cons.lin, eye, -eye]),
                                np.concatenate([cons.const, np.full(2 * n, -box)]))


def _phase_one(cons: QuadraticConstraints, x0) -> np.ndarray | None:
    """A strictly feasible point, or ``None`` if the constraints are infeasible."""
    q0 = cons.value(x0)
    if np.all(q0 < 0):
        return x0
    m, n = cons.a.shape
    lifted = QuadraticConstraints(np.hstack([cons.a, np.zeros((m, 1))]),
                                  np.hstack([cons.lin, -np.ones((m, 1))]), cons.const)
    z0 = np.concatenate([x0, [q0.max() + 1.0]])
    obj = np.zeros(n + 1)
    obj[-1] = 1.0
    z, _ = _barrier(obj, lifted, z0, stop=lambda z: np.all(cons.value(z[:n]) < -1e-9 * (1 + np.abs(cons.const))))
    x = z[:n]
    return x if np.all(cons.value(x) < 0) else None


def feasibility_margin(cons: QuadraticConstraints, box: float = 1e4, t_max: float = 1e2,
                       target: float | None = None) -> float:
    """A lower bound on ``-min_theta max_i q_i(theta)`` over the box (positive means strictly feasible).

    The bound is ``-max_i q_i`` at the phase-one barrier point; the search stops
    early once it reaches ``target``.
    """
    full = _with_box(cons, box)
    m, n = full.a.shape
    lifted = QuadraticConstraints(np.hstack([full.a, np.zeros((m, 1))]),
                                  np.hstack([full.lin, -np.ones((m, 1))]), full.const)
    z0 = np.concatenate([np.zeros(n), [full.value(np.zeros(n)).max() + 1.0]])
    obj = np.zeros(n + 1)
    obj[-1] = 1.0
    stop = None if target is None else (lambda z: -cons.value(z[:n]).max() >= target)
    z, _ = _barrier(obj, lifted, z0, t_max=t_max, stop=stop)
    return float(-cons.value(z[:n]).max())


def _polish(obj, cons: QuadraticConstraints, x, lam, active, iters=50):
    """Newton on the KKT system restricted to ``active``; returns ``(x, lam)`` or ``None``."""
    n = x.size
    A = np.asarray(active)
    if A.size > n:
        return None
    H_i = cons.hess()
    lam_a = lam[A].copy()
    for _ in range(iters):
        G = cons.grad(x)[A]
        r = np.concatenate([obj + G.T @ lam_a, cons.value(x)[A]])
        if np.abs(r).max() <= 1e-15 * (1 + np.abs(obj).max()):
            break
        J = np.zeros((n + A.size, n + A.size))
        J[:n, :n] = np.einsum("m,mij->ij", lam_a, H_i[A])
        J[:n, n:] = G.T
        J[n:, :n] = G
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return None
        x = x + step[:n]
        lam_a = lam_a + step[n:]
    if np.any(lam_a < 0) or np.any(cons.value(x) > 1e-12 * (1 + np.abs(cons.const))):
        return None
    out = np.zeros_like(lam)
    out[A] = lam_a
    return x, out


@dataclass
class QPSolution:
    theta: np.ndarray
    duals: np.ndarray
    tight: np.ndarray
    positive_duals: np.ndarray
    polished: bool
    bounded: bool = True


def solve_quadratic_program(obj, cons: QuadraticConstraints, box: float = 1e4, x0=None) -> QPSolution:
    """``min obj @ theta  s.t.  q(theta) <= 0`` by log-barrier with phase one and KKT polish.

    A box ``|theta_j| <= box`` keeps phase one well posed; a solution on the
    box is flagged ``bounded=False``.  Raises :class:`InfeasibleLab` if no
    strictly feasible point exists.
    """
    obj = np.asarray(obj, dtype=float)
    m, n = cons.a.shape
    full = _with_box(cons, box)
    x = _phase_one(full, np.zeros(n) if x0 is None else np.asarray(x0, dtype=float))
    if x is None:
        raise InfeasibleLab("no strictly feasible point")
    x, t = _barrier(obj, full, x)
    lam_full = 1.0 / (t * -full.value(x))
    q = full.value(x)
    near = np.flatnonzero((lam_full > 1e-6 * lam_full.max()) | (np.abs(q) <= 1e-6 * (1 + np.abs(full.const))))
    polished = False
    res = _polish(obj, full, x, lam_full, near)
    if res is None and near.size > 0:
        # drop the constraints with the weakest multipliers until the KKT system is square or smaller
        order = near[np.argsort(-lam_full[near])]
        res = _polish(obj, full, x, lam_full, np.sort(order[:n]))
    if res is not None:
        x, lam_full = res
        polished = True
    q = full.value(x)
    tol = 1e-7 * (1 + np.abs(full.const))
    tight = np.flatnonzero(np.abs(q) <= tol)
    scale = max(1.0, float(lam_full.max()))
    pos = np.flatnonzero(lam_full > 1e-7 * scale)
    bounded = not np.any((tight >= m) | (pos >= m))
    return QPSolution(x, lam_full[:m], tight[tight < m], pos[pos < m], polished, bounded)


def _limit_constraints(a, b, scale2) -> QuadraticConstraints:
    # E g(theta + Delta) = g(theta) + scale^2 |a_i|^2
    A = a.T
    return QuadraticConstraints(A, b.T.copy(), scale2 * (A * A).sum(axis=1) - 1.0)


def _sampled_constraints(a, b, mean, second) -> QuadraticConstraints:
    """Average of ``g(theta + Delta_k)`` from ``mean = Deltabar`` and ``second = mean Delta Delta^T``."""
    A, B = a.T, b.T
    pm = A @ mean
    lin = B + 2.0 * pm[:, None] * A
    const = np.einsum("mi,ij,mj->m", A, second, A) + B @ mean - 1.0
    return QuadraticConstraints(A, lin, const)


@dataclass(frozen=True, eq=False)
class RandomConstraintLab:
    """``min v @ theta`` subject to averaged noisy quadratic constraints on R^2.

    ``g(theta) = (a^T theta)^2 + b^T theta - 1`` with ``a, b`` of shape ``(2, 10)``
    and ``Delta_k ~ N(0, noise_scale^2 I)``.
    """

    a: np.ndarray
    b: np.ndarray
    v: np.ndarray
    N: int = 10**4
    M: int = 100
    seed: int = 0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.a.shape != (2, 10) or self.b.shape != (2, 10) or self.v.shape != (2,):
            raise ValueError("a and b must be 2x10 and v must have length 2")
        if self.N < 1 or self.M < 1 or self.noise_scale < 0:
            raise ValueError("N, M must be positive and noise_scale nonnegative")

    @classmethod
    def sample(cls, seed: int = 0, N: int = 10**4, M: int = 100, noise_scale: float = 1.0,
               max_tries: int = 10_000, min_margin: float = 0.25) -> "RandomConstraintLab":
        """Draw ``a, b, v`` i.i.d. standard normal until the limit program has a unique vertex solution.

        Rejected draws: limit programs that are unbounded or whose feasible set
        has margin below ``min_margin`` (so sampled programs would often be
        infeasible), and optima that are not vertices (fewer than two active
        constraints), where the covariance formula does not apply.
        """
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC17]))
        for _ in range(max_tries):
            a, b, v = rng.standard_normal((2, 10)), rng.standard_normal((2, 10)), rng.standard_normal(2)
            lim = _limit_constraints(a, b, noise_scale**2)
            if feasibility_margin(lim, target=min_margin) < min_margin:
                continue
            try:
                sol = solve_quadratic_program(v, lim)
            except InfeasibleLab:
                continue
            if sol.bounded and sol.polished and sol.tight.size == 2 and sol.positive_duals.size == 2:
                return cls(a, b, v, N, M, seed, noise_scale)
        raise RuntimeError("no admissible laboratory instance found")

    def limit_constraints(self) -> QuadraticConstraints:
        return _limit_constraints(self.a, self.b, self.noise_scale**2)

    def sigma_W(self, theta_star, active) -> np.ndarray:
        """Covariance of ``g_i(theta* + Delta)`` over the active indices (closed form)."""
        A, B = self.a.T[active], self.b.T[active]
        s2 = self.noise_scale**2
        lin = 2.0 * (A @ theta_star)[:, None] * A + B
        aa = A @ A.T
        return _sym(s2 * lin @ lin.T + 2.0 * s2 * s2 * aa**2)


@dataclass
class LabResult:
    theta_star: np.ndarray
    duals_star: np.ndarray
    tight_star: np.ndarray
    positive_duals_star: np.ndarray
    theta_N: np.ndarray  # (runs, 2)
    theta_N_star: np.ndarray  # limit constraint shifted by b*_N
    theta_N_star_sampled: np.ndarray  # sampled constraint shifted by b*_N
    skipped: list = field(default_factory=list)
    Sigma_W: np.ndarray | None = None
    jacobian: np.ndarray | None = None
    Sigma_theta: np.ndarray | None = None
    N: int = 0

    def scaled_errors(self, which: str = "theta_N") -> np.ndarray:
        return np.sqrt(self.N) * (getattr(self, which) - self.theta_star)

    def empirical_cov(self, which: str = "theta_N") -> np.ndarray:
        e = self.scaled_errors(which)
        return _sym(e.T @ e / e.shape[0])

    def summary(self) -> dict:
        out = {
            "theta_star": self.theta_star.tolist(),
            "duals_star": self.duals_star.tolist(),
            "tight_star": self.tight_star.tolist(),
            "positive_duals_star": self.positive_duals_star.tolist(),
            "runs": int(self.theta_N.shape[0]),
            "skipped": self.skipped,
            "N": self.N,
        }
        if self.Sigma_theta is not None:
            out["Sigma_W"] = self.Sigma_W.tolist()
            out["Sigma_theta"] = self.Sigma_theta.tolist()
            for w in ("theta_N", "theta_N_star", "theta_N_star_sampled"):
                out[f"cov_{w}"] = self.empirical_cov(w).tolist()
                out[f"gap_{w}"] = frobenius_gap(self.empirical_cov(w), self.Sigma_theta)
        return out


def clt_lab_run(lab: RandomConstraintLab) -> LabResult:
    """Solve the sampled, limit and shifted programs for ``lab.M`` independent runs.

    Run ``m`` draws its ``N`` noise vectors from its own child seed, so any
    subset of runs is reproducible on its own.
    """
    lim = lab.limit_constraints()
    star = solve_quadratic_program(lab.v, lim)
    if not star.bounded:
        raise InfeasibleLab("limit program is unbounded")
    ts = star.theta
    active = star.positive_duals if star.positive_duals.size == 2 else star.tight
    SW = J = St = None
    if active.size == 2:
        J = lim.grad(ts)[active]
        SW = lab.sigma_W(ts, active)
        Jinv = np.linalg.inv(J)
        St = _sym(Jinv @ SW @ Jinv.T)
    g_star = lim.value(ts)
    thetas, shifted, shifted_s, skipped = [], [], [], []
    children = np.random.SeedSequence([lab.seed, 0x1AB]).spawn(lab.M)
    for m, child in enumerate(children):
        rng = np.random.default_rng(child)
        delta = lab.noise_scale * rng.standard_normal((lab.N, 2))
        mean = delta.mean(axis=0)
        second = delta.T @ delta / lab.N
        samp = _sampled_constraints(lab.a, lab.b, mean, second)
        b_star = g_star - samp.value(ts)
        try:
            t_N = solve_quadratic_program(lab.v, samp, x0=ts)
            t_s = solve_quadratic_program(lab.v, QuadraticConstraints(lim.a, lim.lin, lim.const - b_star), x0=ts)
            t_ss = solve_quadratic_program(lab.v, QuadraticConstraints(samp.a, samp.lin, samp.const - b_star), x0=ts)
        except InfeasibleLab as exc:
            skipped.append({"run": m, "reason": str(exc)})
            continue
        thetas.append(t_N.theta)
        shifted.append(t_s.theta)
        shifted_s.append(t_ss.theta)
    return LabResult(ts, star.duals, star.tight, star.positive_duals, np.array(thetas).reshape(-1, 2),
                     np.array(shifted).reshape(-1, 2), np.array(shifted_s).reshape(-1, 2), skipped,
                     SW, J, St, lab.N)


def histogram_rows(samples, bins: int = 20):
    """``(left, right, count)`` rows for each column of ``samples``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 1:
        samples = samples.T
    rows = []
    for j in range(samples.shape[1]):
        counts, edges = np.histogram(samples[:, j], bins=bins)
        rows += [(j, float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]
    return rows


def write_histogram_csv(path, samples, bins: int = 20) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "left", "right", "count"])
        for r in histogram_rows(samples, bins):
            w.writerow([r[0], repr(r[1]), repr(r[2]), r[3]])
