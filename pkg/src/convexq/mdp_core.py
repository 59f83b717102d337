"""Finite MDPs, exact dynamic-programming oracles and steady-state expectations.

State-action pairs are flattened row-major: ``z = x * n_actions + u``, so a
Q-table of shape ``(n_states, n_actions)`` ravels to the vector indexed by z.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "FiniteMdp",
    "RandomizedPolicy",
    "DeterministicPolicy",
    "MultichainError",
    "bellman_operator",
    "value_iteration",
    "greedy_policy",
    "policy_evaluation",
    "joint_transition_matrix",
    "joint_invariant_pmf",
    "stationary_transitions",
    "exact_gbar",
    "random_mdp",
    "dumps_mdp",
    "loads_mdp",
    "save_mdp",
    "load_mdp",
    "bundled_mdp",
    "BUNDLED_MDPS",
]

BUNDLED_MDPS = ("ring4", "queue5", "chain3")


class MultichainError(ValueError):
    """The joint chain has more than one invariant distribution."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Controlled chain with ``transitions[u][x, x'] = P_u(x, x')``."""

    transitions: np.ndarray
    cost: np.ndarray
    discount: float

    def __post_init__(self):
        P = _frozen(self.transitions)
        c = _frozen(self.cost)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ValueError("transitions must have shape (n_actions, n_states, n_states)")
        if c.shape != (P.shape[1], P.shape[0]):
            raise ValueError(f"cost must have shape {(P.shape[1], P.shape[0])}, got {c.shape}")
        if np.any(P < 0) or np.abs(P.sum(axis=2) - 1.0).max() > 1e-12:
            raise ValueError("every row of every P_u must be a probability vector")
        if np.any(c < 0) or not np.isfinite(c).all():
            raise ValueError("cost must be finite and nonnegative")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def expected_next(self, V: np.ndarray) -> np.ndarray:
        """Table of ``P_u V(x)`` with shape ``(n_states, n_actions)``."""
        return np.einsum("uxy,y->xu", self.transitions, V)


@dataclass(frozen=True, eq=False)
class RandomizedPolicy:
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2 or np.any(p < 0) or np.any(p > 1) or np.abs(p.sum(axis=1) - 1).max() > 1e-12:
            raise ValueError("probs must be a row-stochastic matrix")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_cum", [list(np.cumsum(row)) for row in p])

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "RandomizedPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    def sample(self, x, rng: np.random.Generator) -> int:
        cum = self._cum[int(x)]
        return min(bisect.bisect_right(cum, rng.random()), len(cum) - 1)


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    action: np.ndarray

    def __post_init__(self):
        a = _frozen(self.action, dtype=int)
        if a.ndim != 1 or np.any(a < 0):
            raise ValueError("action must be a 1-d array of action indices")
        object.__setattr__(self, "action", a)

    def __call__(self, x):
        return self.action[np.asarray(x, dtype=int)]

    def sample(self, x, rng: np.random.Generator | None = None) -> int:
        return int(self.action[int(x)])

    def as_randomized(self, n_actions: int) -> RandomizedPolicy:
        if self.action.max(initial=0) >= n_actions:
            raise ValueError("action index out of range")
        probs = np.zeros((self.action.size, n_actions))
        probs[np.arange(self.action.size), self.action] = 1.0
        return RandomizedPolicy(probs)


def bellman_operator(mdp: FiniteMdp, Q: np.ndarray) -> np.ndarray:
    return mdp.cost + mdp.discount * mdp.expected_next(Q.min(axis=1))


def value_iteration(mdp: FiniteMdp, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Fixed point of the Bellman operator; stops once the sup-norm residual is <= tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        TQ = bellman_operator(mdp, Q)
        if np.abs(TQ - Q).max() <= tol:
            return TQ
        Q = TQ
    raise RuntimeError("value iteration did not converge")  # unreachable for gamma < 1


def greedy_policy(Q: np.ndarray) -> DeterministicPolicy:
    """Argmin over actions; ``np.argmin`` already breaks ties toward index 0."""
    Q = np.asarray(Q, dtype=float)
    if not np.isfinite(Q).all():
        raise ValueError("Q must be finite")
    return DeterministicPolicy(np.argmin(Q, axis=1))


def policy_evaluation(mdp: FiniteMdp, policy: DeterministicPolicy | RandomizedPolicy) -> np.ndarray:
    """Exact Q-table of a stationary policy via ``(I - gamma P_phi)^{-1}``."""
    if isinstance(policy, DeterministicPolicy):
        policy = policy.as_randomized(mdp.n_actions)
    P_phi = np.einsum("xu,uxy->xy", policy.probs, mdp.transitions)
    c_phi = (policy.probs * mdp.cost).sum(axis=1)
    V = np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * P_phi, c_phi)
    return mdp.cost + mdp.discount * mdp.expected_next(V)


def joint_transition_matrix(mdp: FiniteMdp, policy: RandomizedPolicy) -> np.ndarray:
    """``T[z, z'] = P_u(x, x') phi(u' | x')`` on the flattened pair space."""
    nS, nA = mdp.n_states, mdp.n_actions
    T = np.einsum("uxy,yv->xuyv", mdp.transitions, policy.probs)
    return T.reshape(nS * nA, nS * nA)


def _stationary(T: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    n = T.shape[0]
    eig = np.linalg.eigvals(T)
    if int(np.sum(np.abs(eig - 1.0) < tol)) > 1:
        raise MultichainError("eigenvalue 1 has multiplicity > 1; invariant pmf is not unique")
    M = np.vstack([T.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(M, rhs, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def joint_invariant_pmf(mdp: FiniteMdp, policy: RandomizedPolicy) -> np.ndarray:
    """Invariant pmf of the state-action chain, shape ``(n_states, n_actions)``."""
    pi = _stationary(joint_transition_matrix(mdp, policy))
    return pi.reshape(mdp.n_states, mdp.n_actions)


def stationary_transitions(mdp: FiniteMdp, policy: RandomizedPolicy):
    """Support of the steady-state transition law.

    Returns arrays ``(x, u, x_next, weight)`` with ``weight = varpi(x,u) P_u(x,x')``
    restricted to positive entries; the weights sum to one.
    """
    varpi = joint_invariant_pmf(mdp, policy)
    w = varpi[:, :, None] * np.transpose(mdp.transitions, (1, 0, 2))
    x, u, y = np.nonzero(w > 0)
    return x, u, y, w[x, u, y]


def exact_gbar(mdp: FiniteMdp, policy: RandomizedPolicy, features, theta: np.ndarray) -> np.ndarray:
    """Steady-state mean of ``-D_{k+1}(theta) zeta_k`` computed by exact summation."""
    x, u, y, w = stationary_transitions(mdp, policy)
    theta = np.asarray(theta, dtype=float)
    q_now = features.psi(x, u) @ theta
    q_next = features.next_psi(y) @ theta
    td = -q_now + mdp.cost[x, u] + mdp.discount * q_next.min(axis=1)
    return -(w * td) @ features.zeta(x, u)


def random_mdp(n_states: int, n_actions: int, discount: float, rng: np.random.Generator,
               concentration: float = 1.0, cost_scale: float = 1.0) -> FiniteMdp:
    """Dirichlet transition rows and uniform costs; every entry positive, hence uni-chain."""
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_actions, n_states))
    P = P / P.sum(axis=2, keepdims=True)
    c = cost_scale * rng.random((n_states, n_actions))
    return FiniteMdp(P, c, discount)


# serialization -------------------------------------------------------------

def dumps_mdp(mdp: FiniteMdp) -> str:
    fmt = lambda row: " ".join(repr(float(v)) for v in row)
    lines = [f"{mdp.n_states} {mdp.n_actions}", repr(mdp.discount), "# cost"]
    lines += [fmt(row) for row in mdp.cost]
    for u in range(mdp.n_actions):
        lines.append(f"# P_{u}")
        lines += [fmt(row) for row in mdp.transitions[u]]
    return "\n".join(lines) + "\n"


def loads_mdp(text: str) -> FiniteMdp:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        tokens += line.split()
    try:
        nS, nA = int(tokens[0]), int(tokens[1])
        gamma = float(tokens[2])
        vals = [float(t) for t in tokens[3:]]
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed MDP header: {exc}") from exc
    expected = nS * nA + nA * nS * nS
    if len(vals) != expected:
        raise ValueError(f"expected {expected} numbers after the header, found {len(vals)}")
    c = np.array(vals[: nS * nA]).reshape(nS, nA)
    P = np.array(vals[nS * nA:]).reshape(nA, nS, nS)
    return FiniteMdp(P, c, gamma)


def save_mdp(mdp: FiniteMdp, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path) -> FiniteMdp:
    return loads_mdp(Path(path).read_text())


def bundled_mdp(name: str) -> FiniteMdp:
    if name not in BUNDLED_MDPS:
        raise KeyError(f"unknown bundled MDP {name!r}; choose from {BUNDLED_MDPS}")
    return loads_mdp(resources.files("convexq").joinpath(f"data/{name}.mdp").read_text())
