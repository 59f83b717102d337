"""Trajectory generation under stationary behaviour policies.

Randomness: every rollout derives two independent PCG64 streams from
``numpy.random.SeedSequence(seed)`` -- child 0 drives the environment, child 1
the policy.  Environment noise is therefore identical across policies that
share a seed, which is what common-random-number comparisons rely on.  For
finite MDPs each environment step and each policy draw consumes exactly one
uniform, so the vectorized fast path reproduces the generic loop bit for bit.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .mdp_core import DeterministicPolicy, FiniteMdp, RandomizedPolicy

__all__ = [
    "Trajectory",
    "Environment",
    "FiniteMdpEnv",
    "EpsilonGreedy",
    "epsilon_greedy",
    "rollout",
    "rollout_counts",
    "streams",
]


def streams(seed, n: int = 2) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Transitions ``(x_k, u_k, c_k, x_{k+1})`` for ``k < N``."""

    x: np.ndarray
    u: np.ndarray
    cost: np.ndarray
    x_next: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        n = len(self.x)
        if n < 1:
            raise ValueError("a trajectory needs at least one transition")
        if not (len(self.u) == len(self.cost) == len(self.x_next) == n):
            raise ValueError("trajectory arrays must have equal length")
        if np.any(np.asarray(self.cost) < 0):
            raise ValueError("costs must be nonnegative")
        if n > 1 and not np.array_equal(np.asarray(self.x_next)[:-1], np.asarray(self.x)[1:]):
            raise ValueError("x_next[k] must equal x[k+1]")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def N(self) -> int:
        return len(self.x)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "x", "u", "cost", "x_next"])
            for k in range(self.N):
                w.writerow([k, repr(self.x[k].item()), int(self.u[k]), repr(float(self.cost[k])),
                            repr(self.x_next[k].item())])


class Environment(Protocol):
    initial_state: object

    def step(self, x, u, rng: np.random.Generator):
        """Return ``(x_next, cost(x, u))``."""


class FiniteMdpEnv:
    def __init__(self, mdp: FiniteMdp, initial_state: int = 0):
        self.mdp = mdp
        self.initial_state = int(initial_state)
        self._cum = [[list(np.cumsum(mdp.transitions[u, x])) for u in range(mdp.n_actions)]
                     for x in range(mdp.n_states)]

    def step(self, x, u, rng):
        cum = self._cum[x][u]
        y = min(bisect.bisect_right(cum, rng.random()), len(cum) - 1)
        return y, float(self.mdp.cost[x, u])


class EpsilonGreedy:
    """With probability ``epsilon`` draw from ``action_dist``, else take ``base``'s action.

    One uniform decides exploration; when exploring, a second uniform picks the action.
    """

    def __init__(self, base, epsilon: float, action_dist):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        p = np.asarray(action_dist, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("action_dist must be a pmf")
        self.base = base
        self.epsilon = float(epsilon)
        self.action_dist = p
        self._cum = list(np.cumsum(p))

    def sample(self, x, rng) -> int:
        if rng.random() < self.epsilon:
            return min(bisect.bisect_right(self._cum, rng.random()), len(self._cum) - 1)
        return int(self.base.sample(x, rng))

    def probs(self, x) -> np.ndarray:
        out = self.epsilon * self.action_dist.copy()
        out[int(self.base.sample(x, None))] += 1.0 - self.epsilon
        return out


def epsilon_greedy(base, epsilon: float, action_dist) -> EpsilonGreedy:
    return EpsilonGreedy(base, epsilon, action_dist)


def _finite_fast(env: FiniteMdpEnv, policy: RandomizedPolicy, N: int, env_rng, pol_rng):
    mdp = env.mdp
    pol_cum = [list(np.cumsum(row)) for row in policy.probs]
    nA = mdp.n_actions
    r_pol = pol_rng.random(N).tolist()
    r_env = env_rng.random(N).tolist()
    cum = env._cum
    nS = mdp.n_states
    xs = [0] * (N + 1)
    us = [0] * N
    x = env.initial_state
    xs[0] = x
    br = bisect.bisect_right
    for k in range(N):
        u = br(pol_cum[x], r_pol[k])
        if u >= nA:
            u = nA - 1
        y = br(cum[x][u], r_env[k])
        if y >= nS:
            y = nS - 1
        us[k] = u
        xs[k + 1] = y
        x = y
    xs = np.array(xs)
    us = np.array(us)
    return xs[:-1], us, mdp.cost[xs[:-1], us], xs[1:]


def rollout(env, policy, N: int, seed=None, initial_state=None) -> Trajectory:
    """Simulate exactly ``N`` transitions; reproducible given ``(env, policy, N, seed)``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    env_rng, pol_rng = streams(seed)
    if isinstance(env, FiniteMdpEnv) and isinstance(policy, (RandomizedPolicy, DeterministicPolicy)) \
            and initial_state is None:
        if isinstance(policy, DeterministicPolicy):
            policy = policy.as_randomized(env.mdp.n_actions)
        x, u, c, y = _finite_fast(env, policy, N, env_rng, pol_rng)
        return Trajectory(x, u, c, y, seed)
    x = env.initial_state if initial_state is None else initial_state
    xs, us, cs, ys = [], [], [], []
    for _ in range(N):
        u = policy.sample(x, pol_rng)
        y, c = env.step(x, u, env_rng)
        xs.append(x)
        us.append(u)
        cs.append(c)
        ys.append(y)
        x = y
    return Trajectory(np.array(xs), np.array(us, dtype=int), np.array(cs, dtype=float), np.array(ys), seed)


def rollout_counts(mdp: FiniteMdp, policy: RandomizedPolicy, N: int, M: int, seed=None,
                   initial_state: int = 0) -> np.ndarray:
    """Transition counts of ``M`` independent replicates run side by side.

    Returns an integer array of shape ``(M, n_states * n_actions, n_states)``
    whose ``[m, z, x']`` entry counts visits of ``(z_k, x_{k+1}) = (z, x')``.
    These counts are sufficient statistics for every constraint system whose
    features depend on ``(z_k, x_{k+1})`` only.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    (rng,) = streams(seed, 1)
    nS, nA = mdp.n_states, mdp.n_actions
    pol_cum = np.cumsum(policy.probs, axis=1)
    env_cum = np.cumsum(np.transpose(mdp.transitions, (1, 0, 2)), axis=2)  # (x, u, y)
    x = np.full(M, initial_state, dtype=np.int64)
    counts = np.zeros((M, nS * nA * nS), dtype=np.int64)
    chunk = max(1, min(N, 4096))
    offsets = (np.arange(M) * nS * nA * nS)[:, None]
    buf = np.empty((M, chunk), dtype=np.int64)
    k = 0
    while k < N:
        n = min(chunk, N - k)
        r = rng.random((n, 2, M))
        for j in range(n):
            u = np.minimum((pol_cum[x] <= r[j, 0, :, None]).sum(axis=1), nA - 1)
            y = np.minimum((env_cum[x, u] <= r[j, 1, :, None]).sum(axis=1), nS - 1)
            buf[:, j] = (x * nA + u) * nS + y
            x = y
        counts += np.bincount((buf[:, :n] + offsets).ravel(), minlength=M * nS * nA * nS).reshape(M, -1)
        k += n
    return counts.reshape(M, nS * nA, nS)
