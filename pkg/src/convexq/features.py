"""Linear function classes ``Q^theta = theta @ psi`` and eligibility vectors.

A :class:`FeatureMap` holds vectorized callables: ``psi(x, u)`` maps arrays of
states and actions of length K to a ``(K, d)`` matrix and ``zeta(x, u)`` to a
``(K, D)`` matrix of nonnegative eligibility vectors.  Eligibility vectors are
functions of the current state-action pair only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "FeatureMap",
    "LinearQ",
    "q_value",
    "underline_q",
    "td_term",
    "td_term_policy",
    "relative_td_term",
    "tabular_basis",
    "table_features",
    "binned_indicator_zeta",
]

ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class FeatureMap:
    psi: ArrayFn
    zeta: ArrayFn
    d: int
    n_eligibility: int
    n_actions: int

    def features(self, x, u) -> np.ndarray:
        return self.psi(np.atleast_1d(x), np.atleast_1d(u))[0]

    def eligibility(self, x, u) -> np.ndarray:
        return self.zeta(np.atleast_1d(x), np.atleast_1d(u))[0]

    def next_psi(self, x) -> np.ndarray:
        """``psi(x_i, u)`` for every action, shape ``(K, n_actions, d)``."""
        x = np.atleast_1d(x)
        cols = [self.psi(x, np.full(x.shape, u, dtype=int)) for u in range(self.n_actions)]
        return np.stack(cols, axis=1)

    def with_zeta(self, zeta: ArrayFn, n_eligibility: int) -> "FeatureMap":
        return FeatureMap(self.psi, zeta, self.d, n_eligibility, self.n_actions)


@dataclass(frozen=True, eq=False)
class LinearQ:
    features: FeatureMap
    theta: np.ndarray

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).ravel()
        if th.size != self.features.d or not np.isfinite(th).all():
            raise ValueError(f"theta must be a finite vector of length {self.features.d}")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    def values(self, x, u) -> np.ndarray:
        return self.features.psi(np.atleast_1d(x), np.atleast_1d(u)) @ self.theta

    def action_values(self, x) -> np.ndarray:
        """``Q(x_i, u)`` for every action, shape ``(K, n_actions)``."""
        return self.features.next_psi(x) @ self.theta

    def greedy(self, x) -> np.ndarray:
        return np.argmin(self.action_values(x), axis=1)


def q_value(q: LinearQ, x, u) -> float:
    return float(q.values(x, u)[0])


def underline_q(q: LinearQ, x) -> tuple[float, int]:
    """Minimum over actions and the smallest-index minimizer."""
    vals = q.action_values(x)[0]
    a = int(np.argmin(vals))
    return float(vals[a]), a


def _td(q: LinearQ, x, u, cost, x_next, discount, next_action=None):
    now = q.values(x, u)
    nxt = q.action_values(x_next)
    if next_action is None:
        follow = nxt.min(axis=1)
    else:
        follow = nxt[np.arange(nxt.shape[0]), np.atleast_1d(next_action)]
    return -now + np.asarray(cost, dtype=float) + discount * follow


def td_term(q: LinearQ, x, u, cost, x_next, discount: float):
    """Temporal difference ``D_{k+1}(theta)``.

    Scalars in give a float back; arrays of transitions give an array.
    """
    out = _td(q, x, u, cost, x_next, discount)
    return float(out[0]) if np.ndim(x) == 0 else out


def td_term_policy(q: LinearQ, x, u, cost, x_next, discount: float, policy):
    """``D_{k+1}(theta, phi)``: the next-state minimizer replaced by ``policy(x_next)``."""
    a = np.atleast_1d(policy(np.atleast_1d(x_next)))
    out = _td(q, x, u, cost, x_next, discount, next_action=a)
    return float(out[0]) if np.ndim(x) == 0 else out


def relative_td_term(q: LinearQ, x, u, cost, x_next, discount: float,
                     omega_feature_mean: np.ndarray, delta: float):
    """Relative temporal difference: ``D_{k+1}(theta) - delta * theta @ omega_feature_mean``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    shift = delta * float(q.theta @ np.asarray(omega_feature_mean, dtype=float))
    out = _td(q, x, u, cost, x_next, discount) - shift
    return float(out[0]) if np.ndim(x) == 0 else out


def table_features(psi_table: np.ndarray, zeta_table: np.ndarray | None = None) -> FeatureMap:
    """Feature map on a finite space from tables of shape ``(n_states, n_actions, d)``."""
    psi_table = np.array(psi_table, dtype=float)
    zeta_table = psi_table if zeta_table is None else np.array(zeta_table, dtype=float)
    if np.any(zeta_table < 0):
        raise ValueError("eligibility vectors must be nonnegative")
    psi_table.setflags(write=False)
    zeta_table.setflags(write=False)

    def psi(x, u):
        return psi_table[np.asarray(x, dtype=int), np.asarray(u, dtype=int)]

    def zeta(x, u):
        return zeta_table[np.asarray(x, dtype=int), np.asarray(u, dtype=int)]

    return FeatureMap(psi, zeta, psi_table.shape[2], zeta_table.shape[2], psi_table.shape[1])


def tabular_basis(mdp) -> FeatureMap:
    """One-hot features on state-action pairs; eligibility vectors are the same indicators."""
    nS, nA = mdp.n_states, mdp.n_actions
    return table_features(np.eye(nS * nA).reshape(nS, nA, nS * nA))


def binned_indicator_zeta(edges) -> ArrayFn:
    """``zeta^i(x) = 1{edges[i] <= x <= edges[i+1]}`` (closed bins, action ignored)."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be a strictly increasing vector of length >= 2")
    lo, hi = edges[:-1], edges[1:]

    def zeta(x, u):
        x = np.asarray(x, dtype=float)[:, None]
        return ((lo <= x) & (x <= hi)).astype(float)

    return zeta
