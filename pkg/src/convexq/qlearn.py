"""Q-learning baselines with linear function approximation.

``theta_{k+1} = theta_k + alpha_{k+1} D_{k+1}(theta_k) zeta_k`` with
``zeta_k = psi(z_k)`` by default; the relative variant subtracts
``delta * theta_k @ omega_feature_mean`` inside the temporal difference.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "QLearnConfig",
    "QTrace",
    "DivergenceDetected",
    "q_learning_run",
    "relative_q_learning_run",
    "galerkin_residual",
]


class DivergenceDetected(RuntimeError):
    def __init__(self, step: int, norm: float):
        super().__init__(f"|theta| = {norm:.3g} exceeded the guard at step {step}")
        self.step = step
        self.norm = norm


@dataclass(frozen=True)
class QLearnConfig:
    """Step size ``alpha_k = step_size / (k + step_offset)**step_exponent`` (``k >= 1``)."""

    step_size: float = 1e-3
    step_exponent: float = 0.0
    step_offset: float = 0.0
    theta0: tuple | None = None
    eligibility: str = "features"  # or "zeta": use the feature map's eligibility vectors
    divergence_guard: float = 1e8

    def __post_init__(self):
        if self.step_size <= 0 or self.step_exponent < 0 or self.step_offset < 0:
            raise ValueError("step sizes must be positive")
        if self.eligibility not in ("features", "zeta"):
            raise ValueError("eligibility must be 'features' or 'zeta'")
        if self.divergence_guard <= 0:
            raise ValueError("divergence_guard must be positive")

    def alphas(self, N: int) -> np.ndarray:
        return self.step_size / (np.arange(1, N + 1, dtype=float) + self.step_offset) ** self.step_exponent


@dataclass
class QTrace:
    theta: np.ndarray  # (N+1, d)

    @property
    def final_theta(self) -> np.ndarray:
        return self.theta[-1]

    def averaged_theta(self, tail: float = 0.5) -> np.ndarray:
        """Mean of the last ``tail`` fraction of the iterates (Polyak-Ruppert averaging)."""
        if not 0.0 < tail <= 1.0:
            raise ValueError("tail must lie in (0, 1]")
        start = min(int((1.0 - tail) * self.theta.shape[0]), self.theta.shape[0] - 1)
        return self.theta[start:].mean(axis=0)

    def to_csv(self, path, every: int = 1) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"theta_{j}" for j in range(self.theta.shape[1])])
            for k in range(0, self.theta.shape[0], every):
                w.writerow([k] + [repr(float(t)) for t in self.theta[k]])


def _run(traj, features, discount, config: QLearnConfig, shift: np.ndarray) -> QTrace:
    d = features.d
    psi = features.psi(traj.x, traj.u)
    psi_next = features.next_psi(traj.x_next)
    if config.eligibility == "zeta":
        zeta = features.zeta(traj.x, traj.u)
        if zeta.shape[1] != d:
            raise ValueError("Q-learning needs d-dimensional eligibility vectors")
    else:
        zeta = psi
    now = psi + shift  # shifted features enter the temporal difference with a minus sign
    cost = np.asarray(traj.cost, dtype=float)
    alphas = config.alphas(traj.N)
    theta = np.zeros(d) if config.theta0 is None else np.asarray(config.theta0, dtype=float).copy()
    if theta.shape != (d,):
        raise ValueError(f"theta0 must have length {d}")
    out = np.empty((traj.N + 1, d))
    out[0] = theta
    guard = config.divergence_guard
    for k in range(traj.N):
        td = cost[k] - now[k] @ theta + discount * (psi_next[k] @ theta).min()
        theta = theta + (alphas[k] * td) * zeta[k]
        norm = float(np.sqrt(theta @ theta))
        if not norm <= guard:  # also catches NaN
            raise DivergenceDetected(k + 1, norm)
        out[k + 1] = theta
    return QTrace(out)


def q_learning_run(traj, features, discount: float, config: QLearnConfig | None = None) -> QTrace:
    return _run(traj, features, discount, config or QLearnConfig(), np.zeros(features.d))


def relative_q_learning_run(traj, features, discount: float, delta: float, omega_feature_mean,
                            config: QLearnConfig | None = None) -> QTrace:
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    shift = delta * np.asarray(omega_feature_mean, dtype=float)
    return _run(traj, features, discount, config or QLearnConfig(), shift)


def galerkin_residual(traj, features, discount: float, theta, n_batches: int = 20):
    """Mean of ``D_{k+1}(theta) psi_k`` and its batch-means standard error."""
    theta = np.asarray(theta, dtype=float)
    psi = features.psi(traj.x, traj.u)
    td = -psi @ theta + traj.cost + discount * (features.next_psi(traj.x_next) @ theta).min(axis=1)
    terms = td[:, None] * psi
    means = np.array([b.mean(axis=0) for b in np.array_split(terms, n_batches)])
    return terms.mean(axis=0), means.std(axis=0, ddof=1) / np.sqrt(n_batches)
