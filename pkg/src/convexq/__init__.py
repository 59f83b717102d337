"""Convex Q-learning with linear function approximation: LP solvers, batch
primal-dual iterations, Q-learning baselines, covariance diagnostics and an
inventory-control case study."""

__version__ = "0.1.0"
