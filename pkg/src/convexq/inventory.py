"""Inventory control case study.

Dynamics ``X(k+1) = X(k) - beta - W(k+1) + U(k)`` with ``U in {0, 1}`` and
cost ``c(x) = max(c_plus x, -c_minus x)``.  Threshold policies order one unit
exactly when ``x <= -rbar``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cvxq import ConstraintSystem, sample_feature_mean, solve_cvxq_constraint_gen
from .lp import NumericalError
from .features import FeatureMap, LinearQ, binned_indicator_zeta
from .qlearn import DivergenceDetected, QLearnConfig, q_learning_run, relative_q_learning_run
from .simulate import Trajectory

__all__ = [
    "NOISE_LAWS",
    "InventoryEnv",
    "ThresholdPolicy",
    "ExplorationPolicy",
    "NoCrossing",
    "rho_rbar",
    "draw_noise",
    "SweepResult",
    "mc_threshold_sweep",
    "xi",
    "inventory_basis",
    "inventory_zeta",
    "extract_threshold",
    "simulate_exploration",
    "ComparisonConfig",
    "ComparisonResult",
    "run_comparison",
    "normality_check",
    "variance_ratio_ci",
    "ALGORITHMS",
]

NOISE_LAWS = ("gaussian", "exponential")
ALGORITHMS = ("cvxq", "relative_cvxq", "qlearn", "relative_qlearn")


class NoCrossing(ValueError):
    """The greedy action does not switch on the scan grid."""


def draw_noise(rng: np.random.Generator, law: str, size) -> np.ndarray:
    """Zero-mean, unit-variance disturbances: ``N(0, 1)`` or ``Exp(1) - 1``."""
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "exponential":
        return rng.standard_exponential(size) - 1.0
    raise ValueError(f"unknown noise law {law!r}; expected one of {NOISE_LAWS}")


@dataclass(frozen=True)
class InventoryEnv:
    beta: float = 0.1
    c_plus: float = 10.0
    c_minus: float = 1.0
    noise: str = "gaussian"
    discount: float = 0.99
    initial_state: float = 0.0

    def __post_init__(self):
        if self.beta <= 0 or self.c_plus <= 0 or self.c_minus <= 0:
            raise ValueError("beta, c_plus and c_minus must be positive")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.noise not in NOISE_LAWS:
            raise ValueError(f"unknown noise law {self.noise!r}")

    @property
    def noise_variance(self) -> float:
        return 1.0

    def cost(self, x):
        x = np.asarray(x, dtype=float)
        return np.maximum(self.c_plus * x, -self.c_minus * x)

    def next_state(self, x, u, w):
        return x - self.beta - w + u

    def step(self, x, u, rng):
        """Environment protocol: one transition with a fresh disturbance."""
        w = float(draw_noise(rng, self.noise, None))
        return float(self.next_state(x, u, w)), float(self.cost(x))


@dataclass(frozen=True)
class ThresholdPolicy:
    rbar: float

    def __post_init__(self):
        if not math.isfinite(self.rbar):
            raise ValueError("rbar must be finite")

    def __call__(self, x):
        return (np.asarray(x) <= -self.rbar).astype(int)

    def sample(self, x, rng=None) -> int:
        return int(x <= -self.rbar)


@dataclass(frozen=True)
class ExplorationPolicy:
    """``epsilon * P_E(u) + (1 - epsilon) 1{u = base(x)}``."""

    base: ThresholdPolicy
    epsilon: float = 0.9
    order_prob: float = 0.05  # P_E(1)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0 or not 0.0 <= self.order_prob <= 1.0:
            raise ValueError("epsilon and order_prob must lie in [0, 1]")

    def sample(self, x, rng) -> int:
        if rng.random() < self.epsilon:
            return int(rng.random() < self.order_prob)
        return self.base.sample(x)


def rho_rbar(beta: float = 0.1, sigma2: float = 1.0, gamma: float = 0.99, c_plus: float = 10.0,
             c_minus: float = 1.0, literal: bool = False) -> tuple[float, float]:
    """Decay rate ``rho`` and the approximate optimal threshold ``log(1 + c+/c-) / rho``.

    ``rho`` is the positive root of ``sigma2 rho^2 / 2 - beta rho - k = 0`` with
    ``k = 1 - gamma`` by default and ``k = gamma`` when ``literal`` is set.
    """
    if min(beta, sigma2, c_plus, c_minus) <= 0 or not 0.0 < gamma < 1.0:
        raise ValueError("parameters must be positive and gamma in (0, 1)")
    k = gamma if literal else 1.0 - gamma
    rho = (beta + math.sqrt(beta * beta + 2.0 * sigma2 * k)) / sigma2
    return rho, math.log1p(c_plus / c_minus) / rho


@dataclass
class SweepResult:
    grid: np.ndarray
    cost: np.ndarray  # estimated discounted cost from x = 0 per threshold
    stderr: np.ndarray
    n_replicates: int
    horizon: int

    @property
    def argmin(self) -> float:
        return float(self.grid[int(np.argmin(self.cost))])

    def rows(self):
        return [(float(r), float(c), float(s)) for r, c, s in zip(self.grid, self.cost, self.stderr)]


def mc_threshold_sweep(env: InventoryEnv, grid, horizon: int = 10**4, n_replicates: int = 2000,
                       seed=0, chunk: int = 256) -> SweepResult:
    """Discounted cost from ``x = 0`` of each threshold, truncated at ``horizon``.

    One disturbance array ``W[i, k]`` is shared by every threshold (common
    random numbers).  Disturbances are drawn in time chunks from a single
    generator, so the table depends only on ``(env, grid, horizon,
    n_replicates, seed)``.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    if horizon < 1 or n_replicates < 1:
        raise ValueError("horizon and n_replicates must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    thr = -grid[:, None]
    x = np.full((grid.size, n_replicates), float(env.initial_state))
    total = np.zeros_like(x)
    disc = 1.0
    k = 0
    while k < horizon:
        n = min(chunk, horizon - k)
        w = draw_noise(rng, env.noise, (n, n_replicates))
        for j in range(n):
            total += disc * np.maximum(env.c_plus * x, -env.c_minus * x)
            x += (x <= thr) - env.beta - w[j]
            disc *= env.discount
        k += n
    mean = total.mean(axis=1)
    se = total.std(axis=1, ddof=1) / np.sqrt(n_replicates) if n_replicates > 1 else np.full(grid.size, np.nan)
    return SweepResult(grid, mean, se, n_replicates, horizon)


def xi(x, rate: float) -> np.ndarray:
    """``(|x| + exp(-rate |x|) - 1) 1{x >= 0} / rate``: smooth, zero for ``x <= 0``, slope ``1/rate`` at infinity."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    return np.where(x >= 0, (ax + np.expm1(-rate * ax)) / rate, 0.0)


def inventory_zeta(n_bins: int = 200, low: float = -28.0, high: float = 28.0):
    """Indicators of ``n_bins`` evenly spaced closed bins covering ``[low, high]``."""
    return binned_indicator_zeta(np.linspace(low, high, n_bins + 1)), n_bins


def inventory_basis(rates=(0.5, 0.1), n_bins: int = 200, low: float = -28.0, high: float = 28.0) -> FeatureMap:
    """Eight features: ``[xi_1, xi_2, x, 1]`` on the taken action, zeros on the other."""
    rates = tuple(float(r) for r in rates)

    def base(x):
        x = np.asarray(x, dtype=float)
        return np.stack([xi(x, rates[0]), xi(x, rates[1]), x, np.ones_like(x)], axis=1)

    def psi(x, u):
        b = base(x)
        u = np.asarray(u, dtype=int)[:, None]
        return np.hstack([b * (u == 0), b * (u == 1)])

    zeta, D = inventory_zeta(n_bins, low, high)
    return FeatureMap(psi, zeta, 8, D, 2)


def extract_threshold(q: LinearQ, grid=None, diagnostics: bool = False, tie_tol: float = 1e-9):
    """Smallest ``rbar`` such that the greedy action is "no order" at every grid level above ``-rbar``.

    The scan runs over inventory levels (default ``[-30, 30]`` in steps of
    0.01).  With ``diagnostics`` a dict is also returned holding the crossing
    level ``x0 = -rbar`` itself, which is the reading in which "no order"
    holds for all ``x >= x0``.
    """
    grid = np.round(np.arange(-30.0, 30.0 + 5e-3, 0.01), 10) if grid is None else np.sort(np.asarray(grid, dtype=float))
    vals = q.action_values(grid)
    diff = vals[:, 0] - vals[:, 1]
    # exact ties count as "no order" (Q(x,0) <= Q(x,1)); allow for rounding
    no_order = diff <= tie_tol * (1.0 + np.abs(vals).max(axis=1))
    if no_order.all() or not no_order.any():
        raise NoCrossing("greedy action does not switch on the grid")
    if not no_order[-1]:
        raise NoCrossing("greedy action orders at the top of the grid")
    # first index from which no_order holds through the end of the grid
    last_bad = np.flatnonzero(~no_order)[-1]
    x0 = float(grid[last_bad + 1])
    rbar = -x0
    if diagnostics:
        return rbar, {"crossing_level": x0, "rbar_order_below": rbar, "rbar_literal_reading": x0,
                      "n_switches": int(np.count_nonzero(np.diff(no_order.astype(int))))}
    return rbar


def simulate_exploration(env: InventoryEnv, policy: ExplorationPolicy, N: int, seed) -> Trajectory:
    """Training trajectory; disturbances and policy draws use disjoint child streams of ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, pol_ss = ss.spawn(2)
    w = draw_noise(np.random.default_rng(env_ss), env.noise, N)
    r = np.random.default_rng(pol_ss).random((N, 2))
    explore = r[:, 0] < policy.epsilon
    random_u = (r[:, 1] < policy.order_prob).astype(int)
    x = np.empty(N + 1)
    u = np.empty(N, dtype=int)
    x[0] = env.initial_state
    thr = -policy.base.rbar
    for k in range(N):
        uk = random_u[k] if explore[k] else int(x[k] <= thr)
        u[k] = uk
        x[k + 1] = x[k] - env.beta - w[k] + uk
    return Trajectory(x[:-1], u, env.cost(x[:-1]), x[1:], seed if isinstance(seed, int) else None)


@dataclass(frozen=True)
class ComparisonConfig:
    """Settings of the four-algorithm comparison.

    ``mu`` is the objective measure: ``"grid"`` uses ``mu_grid_points`` evenly
    spaced states on ``mu_grid_range`` and ``"visited"`` the run's visited
    states, both crossed with uniform actions.  ``omega`` is always the
    visited states.  ``threshold_reading`` selects the reported threshold:
    ``"literal"`` is the crossing level ``x0`` (no order for all ``x >= x0``),
    ``"policy"`` is ``-x0`` (order at ``x <= -rbar``).
    """

    M: int = 50
    N: int = 10**4
    seed: int = 0
    algorithms: tuple = ALGORITHMS
    epsilon: float = 0.9
    order_prob: float = 0.05
    base_threshold: float | None = None  # defaults to rho_rbar's threshold
    relative_delta: float | None = None  # defaults to 1 - gamma
    qlearn_step: float = 1e-3
    box_radius: float = 1e6
    mu: str = "grid"
    mu_grid_range: tuple = (-28.0, 28.0)
    mu_grid_points: int = 561
    threshold_reading: str = "literal"
    workers: int = 1

    def __post_init__(self):
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}")
        if self.M < 1 or self.N < 1 or self.workers < 1:
            raise ValueError("M, N and workers must be positive")
        if self.mu not in ("grid", "visited"):
            raise ValueError("mu must be 'grid' or 'visited'")
        if self.threshold_reading not in ("literal", "policy"):
            raise ValueError("threshold_reading must be 'literal' or 'policy'")


def normality_check(samples, alpha: float = 0.01) -> dict:
    """Skewness and kurtosis tests per column; ``passed`` when no test rejects at level ``alpha``."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] == 1:
        x = x.T
    out = {"n": int(x.shape[0]), "skew": [], "excess_kurtosis": [], "skew_p": [], "kurtosis_p": []}
    if x.shape[0] < 20:
        out["passed"] = None  # tests unreliable below 20 samples
        return out
    for col in x.T:
        out["skew"].append(float(stats.skew(col)))
        out["excess_kurtosis"].append(float(stats.kurtosis(col)))
        out["skew_p"].append(float(stats.skewtest(col).pvalue))
        out["kurtosis_p"].append(float(stats.kurtosistest(col).pvalue))
    out["passed"] = bool(min(out["skew_p"] + out["kurtosis_p"]) >= alpha)
    return out


def variance_ratio_ci(a, b, confidence: float = 0.95, n_resamples: int = 5000, seed=0) -> tuple[float, float, float]:
    """``var(a) / var(b)`` with a percentile bootstrap interval (independent resampling)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        return float("nan"), float("nan"), float("nan")
    ratio = lambda x, y, axis=-1: np.var(x, ddof=1, axis=axis) / np.var(y, ddof=1, axis=axis)
    res = stats.bootstrap((a, b), ratio, confidence_level=confidence, n_resamples=n_resamples,
                          method="percentile", random_state=np.random.default_rng(seed), vectorized=True)
    return float(ratio(a, b)), float(res.confidence_interval.low), float(res.confidence_interval.high)


@dataclass
class ComparisonResult:
    rbar_star: float
    algorithms: tuple
    theta: dict  # algorithm -> (M, 8) with NaN rows for failures
    crossing: dict  # algorithm -> (M,) crossing levels x0, NaN for failures
    failures: list = field(default_factory=list)
    N: int = 0
    threshold_reading: str = "literal"

    @property
    def rbar(self) -> dict:
        sign = 1.0 if self.threshold_reading == "literal" else -1.0
        return {a: sign * v for a, v in self.crossing.items()}

    def relative_errors(self, alg: str) -> np.ndarray:
        r = self.rbar[alg]
        return (r[np.isfinite(r)] - self.rbar_star) / self.rbar_star

    def scaled_parameter_errors(self, alg: str) -> np.ndarray:
        th = self.theta[alg]
        th = th[np.all(np.isfinite(th), axis=1)]
        if th.shape[0] == 0:
            return th
        return np.sqrt(self.N) * (th - th.mean(axis=0))

    def per_run_rows(self):
        M = next(iter(self.crossing.values())).size if self.crossing else 0
        for m in range(M):
            for alg in self.algorithms:
                x0 = self.crossing[alg][m]
                yield [m, alg, repr(float(x0)), repr(float(-x0))] + [repr(float(t)) for t in self.theta[alg][m]]

    def summary(self) -> dict:
        out = {"rbar_star": self.rbar_star, "N": self.N, "threshold_reading": self.threshold_reading,
               "failures": self.failures, "algorithms": {}}
        for alg in self.algorithms:
            e = self.relative_errors(alg)
            s = {"n_ok": int(e.size)}
            if e.size:
                s.update(mean=float(e.mean()),
                         quantiles=[float(q) for q in np.quantile(e, [0.05, 0.25, 0.5, 0.75, 0.95])])
            s["variance"] = float(e.var(ddof=1)) if e.size > 1 else None  # undefined for a single run
            if alg in ("cvxq", "relative_cvxq"):
                s["normality"] = normality_check(self.scaled_parameter_errors(alg))
            out["algorithms"][alg] = s
        if {"cvxq", "relative_cvxq"} <= set(self.algorithms):
            r, lo, hi = variance_ratio_ci(self.relative_errors("relative_cvxq"), self.relative_errors("cvxq"))
            out["variance_ratio_relative_over_plain"] = {"ratio": r, "ci95": [lo, hi]}
        return out


def _train(alg: str, traj: Trajectory, features: FeatureMap, env: InventoryEnv, mu, omega, delta,
           cfg: ComparisonConfig):
    if alg in ("cvxq", "relative_cvxq"):
        cs = ConstraintSystem.from_trajectory(traj, features, env.discount, mu)
        if alg == "relative_cvxq":
            cs = cs.relative(delta, omega)
        rep = solve_cvxq_constraint_gen(cs, cfg.box_radius)
        if not rep.optimal:
            raise RuntimeError(f"LP status {rep.status.value}")
        if np.any(np.abs(rep.theta) >= cfg.box_radius * (1.0 - 1e-9)):
            raise RuntimeError("solution on the box boundary")
        return rep.theta
    qcfg = QLearnConfig(step_size=cfg.qlearn_step)
    if alg == "qlearn":
        return q_learning_run(traj, features, env.discount, qcfg).final_theta
    return relative_q_learning_run(traj, features, env.discount, delta, omega, qcfg).final_theta


def _comparison_run(env: InventoryEnv, cfg: ComparisonConfig, m: int, seed_seq):
    """One run: returns ``(m, {alg: theta}, {alg: crossing}, failures)``."""
    _, r_dag = rho_rbar(env.beta, env.noise_variance, env.discount, env.c_plus, env.c_minus)
    base = ThresholdPolicy(r_dag if cfg.base_threshold is None else cfg.base_threshold)
    policy = ExplorationPolicy(base, cfg.epsilon, cfg.order_prob)
    delta = 1.0 - env.discount if cfg.relative_delta is None else cfg.relative_delta
    features = inventory_basis()
    traj = simulate_exploration(env, policy, cfg.N, seed_seq)
    omega = sample_feature_mean(features, traj.x)
    if cfg.mu == "grid":
        mu = sample_feature_mean(features, np.linspace(*cfg.mu_grid_range, cfg.mu_grid_points))
    else:
        mu = omega
    thetas, crossings, failures = {}, {}, []
    for alg in cfg.algorithms:
        try:
            th = _train(alg, traj, features, env, mu, omega, delta, cfg)
            thetas[alg] = th
            crossings[alg] = -extract_threshold(LinearQ(features, th))
        except (DivergenceDetected, NoCrossing, NumericalError, RuntimeError, ValueError) as exc:
            failures.append({"run": m, "algorithm": alg, "error": f"{type(exc).__name__}: {exc}"})
    return m, thetas, crossings, failures


def run_comparison(env: InventoryEnv, cfg: ComparisonConfig, rbar_star: float | None = None) -> ComparisonResult:
    """Train every algorithm on the same trajectory in each of ``cfg.M`` runs.

    Run ``m`` uses child ``m`` of ``SeedSequence(cfg.seed)``, so results do not
    depend on ``cfg.workers``.  Failures (divergence, unbounded or box-limited
    LPs, missing threshold crossings) are recorded, not raised; a parameter
    vector is kept even when its threshold cannot be extracted.
    """
    _, r_dag = rho_rbar(env.beta, env.noise_variance, env.discount, env.c_plus, env.c_minus)
    rbar_star = r_dag if rbar_star is None else float(rbar_star)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.M)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_comparison_run, [env] * cfg.M, [cfg] * cfg.M, range(cfg.M), children))
    else:
        results = [_comparison_run(env, cfg, m, c) for m, c in enumerate(children)]
    theta = {a: np.full((cfg.M, 8), np.nan) for a in cfg.algorithms}
    crossing = {a: np.full(cfg.M, np.nan) for a in cfg.algorithms}
    failures = []
    for m, th, cr, fl in sorted(results, key=lambda r: r[0]):
        for a, v in th.items():
            theta[a][m] = v
        for a, v in cr.items():
            crossing[a][m] = v
        failures += fl
    return ComparisonResult(rbar_star, tuple(cfg.algorithms), theta, crossing, failures, cfg.N,
                            cfg.threshold_reading)
