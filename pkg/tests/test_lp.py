import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convexq.lp import LinearProgram, LPStatus, dump_lp, solve_lp

from oracles import brute_force_lp


def _random_lp(seed, n=3, m=8, box=5.0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n))
    b = rng.uniform(0.1, 2.0, m) if seed % 3 else rng.normal(size=m)
    c = rng.normal(size=n)
    return LinearProgram(c, A, b, np.full(n, -box), np.full(n, box))


def _with_box_rows(lp):
    n = lp.n_vars
    A = np.vstack([lp.A, np.eye(n), -np.eye(n)])
    b = np.concatenate([lp.b, lp.upper, -lp.lower])
    return A, b


def assert_kkt(lp, rep, tol=1e-8):
    x, y = rep.theta, rep.duals
    scale = 1.0 + np.abs(lp.b).max(initial=0.0)
    assert np.all(lp.A @ x - lp.b <= tol * scale)
    assert np.all(x <= lp.upper + tol) and np.all(x >= lp.lower - tol)
    assert np.all(y >= 0) and np.all(rep.box_duals_upper >= 0) and np.all(rep.box_duals_lower >= 0)
    assert np.abs(y * (lp.A @ x - lp.b)).max(initial=0.0) <= tol * scale
    fin_up, fin_lo = np.isfinite(lp.upper), np.isfinite(lp.lower)
    assert np.abs(rep.box_duals_upper[fin_up] * (x - lp.upper)[fin_up]).max(initial=0.0) <= tol * scale
    assert np.abs(rep.box_duals_lower[fin_lo] * (x - lp.lower)[fin_lo]).max(initial=0.0) <= tol * scale
    stat = lp.objective - lp.A.T @ y - rep.box_duals_upper + rep.box_duals_lower
    assert np.abs(stat).max() <= tol * (1.0 + np.abs(lp.objective).max())


def test_max_x_below_one():
    rep = solve_lp(LinearProgram([1.0], [[1.0]], [1.0]))
    assert rep.status is LPStatus.OPTIMAL
    assert rep.theta[0] == pytest.approx(1.0)
    assert rep.duals[0] == pytest.approx(1.0)


def test_unbounded_ray():
    rep = solve_lp(LinearProgram([1.0], [[-1.0]], [0.0]))
    assert rep.status is LPStatus.UNBOUNDED
    assert rep.ray[0] == pytest.approx(1.0)


def test_infeasible_farkas():
    lp = LinearProgram([1.0, 0.0], [[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])
    rep = solve_lp(lp)
    assert rep.status is LPStatus.INFEASIBLE
    y = rep.farkas
    # y >= 0, y@A = 0 and y@b < 0 certify infeasibility
    assert np.all(y >= 0) and np.abs(y @ lp.A).max() <= 1e-9 and y @ lp.b < 0


def test_validation():
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], [np.nan])
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0], [2.0]], [1.0])
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], [1.0], [2.0], [1.0])


@pytest.mark.parametrize("seed", range(100))
def test_kkt_and_vertex_enumeration(seed):
    lp = _random_lp(seed)
    rep = solve_lp(lp)
    A, b = _with_box_rows(lp)
    x_best, v_best = brute_force_lp(lp.objective, A, b)
    if x_best is None:
        assert rep.status is LPStatus.INFEASIBLE
        return
    assert rep.status is LPStatus.OPTIMAL
    assert_kkt(lp, rep)
    assert rep.objective_value == pytest.approx(v_best, abs=1e-8)
    tight = np.abs(A @ rep.theta - b) <= 1e-7 * (1 + np.abs(b))
    assert tight.sum() >= lp.n_vars  # basic feasible solution


@given(st.integers(0, 10**6), st.integers(2, 5), st.integers(3, 25))
def test_weak_duality(seed, n, m):
    lp = _random_lp(seed, n, m)
    rep = solve_lp(lp)
    if rep.optimal:
        dual_value = lp.b @ rep.duals + lp.upper @ rep.box_duals_upper - lp.lower @ rep.box_duals_lower
        assert rep.objective_value <= dual_value + 1e-8 * (1 + abs(dual_value))
        assert dual_value == pytest.approx(rep.objective_value, abs=1e-7)


@given(st.integers(0, 10**6), st.randoms(use_true_random=False))
def test_row_permutation_invariance(seed, rnd):
    lp = _random_lp(seed, 3, 12)
    perm = list(range(12))
    rnd.shuffle(perm)
    a, b = solve_lp(lp), solve_lp(LinearProgram(lp.objective, lp.A[perm], lp.b[perm], lp.lower, lp.upper))
    assert a.status == b.status
    if a.optimal:
        assert a.objective_value == pytest.approx(b.objective_value, abs=1e-8)
        # the optimizer is unique for generic data
        assert np.abs(a.theta - b.theta).max() <= 1e-8 * (1 + np.abs(a.theta).max())
        assert np.allclose(a.duals[perm], b.duals, atol=1e-8)


@settings(max_examples=25)
@given(st.integers(0, 10**6))
def test_degenerate_instances_certified(seed):
    """Many redundant constraints through one vertex exercise the anti-cycling rule."""
    rng = np.random.default_rng(seed)
    n = 3
    A = rng.normal(size=(15, n))
    b = A @ np.ones(n)  # every row tight at the all-ones vertex
    A = np.vstack([A, rng.normal(size=(5, n))])
    b = np.concatenate([b, np.abs(rng.normal(size=5)) + A[15:] @ np.ones(n)])
    lp = LinearProgram(rng.normal(size=n), A, b, np.full(n, -10.0), np.full(n, 10.0))
    rep = solve_lp(lp)
    assert rep.optimal
    assert_kkt(lp, rep)


def test_zero_variable_program():
    assert solve_lp(LinearProgram(np.zeros(0), np.zeros((1, 0)), [1.0])).optimal
    assert solve_lp(LinearProgram(np.zeros(0), np.zeros((1, 0)), [-1.0])).status is LPStatus.INFEASIBLE


def test_dump_format():
    text = dump_lp(LinearProgram([1.0, 2.0], [[1.0, 1.0]], [3.0], [0.0, 0.0], [1.0, np.inf]))
    lines = text.splitlines()
    assert lines[1] == "1 2"
    assert lines[2] == "c 1.0 2.0"
    assert lines[3] == "1.0 1.0 <= 3.0"
    assert lines[-1] == "upper 1.0 inf"
