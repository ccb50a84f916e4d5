"""Revised simplex against a brute-force vertex-enumeration oracle."""

import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from skembed.errors import InfeasibleError
from skembed.simplex import solve_lp


def vertex_oracle(A, b, c):
    """Max of c.x over {Ax=b, x>=0} by enumerating basic feasible points."""
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    m, n = A.shape
    best = None
    for cols in itertools.combinations(range(n), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-10:
            continue
        xb = np.linalg.solve(B, b)
        if np.any(xb < -1e-9):
            continue
        x = np.zeros(n)
        x[list(cols)] = xb
        val = float(c @ x)
        if best is None or val > best:
            best = val
    return best


def test_small_known_lp():
    # max x0 + 2 x1 st x0 + x1 + s = 4, x1 <= 3 -> optimum at (1, 3): 7
    A = [[1.0, 1.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]
    b = [4.0, 3.0]
    c = [1.0, 2.0, 0.0, 0.0]
    res = solve_lp(sp.csc_matrix(np.array(A)), b, c)
    assert res.objective == pytest.approx(7.0, abs=1e-9)
    assert res.x[1] == pytest.approx(3.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_random_lps_match_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    m, n = 3, 7
    A = rng.integers(-2, 3, size=(m, n)).astype(float)
    x_feas = rng.uniform(0.0, 1.0, size=n)
    b = A @ x_feas  # feasible by construction
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0
    # bounding row sum(x) + slack = 20 keeps the polytope compact
    A = np.vstack([A, np.ones(n)])
    A = np.hstack([A, np.zeros((m + 1, 1))])
    A[-1, -1] = 1.0
    b = np.append(b, 20.0)
    c = np.append(rng.normal(size=n), 0.0)
    n += 1
    m += 1
    expect = vertex_oracle(A, b, c)
    res = solve_lp(sp.csc_matrix(A), b, c)
    assert expect is not None
    assert res.objective == pytest.approx(expect, abs=1e-8)
    # duals certify optimality: c - A'y <= 0 and complementary slackness
    slack = c - res.y @ A
    assert np.all(slack <= 1e-8)
    assert abs(res.y @ b - res.objective) < 1e-8


def test_infeasible_reports_rows():
    # x0 + x1 = 1 and x0 + x1 = 3 cannot both hold
    A = [[1.0, 1.0], [1.0, 1.0]]
    b = [1.0, 3.0]
    c = [1.0, 0.0]
    with pytest.raises(InfeasibleError) as exc:
        solve_lp(sp.csc_matrix(np.array(A)), b, c, row_labels=["r0", "r1"])
    assert exc.value.levels


def test_column_order_changes_vertex_not_value():
    # degenerate square: multiple optimal vertices for a flat objective
    A = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, -1.0, 0.0, 1.0]])
    b = np.array([2.0, 0.0])
    c = np.array([1.0, 1.0, 0.0, 0.0])
    r1 = solve_lp(sp.csc_matrix(A), b, c)
    r2 = solve_lp(sp.csc_matrix(A), b, c,
                  column_order=np.arange(4)[::-1].copy())
    assert r1.objective == pytest.approx(r2.objective, abs=1e-9)


def test_duals_satisfy_complementary_slackness():
    rng = np.random.default_rng(42)
    A = rng.integers(0, 3, size=(4, 9)).astype(float)
    A[:, -4:] = np.eye(4)
    b = rng.uniform(1.0, 2.0, size=4)
    c = rng.normal(size=9)
    res = solve_lp(sp.csc_matrix(A), b, c)
    slack = c - res.y @ A
    assert np.all(res.x * np.abs(slack) <= 1e-8)
