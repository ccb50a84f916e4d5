"""Revised simplex for sparse standard-form LPs.

Solves  max c.x  s.t.  A x = b, x >= 0  with A sparse and b >= 0, by the
two-phase revised simplex method.  The basis is held as an LU factorization
plus a product-form eta file, refactored periodically, so solves stay stable
on the deep halving chains that flow LPs produce.

Pivoting is deterministic: Dantzig pricing with fixed index tie-breaks while
the objective improves, falling back to Bland's least-index rule whenever the
objective stalls (anti-cycling).  The ratio test is a Harris two-pass (large
pivots within a tiny feasibility relaxation); if numerical drift is detected
at a refactorization the whole solve restarts once in a conservative mode
(exact ratio test, frequent refactorization).  A column-order permutation
lets callers reproduce an optimum from a different vertex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import InfeasibleError, UnboundedError

FEAS_TOL = 1e-10
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
HARRIS_DELTA = 1e-11
STALL_LIMIT = 40


class _FeasibilityLost(Exception):
    pass


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    y: np.ndarray            # row duals
    reduced_costs: np.ndarray
    basis: np.ndarray
    iterations: int
    status: str = "optimal"


class _Basis:
    """LU factors of the basis plus an eta file of pivot updates."""

    def __init__(self, A_dense_cols, basis, b):
        self.Ad = A_dense_cols
        self.b = b
        self.refactor(basis)

    def refactor(self, basis):
        B = self.Ad[:, basis]
        self.lu = sla.lu_factor(B, check_finite=False)
        self.etas = []

    def ftran(self, a):
        """Solve B x = a for the current (updated) basis."""
        x = sla.lu_solve(self.lu, a, check_finite=False)
        for r, d in self.etas:
            xr = x[r] / d[r]
            x -= d * xr
            x[r] = xr
        return x

    def btran(self, cb):
        """Solve y B = cb for the current (updated) basis."""
        v = np.array(cb, dtype=float)
        for r, d in reversed(self.etas):
            vr = (v[r] - float(d @ v) + d[r] * v[r]) / d[r]
            v[r] = vr
        return sla.lu_solve(self.lu, v, trans=1, check_finite=False)

    def push(self, r, d):
        self.etas.append((r, d.copy()))

    @property
    def age(self):
        return len(self.etas)


class _Tableau:
    def __init__(self, A: sp.csc_matrix, b: np.ndarray, order: np.ndarray,
                 conservative: bool):
        self.A = A
        self.m, self.n = A.shape
        self.b = b
        self.order = order          # order[j] = scan position of column j
        self.A_dense = A.toarray()
        self.conservative = conservative
        self.refactor_every = 12 if conservative else 48

    def column(self, j):
        lo, hi = self.A.indptr[j], self.A.indptr[j + 1]
        return self.A.indices[lo:hi], self.A.data[lo:hi]

    def _refresh(self, fac, basis):
        fac.refactor(basis)
        xb = fac.ftran(self.b)
        if xb.min() < -1e-7:
            raise _FeasibilityLost(f"basic solution went negative: {xb.min():.3e}")
        return xb

    def run(self, c, basis, fac: _Basis, xb, allow_enter, max_iter):
        m = self.m
        obj = float(c[basis] @ xb)
        stall = 0
        bland = self.conservative
        iters = 0
        dead = np.zeros(self.n, dtype=bool)   # per-basis numerical exclusions
        while True:
            iters += 1
            if iters > max_iter:
                raise RuntimeError(
                    f"simplex exceeded {max_iter} iterations (m={m}, n={self.n})")
            if fac.age >= self.refactor_every:
                xb = self._refresh(fac, basis)
            y = fac.btran(c[basis])
            z = c - (y @ self.A)
            z[~allow_enter] = -np.inf
            z[basis] = -np.inf
            z[dead] = -np.inf
            cand = np.flatnonzero(z > OPT_TOL)
            if cand.size == 0:
                if dead.any():
                    zd = (c - (y @ self.A))[dead]
                    if zd.size and zd.max() > 1e-5 * max(1.0, abs(obj)):
                        raise RuntimeError(
                            "simplex parked an improving column on numerical "
                            "grounds; optimum not certified")
                break
            if bland:
                enter = int(cand[np.argmin(self.order[cand])])
            else:
                zc = z[cand]
                best = zc.max()
                ties = cand[zc >= best - 1e-12 * max(1.0, abs(best))]
                enter = int(ties[np.argmin(self.order[ties])])

            a_col = np.zeros(m)
            idx, dat = self.column(enter)
            a_col[idx] = dat
            d = fac.ftran(a_col)
            pos = d > PIVOT_TOL
            xb_eff = np.maximum(xb, 0.0)

            leave = -1
            if pos.any():
                if self.conservative or bland:
                    ratios = np.full(m, np.inf)
                    ratios[pos] = xb_eff[pos] / d[pos]
                    best_r = ratios.min()
                    ties = np.flatnonzero(ratios <= best_r + 1e-12)
                    leave = int(ties[np.argmin(basis[ties])])
                else:
                    # Harris two-pass: every row keeps xb >= -delta at the
                    # relaxed bound; take the largest pivot within it
                    bound = np.full(m, np.inf)
                    bound[pos] = (xb_eff[pos] + HARRIS_DELTA) / d[pos]
                    theta_max = bound.min()
                    ratios = np.full(m, np.inf)
                    ratios[pos] = xb_eff[pos] / d[pos]
                    ok = pos & (ratios <= theta_max)
                    dmax = np.abs(d[ok]).max()
                    big = np.flatnonzero(ok & (np.abs(d) >= 0.9 * dmax))
                    leave = int(big[np.argmin(basis[big])])

            if leave < 0 or abs(d[leave]) < 1e-7:
                if fac.age > 0:
                    xb = self._refresh(fac, basis)
                    continue
                if leave < 0:
                    if z[enter] <= 1e-6 * max(1.0, abs(obj)):
                        dead[enter] = True   # numerically optimal column
                        continue
                    raise UnboundedError(
                        "LP unbounded; flow mass bounds violated")
                dead[enter] = True           # tiny pivot on a fresh basis
                continue

            theta = max(xb[leave], 0.0) / d[leave]
            xb = xb - theta * d
            xb[leave] = theta
            fac.push(leave, d)
            basis[leave] = enter

            if dead.any():
                dead[:] = False   # basis changed; exclusions are stale
            new_obj = float(c[basis] @ xb)
            if new_obj > obj + 1e-12 * max(1.0, abs(obj)):
                stall = 0
                bland = self.conservative
            else:
                stall += 1
                if stall >= STALL_LIMIT:
                    bland = True
            obj = new_obj
        return basis, xb, iters


def _solve(A, b, c, order, max_iter, row_labels, conservative):
    m, n = A.shape
    art = sp.identity(m, format="csc")
    A1 = sp.hstack([A, art], format="csc")
    tab = _Tableau(A1, b, order, conservative)
    c1 = np.zeros(n + m)
    c1[n:] = -1.0
    basis = np.arange(n, n + m)
    fac = _Basis(tab.A_dense, basis, b)
    xb = b.copy()
    allow = np.ones(n + m, dtype=bool)
    basis, xb, it1 = tab.run(c1, basis, fac, xb, allow, max_iter)

    xb = tab._refresh(fac, basis)
    infeas = float(c1[basis] @ np.maximum(xb, 0.0))
    if infeas < -1e-10:
        # non-dyadic targets on deep grids can be infeasible by amounts far
        # below bookkeeping scale; report them rather than navigate them
        bad_rows = [int(basis[i]) - n for i in range(m)
                    if basis[i] >= n and xb[i] > FEAS_TOL]
        labels = ([row_labels[r] for r in bad_rows]
                  if row_labels is not None else bad_rows)
        raise InfeasibleError(
            f"no feasible point (artificial mass {-infeas:.3e}); "
            f"unmet constraints: {labels}", levels=labels)

    # drive lingering artificials out of the basis by degenerate pivots so
    # phase 2 cannot regrow them; rows that admit no pivot are redundant and
    # their artificial stays pinned at zero by consistency
    for r in range(m):
        if basis[r] < n or abs(xb[r]) > 1e-10:
            continue
        e_r = np.zeros(m)
        e_r[r] = 1.0
        wrow = fac.btran(e_r)
        row = wrow @ tab.A_dense[:, :n]
        cand = np.flatnonzero(np.abs(row) > 1e-7)
        cand = cand[~np.isin(cand, basis)]
        if cand.size == 0:
            continue
        enter = int(cand[np.argmax(np.abs(row[cand]))])
        a_col = np.zeros(m)
        idx, dat = tab.column(enter)
        a_col[idx] = dat
        d = fac.ftran(a_col)
        if abs(d[r]) < 1e-7:
            continue
        fac.push(r, d)
        basis[r] = enter
        if fac.age >= tab.refactor_every:
            fac.refactor(basis)
    xb = tab._refresh(fac, basis)

    # phase 2: artificials may linger basic at zero but can never re-enter
    c2 = np.concatenate([c, np.zeros(m)])
    allow = np.ones(n + m, dtype=bool)
    allow[n:] = False
    basis, xb, it2 = tab.run(c2, basis, fac, xb, allow, max_iter)

    xb = tab._refresh(fac, basis)
    np.maximum(xb, 0.0, out=xb)
    y = fac.btran(c2[basis])
    z = c2 - (y @ A1)
    x = np.zeros(n)
    real = basis < n
    x[basis[real]] = xb[real]
    resid = float(np.max(np.abs(A @ x - b)))
    if resid > 1e-7:
        raise _FeasibilityLost(f"terminal residual {resid:.3e}")
    return SimplexResult(
        x=x,
        objective=float(c @ x),
        y=np.asarray(y),
        reduced_costs=np.asarray(z[:n]),
        basis=basis.copy(),
        iterations=it1 + it2,
        status="optimal",
    )


def solve_lp(A, b, c, column_order=None, max_iter=2_000_000,
             row_labels=None) -> SimplexResult:
    """Maximize c.x subject to A x = b, x >= 0.

    Parameters
    ----------
    A : scipy sparse or dense, shape (m, n)
    b : rhs, must be componentwise >= 0 (construction guarantees this here)
    column_order : optional permutation of column scan positions; distinct
        orders can land on distinct optimal vertices of a degenerate LP.
    row_labels : optional list used to report which constraints remain
        unsatisfied when the problem is infeasible.
    """
    A = sp.csc_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    if np.any(b < -FEAS_TOL):
        raise ValueError("rhs must be nonnegative in this standard form")
    np.maximum(b, 0.0, out=b)

    if column_order is None:
        order = np.arange(n + m)
    else:
        order = np.empty(n + m, dtype=int)
        order[:n] = np.asarray(column_order, dtype=int)
        order[n:] = n + np.arange(m)

    try:
        return _solve(A, b, c, order, max_iter, row_labels,
                      conservative=False)
    except _FeasibilityLost:
        pass
    try:
        return _solve(A, b, c, order, max_iter, row_labels,
                      conservative=True)
    except _FeasibilityLost as exc:
        raise RuntimeError(
            f"simplex lost feasibility even in conservative mode: {exc}")
