"""Relaxed dual on the lattice.

A dual element is a level potential psi plus a value surface v from the
backward recursion

    v(K, j) = g(K, j) - psi(j),            v = g - psi at the boundary levels,
    v(k, j) = max(g(k, j) - psi(j), [v(k+1, j-1) + v(k+1, j+1)] / 2)  inside,

the Snell envelope of the psi-penalized reward.  Its initial value plus the
target integral of psi, J(psi) = v(0, 0) + nu(psi), upper-bounds every
feasible flow value (weak duality), and minimizing J over psi closes the gap.
M := v - v(0, 0) is the associated martingale surface (a martingale along the
continuation region of the earliest-optimal rule, a supermartingale overall),
so the slack v - (g - psi) coincides with M + psi' - G for the shifted
potential psi' = psi + v(0, 0); the contact set and the certification tests
are phrased through that slack.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, SkembedError
from .lattice import DiscreteMeasure, Lattice
from .primal import FlowSolution, LPDuals, StoppingRule, evaluate_rule, feasible_flow
from .reward import MarkovReward

FEAS_TOL = 1e-9


@dataclass
class DualPair:
    """Potential psi, Snell surface v, martingale surface M = v - v(0,0)."""

    psi: np.ndarray
    v: np.ndarray
    M: np.ndarray
    value_dual: float
    rule: StoppingRule          # earliest-optimal stopping rule
    lat: Lattice

    def slack(self, G: MarkovReward) -> np.ndarray:
        """v - (g - psi) >= 0; zero marks the contact set."""
        return self.v + self.psi[None, :] - G.table

    def check_feasible(self, G: MarkovReward, tol: float = FEAS_TOL):
        lat = self.lat
        s = self.slack(G)
        mask = lat.parity_mask()
        if np.min(s[mask]) < -tol:
            k, c = np.argwhere(mask & (s < -tol))[0]
            raise SkembedError(
                f"dual infeasible at node (k={k}, j={int(lat.levels[c])}): "
                f"slack {s[k, c]:.3e}")
        cont = 0.5 * (self.v[1:, :-2] + self.v[1:, 2:])
        gap = self.v[:-1, 1:-1] - cont
        if np.min(gap) < -tol:
            k, c = np.argwhere(gap < -tol)[0]
            raise SkembedError(
                f"supermartingale violated at (k={k}, j={int(lat.levels[c + 1])})")
        if abs(self.M[0, lat.col(0)]) > tol:
            raise SkembedError("martingale surface must vanish at the root")
        return True


def snell(psi: np.ndarray, G: MarkovReward, lat: Lattice) -> DualPair:
    """Backward induction for the psi-penalized optimal stopping problem.

    Forced stops at the horizon and at the absorbing boundary mirror the
    primal flow, and the earliest-optimal rule (stop when indifferent) is
    recorded for subgradient use.
    """
    psi = np.asarray(psi, dtype=float)
    K, L = lat.K, lat.n_levels
    g = G.table
    v = np.empty((K + 1, L))
    a = np.zeros((K + 1, L))
    v[K] = g[K] - psi
    a[K] = 1.0
    for k in range(K - 1, -1, -1):
        stop_val = g[k] - psi
        cont = 0.5 * (v[k + 1, :-2] + v[k + 1, 2:])
        v[k] = stop_val
        v[k, 1:-1] = np.maximum(stop_val[1:-1], cont)
        a[k, 1:-1] = (stop_val[1:-1] >= cont).astype(float)
        a[k, 0] = 1.0
        a[k, -1] = 1.0
    v00 = v[0, lat.col(0)]
    return DualPair(psi=psi, v=v, M=v - v00, value_dual=float("nan"),
                    rule=StoppingRule(a, lat), lat=lat)


def dual_value(dp: DualPair, nu_vec: np.ndarray) -> float:
    return float(dp.v[0, dp.lat.col(0)] + nu_vec @ dp.psi)


def _with_value(dp: DualPair, nu_vec) -> DualPair:
    dp.value_dual = dual_value(dp, nu_vec)
    return dp


@dataclass
class DescentResult:
    dual: DualPair
    trajectory: np.ndarray
    best_value: float
    iterations: int
    primal_reference: Optional[float]
    gap: Optional[float]
    schedule: str


def dual_descent(G: MarkovReward, nu_hat: DiscreteMeasure, lat: Lattice,
                 iters: int = 50_000, step_schedule: str = "sqrt",
                 alpha0: Optional[float] = None, psi0: Optional[np.ndarray] = None,
                 target: Optional[float] = None, target_tol: float = 0.0,
                 divergence_window: int = 500, averaging: bool = True,
                 primal_reference: Optional[float] = None) -> DescentResult:
    """Minimize J(psi) = v(0,0) + nu(psi) by projected subgradient.

    The subgradient at psi is nu_hat minus the law embedded by the
    earliest-optimal rule of the Snell recursion.  Schedules:

    - "sqrt": alpha_t = alpha0 / sqrt(t), with running-mean (Polyak) averaging;
    - "polyak": target-level Polyak steps (J_t - J_best + delta)/|g|^2 with a
      deterministic adaptive delta, much faster on these piecewise-linear
      objectives.

    Returns the running-best dual pair (over iterates and averaged iterates),
    the J trajectory, and the gap against a primal reference value (a pure
    feasibility flow priced under G, unless one is supplied).
    """
    nu_vec = nu_hat.as_vector(lat)
    L = lat.n_levels
    psi = np.zeros(L) if psi0 is None else np.asarray(psi0, float).copy()
    if alpha0 is None:
        alpha0 = max(G.range, 1e-12) / L
    best_val = np.inf
    best_dual = None
    traj = np.empty(iters)
    psi_avg = psi.copy()
    rising = 0
    prev_j = np.inf
    delta = 0.2 * max(G.range, 1.0)
    since_level_progress = 0
    level_ref = np.inf
    n_done = 0

    for t in range(1, iters + 1):
        dp = snell(psi, G, lat)
        j_val = dual_value(dp, nu_vec)
        traj[t - 1] = j_val
        n_done = t
        if j_val < best_val - 1e-15:
            best_val = j_val
            best_dual = _with_value(dp, nu_vec)

        mu = evaluate_rule(dp.rule, G, lat).stopped_per_level()
        grad = nu_vec - mu
        gnorm2 = float(grad @ grad)

        if averaging and t > 1:
            psi_avg += (psi - psi_avg) / t
            if t % 16 == 0:
                dp_avg = snell(psi_avg, G, lat)
                j_avg = dual_value(dp_avg, nu_vec)
                if j_avg < best_val - 1e-15:
                    best_val = j_avg
                    best_dual = _with_value(dp_avg, nu_vec)

        if target is not None and best_val <= target + target_tol:
            break
        if gnorm2 <= 1e-24:
            break  # the earliest-optimal rule already embeds nu_hat

        if j_val > prev_j + 1e-12:
            rising += 1
            if rising >= divergence_window:
                raise DivergenceError(
                    f"objective rose for {rising} consecutive iterations",
                    trajectory=traj[:t])
        else:
            rising = 0
        prev_j = j_val

        if step_schedule == "sqrt":
            alpha = alpha0 / np.sqrt(t)
        elif step_schedule == "polyak":
            # halve the target offset when the raw iterates stop making
            # delta/2 progress; averaged-point improvements do not count
            if best_val <= level_ref - 0.5 * delta:
                level_ref = best_val
                since_level_progress = 0
            else:
                since_level_progress += 1
                if since_level_progress >= 25:
                    delta = max(delta * 0.5, 1e-15)
                    level_ref = best_val
                    since_level_progress = 0
            alpha = max(j_val - (best_val - delta), 1e-14) / max(gnorm2, 1e-14)
        else:
            raise ValueError(f"unknown step_schedule {step_schedule!r}")
        psi = psi - alpha * grad

    if best_dual is None:
        best_dual = _with_value(snell(psi, G, lat), nu_vec)
    if primal_reference is None:
        try:
            primal_reference = feasible_flow(nu_hat, lat, G).value
        except SkembedError:
            primal_reference = None
    gap = (best_val - primal_reference
           if primal_reference is not None else None)
    return DescentResult(dual=best_dual, trajectory=traj[:n_done],
                         best_value=best_val, iterations=n_done,
                         primal_reference=primal_reference, gap=gap,
                         schedule=step_schedule)


def dual_from_lp(duals: LPDuals, G: MarkovReward, lat: Lattice,
                 nu_hat: DiscreteMeasure) -> DualPair:
    """Snell pair built on the LP's marginal multipliers.

    The recursion run on the LP's psi-hat is again dual feasible and attains
    the LP value, so it certifies the LP optimum exactly.
    """
    dp = snell(duals.psi_hat, G, lat)
    return _with_value(dp, nu_hat.as_vector(lat))


def convex_envelope(psi: np.ndarray, lat: Lattice):
    """Lower convex hull of the level potential, by monotone chain.

    Returns the hull values on the grid and the left slope of the hull at
    level 0, the shift that normalizes psi(x) - c*x to a hull vanishing at 0.
    """
    psi = np.asarray(psi, dtype=float)
    xs = lat.level_values()
    hull = [(xs[0], psi[0])]
    for x, y in zip(xs[1:], psi[1:]):
        hull.append((x, y))
        while len(hull) >= 3:
            (x0, y0), (x1, y1), (x2, y2) = hull[-3:]
            if (y1 - y0) * (x2 - x1) <= (y2 - y1) * (x1 - x0) + 1e-15:
                break
            del hull[-2]
    hx = np.array([p[0] for p in hull])
    hy = np.array([p[1] for p in hull])
    env = np.interp(xs, hx, hy)
    c0 = lat.col(0)
    shift_c = float((env[c0] - env[c0 - 1]) / lat.dx)
    return env, shift_c


@dataclass
class ContactSet:
    """Nodes where the dual pair touches the reward: slack <= tol."""

    membership: np.ndarray
    tol: float
    slack: np.ndarray
    lat: Lattice

    def mass_under(self, fs: FlowSolution) -> float:
        return float(fs.q[self.membership].sum())


def extract_gamma(dp: DualPair, G: MarkovReward, lat: Lattice,
                  tol: float, fs: Optional[FlowSolution] = None):
    """Contact set of a feasible dual pair; optionally its mass under a flow."""
    dp.check_feasible(G)
    s = dp.slack(G)
    membership = (s <= tol) & lat.parity_mask()
    gamma = ContactSet(membership=membership, tol=tol, slack=s, lat=lat)
    if fs is not None:
        return gamma, gamma.mass_under(fs)
    return gamma


@dataclass
class CertifyReport:
    optimal: bool
    verdict: str
    residual_contact: float
    residual_martingale: float
    value_primal: float
    value_dual: float
    gap: float
    tol: float


def certify(dp: DualPair, fs: FlowSolution, G: MarkovReward,
            tol: float = 1e-9) -> CertifyReport:
    """Optimality certificate: flow mass sits on the contact set and prices
    the martingale surface to zero.

    Weak duality holds exactly on the lattice, so the report also carries the
    primal <= dual sandwich and its gap.
    """
    dp.check_feasible(G)
    s = dp.slack(G)
    residual_contact = float(np.sum(fs.q * s))
    residual_mart = float(abs(np.sum(fs.q * dp.M)))
    value_primal = fs.value
    value_dual = dp.value_dual
    if np.isnan(value_dual):
        value_dual = float(dp.v[0, dp.lat.col(0)]
                           + fs.embedded.as_vector(dp.lat) @ dp.psi)
    gap = value_dual - value_primal
    ok = residual_contact <= tol and residual_mart <= tol
    verdict = "optimal" if ok else f"within-gap {gap:.6g}"
    return CertifyReport(optimal=ok, verdict=verdict,
                         residual_contact=residual_contact,
                         residual_martingale=residual_mart,
                         value_primal=value_primal, value_dual=value_dual,
                         gap=gap, tol=tol)
