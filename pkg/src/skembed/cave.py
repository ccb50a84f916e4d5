"""Cave barriers: extraction from optimal flows, regularization, the expected
right-derivative surface h, the per-level variational inequalities, and the
verification surface built from them.

A cave barrier is a left barrier (stop when t <= l(x)) before the parting
time and a right barrier (stop when t >= r(x)) after it; l = -1 encodes a gap
and r = +inf an absent right barrier.  Region tests compare real times, so
both parities of the grid share one barrier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BarrierError, SurfaceError
from .lattice import DiscreteMeasure, Lattice
from .primal import FlowSolution, StoppingRule, evaluate_rule
from .reward import CaveReward

Q_TOL = 1e-9


@dataclass
class CaveBarrier:
    """Barrier functions per level plus the continuation-region mask."""

    l: np.ndarray            # time values, -1 for gaps
    r: np.ndarray            # time values, +inf for no right barrier
    parting: float           # snapped to the grid
    D: np.ndarray            # (K+1, n_levels) continuation membership
    lat: Lattice
    ties: list = field(default_factory=list)   # randomized nodes, reported

    def rule(self) -> StoppingRule:
        lat = self.lat
        tt = lat.times[:, None]
        stop = (tt <= self.l[None, :] + 0.25 * lat.dt) | \
               (tt >= self.r[None, :] - 0.25 * lat.dt)
        a = stop.astype(float)
        return StoppingRule(a, lat)

    def validate_regular(self, tol: float = 1e-9):
        lat = self.lat
        if np.any((self.l >= 0) & (self.l > self.parting + tol)):
            raise BarrierError("left barrier extends past the parting time")
        if np.any(self.r < self.parting - tol):
            raise BarrierError("right barrier starts before the parting time")
        c0 = lat.col(0)
        up_l = self.l[c0:]
        dn_l = self.l[:c0 + 1][::-1]
        if np.any(np.diff(up_l) < -tol) or np.any(np.diff(dn_l) < -tol):
            raise BarrierError("left barrier is not monotone away from 0")
        for c in (0, lat.n_levels - 1):
            if not (abs(self.l[c] - self.parting) <= tol
                    and abs(self.r[c] - self.parting) <= tol):
                raise BarrierError(
                    "endpoint levels must carry l = parting = r")
        # connectedness: D must be exactly the forward component of the root
        reach = _forward_region(self.rule(), lat)
        if not np.array_equal(self.D, reach):
            raise BarrierError("continuation region is not connected")
        return True


@dataclass
class SplitMeasure:
    """Target split into the left-absorbed and right-absorbed parts."""

    nu_l: DiscreteMeasure
    nu_r: DiscreteMeasure
    parting_mass_to_left: float = 0.0

    def check(self, nu: DiscreteMeasure, lat: Lattice, tol=1e-9):
        total = self.nu_l.as_vector(lat) + self.nu_r.as_vector(lat)
        assert np.max(np.abs(total - nu.as_vector(lat))) <= tol
        return True


def _forward_region(rule: StoppingRule, lat: Lattice) -> np.ndarray:
    """Nodes reached with positive probability and not stopped on arrival."""
    a = rule.a
    D = np.zeros((lat.K + 1, lat.n_levels), dtype=bool)
    alive = np.zeros(lat.n_levels, dtype=bool)
    alive[lat.col(0)] = a[0, lat.col(0)] < 1.0
    D[0] = alive
    for k in range(lat.K):
        nxt = np.zeros(lat.n_levels, dtype=bool)
        nxt[1:] |= alive[:-1]
        nxt[:-1] |= alive[1:]
        nxt &= a[k + 1] < 1.0
        nxt[0] = False
        nxt[-1] = False
        D[k + 1] = nxt
        alive = nxt
    return D


def snap_parting(t_p: float, lat: Lattice) -> float:
    k = int(round(t_p / lat.dt))
    return float(min(max(k, 0), lat.K) * lat.dt)


def extract_barrier(fs: FlowSolution, g: CaveReward, lat: Lattice,
                    tol: float = Q_TOL, consistency_tol: float = 1e-7):
    """Read the cave barrier off an optimal flow and regularize it.

    The stopping set is {nodes with stopped mass}; l(j) is the latest stop
    time at or before the parting, r(j) the earliest at or after it.  The left
    barrier is replaced by its outward monotone envelope and the continuation
    region by the forward component of the root.  The regularized barrier must
    reproduce the flow it came from (law and value), otherwise the stopping
    region is not cave-shaped and extraction fails with the offending nodes.

    Mass stopped exactly at the parting time goes to the left split.
    """
    emb = fs.embedded
    if len(emb.levels) == 1 and emb.levels[0] == 0:
        raise BarrierError(
            "target is the point mass at the origin; cave extraction "
            "requires stopping away from the start")
    t_p = snap_parting(g.t_p, lat)
    K, L = lat.K, lat.n_levels
    times = lat.times

    stopped = fs.q > tol
    ties = [(int(k), int(lat.levels[c]))
            for k, c in np.argwhere((fs.q > tol) & (fs.m - fs.q > tol))
            if 0 < c < L - 1 and k < K]

    l = np.full(L, -1.0)
    r = np.full(L, np.inf)
    for c in range(L):
        ks = np.flatnonzero(stopped[:, c])
        if ks.size == 0:
            continue
        ts = times[ks]
        left = ts[ts <= t_p + 0.25 * lat.dt]
        right = ts[ts > t_p + 0.25 * lat.dt]
        if left.size:
            l[c] = left.max()
        if right.size:
            r[c] = right.min()
    # endpoint levels absorb at every time: l = parting = r by convention
    l[0] = l[-1] = t_p
    r[0] = r[-1] = t_p

    # outward monotone envelope of the left barrier
    c0 = lat.col(0)
    l[c0:] = np.maximum.accumulate(l[c0:])
    l[:c0 + 1] = np.maximum.accumulate(l[:c0 + 1][::-1])[::-1]
    if np.any((l >= 0) & (l > t_p + 0.25 * lat.dt)):
        bad = [(0, int(lat.levels[c]))
               for c in np.flatnonzero((l >= 0) & (l > t_p + 0.25 * lat.dt))]
        raise BarrierError("stops after the parting on the left side", nodes=bad)

    bar = CaveBarrier(l=l, r=r, parting=t_p, D=np.zeros((K + 1, L), bool),
                      lat=lat, ties=ties)
    rule = bar.rule()
    bar.D = _forward_region(rule, lat)

    # consistency: the barrier's hitting flow must reproduce the input flow
    from .reward import MarkovReward  # local import to avoid cycle at import time
    G = MarkovReward(np.repeat(g.g_values(times)[:, None], L, axis=1))
    fs_rule = evaluate_rule(rule, G, lat)
    w1 = fs_rule.embedded.w1(emb, lat.dx)
    dval = abs(fs_rule.value - fs.value)
    if w1 > consistency_tol or dval > consistency_tol:
        diff = np.abs(fs_rule.q - fs.q)
        bad = [(int(k), int(lat.levels[c]))
               for k, c in np.argwhere(diff > consistency_tol)][:20]
        raise BarrierError(
            f"stopping region is not a cave within tolerance "
            f"(law gap {w1:.3e}, value gap {dval:.3e})", nodes=bad)

    left_mask = times[:, None] <= t_p + 0.25 * lat.dt
    nu_l_vec = np.where(left_mask, fs.q, 0.0).sum(axis=0)
    nu_r_vec = np.where(~left_mask, fs.q, 0.0).sum(axis=0)
    at_parting = float(fs.q[int(round(t_p / lat.dt))].sum())
    split = SplitMeasure(
        nu_l=DiscreteMeasure.from_vector(nu_l_vec, lat, sub=True, tol=tol),
        nu_r=DiscreteMeasure.from_vector(nu_r_vec, lat, sub=True, tol=tol),
        parting_mass_to_left=at_parting)
    bar.validate_regular()
    return bar, split


def compute_h(bar: CaveBarrier, g: CaveReward, lat: Lattice) -> np.ndarray:
    """Expected right-derivative of the reward at the barrier hitting time.

    Backward induction: stopped nodes carry the local right-derivative, nodes
    in the continuation region average their children (discrete harmonicity),
    and the horizon closes with the local value.  Both time parities are
    filled since region tests use real times.
    """
    K, L = lat.K, lat.n_levels
    times = lat.times
    dplus = g.dplus_values(times)
    tt = times[:, None]
    in_D = ~((tt <= bar.l[None, :] + 0.25 * lat.dt)
             | (tt >= bar.r[None, :] - 0.25 * lat.dt))
    in_D[:, 0] = False
    in_D[:, -1] = False
    in_D[K, :] = False
    h = np.empty((K + 1, L))
    h[K] = dplus[K]
    for k in range(K - 1, -1, -1):
        h[k] = dplus[k]
        cont = 0.5 * (h[k + 1, :-2] + h[k + 1, 2:])
        inside = in_D[k, 1:-1]
        h[k, 1:-1] = np.where(inside, cont, dplus[k])
    return h


def _trap(h_col: np.ndarray, k_lo: int, k_hi: int, dt: float) -> float:
    """Trapezoid of h over grid times [k_lo, k_hi]."""
    if k_hi <= k_lo:
        return 0.0
    seg = h_col[k_lo:k_hi + 1]
    return float(dt * (seg.sum() - 0.5 * seg[0] - 0.5 * seg[-1]))


@dataclass
class LevelVerdict:
    level: int
    x: float
    l: float
    r: float
    integral: float
    delta: float
    slack: float            # integral - delta
    mass_left: float
    mass_right: float
    verdict: str            # pass | fail | trivial | truncated
    equality: bool = False
    tail_bound: float = 0.0


@dataclass
class VariationalReport:
    levels: list
    tol: float
    passed: bool

    def by_level(self, j: int) -> LevelVerdict:
        for lv in self.levels:
            if lv.level == j:
                return lv
        raise KeyError(j)


def check_variational(bar: CaveBarrier, split: SplitMeasure, g: CaveReward,
                      lat: Lattice, tol: float) -> VariationalReport:
    """Per-level comparison of the integrated h against the reward increment.

    Left-charged levels need integral >= increment - tol, right-charged ones
    integral <= increment + tol; equality is flagged where both charge.
    Levels with no right barrier are integrated up to the horizon and marked
    truncated, with the reward tail reported instead of a verdict.
    """
    h = compute_h(bar, g, lat)
    dt = lat.dt
    nu_l = split.nu_l.as_vector(lat)
    nu_r = split.nu_r.as_vector(lat)
    g_inf = g.g(lat.times[-1] + 80.0 / max(g.lipschitz, 1e-12))
    out = []
    all_pass = True
    for c in range(lat.n_levels):
        j = int(lat.levels[c])
        x = j * lat.dx
        lv, rv = bar.l[c], bar.r[c]
        charged_l, charged_r = nu_l[c] > Q_TOL, nu_r[c] > Q_TOL
        truncated = not np.isfinite(rv)
        lo_t = max(lv, 0.0)
        hi_t = min(rv, lat.times[-1]) if truncated else rv
        k_lo = int(round(lo_t / dt))
        k_hi = int(round(hi_t / dt))
        integral = _trap(h[:, c], k_lo, k_hi, dt)
        delta = g.g(hi_t) - g.g(lo_t)
        tail = abs(g_inf - g.g(lat.times[-1])) if truncated else 0.0
        slack = integral - delta
        if c in (0, lat.n_levels - 1) or not (charged_l or charged_r):
            verdict = "trivial"
        elif truncated:
            verdict = "truncated"
        else:
            ok = True
            if charged_l and slack < -tol:
                ok = False
            if charged_r and slack > tol:
                ok = False
            verdict = "pass" if ok else "fail"
            if not ok:
                all_pass = False
        out.append(LevelVerdict(
            level=j, x=x, l=float(lv), r=float(rv), integral=integral,
            delta=delta, slack=slack, mass_left=float(nu_l[c]),
            mass_right=float(nu_r[c]), verdict=verdict,
            equality=charged_l and charged_r and abs(slack) <= tol,
            tail_bound=tail))
    return VariationalReport(levels=out, tol=tol, passed=all_pass)


@dataclass
class SurfaceVerdicts:
    dominates: bool
    left_contact: bool
    right_contact: bool
    max_violation: float
    max_left_gap: float
    max_right_gap: float


def sufficiency_surface(bar: CaveBarrier, split: SplitMeasure, g: CaveReward,
                        lat: Lattice, tol: float):
    """Verification surface H and excess Gamma per level.

    Gamma(x) integrates h across the barrier window minus the reward
    increment; H(t, x) rebuilds the reward from the right barrier backwards.
    The surface must dominate the reward everywhere and touch it at the
    barrier times of charged levels.  Violations raise with the node list.
    """
    h = compute_h(bar, g, lat)
    dt = lat.dt
    K, L = lat.K, lat.n_levels
    times = lat.times
    gv = g.g_values(times)
    nu_l = split.nu_l.as_vector(lat)
    nu_r = split.nu_r.as_vector(lat)

    gamma_x = np.zeros(L)
    H = np.zeros((K + 1, L))
    usable = np.zeros(L, dtype=bool)
    for c in range(L):
        rv = bar.r[c]
        lv = max(bar.l[c], 0.0)
        truncated = not np.isfinite(rv)
        hi_t = min(rv, times[-1]) if truncated else rv
        k_hi = int(round(hi_t / dt))
        k_lo = int(round(lv / dt))
        gamma_x[c] = gv[k_lo] - gv[k_hi] + _trap(h[:, c], k_lo, k_hi, dt)
        usable[c] = not truncated
        # H(t) = g(r) - int_t^r h + Gamma^+, accumulated by trapezoid
        Hc = np.empty(K + 1)
        Hc[k_hi] = gv[k_hi]
        for k in range(k_hi - 1, -1, -1):
            Hc[k] = Hc[k + 1] - 0.5 * dt * (h[k, c] + h[k + 1, c])
        for k in range(k_hi + 1, K + 1):
            Hc[k] = Hc[k - 1] + 0.5 * dt * (h[k, c] + h[k - 1, c])
        H[:, c] = Hc + max(gamma_x[c], 0.0)

    viol = gv[:, None] - H
    viol[:, ~usable] = -np.inf
    max_violation = float(viol.max())
    dominates = max_violation <= tol
    left_gaps, right_gaps = [0.0], [0.0]
    for c in range(1, L - 1):
        if nu_l[c] > Q_TOL and bar.l[c] >= 0:
            k = int(round(bar.l[c] / dt))
            left_gaps.append(abs(H[k, c] - gv[k]))
        if nu_r[c] > Q_TOL and np.isfinite(bar.r[c]):
            k = int(round(bar.r[c] / dt))
            right_gaps.append(abs(H[k, c] - gv[k]))
    max_left = float(max(left_gaps))
    max_right = float(max(right_gaps))
    verdicts = SurfaceVerdicts(
        dominates=dominates, left_contact=max_left <= tol,
        right_contact=max_right <= tol, max_violation=max_violation,
        max_left_gap=max_left, max_right_gap=max_right)
    if not (verdicts.dominates and verdicts.left_contact
            and verdicts.right_contact):
        bad = [(int(k), int(lat.levels[c]))
               for k, c in np.argwhere(viol > tol)][:20]
        raise SurfaceError(
            f"surface check failed (violation {max_violation:.3e}, "
            f"left gap {max_left:.3e}, right gap {max_right:.3e})",
            nodes=bad)
    return H, gamma_x, verdicts


def perturb_right_barrier(bar: CaveBarrier, j: int, steps: int = 1):
    """Pull the right barrier at one level earlier by whole grid steps."""
    lat = bar.lat
    c = lat.col(j)
    if not np.isfinite(bar.r[c]):
        raise BarrierError(f"level {j} has no right barrier to perturb")
    r = bar.r.copy()
    r[c] = max(bar.parting, r[c] - steps * lat.dt)
    new = CaveBarrier(l=bar.l.copy(), r=r, parting=bar.parting,
                      D=np.zeros_like(bar.D), lat=lat, ties=list(bar.ties))
    new.D = _forward_region(new.rule(), lat)
    return new
