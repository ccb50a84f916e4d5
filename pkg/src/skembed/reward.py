"""Reward functionals: Markovian node tables, convex-concave time rewards,
and path-indexed rewards for tree-scale brute force."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CaveShapeError, RewardError
from .lattice import Lattice

SIGN_TOL = 1e-12


@dataclass
class MarkovReward:
    """Node reward table g(k, j) over the dense (K+1, n_levels) grid."""

    table: np.ndarray
    bounded: bool = True
    bound: Optional[float] = None

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        if self.bounded and self.bound is None:
            self.bound = float(np.max(np.abs(self.table)))

    @property
    def range(self) -> float:
        return float(self.table.max() - self.table.min())


@dataclass
class CaveReward:
    """Time-only reward, strictly convex decreasing then strictly concave
    increasing around the parting time.

    ``dplus_g`` is the right-derivative in time; when not supplied it is the
    forward difference with step dt, and ``dplus_source`` records which.
    """

    g: Callable[[float], float]
    t_p: float
    dplus_g: Callable[[float], float]
    lipschitz: float
    bound: float
    dplus_source: str = "supplied"

    def g_values(self, times: np.ndarray) -> np.ndarray:
        return np.array([self.g(float(t)) for t in np.asarray(times)])

    def dplus_values(self, times: np.ndarray) -> np.ndarray:
        return np.array([self.dplus_g(float(t)) for t in np.asarray(times)])


@dataclass
class PathReward:
    """Reward for stopping a tree path: callable on (steps tuple, stop index)."""

    fn: Callable[[tuple, int], float]

    def __call__(self, steps: tuple, k: int) -> float:
        return float(self.fn(tuple(steps[:k]), k))


def _as_time_function(g_spec, times):
    """Accept a callable or a dense (t, g) table; return a callable."""
    if callable(g_spec):
        return g_spec
    tab = np.asarray(g_spec, dtype=float)
    if tab.ndim != 2 or tab.shape[1] != 2:
        raise CaveShapeError("table form must be rows of (t, g(t))")
    ts, gs = tab[:, 0], tab[:, 1]
    if np.any(np.diff(ts) <= 0):
        raise CaveShapeError("table times must be strictly increasing")
    lo, hi = ts[0], ts[-1]
    span = max(times.max(), hi)
    if lo > times.min() + 1e-12 or hi < span - 1e-12:
        raise CaveShapeError(
            f"table covers [{lo}, {hi}] but the grid needs [{times.min()}, {span}]")

    def g(t):
        return float(np.interp(t, ts, gs))

    return g


def validate_cave(g_spec, t_p: float, times, dplus_g=None,
                  dt: Optional[float] = None) -> CaveReward:
    """Check the convex-concave shape on the time grid and package the reward.

    Convexity/monotonicity are verified by difference signs on the grid, not
    symbolically, so tabulated rewards are accepted on equal footing.  The
    first violating time triple is reported on failure.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 3:
        raise CaveShapeError("need a grid of at least 3 times")
    if t_p < 0:
        raise CaveShapeError(f"parting time must be >= 0, got {t_p}")
    g = _as_time_function(g_spec, times)
    gv = np.array([g(float(t)) for t in times])
    if not np.all(np.isfinite(gv)):
        k = int(np.argmin(np.isfinite(gv)))
        raise CaveShapeError(f"g({times[k]}) is not finite")

    step = float(times[1] - times[0]) if dt is None else float(dt)

    def _fail(i, side, what):
        raise CaveShapeError(
            f"{what} fails on ({times[i]:.6g}, {times[i + 1]:.6g}, "
            f"{times[min(i + 2, len(times) - 1)]:.6g}) [{side} of parting]")

    # differences below float noise are unresolvable, not violations; a
    # resolvable difference with the wrong sign rejects the reward
    noise = 1e-13 * max(1.0, float(np.max(np.abs(gv))))
    before = times[:-1] < t_p - SIGN_TOL  # segments fully before parting
    after = times[:-1] >= t_p - SIGN_TOL
    d1 = np.diff(gv)
    for i in range(len(d1)):
        if before[i] and times[i + 1] <= t_p + SIGN_TOL and d1[i] >= noise:
            _fail(i, "convex", "strict decrease")
        if after[i] and times[i] >= t_p - SIGN_TOL and d1[i] <= -noise:
            _fail(i, "concave", "strict increase")
    d2 = np.diff(gv, 2)
    for i in range(len(d2)):
        if times[i + 2] <= t_p + SIGN_TOL and d2[i] <= -noise:
            _fail(i, "convex", "strict convexity")
        if times[i] >= t_p - SIGN_TOL and d2[i] >= noise:
            _fail(i, "concave", "strict concavity")

    lip = float(np.max(np.abs(d1))) / step if len(d1) else 0.0
    bound = float(np.max(np.abs(gv)))

    if dplus_g is None:
        def dplus(t, _g=g, _h=step):
            return (_g(t + _h) - _g(t)) / _h
        source = "forward-difference"
    else:
        dplus = dplus_g
        source = "supplied"
    return CaveReward(g=g, t_p=float(t_p), dplus_g=dplus, lipschitz=lip,
                      bound=bound, dplus_source=source)


def tabulate(reward, lat: Lattice) -> MarkovReward:
    """Evaluate a reward on the grid nodes.

    ``reward`` is a CaveReward (time-only; constant across levels) or a
    callable g(t, x).
    """
    times = lat.times
    xs = lat.level_values()
    if isinstance(reward, CaveReward):
        col = reward.g_values(times)
        table = np.repeat(col[:, None], lat.n_levels, axis=1)
    elif callable(reward):
        tt, xx = np.meshgrid(times, xs, indexing="ij")
        table = np.asarray(reward(tt, xx), dtype=float)
        if table.shape != (lat.K + 1, lat.n_levels):
            table = np.broadcast_to(table, (lat.K + 1, lat.n_levels)).copy()
    else:
        raise RewardError(f"cannot tabulate {type(reward).__name__}")
    bad = ~np.isfinite(table)
    if bad.any():
        k, c = np.argwhere(bad)[0]
        raise RewardError(
            f"non-finite reward at node (k={k}, j={int(lat.levels[c])})")
    return MarkovReward(table=table)


def wald_time_reward(lat: Lattice) -> MarkovReward:
    """G(k, j) = k*dt; every embedding of a fixed law has the same value."""
    table = np.repeat(lat.times[:, None], lat.n_levels, axis=1)
    return MarkovReward(table=table)


def exp_cave(t_p: float) -> tuple:
    """Classic smooth cave: exp(-t) down to the parting, mirrored back up."""
    def g(t):
        if t <= t_p:
            return float(np.exp(-t))
        return float(np.exp(-t_p) * (2.0 - np.exp(-(t - t_p))))

    def dplus(t):
        if t < t_p:
            return float(-np.exp(-t))
        return float(np.exp(-t_p) * np.exp(-(t - t_p)))

    return g, dplus


def quad_exp_cave(t_p: float) -> tuple:
    """Quadratic descent to the parting, exponential saturation after it."""
    def g(t):
        if t <= t_p:
            return float((t - t_p) ** 2 / (2.0 * max(t_p, 1.0)))
        return float(1.0 - np.exp(-(t - t_p)))

    def dplus(t):
        if t < t_p:
            return float((t - t_p) / max(t_p, 1.0))
        return float(np.exp(-(t - t_p)))

    return g, dplus


def concave_increasing(rate: float = 1.0) -> tuple:
    """Degenerate cave with parting 0 (right barrier only)."""
    def g(t):
        return float(1.0 - np.exp(-rate * t))

    def dplus(t):
        return float(rate * np.exp(-rate * t))

    return g, dplus
