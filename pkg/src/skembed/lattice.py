"""Space-time random-walk grid, measure quantization, and small tree paths.

The walk takes +-dx steps every dt = dx**2, so its quadratic variation matches
the Brownian clock exactly.  Node (k, j) means time k*dt at level j*dx.  The two
spatial boundary levels absorb: mass arriving there must stop.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import LatticeError, QuantizeError

MASS_TOL = 1e-12


@dataclass(frozen=True)
class Lattice:
    """Immutable space-time grid.

    Attributes
    ----------
    dx : spatial step (> 0); dt is dx**2 exactly.
    j_min, j_max : integer boundary levels, j_min < 0 < j_max.
    K : time horizon in steps.
    """

    dx: float
    j_min: int
    j_max: int
    K: int

    @property
    def dt(self) -> float:
        return self.dx * self.dx

    @property
    def x_min(self) -> float:
        return self.j_min * self.dx

    @property
    def x_max(self) -> float:
        return self.j_max * self.dx

    @property
    def n_levels(self) -> int:
        return self.j_max - self.j_min + 1

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt

    def col(self, j) -> np.ndarray | int:
        """Column index of level j in dense (K+1, n_levels) arrays."""
        return j - self.j_min

    def level_values(self) -> np.ndarray:
        return self.levels * self.dx

    def reachable(self, k, j):
        """Node predicate: inside the box and k = j (mod 2)."""
        k = np.asarray(k)
        j = np.asarray(j)
        inside = (j >= self.j_min) & (j <= self.j_max) & (k >= 0) & (k <= self.K)
        return inside & ((k - j) % 2 == 0)

    def parity_mask(self) -> np.ndarray:
        """Dense (K+1, n_levels) boolean mask of reachable nodes."""
        kk = np.arange(self.K + 1)[:, None]
        jj = self.levels[None, :]
        return self.reachable(kk, jj)

    def cone_mask(self, start_levels=None) -> np.ndarray:
        """Nodes that can actually carry mass started from ``start_levels``.

        Forward propagation with absorption at the boundary levels; defaults
        to a unit start at level 0.
        """
        mask = np.zeros((self.K + 1, self.n_levels), dtype=bool)
        if start_levels is None:
            start_levels = [0]
        for j in start_levels:
            mask[0, self.col(j)] = True
        interior = np.zeros(self.n_levels, dtype=bool)
        interior[1:-1] = True
        for k in range(self.K):
            alive = mask[k] & interior
            nxt = np.zeros(self.n_levels, dtype=bool)
            nxt[1:] |= alive[:-1]
            nxt[:-1] |= alive[1:]
            mask[k + 1] |= nxt
        return mask

    def is_boundary_level(self, j):
        j = np.asarray(j)
        return (j == self.j_min) | (j == self.j_max)


def _survival_step(p: np.ndarray) -> np.ndarray:
    """One walk step for interior occupation probabilities (boundary absorbs)."""
    nxt = np.zeros_like(p)
    nxt[1:] += 0.5 * p[:-1]
    nxt[:-1] += 0.5 * p[1:]
    # mass stepping onto index 0 or -1 (the boundary levels) is absorbed
    nxt[0] = 0.5 * p[1]
    nxt[-1] = 0.5 * p[-2]
    return nxt


def exit_residual(lat: Lattice, k: int | None = None) -> float:
    """Exact probability that the walk from level 0 has not exited by step k."""
    if k is None:
        k = lat.K
    n_int = lat.n_levels - 2
    if n_int <= 0:
        return 0.0
    p = np.zeros(n_int)
    p[-lat.j_min - 1] = 1.0  # interior index of level 0
    for _ in range(k):
        if n_int == 1:
            p = np.zeros(1)
            break
        q = np.zeros_like(p)
        q[1:] += 0.5 * p[:-1]
        q[:-1] += 0.5 * p[1:]
        p = q
    return float(p.sum())


def build_lattice(x_min: float, x_max: float, dx: float,
                  eps_residual: float, max_steps: int = 2_000_000) -> Lattice:
    """Build the grid and pick the smallest horizon with survival <= eps_residual.

    The survival probability is computed by the exact absorbing-walk recursion,
    never by a closed-form shortcut.
    """
    if not (0.0 < eps_residual < 1.0):
        raise LatticeError(
            f"eps_residual must lie in (0, 1), got {eps_residual!r}")
    if dx <= 0:
        raise LatticeError(f"dx must be positive, got {dx!r}")
    if not (x_min < 0.0 < x_max):
        raise LatticeError(
            f"need x_min < 0 < x_max, got x_min={x_min!r}, x_max={x_max!r}")
    bounds = []
    for name, x in (("x_min", x_min), ("x_max", x_max)):
        j = x / dx
        j_round = round(j)
        rem = x - j_round * dx
        if abs(rem) > 1e-9 * max(1.0, abs(x)):
            raise LatticeError(
                f"{name}={x!r} is not an integer multiple of dx={dx!r} "
                f"(remainder {rem:.17g})")
        bounds.append(int(j_round))
    j_min, j_max = bounds

    n_int = j_max - j_min - 1
    p = np.zeros(n_int)
    p[-j_min - 1] = 1.0
    k = 0
    while p.sum() > eps_residual:
        if n_int == 1:
            p = np.zeros(1)
            k += 1
            break
        q = np.zeros_like(p)
        q[1:] += 0.5 * p[:-1]
        q[:-1] += 0.5 * p[1:]
        p = q
        k += 1
        if k > max_steps:
            raise LatticeError(
                f"horizon exceeds max_steps={max_steps} before the survival "
                f"probability drops to {eps_residual!r}")
    return Lattice(dx=float(dx), j_min=j_min, j_max=j_max, K=max(k, 1))


@dataclass
class DiscreteMeasure:
    """Atomic (sub-)probability measure on integer grid levels."""

    levels: np.ndarray
    masses: np.ndarray
    sub: bool = False

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=int)
        self.masses = np.asarray(self.masses, dtype=float)
        if self.levels.shape != self.masses.shape:
            raise QuantizeError("levels and masses must align")
        order = np.argsort(self.levels)
        self.levels = self.levels[order]
        self.masses = self.masses[order]
        if np.any(self.masses < -MASS_TOL):
            raise QuantizeError("negative atom mass")
        total = self.masses.sum()
        if self.sub:
            if total > 1.0 + MASS_TOL:
                raise QuantizeError(f"sub-probability mass {total} exceeds 1")
        elif abs(total - 1.0) > 1e-9:
            raise QuantizeError(f"total mass {total} is not 1")

    @classmethod
    def delta(cls, j: int) -> "DiscreteMeasure":
        return cls(np.array([j]), np.array([1.0]))

    @classmethod
    def from_pairs(cls, pairs, sub=False) -> "DiscreteMeasure":
        pairs = list(pairs)
        return cls(np.array([j for j, _ in pairs]),
                   np.array([p for _, p in pairs]), sub=sub)

    @classmethod
    def from_vector(cls, vec: np.ndarray, lat: Lattice, sub=False,
                    tol: float = 0.0) -> "DiscreteMeasure":
        vec = np.asarray(vec, dtype=float)
        keep = vec > tol
        return cls(lat.levels[keep], vec[keep], sub=sub)

    def as_vector(self, lat: Lattice) -> np.ndarray:
        vec = np.zeros(lat.n_levels)
        for j, p in zip(self.levels, self.masses):
            if j < lat.j_min or j > lat.j_max:
                raise QuantizeError(f"atom level {j} outside the grid")
            vec[lat.col(j)] += p
        return vec

    def total(self) -> float:
        return float(self.masses.sum())

    def mean(self, dx: float) -> float:
        return float(np.dot(self.levels * dx, self.masses))

    def second_moment(self, dx: float) -> float:
        return float(np.dot((self.levels * dx) ** 2, self.masses))

    def is_centered(self, dx: float, tol: float = MASS_TOL) -> bool:
        return abs(self.mean(dx)) <= tol

    def w1(self, other: "DiscreteMeasure", dx: float) -> float:
        return w1_distance(self.levels * dx, self.masses,
                           other.levels * dx, other.masses)

    def potential(self, x: float, dx: float) -> float:
        """u(x) = integral of |x - y| against the measure."""
        return float(np.dot(np.abs(x - self.levels * dx), self.masses))


def w1_distance(xs1, p1, xs2, p2) -> float:
    """Wasserstein-1 distance between two atomic measures on the line."""
    xs = np.concatenate([np.asarray(xs1, float), np.asarray(xs2, float)])
    signed = np.concatenate([np.asarray(p1, float), -np.asarray(p2, float)])
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    signed = signed[order]
    cdf_gap = np.cumsum(signed)[:-1]
    widths = np.diff(xs)
    return float(np.dot(np.abs(cdf_gap), widths))


def quantize_measure(nu, lat: Lattice) -> DiscreteMeasure:
    """Put an atomic target law on the grid by mean-exact two-point splits.

    Each atom (x, p) is shared between the neighbouring levels with barycentric
    weights, so the mean is preserved exactly and the W1 distortion is at most
    dx/2 per unit mass.
    """
    pairs = np.asarray(list(nu), dtype=float).reshape(-1, 2)
    xs, ps = pairs[:, 0], pairs[:, 1]
    if np.any(ps < -MASS_TOL):
        raise QuantizeError("negative input mass")
    if abs(ps.sum() - 1.0) > 1e-9:
        raise QuantizeError(f"input mass {ps.sum()} is not 1")
    mean = float(np.dot(xs, ps))
    if abs(mean) > 1e-9:
        raise QuantizeError(f"input is not centered: mean = {mean:.17g}")
    if np.any(xs < lat.x_min - 1e-12) or np.any(xs > lat.x_max + 1e-12):
        bad = xs[(xs < lat.x_min - 1e-12) | (xs > lat.x_max + 1e-12)]
        raise QuantizeError(
            f"support outside [{lat.x_min}, {lat.x_max}]: {bad.tolist()}")

    vec = np.zeros(lat.n_levels)
    for x, p in zip(xs, ps):
        if p <= 0.0:
            continue
        pos = x / lat.dx
        j_lo = int(np.floor(pos + 1e-12))
        theta = pos - j_lo
        if theta < 1e-12:
            theta = 0.0
        j_lo = min(max(j_lo, lat.j_min), lat.j_max)
        if theta == 0.0:
            vec[lat.col(j_lo)] += p
        else:
            vec[lat.col(j_lo)] += p * (1.0 - theta)
            vec[lat.col(j_lo + 1)] += p * theta
    out = DiscreteMeasure.from_vector(vec, lat)
    if abs(out.mean(lat.dx)) > 1e-12:
        raise QuantizeError(
            f"barycentric split lost centering: mean {out.mean(lat.dx):.3e}")
    return out


def read_measure_csv(path) -> list[tuple[float, float]]:
    """Read (x, p) atom rows; a header row is skipped if non-numeric."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                if rows:
                    raise
                continue
    return rows


@dataclass(frozen=True)
class TreePath:
    """Finite +-1 increment path for tree-scale brute force."""

    steps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if any(s not in (-1, 1) for s in self.steps):
            raise ValueError("steps must be +-1")

    def __len__(self):
        return len(self.steps)

    def values(self, dx: float = 1.0) -> np.ndarray:
        """Walk values omega_0..omega_n (omega_0 = 0)."""
        out = np.zeros(len(self.steps) + 1)
        if self.steps:
            out[1:] = np.cumsum(self.steps) * dx
        return out
