"""Primal optimal embedding on the lattice.

A randomized stopping rule is a flow: arriving mass m(k, j) splits into stopped
mass q(k, j) and continuing mass c(k, j) = m - q, and c propagates half up,
half down.  Embedding a target law is the linear constraint that the stopped
mass per level matches the target, so the optimal rule is an exact sparse LP

    max sum q * G   s.t.   q + c - (propagation of c) = source,
                           sum_k q(k, j) = nu_hat(j),   q, c >= 0.

Boundary levels and the horizon have no continuation variable: arrival there
forces a stop.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleError
from .lattice import DiscreteMeasure, Lattice, TreePath
from .reward import MarkovReward, PathReward
from .simplex import solve_lp

STOP_TOL = 1e-9


@dataclass
class StoppingRule:
    """Per-node stopping probabilities with forced stops at the box edge."""

    a: np.ndarray  # (K+1, n_levels) in [0, 1]
    lat: Lattice

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        a = self.a
        if a.shape != (self.lat.K + 1, self.lat.n_levels):
            raise ValueError("rule table has the wrong shape")
        if np.any(a < -1e-12) or np.any(a > 1 + 1e-12):
            raise ValueError("stopping probabilities must lie in [0, 1]")
        a[:, 0] = 1.0
        a[:, -1] = 1.0
        a[-1, :] = 1.0

    @classmethod
    def never_stop_interior(cls, lat: Lattice) -> "StoppingRule":
        return cls(np.zeros((lat.K + 1, lat.n_levels)), lat)

    @classmethod
    def stop_at_root(cls, lat: Lattice) -> "StoppingRule":
        a = np.zeros((lat.K + 1, lat.n_levels))
        a[0, lat.col(0)] = 1.0
        return cls(a, lat)


@dataclass
class FlowSolution:
    """Mass flow induced by a rule: arrivals m, stops q, and summaries."""

    m: np.ndarray
    q: np.ndarray
    value: float
    embedded: DiscreteMeasure
    mean_time: float
    lat: Lattice

    def stopped_per_level(self) -> np.ndarray:
        return self.q.sum(axis=0)

    def continuing(self) -> np.ndarray:
        return self.m - self.q

    def check(self, tol: float = 1e-9):
        lat = self.lat
        c = self.m - self.q
        assert np.all(self.q >= -tol) and np.all(c >= -tol)
        assert abs(self.q.sum() - self.m[0].sum()) <= tol
        pred = np.zeros_like(self.m)
        pred[0] = self.m[0]
        for k in range(lat.K):
            cc = c[k].copy()
            cc[0] = 0.0
            cc[-1] = 0.0
            pred[k + 1, 1:] += 0.5 * cc[:-1]
            pred[k + 1, :-1] += 0.5 * cc[1:]
        assert np.max(np.abs(pred[1:] - self.m[1:])) <= tol
        return True

    def rows(self):
        lat = self.lat
        for k in range(lat.K + 1):
            for c_ in range(lat.n_levels):
                if self.m[k, c_] > 0 or self.q[k, c_] > 0:
                    yield k, int(lat.levels[c_]), self.m[k, c_], self.q[k, c_]


def _source_vector(lat: Lattice, mu0) -> np.ndarray:
    if mu0 is None:
        src = np.zeros(lat.n_levels)
        src[lat.col(0)] = 1.0
        return src
    if isinstance(mu0, DiscreteMeasure):
        return mu0.as_vector(lat)
    return np.asarray(mu0, dtype=float)


def evaluate_rule(rule: StoppingRule, G: MarkovReward, lat: Lattice,
                  mu0=None) -> FlowSolution:
    """Push unit mass through the rule and price the stopped flow."""
    a = rule.a
    K, L = lat.K, lat.n_levels
    m = np.zeros((K + 1, L))
    q = np.zeros((K + 1, L))
    m[0] = _source_vector(lat, mu0)
    for k in range(K + 1):
        q[k] = m[k] * a[k]
        if k == K:
            q[k] = m[k]
            break
        c = m[k] - q[k]
        c[0] = 0.0
        c[-1] = 0.0
        m[k + 1, 1:] += 0.5 * c[:-1]
        m[k + 1, :-1] += 0.5 * c[1:]
    value = float(np.sum(q * G.table))
    embedded = DiscreteMeasure.from_vector(q.sum(axis=0), lat, tol=0.0)
    mean_time = float(np.sum(q * lat.times[:, None]))
    return FlowSolution(m=m, q=q, value=value, embedded=embedded,
                        mean_time=mean_time, lat=lat)


@dataclass
class LPDuals:
    """Simplex multipliers: one per node row and one per level marginal."""

    flow: np.ndarray      # (K+1, n_levels), NaN off the LP rows
    psi_hat: np.ndarray   # (n_levels,)
    objective: float


def _lp_structure(lat: Lattice, nu_vec, src):
    """Index maps for the flow LP on the mass-carrying cone."""
    mask = lat.cone_mask(start_levels=[int(j) for j in
                                       lat.levels[src > 0]])
    nodes = [(k, c) for k in range(lat.K + 1)
             for c in range(lat.n_levels) if mask[k, c]]
    node_row = {node: i for i, node in enumerate(nodes)}
    q_idx = {node: i for i, node in enumerate(nodes)}
    nq = len(nodes)
    c_nodes = [(k, c) for (k, c) in nodes
               if 0 < c < lat.n_levels - 1 and k < lat.K]
    c_idx = {node: nq + i for i, node in enumerate(c_nodes)}
    return mask, nodes, node_row, q_idx, c_idx, c_nodes


def build_flow_lp(G: MarkovReward, nu_vec: np.ndarray, lat: Lattice, src):
    mask, nodes, node_row, q_idx, c_idx, c_nodes = _lp_structure(lat, nu_vec, src)
    n_rows = len(nodes) + lat.n_levels
    n_vars = len(nodes) + len(c_nodes)
    rows, cols, vals = [], [], []
    b = np.zeros(n_rows)
    cost = np.zeros(n_vars)
    labels = []

    for (k, c), r in node_row.items():
        b[r] = src[c] if k == 0 else 0.0
        labels.append(("node", k, int(lat.levels[c])))
    for c in range(lat.n_levels):
        r = len(nodes) + c
        b[r] = nu_vec[c]
        labels.append(("level", int(lat.levels[c])))

    for (k, c), j_var in q_idx.items():
        r = node_row[(k, c)]
        rows.append(r); cols.append(j_var); vals.append(1.0)
        rows.append(len(nodes) + c); cols.append(j_var); vals.append(1.0)
        cost[j_var] = G.table[k, c]
    for (k, c), j_var in c_idx.items():
        rows.append(node_row[(k, c)]); cols.append(j_var); vals.append(1.0)
        for dc in (-1, 1):
            child = (k + 1, c + dc)
            if child in node_row:
                rows.append(node_row[child]); cols.append(j_var)
                vals.append(-0.5)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(n_rows, n_vars))
    return A, b, cost, labels, (nodes, node_row, q_idx, c_idx, c_nodes)


def solve_primal_lp(G: MarkovReward, nu_hat: DiscreteMeasure, lat: Lattice,
                    mu0=None, pivot_order: str = "default"):
    """Exact optimal embedding flow and its LP duals.

    Returns (FlowSolution, LPDuals).  Raises InfeasibleError naming the level
    set whose marginal cannot be met (the standard cure is a larger horizon).
    """
    src = _source_vector(lat, mu0)
    nu_vec = nu_hat.as_vector(lat)
    if abs(nu_vec.sum() - src.sum()) > 1e-9:
        raise InfeasibleError("target mass does not match source mass")
    cone = lat.cone_mask([int(j) for j in lat.levels[src > 0]])
    reachable_levels = cone.any(axis=0)
    bad = [int(j) for j, p, ok in zip(lat.levels, nu_vec, reachable_levels)
           if p > 0 and not ok]
    if bad:
        raise InfeasibleError(
            f"target charges unreachable levels {bad}", levels=bad)

    A, b, cost, labels, structure = build_flow_lp(G, nu_vec, lat, src)
    nodes, node_row, q_idx, c_idx, c_nodes = structure
    order = None
    if pivot_order == "reverse":
        order = np.arange(A.shape[1])[::-1].copy()
    elif pivot_order != "default":
        raise ValueError(f"unknown pivot_order {pivot_order!r}")
    res = solve_lp(A, b, cost, column_order=order, row_labels=labels)

    K, L = lat.K, lat.n_levels
    q = np.zeros((K + 1, L))
    cvar = np.zeros((K + 1, L))
    for (k, c), j_var in q_idx.items():
        q[k, c] = res.x[j_var]
    for (k, c), j_var in c_idx.items():
        cvar[k, c] = res.x[j_var]
    m = q + cvar
    embedded = DiscreteMeasure.from_vector(q.sum(axis=0), lat, tol=0.0)
    fs = FlowSolution(m=m, q=q, value=res.objective, embedded=embedded,
                      mean_time=float(np.sum(q * lat.times[:, None])), lat=lat)
    flow_dual = np.full((K + 1, L), np.nan)
    for (k, c), r in node_row.items():
        flow_dual[k, c] = res.y[r]
    psi_hat = res.y[len(nodes):len(nodes) + L].copy()
    duals = LPDuals(flow=flow_dual, psi_hat=psi_hat, objective=res.objective)
    return fs, duals


def feasible_flow(nu_hat: DiscreteMeasure, lat: Lattice, G: MarkovReward,
                  tilt: Optional[np.ndarray] = None, mu0=None) -> FlowSolution:
    """Some feasible embedding flow: the LP vertex maximizing a tilt objective.

    With tilt=None this is a pure feasibility solve; random tilts sample
    distinct vertices of the embedding polytope, all priced under G.
    """
    src = _source_vector(lat, mu0)
    nu_vec = nu_hat.as_vector(lat)
    A, b, cost, labels, structure = build_flow_lp(G, nu_vec, lat, src)
    nodes, node_row, q_idx, c_idx, c_nodes = structure
    obj = np.zeros_like(cost)
    if tilt is not None:
        for (k, c), j_var in q_idx.items():
            obj[j_var] = tilt[k, c]
    res = solve_lp(A, b, obj, row_labels=labels)
    K, L = lat.K, lat.n_levels
    q = np.zeros((K + 1, L))
    cvar = np.zeros((K + 1, L))
    for (k, c), j_var in q_idx.items():
        q[k, c] = res.x[j_var]
    for (k, c), j_var in c_idx.items():
        cvar[k, c] = res.x[j_var]
    m = q + cvar
    return FlowSolution(
        m=m, q=q, value=float(np.sum(q * G.table)),
        embedded=DiscreteMeasure.from_vector(q.sum(axis=0), lat, tol=0.0),
        mean_time=float(np.sum(q * lat.times[:, None])), lat=lat)


# ---------------------------------------------------------------------------
# tree-scale brute force
# ---------------------------------------------------------------------------

def tree_num_nodes(depth: int) -> int:
    return 2 ** (depth + 1) - 1


def tree_node_id(k: int, bits: int) -> int:
    """Heap index of the length-k prefix encoded as bits (LSB = first step)."""
    return (2 ** k - 1) + bits


def tree_node_level(k: int, bits: int) -> int:
    ups = bin(bits).count("1")
    return 2 * ups - k


@dataclass
class TreeKernel:
    """Randomized stopping kernel on the depth-n binary tree.

    ``s[u]`` is the conditional stopping mass placed at prefix node u, so the
    masses along every root-to-leaf path sum to 1.
    """

    depth: int
    s: np.ndarray
    dx: float = 1.0

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        if self.s.shape != (tree_num_nodes(self.depth),):
            raise ValueError("node-mass array has the wrong length")
        if np.any(self.s < -1e-12):
            raise ValueError("negative stopping mass")

    def path_masses(self) -> np.ndarray:
        """(2^n, n+1) stopped mass along each path (bit i of the row index
        is the sign of step i+1)."""
        n = self.depth
        P = 2 ** n
        out = np.zeros((P, n + 1))
        for p in range(P):
            for k in range(n + 1):
                bits = p & ((1 << k) - 1)
                out[p, k] = self.s[tree_node_id(k, bits)]
        return out

    @classmethod
    def from_path_masses(cls, depth: int, masses: np.ndarray, dx: float = 1.0,
                         tol: float = 1e-9) -> "TreeKernel":
        """Build a kernel from per-path masses, verifying adaptedness:
        paths sharing a k-prefix must assign the same mass at index k."""
        masses = np.asarray(masses, dtype=float)
        P = 2 ** depth
        if masses.shape != (P, depth + 1):
            raise ValueError("path-mass matrix has the wrong shape")
        s = np.zeros(tree_num_nodes(depth))
        for k in range(depth + 1):
            for bits in range(2 ** k):
                rows = [p for p in range(P)
                        if (p & ((1 << k) - 1)) == bits]
                vals = masses[rows, k]
                if vals.max() - vals.min() > tol:
                    raise ValueError(
                        f"kernel not adapted at prefix (k={k}, bits={bits}): "
                        f"spread {vals.max() - vals.min():.3e}")
                s[tree_node_id(k, bits)] = vals.mean()
        return cls(depth=depth, s=s, dx=dx)

    def path_cumulative(self) -> np.ndarray:
        """(2^n, n+1) cumulative stopped mass along each path."""
        return np.cumsum(self.path_masses(), axis=1)

    def validate(self, tol: float = 1e-9):
        cum = self.path_cumulative()
        if np.any(cum > 1 + tol):
            raise ValueError("cumulative stopping mass exceeds 1 on a path")
        if np.any(np.abs(cum[:, -1] - 1.0) > tol):
            raise ValueError("a path fails to stop with probability 1")
        return True

    def embedded_measure(self) -> DiscreteMeasure:
        levels = {}
        for k in range(self.depth + 1):
            w = 2.0 ** (-k)
            for bits in range(2 ** k):
                mass = self.s[tree_node_id(k, bits)] * w
                if mass > 0:
                    lv = tree_node_level(k, bits)
                    levels[lv] = levels.get(lv, 0.0) + mass
        items = sorted(levels.items())
        return DiscreteMeasure(np.array([j for j, _ in items]),
                               np.array([p for _, p in items]))

    def expectation(self, G: PathReward) -> float:
        """xi(G) by exhaustive summation over prefix nodes."""
        total = 0.0
        for k in range(self.depth + 1):
            w = 2.0 ** (-k)
            for bits in range(2 ** k):
                mass = self.s[tree_node_id(k, bits)]
                if mass > 0:
                    steps = tuple(1 if (bits >> i) & 1 else -1
                                  for i in range(k))
                    total += w * mass * G(steps, k)
        return float(total)

    def mean_time(self) -> float:
        return self.expectation(PathReward(lambda steps, k: float(k)))


def _tree_levels(depth: int) -> np.ndarray:
    return np.arange(-depth, depth + 1)


def tree_lp(G: PathReward, nu_hat: DiscreteMeasure, depth: int,
            dx: float = 1.0):
    """Exact LP over path-indexed kernels; returns (value, TreeKernel)."""
    N = tree_num_nodes(depth)
    levels = _tree_levels(depth)
    lvl_row = {int(j): N + i for i, j in enumerate(levels)}
    n_rows = N + len(levels)
    # variables: s(u) for all nodes, r(u) for internal nodes
    r_off = N
    internal = [u for u in range(N) if u < tree_num_nodes(depth - 1)]
    r_idx = {u: r_off + i for i, u in enumerate(internal)}
    n_vars = N + len(internal)
    rows, cols, vals = [], [], []
    b = np.zeros(n_rows)
    cost = np.zeros(n_vars)

    nu_vec = np.zeros(len(levels))
    for j, p in zip(nu_hat.levels, nu_hat.masses):
        if int(j) not in lvl_row:
            raise InfeasibleError(
                f"target level {int(j)} unreachable at depth {depth}",
                levels=[int(j)])
        nu_vec[int(j) + depth] = p

    for k in range(depth + 1):
        w = 2.0 ** (-k)
        for bits in range(2 ** k):
            u = tree_node_id(k, bits)
            # balance row at u: s(u) + r(u) - r(parent) = 1{u = root}
            rows.append(u); cols.append(u); vals.append(1.0)
            if u in r_idx:
                rows.append(u); cols.append(r_idx[u]); vals.append(1.0)
            if k == 0:
                b[u] = 1.0
            else:
                parent = tree_node_id(k - 1, bits & ((1 << (k - 1)) - 1))
                rows.append(u); cols.append(r_idx[parent]); vals.append(-1.0)
            lv = tree_node_level(k, bits)
            rows.append(lvl_row[lv]); cols.append(u); vals.append(w)
            steps = tuple(1 if (bits >> i) & 1 else -1 for i in range(k))
            cost[u] = w * G(steps, k)
    for i, j in enumerate(levels):
        b[N + i] = nu_vec[i]

    A = sp.csc_matrix((vals, (rows, cols)), shape=(n_rows, n_vars))
    labels = [("node", u) for u in range(N)] + \
             [("level", int(j)) for j in levels]
    res = solve_lp(A, b, cost, row_labels=labels)
    kern = TreeKernel(depth=depth, s=res.x[:N], dx=dx)
    return res.objective, kern


def enumerate_deterministic(G: PathReward, nu_hat: DiscreteMeasure,
                            depth: int, dx: float = 1.0):
    """Best adapted {0,1} kernel meeting the marginal, by pruned search.

    The search walks nodes in BFS order deciding stop/continue; partial level
    masses exceeding the target prune the branch.  Exhaustive for small depth.
    """
    levels = _tree_levels(depth)
    target = np.zeros(len(levels))
    for j, p in zip(nu_hat.levels, nu_hat.masses):
        if abs(j) > depth:
            raise InfeasibleError(
                f"target level {int(j)} unreachable at depth {depth}",
                levels=[int(j)])
        target[int(j) + depth] = p

    best = {"value": None, "stops": None}
    N = tree_num_nodes(depth)
    g_max = max(
        G(tuple(1 if (bits >> i) & 1 else -1 for i in range(k)), k)
        for k in range(depth + 1) for bits in range(2 ** k))
    acc_mass = np.zeros(len(levels))

    def dfs(stack, acc_value, rem_mass, stops):
        # stack holds undecided (k, bits) nodes; decide the top one
        if best["value"] is not None and \
                acc_value + rem_mass * g_max <= best["value"] + 1e-12:
            return
        if not stack:
            if np.max(np.abs(acc_mass - target)) <= 1e-9:
                if best["value"] is None or acc_value > best["value"]:
                    best["value"] = acc_value
                    best["stops"] = stops.copy()
            return
        k, bits = stack[-1]
        rest = stack[:-1]
        w = 2.0 ** (-k)
        lv_i = tree_node_level(k, bits) + depth
        # option 1: stop at this node
        if acc_mass[lv_i] + w <= target[lv_i] + 1e-9:
            steps = tuple(1 if (bits >> i) & 1 else -1 for i in range(k))
            acc_mass[lv_i] += w
            stops.add(tree_node_id(k, bits))
            dfs(rest, acc_value + w * G(steps, k), rem_mass - w, stops)
            stops.discard(tree_node_id(k, bits))
            acc_mass[lv_i] -= w
        # option 2: continue to both children
        if k < depth:
            dfs(rest + [(k + 1, bits), (k + 1, bits | (1 << k))],
                acc_value, rem_mass, stops)

    dfs([(0, 0)], 0.0, 1.0, set())
    if best["value"] is None:
        raise InfeasibleError(
            "no deterministic rule embeds the target at this depth",
            levels=list(nu_hat.levels))
    s = np.zeros(N)
    for u in best["stops"]:
        s[u] = 1.0
    return best["value"], TreeKernel(depth=depth, s=s, dx=dx)


def brute_force_tree(G: PathReward, nu_hat: DiscreteMeasure, depth: int,
                     deterministic_only: bool = False, dx: float = 1.0):
    """Optimal kernel over a depth-n tree: exact LP, or {0,1} enumeration."""
    if depth > 12:
        raise ValueError(f"depth {depth} exceeds the enumeration bound 12")
    if deterministic_only:
        return enumerate_deterministic(G, nu_hat, depth, dx=dx)
    return tree_lp(G, nu_hat, depth, dx=dx)
