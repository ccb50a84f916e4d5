"""Tree-scale path algebra and randomized-stopping approximations.

Paths live on a depth-n binary tree with +-1 steps of size dx and clock
dt = dx**2; kernels assign stopping mass per prefix node.  This module
implements gluing and shifting of kernels, per-path quantile inversion,
the approximation of a kernel by one that stops only after the walk is
bounded away from the origin, and a discrete de-randomization that turns a
kernel into a deterministic rule by reading randomness off path prefixes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InfeasibleError, SkembedError
from .lattice import DiscreteMeasure, Lattice, TreePath, w1_distance
from .primal import TreeKernel, solve_primal_lp
from .reward import MarkovReward, PathReward


@dataclass
class PathOpsContext:
    """Enumeration of all 2^n equiprobable paths of a depth-n tree."""

    depth: int
    dx: float = 1.0

    def __post_init__(self):
        n = self.depth
        P = 2 ** n
        bits = (np.arange(P)[:, None] >> np.arange(n)[None, :]) & 1
        self.steps = np.where(bits == 1, 1, -1).astype(np.int8)
        self.values = np.zeros((P, n + 1))
        self.values[:, 1:] = np.cumsum(self.steps, axis=1) * self.dx
        self.weight = 1.0 / P

    @property
    def dt(self) -> float:
        return self.dx * self.dx

    @property
    def n_paths(self) -> int:
        return 2 ** self.depth

    def path(self, p: int) -> TreePath:
        return TreePath(tuple(int(s) for s in self.steps[p]))


def glue(omega: TreePath, omega_prime: TreePath, t_index: int) -> TreePath:
    """Freeze omega at t_index and continue with omega_prime's increments."""
    if not 0 <= t_index <= len(omega):
        raise IndexError(f"glue index {t_index} out of range")
    return TreePath(tuple(omega.steps[:t_index]) + tuple(omega_prime.steps))


@dataclass
class EtaBound:
    """First time the space-time point leaves the eta-ball at the origin."""

    eta: float
    tau: np.ndarray          # per-path first index with |(t, x)| >= eta

    def is_stopping_time(self, ctx: PathOpsContext) -> bool:
        """tau may depend on the path only through its prefix."""
        for k in range(ctx.depth + 1):
            masks = {}
            for p in range(ctx.n_paths):
                key = p & ((1 << min(k, ctx.depth)) - 1)
                hit = self.tau[p] <= k
                if key in masks and masks[key] != hit:
                    return False
                masks[key] = hit
        return True


def eta_bound(ctx: PathOpsContext, eta: float) -> EtaBound:
    tt = np.arange(ctx.depth + 1) * ctx.dt
    norm = np.hypot(tt[None, :], ctx.values)
    hit = norm >= eta - 1e-12
    if not hit[:, -1].all():
        raise SkembedError(
            f"eta={eta} is not reached by every path at depth {ctx.depth}")
    tau = hit.argmax(axis=1)
    return EtaBound(eta=eta, tau=tau)


def shift_time(xi: TreeKernel, tau, ctx: PathOpsContext) -> TreeKernel:
    """Kernel started afresh at the stopping rule tau.

    The shifted kernel's cumulative law is F(s) = 1{tau < s} F_xi(s - tau)
    along the path shifted to start at tau, so mass the input places at
    relative indices 0 and 1 lands at tau + 1.
    """
    tau = np.asarray(tau, dtype=int)
    n = ctx.depth
    P = ctx.n_paths
    node = xi.s
    out = np.zeros((P, n + 1))
    for p in range(P):
        t0 = int(tau[p])
        rest = n - t0
        # cdf of xi along the path that starts with this path's increments
        # after t0; adaptedness makes the cdf a function of the prefix only
        cum = 0.0
        masses = np.zeros(rest + 1)
        for k in range(rest + 1):
            bits = 0
            for i in range(k):
                if ctx.steps[p, t0 + i] == 1:
                    bits |= 1 << i
            masses[k] = node[(2 ** k - 1) + bits]
            cum += masses[k]
        if cum < 1.0 - 1e-9:
            raise SkembedError(
                f"residual depth {rest} cannot carry the shifted kernel "
                f"(mass {cum:.6f} < 1 on path {p})")
        F = np.cumsum(masses)
        for s in range(t0 + 1, n + 1):
            prev = F[s - 1 - t0] if s - 1 - t0 >= 0 else 0.0
            lo = 0.0 if s - 1 <= t0 else prev
            out[p, s] = F[s - t0] - lo
    return TreeKernel.from_path_masses(n, out, dx=ctx.dx)


def quantile_time(xi: TreeKernel, u: float, omega, ctx: PathOpsContext = None) -> int:
    """Smallest index where the kernel's cumulative mass reaches u."""
    if isinstance(omega, TreePath):
        bits = 0
        for i, s in enumerate(omega.steps):
            if s == 1:
                bits |= 1 << i
        depth = len(omega)
    else:
        bits = int(omega)
        depth = xi.depth
    cum = 0.0
    for k in range(depth + 1):
        cum += xi.s[(2 ** k - 1) + (bits & ((1 << k) - 1))]
        if cum >= u - 1e-12:
            return k
    raise SkembedError(f"kernel never accumulates mass {u} on this path")


def _chi_kernel(nu_hat: DiscreteMeasure, s_lv: int, horizon: int,
                ctx: PathOpsContext):
    """Markov rule embedding nu_hat from the two-point law at +-s_lv.

    The horizon parity is aligned so the forced final stop lands on the
    parity class of the target's levels (walks alternate parity each step).
    """
    lv_parity = int(np.abs(nu_hat.levels[0])) % 2
    if any(abs(int(j)) % 2 != lv_parity for j in nu_hat.levels):
        raise InfeasibleError(
            "target charges both level parities; no finite horizon can "
            "absorb the forced stop exactly", levels=list(nu_hat.levels))
    if (s_lv + horizon) % 2 != lv_parity:
        horizon -= 1
    if horizon < 0:
        raise SkembedError("no room left for the two-point embedding")
    span = max(int(np.max(np.abs(nu_hat.levels))), s_lv) + horizon + 1
    lat = Lattice(dx=ctx.dx, j_min=-span, j_max=span, K=horizon)
    mu0 = np.zeros(lat.n_levels)
    mu0[lat.col(-s_lv)] = 0.5
    mu0[lat.col(s_lv)] = 0.5
    G = MarkovReward(np.zeros((horizon + 1, lat.n_levels)))
    fs, _ = solve_primal_lp(G, nu_hat, lat, mu0=mu0)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(fs.m > 1e-14, fs.q / np.where(fs.m > 1e-14, fs.m, 1.0), 0.0)
    a[-1, :] = 1.0
    return a, lat


def eta_approximate(xi: TreeKernel, eta: float, nu_hat: DiscreteMeasure,
                    ctx: PathOpsContext) -> TreeKernel:
    """Approximate a kernel by one stopping only after the eta exit.

    Paths run to the first return to the origin or escape to the outer level
    s = ceil(sqrt(eta))/dx after first touching |x| >= eta; returners restart
    the original kernel, escapers run an exact embedding of the target from
    the two-point law at +-s.  The embedded law is preserved exactly.
    """
    if len(nu_hat.levels) == 1 and nu_hat.levels[0] == 0:
        raise InfeasibleError("target is the point mass at the origin",
                              levels=[0])
    dx = ctx.dx
    eta_lv = max(1, int(np.ceil(eta / dx - 1e-12)))
    s_lv = max(eta_lv, int(np.ceil(np.sqrt(eta) / dx - 1e-12)))
    s_val = s_lv * dx
    # convex-order gate via potential functions: u_target >= max(|x|, s)
    for j in range(-s_lv, s_lv + 1):
        x = j * dx
        u_nu = nu_hat.potential(x, dx)
        u_mu = max(abs(x), s_val)
        if u_nu < u_mu - 1e-12:
            raise InfeasibleError(
                f"two-point law at +-{s_val} is not dominated in convex "
                f"order: potential {u_nu:.6f} < {u_mu:.6f} at x={x}",
                levels=[j])

    n = ctx.depth
    P = ctx.n_paths
    vals = ctx.values
    # rho: first touch of |x| >= eta_lv, then first return to 0 or escape to s
    rho = np.full(P, -1, dtype=int)
    state = np.zeros(P, dtype=int)   # level at rho
    for p in range(P):
        lv = np.rint(vals[p] / dx).astype(int)
        touched = False
        for k in range(n + 1):
            if not touched and abs(lv[k]) >= eta_lv:
                touched = True
            if touched and (lv[k] == 0 or abs(lv[k]) >= s_lv):
                rho[p] = k
                state[p] = lv[k]
                break
    if np.any(rho < 0):
        raise SkembedError(
            f"depth {n} does not resolve the return-or-escape time for "
            f"eta={eta}")

    rho_max_escape = int(rho[np.abs(state) >= s_lv].max(initial=0))
    horizon = n - rho_max_escape
    chi_rule, chi_lat = _chi_kernel(nu_hat, s_lv, horizon, ctx)

    node_masses = xi.s
    out = np.zeros((P, n + 1))
    for p in range(P):
        t0 = int(rho[p])
        if state[p] == 0:
            # restart the original kernel at (t0, 0)
            rest = n - t0
            cum = 0.0
            for k in range(rest + 1):
                bits = 0
                for i in range(k):
                    if ctx.steps[p, t0 + i] == 1:
                        bits |= 1 << i
                m = node_masses[(2 ** k - 1) + bits]
                cum += m
                if k + t0 <= n:
                    out[p, k + t0] += m
            if cum < 1.0 - 1e-9:
                raise SkembedError(
                    f"residual depth {rest} cannot restart the kernel")
        else:
            # run the exact embedding rule from (t0, +-s)
            sgn = 1 if state[p] > 0 else -1
            alive = 1.0
            for k in range(t0, n + 1):
                k_rel = k - t0
                lv = int(np.rint(vals[p, k] / dx))
                if k_rel > chi_lat.K:
                    break
                a = chi_rule[k_rel, chi_lat.col(lv)]
                stop = alive * a
                out[p, k] += stop
                alive -= stop
                if alive <= 1e-15:
                    break
            out[p, n] += alive
    kern = TreeKernel.from_path_masses(n, out, dx=ctx.dx)
    kern.validate()
    return kern


@dataclass
class ReplicationReport:
    n0: int
    errors: list               # |det(G) - xi(G)| per payoff
    distortion: float          # W1 between embedded laws
    adaptedness_violations: int
    groups: list               # (tau_eta index, level, #prefixes)


def derandomize(xi: TreeKernel, eta: float, n0: int,
                payoffs: Sequence[PathReward], ctx: PathOpsContext):
    """Deterministic rule replicating a kernel that stops after the eta exit.

    Conditional on the exit time and level, the length-n0 prefixes of a group
    are ordered lexicographically and mapped to equal subintervals of [0, 1];
    each path feeds its subinterval midpoint into the quantile of the
    group-averaged kernel.  Prefix atoms shrink as n0 grows, and the report
    carries the replication error per payoff, the embedded-law distortion,
    and how often the produced rule peeks past the current time (nonzero
    exactly when the kernel stops before n0).
    """
    n = ctx.depth
    if not 0 < n0 <= n:
        raise SkembedError(f"prefix depth {n0} must lie in 1..{n}")
    eb = eta_bound(ctx, eta)
    if int(eb.tau.max()) > n0:
        raise SkembedError(
            f"prefix depth {n0} does not cover the eta exit "
            f"(max index {int(eb.tau.max())})")
    P = ctx.n_paths
    masses = xi.path_masses()
    before = sum(float(masses[p, :eb.tau[p]].sum()) for p in range(P))
    if before > 1e-9:
        raise SkembedError(
            f"kernel stops mass {before:.3e} before the eta exit")

    vals = ctx.values
    # group paths by (exit index, exit level); order n0-prefixes lex inside
    groups = {}
    for p in range(P):
        k0 = int(eb.tau[p])
        key = (k0, int(np.rint(vals[p, k0] / ctx.dx)))
        groups.setdefault(key, set()).add(p & ((1 << n0) - 1))
    prefix_interval = {}
    group_info = []
    for key in sorted(groups):
        pref = sorted(groups[key])
        width = 1.0 / len(pref)
        for i, b in enumerate(pref):
            prefix_interval[(key, b)] = (i + 0.5) * width
        group_info.append((key[0], key[1], len(pref)))

    # group-averaged kernel: for each (group, continuation) average the
    # kernel over the tau_eta-prefixes of the group
    tau_pref = {}
    for p in range(P):
        k0 = int(eb.tau[p])
        key = (k0, int(np.rint(vals[p, k0] / ctx.dx)))
        tau_pref.setdefault(key, set()).add(p & ((1 << k0) - 1))

    stop_index = np.zeros(P, dtype=int)
    det = np.zeros((P, n + 1))
    for p in range(P):
        k0 = int(eb.tau[p])
        key = (k0, int(np.rint(vals[p, k0] / ctx.dx)))
        u = prefix_interval[(key, p & ((1 << n0) - 1))]
        rest_bits = p >> k0
        cdf = np.zeros(n + 1)
        for g_bits in tau_pref[key]:
            q = g_bits | (rest_bits << k0)
            cdf += masses[q]
        cdf = np.cumsum(cdf) / len(tau_pref[key])
        k_stop = int(np.argmax(cdf >= u - 1e-12))
        stop_index[p] = k_stop
        det[p, k_stop] = 1.0

    # adaptedness audit: decisions at index k must not depend on steps > k
    violations = 0
    for k in range(n):
        seen = {}
        for p in range(P):
            pref = p & ((1 << k) - 1)
            dec = stop_index[p] == k
            if pref in seen:
                if seen[pref] != dec:
                    violations += 1
                    seen[pref] = seen[pref] or dec
            else:
                seen[pref] = dec

    w = ctx.weight
    errors = []
    for G in payoffs:
        v_xi = xi.expectation(G)
        v_det = 0.0
        for p in range(P):
            k = int(stop_index[p])
            v_det += w * G(tuple(int(s) for s in ctx.steps[p, :k]), k)
        errors.append(abs(v_det - v_xi))

    lv_det = {}
    for p in range(P):
        lv = int(np.rint(vals[p, stop_index[p]] / ctx.dx))
        lv_det[lv] = lv_det.get(lv, 0.0) + w
    emb_xi = xi.embedded_measure()
    det_levels = np.array(sorted(lv_det))
    det_masses = np.array([lv_det[j] for j in det_levels])
    distortion = w1_distance(det_levels * ctx.dx, det_masses,
                             emb_xi.levels * ctx.dx, emb_xi.masses)
    report = ReplicationReport(n0=n0, errors=errors, distortion=distortion,
                               adaptedness_violations=violations,
                               groups=group_info)
    return stop_index, report
