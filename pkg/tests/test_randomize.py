"""Path algebra, eta-bounded approximation, and de-randomization on trees."""

import numpy as np
import pytest

from skembed.errors import InfeasibleError, SkembedError
from skembed.lattice import DiscreteMeasure, TreePath
from skembed.primal import TreeKernel, tree_node_id, tree_num_nodes
from skembed.randomize import (PathOpsContext, derandomize, eta_approximate,
                               eta_bound, glue, quantile_time, shift_time)
from skembed.reward import PathReward


def delta_kernel(depth, k_stop, dx=1.0):
    """Stop everything at a fixed index."""
    s = np.zeros(tree_num_nodes(depth))
    for bits in range(2 ** k_stop):
        s[tree_node_id(k_stop, bits)] = 1.0
    return TreeKernel(depth=depth, s=s, dx=dx)


def mixture_of_times(depth, times, probs, dx=1.0):
    """Path-independent kernel stopping at fixed indices with given masses."""
    s = np.zeros(tree_num_nodes(depth))
    for t, p in zip(times, probs):
        for bits in range(2 ** t):
            s[tree_node_id(t, bits)] = p
    return TreeKernel(depth=depth, s=s, dx=dx)


def coin_of_rules(ctx, tau1, tau2, p1=0.5):
    """Randomized mixture of two deterministic stopping rules."""
    P = ctx.n_paths
    masses = np.zeros((P, ctx.depth + 1))
    for p in range(P):
        masses[p, tau1[p]] += p1
        masses[p, tau2[p]] += 1.0 - p1
    return TreeKernel.from_path_masses(ctx.depth, masses, dx=ctx.dx)


def capped_exit(ctx, width, floor):
    """max(first exit of [-width, width], floor) as per-path indices."""
    P = ctx.n_paths
    out = np.zeros(P, dtype=int)
    for p in range(P):
        lv = np.rint(ctx.values[p] / ctx.dx).astype(int)
        hit = np.flatnonzero(np.abs(lv) >= width)
        t = hit[0] if hit.size else ctx.depth
        out[p] = min(max(int(t), floor), ctx.depth)
    return out


class TestGlue:
    def test_freeze_after_t(self):
        w = TreePath((1, -1, 1))
        frozen = glue(w, TreePath(()), 2)
        assert frozen.steps == (1, -1)

    def test_identity_glue_at_zero(self):
        w2 = TreePath((-1, -1))
        assert glue(TreePath(()), w2, 0).steps == (-1, -1)

    def test_concatenation(self):
        assert glue(TreePath((1, 1)), TreePath((-1,)), 2).steps == (1, 1, -1)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            glue(TreePath((1,)), TreePath(()), 5)


class TestShift:
    def test_shift_by_zero_keeps_late_kernels(self):
        ctx = PathOpsContext(depth=4)
        xi = delta_kernel(4, 2)
        out = shift_time(xi, np.zeros(ctx.n_paths, dtype=int), ctx)
        np.testing.assert_allclose(out.path_masses(), xi.path_masses(),
                                   atol=1e-12)

    def test_stop_at_once_lands_one_past_tau(self):
        # mass at relative index 0 lands at tau + 1 (strict inequality)
        ctx = PathOpsContext(depth=4)
        xi = delta_kernel(4, 0)
        tau = np.full(ctx.n_paths, 2, dtype=int)
        out = shift_time(xi, tau, ctx)
        pm = out.path_masses()
        assert np.all(pm[:, 3] == 1.0)

    def test_residual_depth_guard(self):
        ctx = PathOpsContext(depth=3)
        xi = delta_kernel(3, 3)
        with pytest.raises(SkembedError, match="residual"):
            shift_time(xi, np.full(ctx.n_paths, 2, dtype=int), ctx)

    def test_total_mass_preserved(self):
        ctx = PathOpsContext(depth=5)
        rng = np.random.default_rng(3)
        # random adapted kernel via conditional probabilities
        s = np.zeros(tree_num_nodes(3))
        rem = {0: 1.0}
        for k in range(3):
            for bits in range(2 ** k):
                u = tree_node_id(k, bits)
                r = rem[u]
                take = r * rng.uniform(0.2, 0.5)
                s[u] = take
                for child in (tree_node_id(k + 1, bits),
                              tree_node_id(k + 1, bits | (1 << k))):
                    rem[child] = r - take
        for bits in range(2 ** 3):
            s[tree_node_id(3, bits)] = rem[tree_node_id(3, bits)]
        xi_small = TreeKernel(depth=3, s=s)
        # embed the depth-3 kernel in the depth-5 tree
        s5 = np.zeros(tree_num_nodes(5))
        for k in range(4):
            for bits in range(2 ** k):
                s5[tree_node_id(k, bits)] = xi_small.s[tree_node_id(k, bits)]
        xi5 = TreeKernel(depth=5, s=s5)
        tau = capped_exit(ctx, 1, 1)  # first exit of |x| >= 1 (index 1)
        out = shift_time(xi5, tau, ctx)
        out.validate()


class TestQuantile:
    def test_point_mass(self):
        xi = delta_kernel(4, 2)
        for u in (1e-9, 0.3, 1.0):
            assert quantile_time(xi, u, 5) == 2

    def test_uniform_two_point(self):
        xi = mixture_of_times(4, [0, 1], [0.5, 0.5])
        assert quantile_time(xi, 0.25, 0) == 0
        assert quantile_time(xi, 0.5, 0) == 0
        assert quantile_time(xi, 0.75, 0) == 1

    def test_pushforward_recovers_kernel(self):
        rng = np.random.default_rng(0)
        depth = 4
        xi = mixture_of_times(depth, [1, 2, 4], [0.25, 0.35, 0.4])
        grid = (np.arange(2000) + 0.5) / 2000
        for bits in (0, 7, 11):
            ks = np.array([quantile_time(xi, u, bits) for u in grid])
            pm = xi.path_masses()[bits]
            for k in range(depth + 1):
                assert np.mean(ks == k) == pytest.approx(pm[k], abs=1e-3)


class TestEtaBound:
    def test_tau_is_stopping_time(self):
        ctx = PathOpsContext(depth=6)
        eb = eta_bound(ctx, 1.0)
        assert np.all(eb.tau == 1)   # |(dt, +-dx)| = sqrt(2) >= 1
        assert eb.is_stopping_time(ctx)

    def test_larger_eta_two_step(self):
        ctx = PathOpsContext(depth=6)
        eb = eta_bound(ctx, 1.9)
        assert np.all(eb.tau == 2)
        assert eb.is_stopping_time(ctx)


class TestEtaApproximate:
    def test_two_point_target_exact(self):
        ctx = PathOpsContext(depth=6)
        nu = DiscreteMeasure(np.array([-1, 1]), np.array([0.5, 0.5]))
        xi = delta_kernel(6, 6)  # stop at the horizon; to be approximated
        out = eta_approximate(xi, 1.0, nu, ctx)
        assert out.embedded_measure().w1(nu, 1.0) <= 1e-12
        # no stopping strictly before the eta exit
        eb = eta_bound(ctx, 1.0)
        pm = out.path_masses()
        for p in range(ctx.n_paths):
            assert pm[p, :eb.tau[p]].sum() == pytest.approx(0.0, abs=1e-12)

    def test_rejects_origin_target(self):
        ctx = PathOpsContext(depth=4)
        with pytest.raises(InfeasibleError):
            eta_approximate(delta_kernel(4, 4), 1.0,
                            DiscreteMeasure(np.array([0]), np.array([1.0])),
                            ctx)

    def test_rejects_undominated_two_point_law(self):
        # target too tight around the origin for the escape level
        ctx = PathOpsContext(depth=8)
        nu = DiscreteMeasure(np.array([-1, 0, 1]),
                             np.array([0.05, 0.9, 0.05]))
        with pytest.raises(InfeasibleError, match="convex"):
            eta_approximate(delta_kernel(8, 8), 4.0, nu, ctx)

    def test_embedded_law_exact_in_both_resolvable_classes(self):
        # on the +-dx tree there are exactly two exactly-resolvable eta
        # classes (escape level equal to or one above the touch level); the
        # approximation preserves the embedded law exactly in both
        ctx = PathOpsContext(depth=10, dx=0.5)
        xi = mixture_of_times(10, [8], [1.0], dx=0.5)
        nu = xi.embedded_measure()
        eb_by_eta = {}
        for eta in (0.25, 0.5):
            out = eta_approximate(xi, eta, nu, ctx)
            assert out.embedded_measure().w1(nu, ctx.dx) <= 1e-12
            eb_by_eta[eta] = out
        # the coarser class restarts nothing; the finer one restarts the
        # input kernel on the return-to-origin branch
        pm_fine = eb_by_eta[0.5].path_masses()
        assert pm_fine[:, 8].max() > 0  # restarted kernel mass at index 8

    def test_unresolvable_eta_rejected(self):
        ctx = PathOpsContext(depth=8)
        nu = DiscreteMeasure(np.array([-3, 3]), np.array([0.5, 0.5]))
        with pytest.raises(SkembedError, match="resolve"):
            eta_approximate(delta_kernel(8, 8), 2.5, nu, ctx)


class TestDerandomize:
    def test_deterministic_kernel_replicates_exactly(self):
        ctx = PathOpsContext(depth=8)
        tau = capped_exit(ctx, 2, 5)
        xi = coin_of_rules(ctx, tau, tau, p1=1.0)
        payoffs = [PathReward(lambda steps, k: float(k))]
        stops, rep = derandomize(xi, 1.0, 4, payoffs, ctx)
        np.testing.assert_array_equal(stops, tau)
        assert rep.errors[0] == pytest.approx(0.0, abs=1e-12)
        assert rep.distortion == pytest.approx(0.0, abs=1e-12)
        assert rep.adaptedness_violations == 0

    def test_unfair_coin_errors_shrink_with_prefix_depth(self):
        ctx = PathOpsContext(depth=10)
        xi = mixture_of_times(10, [7, 9], [1.0 / 3.0, 2.0 / 3.0])
        payoffs = [
            PathReward(lambda steps, k: float(k)),
            PathReward(lambda steps, k: float(k) ** 2),
            PathReward(lambda steps, k: float(np.exp(-k))),
            PathReward(lambda steps, k: 1.0 if k == 7 else 0.0),
            PathReward(lambda steps, k: min(float(k), 8.0)),
        ]
        errs = []
        for n0 in (2, 4, 6):
            stops, rep = derandomize(xi, 1.0, n0, payoffs, ctx)
            assert rep.adaptedness_violations == 0
            errs.append(rep.errors)
        errs = np.array(errs)
        assert np.all(errs[1] < errs[0])
        assert np.all(errs[2] < errs[1])

    def test_kernel_stopping_early_counts_violations(self):
        ctx = PathOpsContext(depth=6)
        xi = mixture_of_times(6, [2, 5], [0.5, 0.5])
        stops, rep = derandomize(xi, 1.0, 4, [PathReward(lambda s, k: 1.0)],
                                 ctx)
        assert rep.adaptedness_violations > 0

    def test_prefix_depth_must_cover_eta_exit(self):
        ctx = PathOpsContext(depth=6)
        xi = delta_kernel(6, 5)
        with pytest.raises(SkembedError, match="cover"):
            derandomize(xi, 2.5, 1, [PathReward(lambda s, k: 1.0)], ctx)
