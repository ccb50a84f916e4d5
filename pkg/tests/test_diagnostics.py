"""Monte Carlo embedding checks and the explosion probe."""

import numpy as np
import pytest

from skembed.diagnostics import (MCReport, SimConfig,
                                 pathwise_exponential_bound,
                                 simulate_stopped_levels,
                                 strict_local_martingale_probe,
                                 verify_embedding)
from skembed.lattice import DiscreteMeasure, build_lattice
from skembed.primal import StoppingRule

LAT = build_lattice(-1.0, 1.0, 1.0, 0.5)
NU_EXIT = DiscreteMeasure(np.array([-1, 1]), np.array([0.5, 0.5]))


class TestVerifyEmbedding:
    def test_exit_rule_passes(self):
        cfg = SimConfig(n_paths=20_000, seed=11)
        rep = verify_embedding(StoppingRule.never_stop_interior(LAT),
                               NU_EXIT, LAT, cfg)
        assert rep.extras["exact_distance"] == 0.0
        assert rep.extras["passed"]
        assert rep.estimate <= 0.02

    def test_estimate_shrinks_with_more_paths(self):
        ests = []
        for n in (2_000, 32_000):
            cfg = SimConfig(n_paths=n, seed=5)
            rep = verify_embedding(StoppingRule.never_stop_interior(LAT),
                                   NU_EXIT, LAT, cfg)
            ests.append(rep.estimate)
        assert ests[1] < ests[0] * 0.6  # roughly n^(-1/2)

    def test_wrong_target_detected(self):
        # exit rule embeds the fair two-point law, not this skewed one
        lat = build_lattice(-2.0, 2.0, 1.0, 1e-4)
        nu_wrong = DiscreteMeasure(np.array([-2, 0, 2]),
                                   np.array([0.25, 0.5, 0.25]))
        cfg = SimConfig(n_paths=30_000, seed=3)
        rep = verify_embedding(StoppingRule.never_stop_interior(lat),
                               nu_wrong, lat, cfg)
        exact = rep.extras["exact_distance"]
        assert exact > 0.05
        # the Monte Carlo estimate agrees with the exact flow distance
        assert abs(rep.estimate - exact) <= rep.half_width
        assert rep.extras["passed"]

    def test_deterministic_under_fixed_seed(self):
        cfg = SimConfig(n_paths=5_000, seed=7)
        r1 = verify_embedding(StoppingRule.never_stop_interior(LAT),
                              NU_EXIT, LAT, cfg)
        r2 = verify_embedding(StoppingRule.never_stop_interior(LAT),
                              NU_EXIT, LAT, cfg)
        assert r1.estimate == r2.estimate
        assert r1.half_width == r2.half_width

    def test_ci_coverage_meta(self):
        # the band covers the exact distance in at least 90% of replications
        lat = LAT
        hits = 0
        n_rep = 40
        for seed in range(n_rep):
            cfg = SimConfig(n_paths=2_000, seed=seed, confidence=0.95)
            rep = verify_embedding(StoppingRule.never_stop_interior(lat),
                                   NU_EXIT, lat, cfg, n_boot=60, n_null=60)
            hits += rep.extras["passed"]
        assert hits >= 0.9 * n_rep


class TestSimulator:
    def test_one_step_exit_levels(self):
        rng = np.random.default_rng(0)
        out = simulate_stopped_levels(StoppingRule.never_stop_interior(LAT),
                                      LAT, 4_000, rng)
        assert set(np.unique(out)) == {-1, 1}
        assert abs(np.mean(out == 1) - 0.5) < 0.05


class TestExplosionProbe:
    def test_short_horizon_estimate_near_one(self):
        cfg = SimConfig(n_paths=4_000, dt_sim=1e-3, seed=1, cap_R=10.0,
                        confidence=0.99)
        rep = strict_local_martingale_probe(1e-4, cfg)
        assert rep.interval[1] >= 0.999

    def test_unit_time_strictly_below_one(self):
        cfg = SimConfig(n_paths=20_000, dt_sim=1e-3, seed=2, cap_R=10.0,
                        confidence=0.99)
        rep = strict_local_martingale_probe(1.0, cfg)
        assert rep.interval[1] < 1.0
        assert rep.extras["cap_sensitivity"] <= 2 * rep.half_width + 1e-3

    def test_seed_stability(self):
        cfg = SimConfig(n_paths=3_000, dt_sim=2e-3, seed=9, cap_R=10.0)
        a = strict_local_martingale_probe(0.5, cfg)
        b = strict_local_martingale_probe(0.5, cfg)
        assert a.estimate == b.estimate

    def test_cap_guard(self):
        with pytest.raises(ValueError, match="cap"):
            strict_local_martingale_probe(
                1.0, SimConfig(n_paths=10, cap_R=2.0))


def test_pathwise_bound_holds():
    cfg = SimConfig(n_paths=10_000, seed=4)
    rep = pathwise_exponential_bound(1.0, cfg)
    assert rep.extras["passed"]
    assert rep.extras["max_log_excess"] <= 1e-12
