"""Lattice solvers for the optimal Skorokhod embedding problem.

Unit mass starts a +-dx random walk at the origin; randomized stopping rules
that land a prescribed centered law are exactly the feasible points of a
sparse flow LP.  The package solves that LP with its own revised simplex,
runs the Snell-envelope dual with subgradient descent, certifies optimality
through contact sets and martingale pricing, extracts and verifies cave-type
stopping barriers, studies randomization on small binary trees, and checks
everything by Monte Carlo where closed forms run out.
"""

__version__ = "0.1.0"

from .cave import (CaveBarrier, SplitMeasure, check_variational, compute_h,
                   extract_barrier, perturb_right_barrier,
                   sufficiency_surface)
from .diagnostics import (MCReport, SimConfig, pathwise_exponential_bound,
                          strict_local_martingale_probe, verify_embedding)
from .dual import (CertifyReport, ContactSet, DescentResult, DualPair,
                   certify, convex_envelope, dual_descent, dual_from_lp,
                   dual_value, extract_gamma, snell)
from .errors import (BarrierError, CaveShapeError, DivergenceError,
                     InfeasibleError, LatticeError, QuantizeError,
                     RewardError, SkembedError, SurfaceError, UnboundedError)
from .lattice import (DiscreteMeasure, Lattice, TreePath, build_lattice,
                      exit_residual, quantize_measure, read_measure_csv,
                      w1_distance)
from .primal import (FlowSolution, LPDuals, StoppingRule, TreeKernel,
                     brute_force_tree, evaluate_rule, feasible_flow,
                     solve_primal_lp)
from .randomize import (EtaBound, PathOpsContext, ReplicationReport,
                        derandomize, eta_approximate, eta_bound, glue,
                        quantile_time, shift_time)
from .reward import (CaveReward, MarkovReward, PathReward,
                     concave_increasing, exp_cave, quad_exp_cave, tabulate,
                     validate_cave, wald_time_reward)
