"""Command-line entry point.

Subcommands: solve-primal, solve-dual, gap-report, cave, derandomize,
verify-embedding, counterexample-slm.  Each reads a JSON config, writes its
CSV/JSON artifacts plus a manifest into the output directory, and exits 0 on
success, 2 when a verdict fails, 1 on configuration or solver errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cave import check_variational, extract_barrier, sufficiency_surface
from .diagnostics import (SimConfig, pathwise_exponential_bound,
                          strict_local_martingale_probe, verify_embedding)
from .dual import certify, dual_descent, dual_from_lp, extract_gamma
from .errors import SkembedError
from .lattice import (DiscreteMeasure, Lattice, build_lattice,
                      quantize_measure, read_measure_csv)
from .primal import TreeKernel, solve_primal_lp, tree_node_id, tree_num_nodes
from .randomize import PathOpsContext, derandomize
from .reward import (PathReward, concave_increasing, exp_cave, quad_exp_cave,
                     tabulate, validate_cave, wald_time_reward)
from . import reports

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERDICT = 2


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SkembedError(
            f"config parse error at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}")


def build_problem(cfg):
    prob = cfg["problem"]
    lat = build_lattice(prob["x_min"], prob["x_max"], prob["dx"],
                        prob.get("eps_residual", 1e-6))
    if "horizon" in prob:
        lat = Lattice(dx=lat.dx, j_min=lat.j_min, j_max=lat.j_max,
                      K=int(prob["horizon"]))
    nu_spec = prob["nu"]
    if "csv" in nu_spec:
        nu = quantize_measure(read_measure_csv(nu_spec["csv"]), lat)
    elif "atoms" in nu_spec:
        nu = quantize_measure(nu_spec["atoms"], lat)
    elif "levels" in nu_spec:
        nu = DiscreteMeasure(
            np.array([int(j) for j, _ in nu_spec["levels"]]),
            np.array([float(p) for _, p in nu_spec["levels"]]))
    else:
        raise SkembedError("problem.nu needs 'csv', 'atoms', or 'levels'")
    return lat, nu


def build_reward(cfg, lat):
    rw = cfg["reward"]
    form = rw.get("form", "time")
    t_p = float(rw.get("t_p", 0.0))
    if form == "time":
        return wald_time_reward(lat), None
    if form == "exp-cave":
        g, dplus = exp_cave(t_p)
    elif form == "quad-cave":
        g, dplus = quad_exp_cave(t_p)
    elif form == "concave":
        g, dplus = concave_increasing(rw.get("rate", 1.0))
        t_p = 0.0
    elif form == "poly":
        coeffs = list(rw["coeffs"])
        g = lambda t: float(np.polyval(coeffs, t))
        dplus = None
    elif form == "table":
        tab = np.asarray(read_measure_csv(rw["csv"]), dtype=float)
        g = tab
        dplus = None
    else:
        raise SkembedError(f"unknown reward form {form!r}")
    cave = validate_cave(g, t_p, lat.times, dplus_g=dplus)
    return tabulate(cave, lat), cave


def cmd_solve_primal(cfg, out, seed, tol):
    lat, nu = build_problem(cfg)
    G, _ = build_reward(cfg, lat)
    fs, duals = solve_primal_lp(G, nu, lat)
    reports.write_flow(out, fs)
    reports.write_lp_duals(out, duals, lat)
    reports.write_json(Path(out) / "summary.json", {
        "value": fs.value, "mean_time": fs.mean_time,
        "embedded": [[int(j), p] for j, p in
                     zip(fs.embedded.levels, fs.embedded.masses)],
        "levels": lat.n_levels, "horizon": lat.K,
    })
    return EXIT_OK


def cmd_solve_dual(cfg, out, seed, tol):
    lat, nu = build_problem(cfg)
    G, _ = build_reward(cfg, lat)
    sol = cfg.get("solver", {})
    res = dual_descent(G, nu, lat,
                       iters=int(sol.get("iters", 50_000)),
                       step_schedule=sol.get("step_schedule", "sqrt"))
    reports.write_dual_pair(out, res.dual, lat)
    reports.write_json(Path(out) / "descent.json", {
        "best_value": res.best_value, "iterations": res.iterations,
        "gap_vs_feasible": res.gap, "schedule": res.schedule,
        "trajectory_head": list(res.trajectory[:50]),
        "trajectory_tail": list(res.trajectory[-50:]),
    })
    return EXIT_OK


def cmd_gap_report(cfg, out, seed, tol):
    lat, nu = build_problem(cfg)
    G, _ = build_reward(cfg, lat)
    sol = cfg.get("solver", {})
    fs, duals = solve_primal_lp(G, nu, lat)
    res = dual_descent(G, nu, lat,
                       iters=int(sol.get("iters", 50_000)),
                       step_schedule=sol.get("step_schedule", "polyak"),
                       target=fs.value,
                       target_tol=tol * max(1.0, abs(fs.value)))
    dp = dual_from_lp(duals, G, lat, nu)
    cert = certify(dp, fs, G, tol=1e-9)
    gap = res.best_value - fs.value
    report = {
        "primal_value": fs.value,
        "dual_value": res.best_value,
        "gap": gap,
        "lp_dual_pair_value": dp.value_dual,
        "certify_residual_contact": cert.residual_contact,
        "certify_residual_martingale": cert.residual_martingale,
        "iterations": res.iterations,
        "tolerance": tol * max(1.0, abs(fs.value)),
    }
    reports.write_json(Path(out) / "gap.json", report)
    ok = abs(gap) <= tol * max(1.0, abs(fs.value)) and cert.optimal
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_cave(cfg, out, seed, tol):
    lat, nu = build_problem(cfg)
    G, cave = build_reward(cfg, lat)
    if cave is None:
        raise SkembedError("the cave subcommand needs a convex-concave "
                           "time reward")
    fs, duals = solve_primal_lp(G, nu, lat)
    bar, split = extract_barrier(fs, cave, lat)
    reports.write_flow(out, fs)
    reports.write_barrier(out, bar, lat)
    check_tol = tol + cave.lipschitz * lat.dx
    rep = check_variational(bar, split, cave, lat, check_tol)
    payload = reports.variational_report_dict(rep)
    try:
        H, gamma_x, verd = sufficiency_surface(bar, split, cave, lat,
                                               check_tol)
        payload["surface"] = {
            "dominates": verd.dominates,
            "left_contact": verd.left_contact,
            "right_contact": verd.right_contact,
            "max_violation": verd.max_violation,
        }
        surface_ok = True
    except SkembedError as exc:
        payload["surface"] = {"error": str(exc)}
        surface_ok = False
    reports.write_json(Path(out) / "verdicts.json", payload)
    return EXIT_OK if (rep.passed and surface_ok) else EXIT_VERDICT


def _tree_kernel_from_config(tree_cfg) -> TreeKernel:
    depth = int(tree_cfg["depth"])
    spec = tree_cfg.get("kernel", {"form": "fixed-times",
                                   "times": [depth], "masses": [1.0]})
    if spec.get("form", "fixed-times") != "fixed-times":
        raise SkembedError("only fixed-times tree kernels are configurable")
    s = np.zeros(tree_num_nodes(depth))
    for t, p in zip(spec["times"], spec["masses"]):
        for bits in range(2 ** int(t)):
            s[tree_node_id(int(t), bits)] = float(p)
    return TreeKernel(depth=depth, s=s,
                      dx=float(tree_cfg.get("dx", 1.0)))


def cmd_derandomize(cfg, out, seed, tol):
    tree_cfg = cfg["tree"]
    ctx = PathOpsContext(depth=int(tree_cfg["depth"]),
                         dx=float(tree_cfg.get("dx", 1.0)))
    xi = _tree_kernel_from_config(tree_cfg)
    payoffs = [PathReward(lambda steps, k: float(k)),
               PathReward(lambda steps, k: float(np.exp(-k)))]
    eta = float(tree_cfg.get("eta", 1.0))
    results = []
    for n0 in tree_cfg.get("n0", [2, 4, 6]):
        stops, rep = derandomize(xi, eta, int(n0), payoffs, ctx)
        results.append({
            "n0": rep.n0, "errors": rep.errors,
            "distortion": rep.distortion,
            "adaptedness_violations": rep.adaptedness_violations,
            "groups": [list(g) for g in rep.groups],
        })
    reports.write_kernel(out, xi)
    reports.write_json(Path(out) / "replication.json", {"runs": results})
    return EXIT_OK


def cmd_verify_embedding(cfg, out, seed, tol):
    lat, nu = build_problem(cfg)
    G, _ = build_reward(cfg, lat)
    sim = cfg.get("simulation", {})
    cfg_sim = SimConfig(
        n_paths=int(sim.get("n_paths", 100_000)),
        dt_sim=float(sim.get("dt_sim", 1e-3)),
        seed=int(seed if seed is not None else sim.get("seed", 0)),
        cap_R=float(sim.get("cap_R", 10.0)),
        confidence=float(sim.get("confidence", 0.95)))
    fs, duals = solve_primal_lp(G, nu, lat)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(fs.m > 1e-12, fs.q / np.where(fs.m > 1e-12, fs.m, 1.0),
                     1.0)
    from .primal import StoppingRule
    rule = StoppingRule(np.clip(a, 0.0, 1.0), lat)
    rep = verify_embedding(rule, nu, lat, cfg_sim)
    reports.write_json(Path(out) / "embedding.json", {
        "estimate": rep.estimate, "half_width": rep.half_width,
        "exact_distance": rep.extras["exact_distance"],
        "passed": rep.extras["passed"], "n_paths": rep.n_effective,
        "seed": rep.seed,
    })
    return EXIT_OK if rep.extras["passed"] else EXIT_VERDICT


def cmd_counterexample_slm(cfg, out, seed, tol):
    sim = cfg.get("simulation", {})
    cfg_sim = SimConfig(
        n_paths=int(sim.get("n_paths", 100_000)),
        dt_sim=float(sim.get("dt_sim", 1e-3)),
        seed=int(seed if seed is not None else sim.get("seed", 0)),
        cap_R=float(sim.get("cap_R", 10.0)),
        confidence=float(sim.get("confidence", 0.99)))
    t_end = float(sim.get("t_end", 1.0))
    probe = strict_local_martingale_probe(t_end, cfg_sim)
    bound = pathwise_exponential_bound(
        t_end, SimConfig(n_paths=min(cfg_sim.n_paths, 10_000),
                         dt_sim=cfg_sim.dt_sim, seed=cfg_sim.seed,
                         cap_R=cfg_sim.cap_R,
                         confidence=cfg_sim.confidence))
    strictly_below_one = probe.interval[1] < 1.0
    reports.write_json(Path(out) / "slm.json", {
        "t_end": t_end,
        "estimate": probe.estimate,
        "ci": list(probe.interval),
        "confidence": probe.confidence,
        "cap_sensitivity": probe.extras["cap_sensitivity"],
        "strictly_below_one": strictly_below_one,
        "pathwise_bound_passed": bound.extras["passed"],
    })
    ok = strictly_below_one and bound.extras["passed"]
    return EXIT_OK if ok else EXIT_VERDICT


COMMANDS = {
    "solve-primal": cmd_solve_primal,
    "solve-dual": cmd_solve_dual,
    "gap-report": cmd_gap_report,
    "cave": cmd_cave,
    "derandomize": cmd_derandomize,
    "verify-embedding": cmd_verify_embedding,
    "counterexample-slm": cmd_counterexample_slm,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="skembed",
        description="Lattice solvers for optimal Skorokhod embedding")
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed override")
    parser.add_argument("--tol", type=float, default=1e-3,
                        help="verdict tolerance")
    parser.add_argument("--version", action="version", version=__version__)
    args = parser.parse_args(argv)

    threads = os.environ.get("SKEMBED_NUM_THREADS")
    if threads:
        try:
            import numba
            numba.set_num_threads(max(1, int(threads)))
        except (ImportError, ValueError):
            pass

    try:
        cfg = load_config(args.config)
        out = args.out or cfg.get("output", {}).get("dir", "skembed-out")
        Path(out).mkdir(parents=True, exist_ok=True)
        seed = args.seed
        if seed is None:
            seed = cfg.get("solver", {}).get("seed",
                                             cfg.get("simulation", {}).get(
                                                 "seed", 0))
        code = COMMANDS[args.subcommand](cfg, out, seed, args.tol)
        reports.write_manifest(out, args.subcommand, cfg, seed)
        return code
    except SkembedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (KeyError, ValueError, OSError) as exc:
        print(f"config error: {exc!r}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
