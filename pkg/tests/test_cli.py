"""CLI subcommands: artifacts, exit codes, and byte-level reproducibility."""

import json
from pathlib import Path

import numpy as np
import pytest

from skembed.cli import main

WALD_CFG = {
    "problem": {
        "nu": {"levels": [[-2, 0.25], [0, 0.5], [2, 0.25]]},
        "x_min": -2.0, "x_max": 2.0, "dx": 1.0, "eps_residual": 1e-6,
    },
    "reward": {"form": "time"},
    "solver": {"iters": 20000, "step_schedule": "polyak", "seed": 0},
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def read_artifacts(out_dir):
    out = {}
    for p in sorted(Path(out_dir).glob("*")):
        if p.name == "manifest.json":
            data = json.loads(p.read_text())
            data.pop("timestamp")
            out[p.name] = json.dumps(data, sort_keys=True)
        else:
            out[p.name] = p.read_bytes()
    return out


class TestSubcommands:
    def test_solve_primal_writes_artifacts(self, tmp_path):
        cfg = write_cfg(tmp_path, WALD_CFG)
        out = tmp_path / "out"
        assert main(["solve-primal", "--config", str(cfg),
                     "--out", str(out)]) == 0
        for name in ("flow.csv", "duals_flow.csv", "duals_psi.csv",
                     "summary.json", "manifest.json"):
            assert (out / name).exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["value"] == pytest.approx(2.0, abs=1e-9)

    def test_gap_report_exit_zero_on_wald(self, tmp_path):
        cfg = write_cfg(tmp_path, WALD_CFG)
        out = tmp_path / "out"
        assert main(["gap-report", "--config", str(cfg),
                     "--out", str(out)]) == 0
        gap = json.loads((out / "gap.json").read_text())
        assert gap["primal_value"] == pytest.approx(2.0, abs=1e-9)
        assert abs(gap["gap"]) <= 2e-3

    def test_infeasible_problem_exits_one(self, tmp_path, capsys):
        bad = {
            "problem": {
                "nu": {"levels": [[-2, 0.5], [2, 0.5]]},
                "x_min": -2.0, "x_max": 2.0, "dx": 1.0,
                "eps_residual": 1e-4,
            },
            "reward": {"form": "time"},
        }
        cfg = write_cfg(tmp_path, bad)
        assert main(["solve-primal", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 1

    def test_config_parse_error_exits_one(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        assert main(["solve-primal", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 1

    def test_mass_outside_grid_exits_one(self, tmp_path):
        bad = dict(WALD_CFG)
        bad["problem"] = {
            "nu": {"atoms": [[-3.0, 0.5], [3.0, 0.5]]},
            "x_min": -2.0, "x_max": 2.0, "dx": 1.0, "eps_residual": 1e-4,
        }
        cfg = write_cfg(tmp_path, bad)
        assert main(["solve-primal", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 1

    def test_derandomize_artifacts(self, tmp_path):
        cfg = write_cfg(tmp_path, {
            "tree": {"depth": 8, "eta": 1.0, "n0": [2, 4],
                     "kernel": {"form": "fixed-times", "times": [5, 7],
                                "masses": [0.25, 0.75]}},
        })
        out = tmp_path / "out"
        assert main(["derandomize", "--config", str(cfg),
                     "--out", str(out)]) == 0
        rep = json.loads((out / "replication.json").read_text())
        assert len(rep["runs"]) == 2
        assert (out / "kernel.csv").exists()


class TestReproducibility:
    def test_identical_runs_identical_bytes(self, tmp_path):
        cfg = write_cfg(tmp_path, WALD_CFG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["solve-primal", "--config", str(cfg),
                     "--out", str(out1), "--seed", "3"]) == 0
        assert main(["solve-primal", "--config", str(cfg),
                     "--out", str(out2), "--seed", "3"]) == 0
        a, b = read_artifacts(out1), read_artifacts(out2)
        assert a.keys() == b.keys()
        for name in a:
            assert a[name] == b[name], f"artifact {name} differs"

    def test_dual_descent_reproducible(self, tmp_path):
        cfg = write_cfg(tmp_path, {**WALD_CFG,
                                   "solver": {"iters": 500,
                                              "step_schedule": "sqrt",
                                              "seed": 1}})
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["solve-dual", "--config", str(cfg),
                     "--out", str(out1)]) == 0
        assert main(["solve-dual", "--config", str(cfg),
                     "--out", str(out2)]) == 0
        a, b = read_artifacts(out1), read_artifacts(out2)
        for name in a:
            assert a[name] == b[name], f"artifact {name} differs"
