"""Deterministic CSV/JSON artifact emission shared by the CLI and tests.

Numeric artifacts are byte-stable under a fixed config and seed: floats are
written with shortest round-trip formatting, JSON keys are sorted, and the
only timestamp lives in the manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def config_hash(config: dict) -> str:
    canon = json.dumps(_clean(config), sort_keys=True,
                       separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(out_dir, subcommand, config, seed):
    import scipy

    from . import __version__
    return write_json(Path(out_dir) / "manifest.json", {
        "subcommand": subcommand,
        "config_sha256": config_hash(config),
        "seed": seed,
        "versions": {"skembed": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    })


def flow_rows(fs):
    for k, j, m, q in fs.rows():
        yield (k, j, m, q)


def write_flow(out_dir, fs):
    return write_csv(Path(out_dir) / "flow.csv", ["k", "j", "m", "q"],
                     flow_rows(fs))


def write_lp_duals(out_dir, duals, lat):
    rows = []
    for k in range(lat.K + 1):
        for c in range(lat.n_levels):
            v = duals.flow[k, c]
            if not np.isnan(v):
                rows.append((k, int(lat.levels[c]), v))
    p1 = write_csv(Path(out_dir) / "duals_flow.csv",
                   ["k", "j", "flow_dual"], rows)
    p2 = write_csv(Path(out_dir) / "duals_psi.csv", ["j", "psi_hat"],
                   [(int(j), duals.psi_hat[lat.col(int(j))])
                    for j in lat.levels])
    return p1, p2


def write_dual_pair(out_dir, dp, lat):
    p1 = write_csv(Path(out_dir) / "psi.csv", ["j", "psi"],
                   [(int(j), dp.psi[lat.col(int(j))]) for j in lat.levels])
    mask = lat.parity_mask()
    rows = [(k, int(lat.levels[c]), dp.v[k, c], dp.M[k, c])
            for k in range(lat.K + 1) for c in range(lat.n_levels)
            if mask[k, c]]
    p2 = write_csv(Path(out_dir) / "surface.csv", ["k", "j", "v", "M"], rows)
    return p1, p2


def write_barrier(out_dir, bar, lat):
    rows = [(int(j), int(j) * lat.dx, bar.l[lat.col(int(j))],
             bar.r[lat.col(int(j))]) for j in lat.levels]
    p1 = write_csv(Path(out_dir) / "barrier.csv", ["j", "x", "l", "r"], rows)
    mask_rows = [(k, int(lat.levels[c]), int(bar.D[k, c]))
                 for k in range(lat.K + 1) for c in range(lat.n_levels)]
    p2 = write_csv(Path(out_dir) / "region.csv", ["k", "j", "in_D"],
                   mask_rows)
    return p1, p2


def write_kernel(out_dir, kern):
    rows = []
    pm = kern.path_masses()
    for p in range(pm.shape[0]):
        for k in range(pm.shape[1]):
            if pm[p, k] > 0:
                rows.append((p, k, pm[p, k]))
    return write_csv(Path(out_dir) / "kernel.csv",
                     ["path_id", "index", "mass"], rows)


def variational_report_dict(rep):
    return {
        "tol": rep.tol,
        "passed": rep.passed,
        "levels": [{
            "level": lv.level, "x": lv.x, "l": lv.l, "r": lv.r,
            "integral": lv.integral, "delta": lv.delta, "slack": lv.slack,
            "mass_left": lv.mass_left, "mass_right": lv.mass_right,
            "verdict": lv.verdict, "equality": lv.equality,
            "tail_bound": lv.tail_bound,
        } for lv in rep.levels],
    }
