"""Frozen solver instances shared by the unit and acceptance suites.

The cave instances are self-certifying: each target law is the embedded law
of the frozen barrier's hitting rule, and the LP optimum reproduces exactly
that barrier (checked when the fixtures were frozen, re-checked in tests).
"""

import numpy as np

from skembed.lattice import Lattice
from skembed.primal import StoppingRule, evaluate_rule
from skembed.reward import exp_cave, quad_exp_cave, tabulate, validate_cave

INF = np.inf


def barrier_stopping_rule(lat, l, r):
    tt = lat.times[:, None]
    stop = (tt <= np.asarray(l)[None, :] + 0.25 * lat.dt) | \
           (tt >= np.asarray(r)[None, :] - 0.25 * lat.dt)
    return StoppingRule(stop.astype(float), lat)


_CAVE_SPECS = [
    dict(
        name="quad_x4_tp8",
        lat=dict(dx=0.25, j_min=-4, j_max=4, K=48),
        tp_steps=8,
        maker=quad_exp_cave,
        l=[0.5, 0.3125, -1, -1, -1, -1, -1, 0.3125, 0.5],
        r=[0.5, 1.1875, 2.125, 2.9375, INF, 2.9375, 2.125, 1.1875, 0.5],
        perturb_level=3,
    ),
    dict(
        name="exp_x3_tp6",
        lat=dict(dx=0.5, j_min=-3, j_max=3, K=30),
        tp_steps=6,
        maker=exp_cave,
        l=[1.5, 1.0, -1, -1, -1, 1.0, 1.5],
        r=[1.5, 6.0, 7.25, INF, 7.25, 6.0, 1.5],
        perturb_level=2,
    ),
    dict(
        name="exp_x5_tp10",
        lat=dict(dx=0.25, j_min=-5, j_max=5, K=60),
        tp_steps=10,
        maker=exp_cave,
        l=[0.625, 0.4375, 0.4375, -1, -1, -1, -1, -1, 0.4375, 0.4375, 0.625],
        r=[0.625, 1.375, 2.3125, INF, 3.6875, INF, 3.6875, INF,
           2.3125, 1.375, 0.625],
        perturb_level=3,
    ),
]


def cave_instance(spec):
    lat = Lattice(**spec["lat"])
    tp = spec["tp_steps"] * lat.dt
    g, dplus = spec["maker"](tp)
    cave = validate_cave(g, tp, lat.times, dplus_g=dplus)
    G = tabulate(cave, lat)
    rule = barrier_stopping_rule(lat, np.array(spec["l"]), np.array(spec["r"]))
    fs = evaluate_rule(rule, G, lat)
    return dict(
        name=spec["name"], lat=lat, cave=cave, G=G, nu=fs.embedded,
        l=np.array(spec["l"], dtype=float), r=np.array(spec["r"], dtype=float),
        generator_value=fs.value, perturb_level=spec["perturb_level"],
    )


def cave_instances():
    return [cave_instance(s) for s in _CAVE_SPECS]
