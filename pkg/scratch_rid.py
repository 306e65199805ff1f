"""Scratch: does a larger identification-stage R stabilize the bias direction?"""
from dataclasses import replace

import numpy as np

from spc.bench import BenchConfig, generate_dataset
from spc.identification import fit_tpc, make_scenarios
from spc.surrogate import surrogate_loss, _solve_all
from spc.scenario_control import SolverConfig

base = replace(BenchConfig(out_dir="/tmp/x"), drag2_true=(0.35, 0.35, 0.35))
model = base.controller_model()
data = generate_dataset(base, 0)
th_tpc = fit_tpc(data, model, base.box)
scfg = SolverConfig()

for r_id, qv in ((0.06, 0.6), (0.5, 0.6), (2.0, 0.6), (2.0, 4.0), (8.0, 4.0)):
    cfg = replace(base, r_ident=r_id, q_ident=(12.0, 12.0, 12.0, qv, qv, qv))
    sset = make_scenarios(data, model, cfg.ident_cost(), th_tpc)

    def Lt(th):
        solves = _solve_all(sset, th, scfg, None)
        return surrogate_loss(sset, th, th_tpc, solves)

    out = [f"R_id={r_id} Qv={qv}:"]
    for axis, name in ((0, "drag_x"), (3, "bias_x")):
        vals = []
        for s in (-0.4, 0.0, 0.4):
            th = th_tpc.values.copy()
            th[axis] = th[axis] + s
            vals.append(Lt(th))
        curv = vals[0] - 2 * vals[1] + vals[2]
        slope = (vals[2] - vals[0]) / 0.8
        out.append(f"  {name}: curv={curv:+.3f} slope={slope:+.3f}")
    print(" ".join(out), flush=True)
