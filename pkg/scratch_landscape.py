"""Scratch: 1-D slices of the surrogate landscape in drag/bias coordinates."""
from dataclasses import replace

import numpy as np

from spc.bench import BenchConfig, closed_loop_rollout, generate_dataset, generate_reference
from spc.identification import fit_tpc, make_scenarios
from spc.surrogate import SurrogateConfig, surrogate_loss, _solve_all
from spc.scenario_control import SolverConfig

cfg = replace(BenchConfig(out_dir="/tmp/x"), q_ident=(4.0, 4.0, 4.0, 8.0, 8.0, 8.0),
              r_track=0.3, drag2_true=(0.35, 0.35, 0.35))
ref = generate_reference(cfg)
truth = cfg.truth_model()
model = cfg.controller_model()
data = generate_dataset(cfg, 0)
th_tpc = fit_tpc(data, model, cfg.box)
sset = make_scenarios(data, model, cfg.ident_cost(), th_tpc)
scfg = SolverConfig()

# residual stats
Wbar = np.mean([s.W for s in sset.scenarios], axis=(0, 1)) / (cfg.dt / cfg.mass)
print("mean residual as force:", np.round(Wbar[3:], 3))


def Lt(th):
    solves = _solve_all(sset, th, scfg, None)
    self_term = np.mean([r.objective for r in solves])
    val = surrogate_loss(sset, th, th_tpc, solves)
    return val, self_term, 2 * self_term - val  # val, F_self, F_emp


for axis, name in ((0, "drag_x"), (3, "bias_x"), (4, "bias_y")):
    print(f"--- slice {name} (tpc at {th_tpc.values[axis]:.3f}) ---")
    for s in np.linspace(cfg.box_lo[axis], cfg.box_hi[axis], 9):
        th = th_tpc.values.copy()
        th[axis] = s
        val, fself, femp = Lt(th)
        fr = closed_loop_rollout(truth, th, ref, cfg)[2]
        print(f"  {s:+.2f}: L={val:8.2f} Fself={fself:8.2f} Femp={femp:8.2f} "
              f"rmse={fr['rmse']:.4f}")
