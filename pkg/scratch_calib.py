"""Scratch: sweep bench configurations for the misalignment pattern."""
import time
from dataclasses import replace

import numpy as np

from spc.bench import BenchConfig, closed_loop_rollout, generate_dataset, generate_reference
from spc.bench import _fit_theta_emp_from, run_baseline_diffctrl
from spc.identification import fit_tpc, make_scenarios, prediction_mse
from spc.surrogate import SurrogateConfig, run_spc, run_updated_spc


def probe(cfg, seed=0, methods=("F", "U"), oracle=True, label=""):
    t0 = time.perf_counter()
    ref = generate_reference(cfg)
    truth = cfg.truth_model()
    model = cfg.controller_model()
    data = generate_dataset(cfg, seed)
    th_tpc = fit_tpc(data, model, cfg.box)
    sset = make_scenarios(data, model, cfg.ident_cost(), th_tpc)
    _, _, fr_tpc = closed_loop_rollout(truth, th_tpc, ref, cfg)
    out = [f"[{label} seed{seed}] TPC rmse={fr_tpc['rmse']:.4f} cl={fr_tpc['cl_cost']:.0f} "
           f"th_d={np.round(th_tpc.values[:3], 2)} th_b={np.round(th_tpc.values[3:], 2)}"]
    if oracle:
        best = (None, np.inf)
        for extra in np.arange(0.0, 0.9, 0.15):
            th = cfg.theta_true().copy()
            th[:3] += extra
            th[3:] = [0.35, -0.15, 0.0]
            fr = closed_loop_rollout(truth, th, ref, cfg)[2]
            if fr["rmse"] < best[1]:
                best = (extra, fr["rmse"])
        out.append(f"  oracle: drag+{best[0]:.2f} rmse={best[1]:.4f} "
                   f"(gap {(1 - best[1] / fr_tpc['rmse']) * 100:.0f}%)")
    scfg = SurrogateConfig(eta=cfg.spc_eta, iters=cfg.spc_iters, tau=cfg.spc_tau,
                           lipschitz_samples=cfg.spc_lipschitz_samples)
    if "F" in methods:
        emp = _fit_theta_emp_from(sset, th_tpc, scfg.solver, scfg.fit)
        th_f, rec = run_spc(sset, th_tpc, emp, scfg)
        fr = closed_loop_rollout(truth, th_f, ref, cfg)[2]
        out.append(f"  F-SPC rmse={fr['rmse']:.4f} cl={fr['cl_cost']:.0f} "
                   f"th_d={np.round(th_f.values[:3], 2)} th_b={np.round(th_f.values[3:], 2)} "
                   f"dL={rec.losses[0] - rec.losses[-1]:.1f} "
                   f"red={100 * (1 - fr['rmse'] / fr_tpc['rmse']):.0f}%")
    if "U" in methods:
        th_u, rec_u = run_updated_spc(sset, th_tpc, data, replace(scfg, variant="updated"))
        fr = closed_loop_rollout(truth, th_u, ref, cfg)[2]
        out.append(f"  U-SPC rmse={fr['rmse']:.4f} cl={fr['cl_cost']:.0f} "
                   f"th_d={np.round(th_u.values[:3], 2)} th_b={np.round(th_u.values[3:], 2)} "
                   f"red={100 * (1 - fr['rmse'] / fr_tpc['rmse']):.0f}%")
    if "D" in methods:
        th_d = run_baseline_diffctrl(data, model, cfg.box, sset, th_tpc, scfg,
                                     iters=cfg.diffctrl_iters)
        fr = closed_loop_rollout(truth, th_d, ref, cfg)[2]
        out.append(f"  DiffC rmse={fr['rmse']:.4f} th_d={np.round(th_d.values[:3], 2)} "
                   f"th_b={np.round(th_d.values[3:], 2)} "
                   f"red={100 * (1 - fr['rmse'] / fr_tpc['rmse']):.0f}%")
    out.append(f"  pred_mse tpc={prediction_mse(data, 'test', model, th_tpc):.2e} "
               f"({time.perf_counter() - t0:.0f}s)")
    print("\n".join(out), flush=True)


base = BenchConfig(out_dir="/tmp/bench-scratch")

# A: velocity-heavy identification weights
A = replace(base, q_ident=(4.0, 4.0, 4.0, 8.0, 8.0, 8.0))
probe(A, label="A velQ")

# B: A + softer tracking feedback
B = replace(A, r_track=0.3)
probe(B, label="B softR")

# C: B + stronger quadratic drag
C = replace(B, drag2_true=(0.35, 0.35, 0.35))
probe(C, label="C drag2=.35")

# D: C + low exploration noise
D = replace(C, ident=replace(base.ident, noise_scale=0.05))
probe(D, label="D noise.05")
