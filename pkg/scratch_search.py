"""Scratch: search scalar instances for the misalignment and not-reweighting witnesses."""
import numpy as np

from spc.cost import CostMatrices
from spc.dynamics import Box, ParamVector, get_model
from spc.identification import (Dataset, estimate_disturbances, fit_tpc,
                                make_scenarios, prediction_mse)
from spc.diagnostics import DeploymentSet, deployment_metric, grid_sweep
from spc.scenario_control import scenario_gradients, solve_optimal_control
from spc.surrogate import surrogate_gradient, run_spc, SurrogateConfig


def build_instance(theta_true=0.7, k_fb=0.5, w_mean=0.35, w_amp=0.1, noise=0.25,
                   n_traj=8, T=6, seed=0):
    """Closed-loop data with persistent disturbance -> biased LSQ fit."""
    model = get_model("scalar")
    rng = np.random.default_rng(seed)
    trajs, Ws_true = [], []
    for i in range(n_traj):
        X = np.empty((T + 1, 1))
        U = np.empty((T, 1))
        X[0] = rng.uniform(-1.5, 1.5)
        w = w_mean + w_amp * np.sin(0.9 * np.arange(T) + rng.uniform(0, 2 * np.pi))
        for t in range(T):
            U[t] = -k_fb * X[t] + noise * rng.standard_normal()
            X[t + 1] = theta_true * X[t] + U[t] + w[t]
        trajs.append((X, U))
        Ws_true.append(w.reshape(T, 1))
    data = Dataset(trajectories=tuple(trajs), train_indices=tuple(range(n_traj - 2)),
                   test_indices=(n_traj - 2, n_traj - 1))
    return model, data, Ws_true


def main():
    cm = CostMatrices(Q=[[1.0]], R=[[0.2]], P=[[1.0]])
    box = Box(lo=[-0.5], hi=[1.5])
    model, data, Ws_true = build_instance()
    th_true = 0.7
    theta0 = fit_tpc(data, model, box)
    print("theta_TPC =", theta0.values[0], " (true", th_true, ")")
    sset = make_scenarios(data, model, cm, theta0)
    # deployment: fresh initial states, TRUE disturbances
    rng = np.random.default_rng(99)
    dep = DeploymentSet(
        scenarios=tuple((np.array([x]), W) for x, W in
                        zip(rng.uniform(-1.5, 1.5, len(Ws_true)), Ws_true)),
        theta_true=ParamVector([th_true], box))

    sweep = grid_sweep(dep, sset, theta0, box, points=61)
    iV = np.argmin(sweep["V"])
    mse = [prediction_mse(data, "train", model, t) for t in sweep["theta"]]
    imse = np.argmin(mse)
    iL = np.argmin(sweep["L_tilde"])
    print(f"argmin V = {sweep['theta'][iV,0]:.3f}  argmin predMSE = {sweep['theta'][imse,0]:.3f}"
          f"  argmin L~ = {sweep['theta'][iL,0]:.3f}")
    print(f"V(tpc) = {deployment_metric(dep, sset, theta0):.4f}  V(min) = {sweep['V'][iV]:.4f}")

    # run fixed SPC and see where it goes + V along the way
    cfg = SurrogateConfig(eta="auto", iters=15, lipschitz_samples=5)
    thK, rec = run_spc(sset, theta0, theta0, cfg)
    print("theta after SPC:", thK.values[0], " L0->LK:", rec.losses[0], "->", rec.losses[-1])
    print("V(theta0) =", deployment_metric(dep, sset, theta0),
          " V(thetaK) =", deployment_metric(dep, sset, thK))

    # not-reweighting: sign of surrogate grad vs pred+lambda*ctrl grad at theta_TPC
    solves = [solve_optimal_control(sset, i, theta0) for i in range(len(sset))]
    gs = surrogate_gradient(sset, theta0, theta0, solves)
    # prediction-MSE gradient by FD
    h = 1e-6
    pm = lambda v: prediction_mse(data, "train", model, np.array([v]))
    gp = (pm(theta0.values[0] + h) - pm(theta0.values[0] - h)) / (2 * h)
    # control-cost gradient at RECORDED controls
    gc = 0.0
    for pos, i in enumerate(data.train_indices):
        _, gth, _ = scenario_gradients(sset, pos, data.trajectories[i][1], theta0)
        gc += gth[0]
    gc /= len(data.train_indices)
    print(f"grad surrogate = {gs[0]:.5f}  grad predMSE = {gp:.2e}  grad ctrl = {gc:.5f}")
    lams = np.concatenate([[0.0], np.logspace(-4, 4, 17)])
    signs = np.sign(gp + lams * gc)
    print("sign(surr) =", np.sign(gs[0]), " signs(pred+lam*ctrl) =", set(signs.tolist()))


if __name__ == "__main__":
    main()
