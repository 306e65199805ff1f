"""Scratch: grid-search instance parameters for the not-reweighting witness."""
import itertools

import numpy as np

from spc.cost import CostMatrices
from spc.dynamics import Box, get_model
from spc.identification import Dataset, fit_tpc, make_scenarios, prediction_mse
from spc.scenario_control import scenario_gradients, solve_optimal_control
from spc.surrogate import surrogate_gradient


def build(theta_true, k_fb, w_mean, w_amp, noise, T, seed, R):
    model = get_model("scalar")
    rng = np.random.default_rng(seed)
    trajs = []
    n_traj = 8
    for i in range(n_traj):
        X = np.empty((T + 1, 1))
        U = np.empty((T, 1))
        X[0] = rng.uniform(-1.5, 1.5)
        w = w_mean + w_amp * np.sin(0.9 * np.arange(T) + rng.uniform(0, 2 * np.pi))
        for t in range(T):
            U[t] = -k_fb * X[t] + noise * rng.standard_normal()
            X[t + 1] = theta_true * X[t] + U[t] + w[t]
        trajs.append((X, U))
    data = Dataset(trajectories=tuple(trajs), train_indices=tuple(range(n_traj - 2)),
                   test_indices=(n_traj - 2, n_traj - 1))
    cm = CostMatrices(Q=[[1.0]], R=[[R]], P=[[1.0]])
    return model, data, cm


def signs(theta_true, k_fb, w_mean, w_amp, noise, T, seed, R, lo, hi):
    model, data, cm = build(theta_true, k_fb, w_mean, w_amp, noise, T, seed, R)
    box = Box(lo=[lo], hi=[hi])
    theta0 = fit_tpc(data, model, box)
    if not (lo + 0.02 < theta0.values[0] < hi - 0.02):
        return None  # want an interior TPC so the prediction gradient vanishes
    sset = make_scenarios(data, model, cm, theta0)
    solves = [solve_optimal_control(sset, i, theta0) for i in range(len(sset))]
    gs = surrogate_gradient(sset, theta0, theta0, solves)[0]
    gc = np.mean([scenario_gradients(sset, pos, data.trajectories[i][1], theta0)[1][0]
                  for pos, i in enumerate(data.train_indices)])
    h = 1e-6
    pm = lambda v: prediction_mse(data, "train", model, np.array([v]))
    gp = (pm(theta0.values[0] + h) - pm(theta0.values[0] - h)) / (2 * h)
    return theta0.values[0], gs, gc, gp


for theta_true, k_fb, w_mean, seed in itertools.product(
        [0.7, 0.9, -0.5, 0.3], [0.5, 1.0, 0.2], [0.35, -0.35, 0.6], [0, 1]):
    out = signs(theta_true, k_fb, w_mean, 0.1, 0.25, 6, seed, 0.2, -0.5, 1.5)
    if out is None:
        continue
    t0, gs, gc, gp = out
    if np.sign(gs) != np.sign(gc) and abs(gs) > 1e-6 and abs(gc) > 1e-6:
        print(f"WITNESS th*={theta_true} k={k_fb} wm={w_mean} seed={seed} "
              f"-> tpc={t0:.3f} gS={gs:.4f} gC={gc:.4f} gP={gp:.2e}")
