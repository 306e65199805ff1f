"""Prediction-oriented fitting, residual disturbance scenarios, and counterfactuals.

The pipeline: fit a parameter vector by one-step prediction error, back the
unexplained part of each recorded transition out as a fixed per-trajectory
disturbance sequence, and (optionally) refit an auxiliary evaluation
parameter against counterfactual rollouts driven by optimized controls.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cost import CostMatrices
from .dynamics import Box, ModelSpec, ParamVector, as_controls, rollout, theta_values
from .errors import ContractViolation, DegenerateParameterization, Nonconvergence
from .scenario_control import Scenario, ScenarioSet

Array = np.ndarray

__all__ = [
    "Dataset",
    "FitConfig",
    "fit_tpc",
    "estimate_disturbances",
    "counterfactual_rollout",
    "fit_theta_emp",
    "prediction_mse",
    "make_scenarios",
    "collect_dataset",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class Dataset:
    """Recorded trajectories with a disjoint, exhaustive train/test split."""

    trajectories: tuple[tuple[Array, Array], ...]
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]

    def __post_init__(self):
        trajs = []
        for X, U in self.trajectories:
            X = np.array(X, dtype=float)
            U = np.array(U, dtype=float)
            X.setflags(write=False)
            U.setflags(write=False)
            trajs.append((X, U))
        if not trajs:
            raise ContractViolation("dataset must contain at least one trajectory")
        T = trajs[0][1].shape[0]
        n = trajs[0][0].shape[1]
        m = trajs[0][1].shape[1]
        for X, U in trajs:
            if X.shape != (T + 1, n) or U.shape != (T, m):
                raise ContractViolation("dataset trajectories must share (T+1, n)/(T, m) shapes")
        train = tuple(int(i) for i in self.train_indices)
        test = tuple(int(i) for i in self.test_indices)
        if sorted(train + test) != list(range(len(trajs))):
            raise ContractViolation("train/test split must be disjoint and exhaustive")
        object.__setattr__(self, "trajectories", tuple(trajs))
        object.__setattr__(self, "train_indices", train)
        object.__setattr__(self, "test_indices", test)

    @property
    def T(self) -> int:
        return self.trajectories[0][1].shape[0]

    @property
    def n(self) -> int:
        return self.trajectories[0][0].shape[1]

    @property
    def m(self) -> int:
        return self.trajectories[0][1].shape[1]

    def split(self, which: str) -> tuple[int, ...]:
        if which == "train":
            return self.train_indices
        if which == "test":
            return self.test_indices
        raise ContractViolation(f"split must be 'train' or 'test', got {which!r}")


@dataclass(frozen=True)
class FitConfig:
    eps_fit: float = 1e-8
    max_iter: int = 500
    armijo_c1: float = 1e-4
    gn_reg: float = 1e-12


def _stack_transitions(data: Dataset, indices) -> tuple[Array, Array, Array]:
    """All (x_t, u_t, x_{t+1}) transitions of the selected trajectories."""
    xs, us, ys = [], [], []
    for i in indices:
        X, U = data.trajectories[i]
        xs.append(X[:-1])
        us.append(U)
        ys.append(X[1:])
    return np.concatenate(xs), np.concatenate(us), np.concatenate(ys)


def _box_least_squares(model: ModelSpec, box: Box, X: Array, U: Array, Y: Array,
                       theta0: Array | None, cfg: FitConfig) -> ParamVector:
    """Minimize sum ||Y - f(X, U; theta)||^2 over the box.

    Projected Gauss-Newton with an active-set-aware step and a projected
    gradient fallback; terminates when the projected-gradient-mapping norm
    drops below ``cfg.eps_fit``.
    """
    if model.p == 0:
        raise DegenerateParameterization("model has no free parameters to fit")
    th = box.clip(np.zeros(model.p) if theta0 is None else np.asarray(theta0, dtype=float))

    def residual_and_grad(t):
        r = Y - model.f(X, U, t)
        C = np.asarray(model.dfdtheta(X, U, t), dtype=float)
        grad = -2.0 * np.einsum("bnp,bn->p", C, r)
        JtJ = np.einsum("bnp,bnq->pq", C, C)
        return float(np.sum(r * r)), grad, JtJ

    val, grad, JtJ = residual_and_grad(th)
    for it in range(cfg.max_iter):
        L = 2.0 * float(np.linalg.eigvalsh(JtJ)[-1]) + cfg.gn_reg
        eta = 1.0 / L
        gm = (th - box.clip(th - eta * grad)) / eta
        if float(np.linalg.norm(gm)) <= cfg.eps_fit:
            return ParamVector(th, box)
        # Gauss-Newton direction restricted to coordinates not pinned at a bound
        tol = 1e-12 * np.maximum(1.0, np.abs(box.hi - box.lo))
        pinned = ((th <= box.lo + tol) & (grad > 0)) | ((th >= box.hi - tol) & (grad < 0))
        d = np.zeros(model.p)
        free = ~pinned
        if np.any(free):
            A = JtJ[np.ix_(free, free)] + cfg.gn_reg * np.eye(int(free.sum()))
            try:
                d[free] = np.linalg.solve(A, -0.5 * grad[free])
            except np.linalg.LinAlgError:
                d[free] = -eta * grad[free]
        alpha, accepted = 1.0, False
        for _ in range(60):
            cand = box.clip(th + alpha * d)
            dec = float(grad @ (cand - th))
            cand_val = float(np.sum((Y - model.f(X, U, cand)) ** 2))
            if dec < 0.0 and cand_val <= val + cfg.armijo_c1 * dec:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:  # projected gradient step always makes progress at eta = 1/L
            cand = box.clip(th - eta * grad)
        th = cand
        val, grad, JtJ = residual_and_grad(th)
    L = 2.0 * float(np.linalg.eigvalsh(JtJ)[-1]) + cfg.gn_reg
    gm = (th - box.clip(th - grad / L)) * L
    raise Nonconvergence("parameter fit exhausted its iteration budget",
                         best=ParamVector(th, box), grad_norm=float(np.linalg.norm(gm)),
                         iterations=cfg.max_iter)


def fit_tpc(data: Dataset, model: ModelSpec, box: Box,
            cfg: FitConfig = FitConfig()) -> ParamVector:
    """Prediction-oriented parameter estimate on the training split.

    Minimizes the summed squared one-step prediction error over the box.
    """
    if not data.train_indices:
        raise ContractViolation("training split is empty")
    X, U, Y = _stack_transitions(data, data.train_indices)
    return _box_least_squares(model, box, X, U, Y, None, cfg)


def estimate_disturbances(data: Dataset, model: ModelSpec, theta0) -> list[Array]:
    """Residual disturbance sequences, one per trajectory.

    ``w_t = x_{t+1} - f(x_t, u_t; theta0)``.  Computed once from the recorded
    data; callers must treat the result as fixed thereafter.
    """
    th = theta_values(theta0)
    out = []
    for X, U in data.trajectories:
        W = X[1:] - model.f(X[:-1], U, th)
        W.setflags(write=False)
        out.append(W)
    return out


def counterfactual_rollout(sset: ScenarioSet, i: int, theta0, Ustar_i) -> Array:
    """Re-roll scenario ``i`` with its residuals but the *optimized* controls.

    The recorded controls produced the residuals; here the optimized controls
    replace them while the residuals stay in place.
    """
    sc = sset.scenarios[i]
    return rollout(sset.model, sc.x0, Ustar_i, theta0, sc.W)


def fit_theta_emp(rollouts, controls, residuals, model: ModelSpec, box: Box,
                  cfg: FitConfig = FitConfig()) -> ParamVector:
    """Auxiliary evaluation parameter fit against counterfactual rollouts.

    Minimizes ``sum ||xhat_{t+1} - f(xhat_t, u*_t; theta) - w_t||^2`` over the
    box, with the same solver and tolerance as :func:`fit_tpc`.
    """
    xs, us, ys = [], [], []
    for Xh, U, W in zip(rollouts, controls, residuals):
        Xh = np.asarray(Xh, dtype=float)
        U = as_controls(U, model.m)
        W = np.asarray(W, dtype=float)
        xs.append(Xh[:-1])
        us.append(U)
        ys.append(Xh[1:] - W)
    return _box_least_squares(model, box, np.concatenate(xs), np.concatenate(us),
                              np.concatenate(ys), None, cfg)


def prediction_mse(data: Dataset, split: str, model: ModelSpec, theta) -> float:
    """Mean squared one-step prediction error over the selected split."""
    indices = data.split(split)
    if not indices:
        raise ContractViolation(f"{split} split is empty")
    X, U, Y = _stack_transitions(data, indices)
    r = Y - model.f(X, U, theta_values(theta))
    return float(np.mean(np.sum(r * r, axis=-1)))


def make_scenarios(data: Dataset, model: ModelSpec, cost: CostMatrices,
                   theta0) -> ScenarioSet:
    """Scenario set from the training split: initial states plus residuals."""
    residuals = estimate_disturbances(data, model, theta0)
    scenarios = [
        Scenario(x0=data.trajectories[i][0][0], W=residuals[i], id=i)
        for i in data.train_indices
    ]
    return ScenarioSet(model=model, cost=cost, scenarios=scenarios, T=data.T)


# ---------------------------------------------------------------------------
# synthetic data collection


def collect_dataset(model: ModelSpec, theta_true, *, n_trajectories: int, horizon: int,
                    seed: int, feedback_gain, noise_scale: float,
                    x0_scale, setpoint_scale=None, disturbance=None,
                    t0_span: float = 0.0, test_fraction: float = 0.2) -> Dataset:
    """Record trajectories of the true system under a proportional policy.

    Controls are a stabilizing proportional law toward a per-episode setpoint
    plus seeded exploration noise: ``u = -G (x - x_set) + noise``.
    ``disturbance(t0)`` maps an episode start time to a (T, n) disturbance
    sequence (zeros when omitted).  Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    th = theta_values(theta_true)
    G = np.asarray(feedback_gain, dtype=float)
    if G.shape != (model.m, model.n):
        raise ContractViolation(f"feedback gain must have shape ({model.m}, {model.n})")
    x0_scale = np.broadcast_to(np.asarray(x0_scale, dtype=float), (model.n,))
    sp_scale = (np.zeros(model.n) if setpoint_scale is None
                else np.broadcast_to(np.asarray(setpoint_scale, dtype=float), (model.n,)))
    trajs = []
    for _ in range(n_trajectories):
        x0 = x0_scale * rng.uniform(-1.0, 1.0, model.n)
        x_set = sp_scale * rng.uniform(-1.0, 1.0, model.n)
        t0 = float(rng.uniform(0.0, t0_span)) if t0_span > 0 else 0.0
        W = np.zeros((horizon, model.n)) if disturbance is None else np.asarray(
            disturbance(t0), dtype=float)
        noise = noise_scale * rng.standard_normal((horizon, model.m))
        X = np.empty((horizon + 1, model.n))
        U = np.empty((horizon, model.m))
        X[0] = x0
        for t in range(horizon):
            U[t] = -G @ (X[t] - x_set) + noise[t]
            X[t + 1] = model.f(X[t], U[t], th) + W[t]
        if not np.all(np.isfinite(X)):
            raise ContractViolation("data-collection rollout diverged; soften the policy")
        trajs.append((X, U))
    order = rng.permutation(n_trajectories)
    n_test = max(1, int(round(test_fraction * n_trajectories))) if n_trajectories > 1 else 0
    test = tuple(sorted(int(i) for i in order[:n_test]))
    train = tuple(sorted(int(i) for i in order[n_test:]))
    return Dataset(trajectories=tuple(trajs), train_indices=train, test_indices=test)


# ---------------------------------------------------------------------------
# serialization: one CSV per trajectory plus a JSON manifest


def save_dataset(data: Dataset, directory, *, dt: float | None = None,
                 seed: int | None = None, model_id: str | None = None) -> None:
    """Write one CSV per trajectory plus ``manifest.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, m = data.n, data.m
    header = ["t"] + [f"x{j}" for j in range(n)] + [f"u{j}" for j in range(m)]
    for i, (X, U) in enumerate(data.trajectories):
        with open(directory / f"trajectory_{i:04d}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(data.T + 1):
                row = [t] + [repr(float(v)) for v in X[t]]
                row += [repr(float(v)) for v in U[t]] if t < data.T else [""] * m
                w.writerow(row)
    manifest = {
        "n": n, "m": m, "T": data.T, "count": len(data.trajectories),
        "train": list(data.train_indices), "test": list(data.test_indices),
        "dt": dt, "seed": seed, "model_id": model_id,
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory) -> Dataset:
    """Inverse of :func:`save_dataset`."""
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    n, m, T, count = manifest["n"], manifest["m"], manifest["T"], manifest["count"]
    trajs = []
    for i in range(count):
        X = np.empty((T + 1, n))
        U = np.empty((T, m))
        with open(directory / f"trajectory_{i:04d}.csv", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        for row in rows:
            t = int(row[0])
            X[t] = [float(v) for v in row[1:1 + n]]
            if t < T:
                U[t] = [float(v) for v in row[1 + n:1 + n + m]]
        trajs.append((X, U))
    return Dataset(trajectories=tuple(trajs),
                   train_indices=tuple(manifest["train"]),
                   test_indices=tuple(manifest["test"]))
