"""End-to-end benchmark: data generation, five-method comparison, closed-loop tracking.

The benchmark pits prediction-oriented fitting against control-aware
refinement on a wind-disturbed point mass.  Data is collected in closed loop
under a proportional policy, which correlates the persistent wind with the
regressors and skews the prediction-optimal parameters in a control-relevant
way; the refinement methods then trade a little prediction accuracy for
better closed-loop tracking.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cost import CostMatrices
from .dynamics import (
    Box,
    ModelSpec,
    ParamVector,
    WindSpec,
    make_pointmass_wind_model,
    theta_values,
    wind_disturbance_sequence,
)
from .errors import ContractViolation, Nonconvergence
from .identification import (
    Dataset,
    FitConfig,
    collect_dataset,
    fit_tpc,
    make_scenarios,
    prediction_mse,
)
from .scenario_control import (
    Scenario,
    ScenarioSet,
    SolverConfig,
    _gn_hessian,
    scenario_grads,
    solve_scenario,
)
from .surrogate import (
    SurrogateConfig,
    _solve_all,
    _surrogate_value_grad,
    gradient_mapping,
    project_theta,
    run_spc,
    run_updated_spc,
)
from .identification import counterfactual_rollout, fit_theta_emp

Array = np.ndarray

__all__ = [
    "ReferenceSpec",
    "IdentSpec",
    "BenchConfig",
    "MetricsRow",
    "BenchResult",
    "generate_reference",
    "generate_dataset",
    "closed_loop_rollout",
    "run_baseline_cwreg",
    "run_baseline_diffctrl",
    "run_bench",
    "default_bench_config",
]

METHODS = ("TPC", "CW-Reg", "DiffCtrl", "F-SPC", "U-SPC")


@dataclass(frozen=True)
class ReferenceSpec:
    """Three-phase reference: circular arc, S-shaped descent, figure-8."""

    arc_radius: float = 2.5
    sway: float = 1.0
    descent_z: float = -2.5
    fig8_x: float = 2.5
    fig8_y: float = 1.25
    phase_seconds: tuple[float, float, float] = (8.0, 8.0, 8.0)


@dataclass(frozen=True)
class IdentSpec:
    """Desk-scale identification stage: short closed-loop trajectories."""

    n_trajectories: int = 20
    horizon: int = 25
    setpoint_scale: tuple = (1.5, 1.5, 1.4, 0.0, 0.0, 0.0)
    x0_scale: tuple = (1.5, 1.5, 1.4, 0.1, 0.1, 0.1)
    kp: float = 0.8
    kd: float = 1.6
    noise_scale: float = 0.12
    t0_span: float = 20.0
    test_fraction: float = 0.2


@dataclass(frozen=True)
class BenchConfig:
    model_id: str = "pointmass-wind"
    dt: float = 0.02
    episode_seconds: float = 24.0
    horizon_n: int = 50
    mass: float = 1.0
    wind: WindSpec = field(default_factory=WindSpec)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    ident: IdentSpec = field(default_factory=IdentSpec)
    methods: tuple[str, ...] = METHODS
    seeds: tuple[int, ...] = (2, 3, 4)
    cwreg_lambdas: tuple[float, ...] = (0.01, 0.1, 1.0)
    drag_true: tuple = (0.55, 0.55, 0.55)
    drag2_true: tuple = (0.5, 0.5, 0.5)
    bias_scale: float = 0.1
    box_lo: tuple = (0.15, 0.15, 0.15, -0.25, -0.25, -0.25)
    box_hi: tuple = (1.4, 1.4, 1.0, 0.25, 0.25, 0.25)
    q_track: tuple = (12.0, 12.0, 12.0, 0.6, 0.6, 0.6)
    r_track: float = 0.3
    q_ident: tuple = (4.0, 4.0, 4.0, 8.0, 8.0, 8.0)
    r_ident: float = 0.06
    spc_iters: int = 14
    spc_eta: float | str = "auto"
    spc_tau: int = 7
    spc_lipschitz_samples: int = 6
    diffctrl_iters: int = 16
    out_dir: str = "bench-out"

    def __post_init__(self):
        if self.dt <= 0 or self.horizon_n < 1:
            raise ContractViolation("dt must be positive and horizon_n >= 1")
        if not self.seeds:
            raise ContractViolation("at least one seed is required")
        for mth in self.methods:
            if mth not in METHODS:
                raise ContractViolation(f"unknown method {mth!r}")

    @property
    def episode_steps(self) -> int:
        return int(round(self.episode_seconds / self.dt))

    @property
    def box(self) -> Box:
        return Box(lo=self.box_lo, hi=self.box_hi)

    def tracking_cost(self) -> CostMatrices:
        return CostMatrices(Q=np.diag(self.q_track), R=self.r_track * np.eye(3),
                            P=np.diag(self.q_track))

    def ident_cost(self) -> CostMatrices:
        return CostMatrices(Q=np.diag(self.q_ident), R=self.r_ident * np.eye(3),
                            P=np.diag(self.q_ident))

    def controller_model(self) -> ModelSpec:
        return make_pointmass_wind_model(self.dt, self.mass, self.wind,
                                         bias_scale=self.bias_scale)

    def truth_model(self) -> ModelSpec:
        return make_pointmass_wind_model(self.dt, self.mass, self.wind,
                                         drag2=self.drag2_true,
                                         bias_scale=self.bias_scale)

    def theta_true(self) -> Array:
        return np.concatenate([np.asarray(self.drag_true, float), np.zeros(3)])


@dataclass(frozen=True)
class MetricsRow:
    """One evaluated method on one seed.

    Tracking RMSE is the root-mean-square Euclidean distance between tracked
    and reference positions along the closed-loop rollout; closed-loop cost
    sums the tracking stage costs over the episode; control effort sums the
    squared control norms; prediction MSE is the one-step error on the
    held-out test split.
    """

    method: str
    seed: int
    rmse: float
    cl_cost: float
    ctrl_effort: float
    pred_mse: float

    def __post_init__(self):
        for name in ("rmse", "cl_cost", "ctrl_effort", "pred_mse"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be nonnegative")


@dataclass
class BenchResult:
    rows: list
    aggregates: dict
    failures: dict
    cwreg_lambda_choice: dict


# ---------------------------------------------------------------------------
# reference trajectory


def generate_reference(cfg: BenchConfig) -> Array:
    """Reference samples (S, 6): position and velocity at each step."""
    spec = cfg.reference
    d1, d2, d3 = spec.phase_seconds
    S = cfg.episode_steps
    t = cfg.dt * np.arange(S)
    out = np.zeros((S, 6))

    w1 = 2.0 * math.pi / d1
    r = spec.arc_radius

    def phase1(s):
        pos = np.stack([r * np.sin(w1 * s), r * (1.0 - np.cos(w1 * s)), np.zeros_like(s)], 1)
        vel = np.stack([r * w1 * np.cos(w1 * s), r * w1 * np.sin(w1 * s), np.zeros_like(s)], 1)
        return pos, vel

    anchor1 = phase1(np.array([d1]))[0][0]

    w2 = 2.0 * math.pi / d2

    def phase2(s):
        frac = s / d2
        ramp = 3.0 * frac**2 - 2.0 * frac**3
        dramp = (6.0 * frac - 6.0 * frac**2) / d2
        pos = np.stack([np.zeros_like(s), spec.sway * np.sin(w2 * s), spec.descent_z * ramp], 1)
        vel = np.stack([np.zeros_like(s), spec.sway * w2 * np.cos(w2 * s),
                        spec.descent_z * dramp], 1)
        return pos + anchor1, vel

    anchor2 = phase2(np.array([d2]))[0][0]

    w3 = 2.0 * math.pi / d3

    def phase3(s):
        pos = np.stack([spec.fig8_x * np.sin(w3 * s), spec.fig8_y * np.sin(2.0 * w3 * s),
                        np.zeros_like(s)], 1)
        vel = np.stack([spec.fig8_x * w3 * np.cos(w3 * s),
                        spec.fig8_y * 2.0 * w3 * np.cos(2.0 * w3 * s), np.zeros_like(s)], 1)
        return pos + anchor2, vel

    m1 = t < d1
    m2 = (t >= d1) & (t < d1 + d2)
    m3 = t >= d1 + d2
    for mask, fn, off in ((m1, phase1, 0.0), (m2, phase2, d1), (m3, phase3, d1 + d2)):
        pos, vel = fn(t[mask] - off)
        out[mask, :3] = pos
        out[mask, 3:] = vel
    return out


# ---------------------------------------------------------------------------
# data generation


def generate_dataset(cfg: BenchConfig, seed: int) -> Dataset:
    """Closed-loop data collection on the true system with the injected wind."""
    truth = cfg.truth_model()
    ident = cfg.ident
    G = np.hstack([ident.kp * np.eye(3), ident.kd * np.eye(3)])
    return collect_dataset(
        truth, cfg.theta_true(),
        n_trajectories=ident.n_trajectories, horizon=ident.horizon, seed=seed,
        feedback_gain=G, noise_scale=ident.noise_scale,
        x0_scale=ident.x0_scale, setpoint_scale=ident.setpoint_scale,
        disturbance=lambda t0: wind_disturbance_sequence(truth, ident.horizon, t0),
        t0_span=ident.t0_span, test_fraction=ident.test_fraction,
    )


# ---------------------------------------------------------------------------
# closed-loop receding-horizon evaluation


def model_feedforward(model: ModelSpec, theta, ref: Array) -> Array:
    """Least-squares control sequence keeping the model on the reference.

    Solves ``B u_ff = r_{j+1} - f(r_j, 0, theta)`` per step in the
    least-squares sense (for the point mass this inverts the velocity rows
    exactly; the O(dt^2) position-row mismatch is unreachable by any input).
    """
    th = theta_values(theta)
    B = np.asarray(model.dfdu(np.zeros(model.n), np.zeros(model.m), th), dtype=float)
    Bpinv = np.linalg.pinv(B)
    gap = ref[1:] - model.f(ref[:-1], np.zeros(model.m), th)
    return gap @ Bpinv.T


class _TrackingController:
    """Receding-horizon tracking on an affine prediction model.

    Each step solves the unconstrained scenario problem in error coordinates:
    the state error regulates to zero, the control penalty acts on the
    deviation from the model's reference feedforward, and the model-vs-
    reference mismatch enters as a known disturbance sequence.  The
    control-space Hessian only depends on the window length, so its
    factorization is cached per window.
    """

    def __init__(self, model: ModelSpec, cm: CostMatrices, theta, horizon: int):
        if not model.affine:
            raise ContractViolation("tracking controller requires an affine model")
        self.model = model
        self.cm = cm
        self.theta = theta_values(theta)
        self.N = horizon
        self._chol: dict[int, Array] = {}
        self._offset = model.f(np.zeros(model.n), np.zeros(model.m), self.theta)

    def _factor(self, Nw: int, sset: ScenarioSet) -> Array:
        if Nw not in self._chol:
            H = _gn_hessian(sset, sset.scenarios[0].x0, np.zeros((Nw, self.model.m)),
                            self.theta)
            self._chol[Nw] = np.linalg.cholesky(H)
        return self._chol[Nw]

    def control(self, x: Array, ref_window: Array) -> Array:
        """First control of the tracking solve over the given reference window."""
        Nw = ref_window.shape[0] - 1
        e0 = x - ref_window[0]
        u_ff = model_feedforward(self.model, self.theta, ref_window)
        # residual reference mismatch in error coordinates, after feedforward
        W = (self.model.f(ref_window[:-1], u_ff, self.theta)
             - self._offset - ref_window[1:])
        sset = ScenarioSet(model=self.model, cost=self.cm,
                           scenarios=(Scenario(x0=e0, W=W, id=0),), T=Nw)
        L = self._factor(Nw, sset)
        g0, _, _ = scenario_grads(sset, e0, np.zeros((Nw, self.model.m)), self.theta,
                                  want_theta=False)
        dU = -np.linalg.solve(L.T, np.linalg.solve(L, g0)).reshape(Nw, self.model.m)
        return u_ff[0] + dU[0]


def closed_loop_rollout(truth: ModelSpec, controller_theta, ref: Array,
                        cfg: BenchConfig):
    """Track the reference on the true wind-disturbed system.

    At each step the tracking problem over the next ``horizon_n`` steps is
    solved under the controller's model (the horizon shrinks at the episode
    tail), the first control is applied, and the true dynamics advance with
    the injected wind.  Returns the tracked states, the controls, and the
    accumulated metric fragments.

    The closed-loop cost sums the tracking stage costs in error coordinates,
    with the control term measured against the *true* reference feedforward
    (the input that keeps the true wind-disturbed dynamics on the reference),
    so all controllers are scored against the same ideal orbit.  Control
    effort is the raw sum of squared control norms.
    """
    S = ref.shape[0]
    model = cfg.controller_model()
    cm = cfg.tracking_cost()
    ctrl = _TrackingController(model, cm, controller_theta, cfg.horizon_n)
    th_true = cfg.theta_true()
    wind_vel = truth.wind.force(cfg.dt * np.arange(S)) * (cfg.dt / cfg.mass)

    # true-orbit feedforward: inverts the truth dynamics (wind included)
    B = np.asarray(truth.dfdu(np.zeros(6), np.zeros(3), th_true), dtype=float)
    Bpinv = np.linalg.pinv(B)
    gap = ref[1:] - truth.f(ref[:-1], np.zeros(3), th_true)
    gap[:, 3:] -= wind_vel[:-1]
    u_ff_true = gap @ Bpinv.T

    X = np.empty((S, 6))
    U = np.empty((S - 1, 3))
    X[0] = ref[0]
    cl_cost = 0.0
    effort = 0.0
    for k in range(S - 1):
        Nw = min(cfg.horizon_n, S - 1 - k)
        u = ctrl.control(X[k], ref[k:k + Nw + 1])
        U[k] = u
        e = X[k] - ref[k]
        du = u - u_ff_true[k]
        cl_cost += float(e @ cm.Q @ e + du @ cm.R @ du)
        effort += float(u @ u)
        X[k + 1] = truth.f(X[k], u, th_true)
        X[k + 1, 3:] += wind_vel[k]
        if not np.all(np.isfinite(X[k + 1])):
            raise Nonconvergence(f"closed-loop rollout diverged at step {k + 1}",
                                 best=X[:k + 2], iterations=k + 1)
    e = X[S - 1] - ref[S - 1]
    cl_cost += float(e @ cm.Q @ e)
    rmse = float(np.sqrt(np.mean(np.sum((X[:, :3] - ref[:, :3]) ** 2, axis=1))))
    return X, U, {"rmse": rmse, "cl_cost": cl_cost, "ctrl_effort": effort}


# ---------------------------------------------------------------------------
# baselines


def _pred_mse_grad(data: Dataset, model: ModelSpec, th: Array):
    X, Uc, Y = [], [], []
    for i in data.train_indices:
        Xi, Ui = data.trajectories[i]
        X.append(Xi[:-1])
        Uc.append(Ui)
        Y.append(Xi[1:])
    X, Uc, Y = np.concatenate(X), np.concatenate(Uc), np.concatenate(Y)
    r = Y - model.f(X, Uc, th)
    C = np.asarray(model.dfdtheta(X, Uc, th), dtype=float)
    val = float(np.mean(np.sum(r * r, axis=-1)))
    grad = -2.0 * np.einsum("bnp,bn->p", C, r) / len(r)
    return val, grad


def run_baseline_cwreg(data: Dataset, model: ModelSpec, box: Box, lam: float,
                       sset: ScenarioSet, fit_cfg: FitConfig = FitConfig()) -> ParamVector:
    """Control-weighted regularization: prediction MSE plus a control-cost penalty.

    The penalty evaluates the *recorded* controls under the candidate model,
    so the objective stays a reweighted prediction loss; it never touches the
    optimizer map.  Minimized by projected Newton (finite-difference
    curvature) with a projected-gradient fallback, to the fit tolerance.
    """
    if lam < 0:
        raise ContractViolation("lambda must be nonnegative")
    recorded = [data.trajectories[i][1] for i in data.train_indices]

    def value_grad(th):
        val, grad = _pred_mse_grad(data, model, th)
        if lam > 0.0:
            for pos, U in enumerate(recorded):
                _, gth, v = scenario_grads(sset, sset.scenarios[pos].x0, U, th)
                val += lam * v / len(recorded)
                grad = grad + lam * gth / len(recorded)
        return val, grad

    return _minimize_box(value_grad, box, box.clip(np.zeros(model.p)), fit_cfg)


def _minimize_box(value_grad, box: Box, th0: Array, cfg: FitConfig) -> ParamVector:
    """Projected Newton on a smooth box-constrained objective.

    Curvature comes from central differences of the analytic gradient; steps
    fall back to projected gradient with a step length from the sampled
    curvature when the Newton direction stalls.
    """
    th = np.array(th0, dtype=float)
    p = th.size
    val, grad = value_grad(th)
    for _ in range(cfg.max_iter):
        h = max(1e-6, 1e-6 * float(np.linalg.norm(th)))
        H = np.empty((p, p))
        for k in range(p):
            e = np.zeros(p)
            e[k] = h
            H[:, k] = (value_grad(th + e)[1] - value_grad(th - e)[1]) / (2.0 * h)
        H = 0.5 * (H + H.T)
        evals = np.linalg.eigvalsh(H)
        L = max(float(evals[-1]), 1e-8)
        eta = 1.0 / L
        gm = (th - box.clip(th - eta * grad)) / eta
        if float(np.linalg.norm(gm)) <= cfg.eps_fit:
            return ParamVector(th, box)
        reg = max(0.0, 1e-8 - float(evals[0]))
        try:
            d = np.linalg.solve(H + reg * np.eye(p), -grad)
        except np.linalg.LinAlgError:
            d = -eta * grad
        alpha, accepted = 1.0, False
        for _ in range(40):
            cand = box.clip(th + alpha * d)
            dec = float(grad @ (cand - th))
            cand_val, cand_grad = value_grad(cand)
            if dec < 0.0 and cand_val <= val + cfg.armijo_c1 * dec:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            cand = box.clip(th - eta * grad)
            cand_val, cand_grad = value_grad(cand)
        th, val, grad = cand, cand_val, cand_grad
    gm = (th - box.clip(th - grad))
    raise Nonconvergence("box minimization exhausted its budget",
                         best=ParamVector(th, box),
                         grad_norm=float(np.linalg.norm(gm)), iterations=cfg.max_iter)


def run_baseline_diffctrl(data: Dataset, model: ModelSpec, box: Box,
                          sset: ScenarioSet, theta_eval, cfg: SurrogateConfig,
                          iters: int | None = None) -> ParamVector:
    """Differentiable-control baseline: descend a frozen-evaluation proxy cost.

    The proxy scores the controls induced by the candidate on a deployment
    stand-in: each scenario's optimized controls are costed under the frozen
    evaluation parameter and that scenario's *own* residual sequence (the
    same pairing the deployment metric uses).  The gradient flows through the
    optimizer map via the implicit-function Jacobian; no partial parameter
    term remains, since the evaluation model is frozen.  Pairing each
    scenario with its own residuals keeps the proxy non-degenerate: against
    the full scenario average, the frozen parameter itself would already be
    the exact minimizer.
    """
    theta = project_theta(theta_values(theta_eval), box)
    if box.p == 0:
        return theta
    the = theta_values(theta_eval)
    K = cfg.iters if iters is None else iters
    warm = None
    eta = None
    for _ in range(K):
        solves = _solve_all(sset, theta, cfg.solver, warm)
        if cfg.warm_start:
            warm = [rep.U for rep in solves]
        # frozen-evaluation value and implicit-function gradient
        value, grad = _proxy_value_grad(sset, theta, the, solves, cfg.solver)
        if eta is None:
            gnorm = float(np.linalg.norm(grad))
            span = float(np.linalg.norm(box.hi - box.lo))
            eta = 0.05 * span / max(gnorm, 1e-12)
        while True:
            cand = project_theta(theta.values - eta * grad, box)
            cand_solves = _solve_all(sset, cand, cfg.solver, warm)
            cand_val, _ = _proxy_value_grad(sset, cand, the, cand_solves, cfg.solver)
            gm = gradient_mapping(theta, grad, eta, box)
            if cand_val <= value - 0.25 * eta * float(gm @ gm) + 1e-12 or eta < 1e-12:
                break
            eta *= 0.5
        theta = cand
    return theta


def _proxy_value_grad(sset: ScenarioSet, theta, theta_eval, solves, solver_cfg):
    from .cost import cost_gradients_batch
    from .scenario_control import hessians_at
    from .surrogate import _theta_cross_hessian

    th = theta_values(theta)
    the = theta_values(theta_eval)
    value = 0.0
    grad = np.zeros(sset.model.p)
    chol = None
    for i, rep in enumerate(solves):
        sc = sset.scenarios[i]
        gU_eval, _, val_eval = cost_gradients_batch(
            sset.model, sset.cost, sc.x0, rep.U, the, sc.W, want_theta=False)
        gU_eval = gU_eval.ravel()
        if sset.model.affine and chol is not None:
            _, H_Ut = _theta_cross_hessian(sset, sc.x0, rep.U, th, solver_cfg)
        else:
            H_UU, H_Ut = hessians_at(sset, sc.x0, rep.U, th, solver_cfg)
            chol = np.linalg.cholesky(H_UU)
        y = np.linalg.solve(chol.T, np.linalg.solve(chol, gU_eval))
        grad += -H_Ut.T @ y
        value += float(val_eval)
    return value / len(solves), grad / len(solves)


# ---------------------------------------------------------------------------
# the benchmark


def _fit_theta_emp_from(sset: ScenarioSet, theta0: ParamVector,
                        solver: SolverConfig, fit_cfg: FitConfig) -> ParamVector:
    solves = _solve_all(sset, theta0, solver, None)
    rollouts = [counterfactual_rollout(sset, i, theta0, solves[i].U)
                for i in range(len(sset))]
    return fit_theta_emp(rollouts, [r.U for r in solves],
                         [s.W for s in sset.scenarios], sset.model, theta0.box, fit_cfg)


def _method_theta(method: str, cfg: BenchConfig, data: Dataset, model: ModelSpec,
                  sset: ScenarioSet, theta_tpc: ParamVector,
                  scfg: SurrogateConfig):
    """Parameter vector produced by one method; CW-Reg returns per-lambda list."""
    if method == "TPC":
        return theta_tpc
    if method == "CW-Reg":
        return [run_baseline_cwreg(data, model, cfg.box, lam, sset, scfg.fit)
                for lam in cfg.cwreg_lambdas]
    if method == "DiffCtrl":
        return run_baseline_diffctrl(data, model, cfg.box, sset, theta_tpc, scfg,
                                     iters=cfg.diffctrl_iters)
    if method == "F-SPC":
        theta_emp = _fit_theta_emp_from(sset, theta_tpc, scfg.solver, scfg.fit)
        theta, _ = run_spc(sset, theta_tpc, theta_emp, scfg)
        return theta
    if method == "U-SPC":
        ucfg = replace(scfg, variant="updated")
        theta, _ = run_updated_spc(sset, theta_tpc, data, ucfg)
        return theta
    raise ContractViolation(f"unknown method {method!r}")


def run_bench(cfg: BenchConfig) -> BenchResult:
    """Run the full benchmark: per seed, fit every method and evaluate closed loop.

    Deterministic given (config, seeds): the only randomness flows through
    seeded generators.  Per-method failures are recorded and the remaining
    methods continue.
    """
    ref = generate_reference(cfg)
    truth = cfg.truth_model()
    model = cfg.controller_model()
    cm_id = cfg.ident_cost()
    rows: list[MetricsRow] = []
    failures: dict[str, str] = {}
    lam_choice: dict[int, float] = {}

    for seed in cfg.seeds:
        data = generate_dataset(cfg, seed)
        theta_tpc = fit_tpc(data, model, cfg.box)
        sset = make_scenarios(data, model, cm_id, theta_tpc)
        scfg = SurrogateConfig(eta=cfg.spc_eta, iters=cfg.spc_iters, tau=cfg.spc_tau,
                               lipschitz_samples=cfg.spc_lipschitz_samples)
        for method in cfg.methods:
            try:
                theta = _method_theta(method, cfg, data, model, sset, theta_tpc, scfg)
                if method == "CW-Reg":
                    best = None
                    for lam, th_lam in zip(cfg.cwreg_lambdas, theta):
                        X_lam, _, frag_lam = closed_loop_rollout(truth, th_lam, ref, cfg)
                        if best is None or frag_lam["rmse"] < best[2]["rmse"]:
                            best = (th_lam, X_lam, frag_lam, lam)
                    theta, X, frag, lam_best = best
                    lam_choice[seed] = lam_best
                else:
                    X, _, frag = closed_loop_rollout(truth, theta, ref, cfg)
                rows.append(MetricsRow(
                    method=method, seed=seed,
                    rmse=frag["rmse"], cl_cost=frag["cl_cost"],
                    ctrl_effort=frag["ctrl_effort"],
                    pred_mse=prediction_mse(data, "test", model, theta)))
                _write_trajectory(cfg, method, seed, ref, X)
            except Exception as exc:  # record and keep going
                failures[f"{method}/seed{seed}"] = f"{type(exc).__name__}: {exc}"

    aggregates = _aggregate(rows)
    _write_outputs(cfg, rows, aggregates, failures, lam_choice)
    return BenchResult(rows=rows, aggregates=aggregates, failures=failures,
                       cwreg_lambda_choice=lam_choice)


def _aggregate(rows) -> dict:
    out: dict = {}
    for method in {r.method for r in rows}:
        sel = [r for r in rows if r.method == method]
        out[method] = {}
        for name in ("rmse", "cl_cost", "ctrl_effort", "pred_mse"):
            vals = np.array([getattr(r, name) for r in sel])
            out[method][name] = {"mean": float(vals.mean()),
                                 "std": float(vals.std(ddof=0))}
    return out


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_trajectory(cfg: BenchConfig, method: str, seed: int, ref: Array,
                      X: Array) -> None:
    outdir = Path(cfg.out_dir) / "trajectories"
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["t,ref_x,ref_y,ref_z,x,y,z"]
    for k in range(ref.shape[0]):
        vals = [repr(float(v)) for v in (*ref[k, :3], *X[k, :3])]
        lines.append(",".join([repr(float(k * cfg.dt))] + vals))
    _atomic_write(outdir / f"{method}-{seed}.csv", "\n".join(lines) + "\n")


def _write_outputs(cfg: BenchConfig, rows, aggregates, failures, lam_choice) -> None:
    outdir = Path(cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["method,seed,rmse,cl_cost,ctrl_effort,pred_mse"]
    for r in rows:
        lines.append(",".join([r.method, str(r.seed)] +
                              [repr(float(v)) for v in
                               (r.rmse, r.cl_cost, r.ctrl_effort, r.pred_mse)]))
    _atomic_write(outdir / "metrics.csv", "\n".join(lines) + "\n")
    summary = {
        "aggregates": aggregates,
        "failures": failures,
        "cwreg_lambda_choice": {str(k): v for k, v in lam_choice.items()},
        "config": _config_dict(cfg),
    }
    _atomic_write(outdir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _config_dict(cfg: BenchConfig) -> dict:
    d = asdict(cfg)
    d["wind"] = {k: list(v) for k, v in asdict(cfg.wind).items()}
    return d


def default_bench_config(out_dir: str = "bench-out") -> BenchConfig:
    return BenchConfig(out_dir=out_dir)
