"""Control-aware surrogate loss and its projected-gradient refinement loop.

The surrogate scores a candidate parameter vector through the optimal
controls it induces: each scenario is re-solved under the candidate, and the
loss combines a doubled self-evaluation of those controls with their
evaluation under a fixed auxiliary parameter.  Its exact gradient needs no
differentiation through the inner solver beyond the optimizer Jacobian: at
the optimum the control-space gradient vanishes, so the self-evaluation term
differentiates as if the controls were frozen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import Box, ParamVector, theta_values
from .errors import ContractViolation
from .identification import Dataset, FitConfig, counterfactual_rollout, fit_theta_emp
from .scenario_control import (
    ScenarioSet,
    SolveReport,
    SolverConfig,
    hessians_at,
    scenario_grads,
    scenario_value,
    solve_optimal_control,
)

Array = np.ndarray

__all__ = [
    "SurrogateConfig",
    "RunRecord",
    "surrogate_loss",
    "surrogate_gradient",
    "project_theta",
    "gradient_mapping",
    "estimate_lipschitz",
    "run_spc",
    "run_updated_spc",
]


@dataclass(frozen=True)
class SurrogateConfig:
    """Settings for the projected-gradient refinement loop.

    ``eta`` is either an explicit positive step size or ``"auto"``, which
    sets it to the reciprocal of a sampled Lipschitz estimate.  The
    ``updated`` variant refreshes the auxiliary evaluation parameter every
    ``tau`` iterations.
    """

    eta: float | str = "auto"
    iters: int = 20
    variant: str = "fixed"  # "fixed" | "updated"
    tau: int = 10
    lipschitz_samples: int = 8
    lipschitz_seed: int = 0
    warm_start: bool = True
    backtrack: bool = False
    early_stop_gm: float | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if isinstance(self.eta, str):
            if self.eta != "auto":
                raise ContractViolation(f"eta must be positive or 'auto', got {self.eta!r}")
        elif not self.eta > 0:
            raise ContractViolation("explicit eta must be positive")
        if self.iters < 0 or self.tau < 1:
            raise ContractViolation("iters must be >= 0 and tau >= 1")
        if self.variant not in ("fixed", "updated"):
            raise ContractViolation(f"unknown variant {self.variant!r}")


@dataclass
class RunRecord:
    """Per-iteration log of a refinement run.

    Row ``k`` holds the iterate, the surrogate value, and the squared
    gradient-mapping norm evaluated *at* iterate ``k``; there are K+1 rows
    for a K-step run.  ``etas[k]`` is the step size used to leave iterate
    ``k``.  Wall time is kept out of the CSV stream so repeated runs with
    identical configs emit bit-identical files.
    """

    thetas: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    gm_norm_sq: list = field(default_factory=list)
    solver_iterations: list = field(default_factory=list)
    etas: list = field(default_factory=list)
    refresh_iterations: list = field(default_factory=list)
    variant: str = "fixed"
    L_hat: float | None = None
    eta: float | None = None
    box: Box | None = None
    wall_time: float = 0.0

    @property
    def K(self) -> int:
        return len(self.losses) - 1

    def theta(self, k: int) -> Array:
        return np.asarray(self.thetas[k])

    def to_csv(self, path) -> None:
        import csv

        p = len(self.thetas[0]) if self.thetas else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "gm_norm_sq"] + [f"theta{j}" for j in range(p)])
            for k in range(len(self.losses)):
                w.writerow([k, repr(float(self.losses[k])), repr(float(self.gm_norm_sq[k]))]
                           + [repr(float(v)) for v in self.thetas[k]])

    def summary(self) -> dict:
        return {
            "iterations": self.K,
            "variant": self.variant,
            "loss_initial": self.losses[0] if self.losses else None,
            "loss_final": self.losses[-1] if self.losses else None,
            "min_gm_norm_sq": min(self.gm_norm_sq) if self.gm_norm_sq else None,
            "eta": self.eta,
            "L_hat": self.L_hat,
            "refresh_iterations": list(self.refresh_iterations),
            "wall_time_s": self.wall_time,
        }


# ---------------------------------------------------------------------------
# loss and gradient


def _solve_all(sset: ScenarioSet, theta, cfg: SolverConfig, warm) -> list[SolveReport]:
    return [
        solve_optimal_control(sset, i, theta, cfg, U0=warm[i] if warm else None)
        for i in range(len(sset))
    ]


def surrogate_loss(sset: ScenarioSet, theta, theta_emp, solves) -> float:
    """Average of ``2 F_i(U_i*, theta) - F_i(U_i*, theta_emp)`` over scenarios.

    ``solves`` must hold the scenario optima under ``theta``; the doubled
    self-evaluation reuses their objective values.
    """
    the = theta_values(theta_emp)
    total = 0.0
    for i, rep in enumerate(solves):
        total += 2.0 * rep.objective - scenario_value(sset, sset.scenarios[i].x0, rep.U, the)
    return total / len(solves)


def surrogate_gradient(sset: ScenarioSet, theta, theta_emp, solves,
                       cfg: SolverConfig = SolverConfig()) -> Array:
    """Exact surrogate gradient in parameter space.

    Per scenario: twice the partial parameter gradient at the optimum (the
    control-space partial vanishes there), minus the evaluation term pulled
    back through the optimizer Jacobian.
    """
    _, grad = _surrogate_value_grad(sset, theta, theta_emp, solves, cfg)
    return grad


def _surrogate_value_grad(sset: ScenarioSet, theta, theta_emp, solves,
                          cfg: SolverConfig) -> tuple[float, Array]:
    th = theta_values(theta)
    the = theta_values(theta_emp)
    N = len(solves)
    value = 0.0
    grad = np.zeros(sset.model.p)
    H_shared = None
    chol = None
    for i, rep in enumerate(solves):
        x0 = sset.scenarios[i].x0
        _, gth_self, _ = scenario_grads(sset, x0, rep.U, th)
        gU_emp, _, val_emp = scenario_grads(sset, x0, rep.U, the, want_theta=False)
        if sset.model.affine:
            if H_shared is None:
                H_shared, H_Ut = hessians_at(sset, x0, rep.U, th, cfg)
                chol = np.linalg.cholesky(H_shared)
            else:
                _, H_Ut = _theta_cross_hessian(sset, x0, rep.U, th, cfg)
        else:
            H_shared, H_Ut = hessians_at(sset, x0, rep.U, th, cfg)
            chol = np.linalg.cholesky(H_shared)
        y = np.linalg.solve(chol.T, np.linalg.solve(chol, gU_emp))
        # DU*^T gU_emp = -H_Ut^T H_UU^{-1} gU_emp
        grad += 2.0 * gth_self + H_Ut.T @ y
        value += 2.0 * rep.objective - val_emp
    return value / N, grad / N


def _theta_cross_hessian(sset: ScenarioSet, x0, U, th, cfg: SolverConfig):
    """H_Utheta only (the control-space block is reused for affine models)."""
    from .scenario_control import _fd_step

    p = sset.model.p
    mT = sset.model.m * sset.T
    dth = _fd_step(float(np.linalg.norm(th)), cfg.fd_step)
    H_Ut = np.empty((mT, p))
    for k in range(p):
        e = np.zeros(p)
        e[k] = dth
        gp, _, _ = scenario_grads(sset, x0, U, th + e, want_theta=False)
        gm, _, _ = scenario_grads(sset, x0, U, th - e, want_theta=False)
        H_Ut[:, k] = (gp - gm) / (2.0 * dth)
    return None, H_Ut


# ---------------------------------------------------------------------------
# projection, gradient mapping, Lipschitz estimate


def project_theta(theta_raw, box: Box) -> ParamVector:
    """Euclidean projection onto the box (componentwise clamp)."""
    return ParamVector(box.clip(theta_raw), box)


def gradient_mapping(theta, grad, eta: float, box: Box) -> Array:
    """Projected-gradient stationarity residual ``(theta - clip(theta - eta*grad)) / eta``."""
    if eta <= 0:
        raise ContractViolation("eta must be positive")
    th = theta_values(theta)
    return (th - box.clip(th - eta * np.asarray(grad, dtype=float))) / eta


def estimate_lipschitz(sset: ScenarioSet, theta_emp, box: Box, samples: int = 8,
                       seed: int = 0, cfg: SolverConfig = SolverConfig()) -> float:
    """Sampled Lipschitz constant of the surrogate gradient over the box.

    Maximum difference quotient over all pairs of sampled points, inflated by
    a safety factor of 2.  Each base point is paired with a nearby probe so
    the pair set sees local curvature as well as long-range secants.
    Empirical: a diagnostic step-size guide, not a certified bound.
    """
    if samples < 2:
        raise ContractViolation("need at least two samples")
    if box.p == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    base = box.sample(rng, samples)
    span = np.linalg.norm(box.hi - box.lo)
    pts = [base[k] for k in range(samples)]
    for k in range(samples):
        step = rng.standard_normal(box.p)
        step *= 0.01 * span / max(float(np.linalg.norm(step)), 1e-12)
        pts.append(box.clip(base[k] + step))
    grads = []
    for pt in pts:
        solves = _solve_all(sset, pt, cfg, None)
        _, g = _surrogate_value_grad(sset, pt, theta_emp, solves, cfg)
        grads.append(g)
    best = 0.0
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            dist = float(np.linalg.norm(pts[a] - pts[b]))
            if dist > 1e-9 * max(span, 1.0):
                best = max(best, float(np.linalg.norm(grads[a] - grads[b])) / dist)
    return 2.0 * best


# ---------------------------------------------------------------------------
# refinement loop


def _refresh_theta_emp(sset: ScenarioSet, theta: ParamVector, solves, fit_cfg: FitConfig) -> ParamVector:
    """Recompute the auxiliary parameter from counterfactuals under the current iterate."""
    rollouts = [counterfactual_rollout(sset, i, theta, solves[i].U) for i in range(len(sset))]
    controls = [rep.U for rep in solves]
    residuals = [sc.W for sc in sset.scenarios]
    return fit_theta_emp(rollouts, controls, residuals, sset.model, theta.box, fit_cfg)


def _run(sset: ScenarioSet, theta0: ParamVector, theta_emp: ParamVector,
         cfg: SurrogateConfig) -> tuple[ParamVector, RunRecord]:
    t_start = time.perf_counter()
    box = theta0.box
    L_hat = None
    if cfg.eta == "auto":
        L_hat = estimate_lipschitz(sset, theta_emp, box, cfg.lipschitz_samples,
                                   cfg.lipschitz_seed, cfg.solver)
        eta = 1.0 / max(L_hat, 1e-12)
    else:
        eta = float(cfg.eta)
    rec = RunRecord(variant=cfg.variant, L_hat=L_hat, eta=eta, box=box)
    theta = theta0
    warm = None

    def evaluate(th_pv: ParamVector, warm_controls):
        solves = _solve_all(sset, th_pv, cfg.solver, warm_controls)
        value, grad = _surrogate_value_grad(sset, th_pv, theta_emp, solves, cfg.solver)
        return solves, value, grad

    k = 0
    while True:
        solves, value, grad = evaluate(theta, warm)
        if cfg.warm_start:
            warm = [rep.U for rep in solves]
        if (cfg.variant == "updated" and k > 0 and k % cfg.tau == 0 and k < cfg.iters):
            theta_emp = _refresh_theta_emp(sset, theta, solves, cfg.fit)
            rec.refresh_iterations.append(k)
            value, grad = _surrogate_value_grad(sset, theta, theta_emp, solves, cfg.solver)
        gm = gradient_mapping(theta, grad, eta, box)
        gm_sq = float(gm @ gm)
        rec.thetas.append(theta.values.copy())
        rec.losses.append(value)
        rec.gm_norm_sq.append(gm_sq)
        rec.solver_iterations.append(sum(rep.iterations for rep in solves))
        if k >= cfg.iters:
            break
        if cfg.early_stop_gm is not None and np.sqrt(gm_sq) <= cfg.early_stop_gm:
            break
        step_eta = eta
        while True:
            theta_next = project_theta(theta.values - step_eta * grad, box)
            if not cfg.backtrack:
                break
            nxt_solves = _solve_all(sset, theta_next, cfg.solver, warm)
            nxt_value, _ = _surrogate_value_grad(sset, theta_next, theta_emp, nxt_solves, cfg.solver)
            gm_bt = gradient_mapping(theta, grad, step_eta, box)
            if nxt_value <= value - 0.5 * step_eta * float(gm_bt @ gm_bt) + 1e-9:
                break
            step_eta *= 0.5
        rec.etas.append(step_eta)
        theta = theta_next
        k += 1
    rec.wall_time = time.perf_counter() - t_start
    return theta, rec


def run_spc(sset: ScenarioSet, theta0: ParamVector, theta_emp: ParamVector,
            cfg: SurrogateConfig = SurrogateConfig()) -> tuple[ParamVector, RunRecord]:
    """Fixed-surrogate refinement: K projected-gradient steps from ``theta0``.

    The auxiliary evaluation parameter stays fixed throughout, which is the
    regime the descent certificate and transfer diagnostic apply to.
    """
    if cfg.variant != "fixed":
        raise ContractViolation("run_spc drives the fixed variant; use run_updated_spc")
    return _run(sset, theta0, theta_emp, cfg)


def run_updated_spc(sset: ScenarioSet, theta0: ParamVector, data: Dataset,
                    cfg: SurrogateConfig) -> tuple[ParamVector, RunRecord]:
    """Updated-surrogate refinement: the auxiliary parameter is refreshed every tau steps.

    The refresh re-rolls counterfactuals under the *current* iterate and its
    optimized controls, then refits.  A heuristic: per-iteration descent is
    not guaranteed across refresh boundaries.  The initial auxiliary
    parameter comes from the same construction at ``theta0``.
    """
    if cfg.variant != "updated":
        cfg = replace(cfg, variant="updated")
    if data.n != sset.model.n or data.m != sset.model.m or data.T != sset.T:
        raise ContractViolation("dataset dimensions do not match the scenario set")
    solves0 = _solve_all(sset, theta0, cfg.solver, None)
    theta_emp0 = _refresh_theta_emp(sset, theta0, solves0, cfg.fit)
    return _run(sset, theta0, theta_emp0, cfg)
