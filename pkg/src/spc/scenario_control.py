"""Scenario objective, its strongly convex minimization, and optimizer sensitivities.

A scenario couples an initial state with a disturbance sequence.  The
scenario objective for index ``i`` averages the finite-horizon cost of one
control sequence, started at ``x0_i``, over the disturbance sequences of
*all* scenarios in the set.  Under a positive definite control weight the
objective is strongly convex in the controls, the minimizer is unique, and
its sensitivity to the model parameters follows from the implicit function
theorem.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .cost import CostMatrices, cost_gradients_batch, stage_costs_batch
from .dynamics import ModelSpec, as_controls, rollout_batch, rollout_jacobians, theta_values
from .errors import ContractViolation, Nonconvergence, StrongConvexityViolation

Array = np.ndarray

__all__ = [
    "Scenario",
    "ScenarioSet",
    "SolverConfig",
    "SolveReport",
    "scenario_objective",
    "scenario_gradients",
    "solve_optimal_control",
    "optimizer_hessians",
    "optimizer_jacobian",
]


@dataclass(frozen=True)
class Scenario:
    """An initial state paired with a disturbance sequence."""

    x0: Array
    W: Array
    id: int

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float)
        W = np.array(self.W, dtype=float)
        x0.setflags(write=False)
        W.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "W", W)


@dataclass(frozen=True)
class ScenarioSet:
    """Nonempty collection of scenarios plus the model and cost they run under."""

    model: ModelSpec
    cost: CostMatrices
    scenarios: tuple[Scenario, ...]
    T: int

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise ContractViolation("scenario set must be nonempty")
        n = self.model.n
        for s in self.scenarios:
            if s.x0.shape != (n,):
                raise ContractViolation(f"scenario {s.id}: x0 has shape {s.x0.shape}")
            if s.W.shape != (self.T, n):
                raise ContractViolation(
                    f"scenario {s.id}: W has shape {s.W.shape}, expected ({self.T}, {n})")

    def __len__(self) -> int:
        return len(self.scenarios)

    @cached_property
    def disturbances(self) -> Array:
        """All disturbance sequences stacked as (N, T, n)."""
        out = np.stack([s.W for s in self.scenarios])
        out.setflags(write=False)
        return out


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the inner control solver and its derivative machinery."""

    eps_u: float = 1e-9
    max_iter: int = 100
    mu_floor: float = 1e-8
    warm_start: str = "previous"  # "previous" | "zeros"
    fd_step: float = 1e-6
    armijo_c1: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if self.eps_u <= 0 or self.max_iter < 1 or self.mu_floor <= 0:
            raise ContractViolation("solver config requires eps_u, mu_floor > 0 and max_iter >= 1")
        if self.warm_start not in ("previous", "zeros"):
            raise ContractViolation(f"unknown warm-start policy {self.warm_start!r}")


@dataclass(frozen=True)
class SolveReport:
    """Solved control sequence with convergence evidence."""

    U: Array
    grad_norm: float
    iterations: int
    objective: float

    def __post_init__(self):
        U = np.array(self.U, dtype=float)
        U.setflags(write=False)
        object.__setattr__(self, "U", U)


# ---------------------------------------------------------------------------
# objective and gradients


def scenario_value(sset: ScenarioSet, x0: Array, U, theta) -> float:
    """Average cost of (x0, U) over all disturbance sequences in the set."""
    U = as_controls(U, sset.model.m, sset.T)
    xs = rollout_batch(sset.model, x0, U, theta, sset.disturbances)
    return float(np.mean(stage_costs_batch(sset.cost, xs, U)))


def scenario_grads(sset: ScenarioSet, x0: Array, U, theta, want_theta: bool = True):
    """Averaged adjoint gradients of the scenario objective.

    Returns ``(grad_U (mT,), grad_theta (p,) or None, value)``.
    """
    U = as_controls(U, sset.model.m, sset.T)
    gU, gth, cost = cost_gradients_batch(
        sset.model, sset.cost, x0, U, theta, sset.disturbances, want_theta=want_theta)
    grad_U = gU.mean(axis=0).ravel()
    grad_theta = gth.mean(axis=0) if want_theta else None
    return grad_U, grad_theta, float(cost.mean())


def scenario_objective(sset: ScenarioSet, i: int, U, theta) -> float:
    """Scenario objective ``F_i(U, theta)``."""
    return scenario_value(sset, sset.scenarios[i].x0, U, theta)


def scenario_gradients(sset: ScenarioSet, i: int, U, theta):
    """Gradients of ``F_i`` with respect to U (stacked, mT) and theta, plus the value."""
    return scenario_grads(sset, sset.scenarios[i].x0, U, theta)


# ---------------------------------------------------------------------------
# Gauss-Newton Hessian assembly (internal, exact for affine models)


def _gn_hessian(sset: ScenarioSet, x0: Array, U: Array, theta) -> Array:
    """Control-space Gauss-Newton Hessian of the scenario objective.

    Built from the per-step linearization along the rolled-out trajectories;
    exact when the model is affine in (x, u), Gauss-Newton quality otherwise.
    """
    model, cm, T = sset.model, sset.cost, sset.T
    n, m = model.n, model.m
    mT = m * T
    th = theta_values(theta)
    if model.affine:
        # Jacobians are state-independent: evaluate once at a dummy point.
        x = np.zeros(n)
        A = np.asarray(model.dfdx(x, np.zeros(m), th), dtype=float)[None]
        Bm = np.asarray(model.dfdu(x, np.zeros(m), th), dtype=float)[None]
        A = np.broadcast_to(A, (T, n, n))[None]
        Bm = np.broadcast_to(Bm, (T, n, m))[None]
        nbatch = 1
    else:
        xs = rollout_batch(model, x0, U, theta, sset.disturbances)
        nbatch = xs.shape[0]
        xpts = xs[:, :T, :]
        upts = np.broadcast_to(U, (nbatch, T, m))
        A = np.asarray(model.dfdx(xpts, upts, th), dtype=float)
        Bm = np.asarray(model.dfdu(xpts, upts, th), dtype=float)

    H = np.zeros((mT, mT))
    S = np.zeros((nbatch, n, mT))
    for t in range(1, T + 1):
        S = np.einsum("bij,bjk->bik", A[:, t - 1], S)
        S[:, :, (t - 1) * m:t * m] += Bm[:, t - 1]
        Wt = cm.Q if t < T else cm.P
        H += np.einsum("bni,nk,bkj->ij", S, Wt, S) / nbatch
    H *= 2.0
    H[np.arange(mT).reshape(T, m)[:, :, None], np.arange(mT).reshape(T, m)[:, None, :]] += 2.0 * cm.R
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# inner solver


def solve_scenario(sset: ScenarioSet, x0: Array, theta, cfg: SolverConfig = SolverConfig(),
                   U0=None) -> SolveReport:
    """Minimize the scenario objective over unconstrained controls.

    Damped Newton on the Gauss-Newton Hessian with Armijo backtracking and a
    gradient-descent fallback; terminates when the control-space gradient
    norm drops below ``cfg.eps_u``.
    """
    model, T = sset.model, sset.T
    U = np.zeros((T, model.m)) if U0 is None else as_controls(U0, model.m, T).copy()
    gU, _, val = scenario_grads(sset, x0, U, theta, want_theta=False)
    H = None
    for it in range(cfg.max_iter):
        gnorm = float(np.linalg.norm(gU))
        if gnorm <= cfg.eps_u:
            return SolveReport(U=U, grad_norm=gnorm, iterations=it, objective=val)
        if H is None or not model.affine:
            H = _gn_hessian(sset, x0, U, theta)
        try:
            L = np.linalg.cholesky(H)
            d = -np.linalg.solve(L.T, np.linalg.solve(L, gU))
        except np.linalg.LinAlgError:
            d = -gU
        slope = float(d @ gU)
        if slope >= 0.0:  # not a descent direction; fall back to steepest descent
            d = -gU
            slope = -float(gU @ gU)
        alpha, accepted = 1.0, False
        noise = 1e-12 * max(1.0, abs(val))
        for _ in range(cfg.max_backtracks):
            U_trial = U + alpha * d.reshape(T, model.m)
            try:
                val_trial = scenario_value(sset, x0, U_trial, theta)
            except ArithmeticError:
                val_trial = np.inf
            if val_trial <= val + cfg.armijo_c1 * alpha * slope:
                accepted = True
                break
            if -alpha * slope < noise:
                break  # predicted decrease below float resolution
            alpha *= 0.5
        if not accepted:
            # Near the optimum value comparisons drown in rounding; accept the
            # step if it still shrinks the gradient.
            g_trial, _, val_trial = scenario_grads(sset, x0, U_trial, theta,
                                                   want_theta=False)
            if np.isfinite(val_trial) and np.linalg.norm(g_trial) < gnorm:
                U, gU, val = U_trial, g_trial, val_trial
                continue
            raise Nonconvergence("line search stalled in scenario solve",
                                 best=U, grad_norm=gnorm, iterations=it)
        U = U_trial
        gU, _, val = scenario_grads(sset, x0, U, theta, want_theta=False)
    gnorm = float(np.linalg.norm(gU))
    if gnorm <= cfg.eps_u:
        return SolveReport(U=U, grad_norm=gnorm, iterations=cfg.max_iter, objective=val)
    raise Nonconvergence(
        f"scenario solve exhausted {cfg.max_iter} iterations (grad norm {gnorm:.3e})",
        best=U, grad_norm=gnorm, iterations=cfg.max_iter)


def solve_optimal_control(sset: ScenarioSet, i: int, theta,
                          cfg: SolverConfig = SolverConfig(), U0=None) -> SolveReport:
    """Solve ``min_U F_i(U, theta)`` to the configured gradient tolerance.

    Warm-starts from ``U0`` when given, otherwise from zeros.  Raises
    :class:`Nonconvergence` carrying the best iterate if the budget runs out.
    """
    return solve_scenario(sset, sset.scenarios[i].x0, theta, cfg, U0)


# ---------------------------------------------------------------------------
# second derivatives by central differences of the analytic gradient


def _fd_step(scale: float, base: float) -> float:
    return max(base, base * scale)


def hessians_at(sset: ScenarioSet, x0: Array, Ustar, theta,
                cfg: SolverConfig = SolverConfig(), check_floor: bool = True):
    """(H_UU, H_Utheta) at a solved control, by central differences of the gradient."""
    model, T = sset.model, sset.T
    U = as_controls(Ustar, model.m, T)
    th = theta_values(theta)
    mT = model.m * T
    p = model.p

    du = _fd_step(float(np.linalg.norm(U)), cfg.fd_step)
    H_UU = np.empty((mT, mT))
    flatU = U.ravel()
    for k in range(mT):
        e = np.zeros(mT)
        e[k] = du
        gp, _, _ = scenario_grads(sset, x0, flatU + e, th, want_theta=False)
        gm, _, _ = scenario_grads(sset, x0, flatU - e, th, want_theta=False)
        H_UU[:, k] = (gp - gm) / (2.0 * du)
    H_UU = 0.5 * (H_UU + H_UU.T)

    if check_floor:
        min_eig = float(np.linalg.eigvalsh(H_UU)[0])
        if min_eig < cfg.mu_floor:
            raise StrongConvexityViolation(
                f"control Hessian minimum eigenvalue {min_eig:.3e} below floor {cfg.mu_floor:.1e}")

    dth = _fd_step(float(np.linalg.norm(th)), cfg.fd_step)
    H_Ut = np.empty((mT, p))
    for k in range(p):
        e = np.zeros(p)
        e[k] = dth
        gp, _, _ = scenario_grads(sset, x0, U, th + e, want_theta=False)
        gm, _, _ = scenario_grads(sset, x0, U, th - e, want_theta=False)
        H_Ut[:, k] = (gp - gm) / (2.0 * dth)
    return H_UU, H_Ut


def optimizer_hessians(sset: ScenarioSet, i: int, Ustar, theta,
                       cfg: SolverConfig = SolverConfig()):
    """Second derivatives of ``F_i`` at the optimum: ``(H_UU, H_Utheta)``.

    ``H_UU`` is symmetrized and checked against the strong-convexity floor;
    a violation signals that the model breaks the convexity the optimizer
    map relies on.
    """
    return hessians_at(sset, sset.scenarios[i].x0, Ustar, theta, cfg)


def optimizer_jacobian(sset: ScenarioSet, i: int, Ustar, theta,
                       cfg: SolverConfig = SolverConfig()) -> Array:
    """Sensitivity ``DU* = -H_UU^{-1} H_Utheta`` of the optimizer map (mT x p)."""
    H_UU, H_Ut = optimizer_hessians(sset, i, Ustar, theta, cfg)
    try:
        L = np.linalg.cholesky(H_UU)
    except np.linalg.LinAlgError as exc:
        raise StrongConvexityViolation("control Hessian factorization failed") from exc
    return -np.linalg.solve(L.T, np.linalg.solve(L, H_Ut))
