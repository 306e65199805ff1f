"""Deployment metric, bias decomposition, conditional transfer, and certificates.

Everything here is synthetic-mode tooling: it assumes access to the true
parameter and true disturbances, and serves as an analytical reference for
what the refinement loop achieves.  None of it feeds back into the
algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import total_cost
from .dynamics import Box, ParamVector, theta_values
from .errors import ContractViolation
from .scenario_control import ScenarioSet, SolverConfig, solve_scenario
from .surrogate import RunRecord, _solve_all, _surrogate_value_grad, surrogate_loss

Array = np.ndarray

__all__ = [
    "DeploymentSet",
    "TransferReport",
    "ConvergenceCertificate",
    "deployment_metric",
    "bias",
    "estimate_bias_lipschitz",
    "transfer_check",
    "convergence_certificate",
    "grid_sweep",
]


@dataclass(frozen=True)
class DeploymentSet:
    """Deployment scenarios (initial state, true disturbance) plus the true parameter."""

    scenarios: tuple[tuple[Array, Array], ...]
    theta_true: ParamVector | None = None

    def __post_init__(self):
        scns = []
        for x0, W in self.scenarios:
            x0 = np.array(x0, dtype=float)
            W = np.array(W, dtype=float)
            x0.setflags(write=False)
            W.setflags(write=False)
            scns.append((x0, W))
        if not scns:
            raise ContractViolation("deployment set must be nonempty")
        object.__setattr__(self, "scenarios", tuple(scns))


@dataclass(frozen=True)
class TransferReport:
    """Outcome of the conditional-transfer check.

    ``verdict`` is ``"certified"`` only when the condition margin is strictly
    positive and the deployment metric strictly decreased.  A positive margin
    without a decrease means the supplied bias Lipschitz constant was an
    underestimate (``"bound-underestimate"``); otherwise ``"inconclusive"``.
    """

    surrogate_decrease: float
    theta_shift: float
    bias_lipschitz: float
    condition_margin: float
    v_initial: float
    v_final: float
    verdict: str

    def to_dict(self) -> dict:
        return {
            "surrogate_decrease": self.surrogate_decrease,
            "theta_shift": self.theta_shift,
            "bias_lipschitz": self.bias_lipschitz,
            "condition_margin": self.condition_margin,
            "v_initial": self.v_initial,
            "v_final": self.v_final,
            "verdict": self.verdict,
        }


@dataclass(frozen=True)
class ConvergenceCertificate:
    """Replay check of the per-iteration descent inequality and the rate bound."""

    descent_ok: bool
    worst_descent_slack: float
    min_gm_norm_sq: float
    rate_bound: float
    rate_ok: bool
    eta: float
    eta_above_lipschitz: bool
    iterations: int

    def to_dict(self) -> dict:
        return {
            "descent_ok": self.descent_ok,
            "worst_descent_slack": self.worst_descent_slack,
            "min_gm_norm_sq": self.min_gm_norm_sq,
            "rate_bound": self.rate_bound,
            "rate_ok": self.rate_ok,
            "eta": self.eta,
            "eta_above_lipschitz": self.eta_above_lipschitz,
            "iterations": self.iterations,
        }


def deployment_metric(dep: DeploymentSet, sset: ScenarioSet, theta,
                      cfg: SolverConfig = SolverConfig()) -> float:
    """Average true-system cost of the controls the candidate parameter induces.

    For each deployment initial state, the control sequence is solved from
    the scenario problem built on the *training* residual disturbances; the
    resulting controls are then costed on the true parameter and the true
    deployment disturbance.  Requires synthetic mode (true parameter known).
    """
    if dep.theta_true is None:
        raise ContractViolation("deployment metric requires the true parameter")
    total = 0.0
    for x0, W_true in dep.scenarios:
        rep = solve_scenario(sset, x0, theta, cfg)
        total += total_cost(sset.model, sset.cost, x0, rep.U, dep.theta_true, W_true)
    return total / len(dep.scenarios)


def _surrogate_at(sset: ScenarioSet, theta, theta_emp, cfg: SolverConfig) -> float:
    solves = _solve_all(sset, theta, cfg, None)
    return surrogate_loss(sset, theta, theta_emp, solves)


def bias(theta, theta_emp, dep: DeploymentSet, sset: ScenarioSet,
         cfg: SolverConfig = SolverConfig()) -> float:
    """Gap between the deployment metric and the surrogate at ``theta``."""
    return deployment_metric(dep, sset, theta, cfg) - _surrogate_at(sset, theta, theta_emp, cfg)


def estimate_bias_lipschitz(dep: DeploymentSet, sset: ScenarioSet, theta_emp,
                            box: Box, samples: int = 8, seed: int = 0,
                            cfg: SolverConfig = SolverConfig()) -> float:
    """Sampled Lipschitz estimate of the bias over the box, safety factor 2.

    Diagnostic, not a certificate: the true constant is not computable from
    data alone.
    """
    if samples < 2:
        raise ContractViolation("need at least two samples")
    if box.p == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    pts = box.sample(rng, samples)
    values = [bias(pts[k], theta_emp, dep, sset, cfg) for k in range(samples)]
    best = 0.0
    for a in range(samples):
        for b in range(a + 1, samples):
            dist = float(np.linalg.norm(pts[a] - pts[b]))
            if dist > 1e-12:
                best = max(best, abs(values[a] - values[b]) / dist)
    return 2.0 * best


def transfer_check(run: RunRecord, dep: DeploymentSet, sset: ScenarioSet,
                   theta_emp, bias_lipschitz: float,
                   cfg: SolverConfig = SolverConfig()) -> TransferReport:
    """Evaluate the conditional-transfer condition on a completed fixed-variant run.

    The condition compares the surrogate decrease against the bias Lipschitz
    constant times the parameter shift; when it holds, the deployment metric
    is predicted to strictly decrease.
    """
    if run.variant != "fixed":
        raise ContractViolation("transfer check applies to fixed-variant runs")
    decrease = float(run.losses[0] - run.losses[-1])
    shift = float(np.linalg.norm(run.theta(-1) - run.theta(0)))
    margin = decrease - bias_lipschitz * shift
    box = run.box
    v0 = deployment_metric(dep, sset, ParamVector(run.theta(0), box), cfg)
    vK = deployment_metric(dep, sset, ParamVector(run.theta(-1), box), cfg)
    if margin > 0.0 and vK < v0:
        verdict = "certified"
    elif margin > 0.0:
        verdict = "bound-underestimate"
    else:
        verdict = "inconclusive"
    return TransferReport(
        surrogate_decrease=decrease, theta_shift=shift,
        bias_lipschitz=bias_lipschitz, condition_margin=margin,
        v_initial=v0, v_final=vK, verdict=verdict,
    )


def convergence_certificate(run: RunRecord, eta: float,
                            Lstar_hint: float | None = None,
                            slack: float = 1e-9) -> ConvergenceCertificate:
    """Verify per-iteration descent and the O(1/K) stationarity bound from the log.

    Uses the best observed surrogate value in place of the unknown optimum,
    or ``Lstar_hint`` when a better reference (e.g. a dense grid) exists.
    When the step size exceeds the reciprocal of the recorded Lipschitz
    estimate, the certificate is reported as out of hypothesis instead of
    failing.
    """
    K = run.K
    losses = np.asarray(run.losses, dtype=float)
    gm_sq = np.asarray(run.gm_norm_sq, dtype=float)
    worst = -np.inf
    for k in range(K):
        worst = max(worst, float(losses[k + 1] - (losses[k] - 0.5 * eta * gm_sq[k])))
    descent_ok = bool(K == 0 or worst <= slack)
    lstar = float(losses.min()) if Lstar_hint is None else float(Lstar_hint)
    if K >= 1:
        min_gm = float(gm_sq[:K].min())
        bound = 2.0 * (float(losses[0]) - lstar) / (eta * K)
    else:
        min_gm = float(gm_sq[0])
        bound = np.inf
    eta_above = bool(run.L_hat is not None and run.L_hat > 0.0
                     and eta > 1.0 / run.L_hat * (1.0 + 1e-12))
    return ConvergenceCertificate(
        descent_ok=descent_ok,
        worst_descent_slack=float(worst if K else 0.0),
        min_gm_norm_sq=min_gm,
        rate_bound=bound,
        rate_ok=bool(min_gm <= bound + 1e-12),
        eta=eta,
        eta_above_lipschitz=eta_above,
        iterations=K,
    )


def grid_sweep(dep: DeploymentSet, sset: ScenarioSet, theta_emp, box: Box,
               points: int = 101, cfg: SolverConfig = SolverConfig()) -> dict:
    """Dense sweep of V, the surrogate, and the bias over a 1- or 2-parameter box.

    Returns a dict of flat arrays: ``theta`` (points x p), ``V``, ``L_tilde``
    and ``B``.  Intended for plotting and for grid-oracle bias-Lipschitz
    estimates on small instances.
    """
    if box.p not in (1, 2):
        raise ContractViolation("grid sweeps support 1- or 2-parameter boxes only")
    axes = [np.linspace(box.lo[j], box.hi[j], points) for j in range(box.p)]
    if box.p == 1:
        thetas = axes[0][:, None]
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        thetas = np.column_stack([g0.ravel(), g1.ravel()])
    V = np.empty(len(thetas))
    Lt = np.empty(len(thetas))
    for k, th in enumerate(thetas):
        V[k] = deployment_metric(dep, sset, th, cfg)
        Lt[k] = _surrogate_at(sset, th, theta_emp, cfg)
    return {"theta": thetas, "V": V, "L_tilde": Lt, "B": V - Lt}
