"""Finite-horizon quadratic cost and exact gradients via the discrete adjoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ModelSpec, as_controls, rollout_batch, theta_values
from .errors import ContractViolation

Array = np.ndarray

__all__ = ["CostMatrices", "total_cost", "cost_gradients"]

_PSD_FLOOR = -1e-10
_PD_FLOOR = 1e-10


def _check_weight(M, dim: int, name: str, floor: float) -> Array:
    a = np.array(M, dtype=float)
    if a.shape != (dim, dim):
        raise ContractViolation(f"{name} must have shape ({dim}, {dim}), got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ContractViolation(f"{name} must be symmetric")
    if np.linalg.eigvalsh(a)[0] < floor:
        kind = "positive definite" if floor > 0 else "positive semidefinite"
        raise ContractViolation(f"{name} must be {kind} (eigenvalue floor {floor})")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CostMatrices:
    """Stage weights Q (state), R (control) and terminal weight P.

    Q and P must be symmetric PSD, R symmetric PD; symmetry and eigenvalue
    floors are checked at construction.
    """

    Q: Array
    R: Array
    P: Array

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        n = Q.shape[0] if Q.ndim == 2 else 0
        R = np.asarray(self.R, dtype=float)
        m = R.shape[0] if R.ndim == 2 else 0
        object.__setattr__(self, "Q", _check_weight(self.Q, n, "Q", _PSD_FLOOR))
        object.__setattr__(self, "R", _check_weight(self.R, m, "R", _PD_FLOOR))
        object.__setattr__(self, "P", _check_weight(self.P, n, "P", _PSD_FLOOR))

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]


def stage_costs_batch(cm: CostMatrices, xs: Array, U: Array) -> Array:
    """Total quadratic cost for batched trajectories ``xs (..., T+1, n)``."""
    T = U.shape[0]
    xstage = xs[..., :T, :]
    state_term = np.einsum("...ti,ij,...tj->...", xstage, cm.Q, xstage)
    ctrl_term = float(np.einsum("ti,ij,tj->", U, cm.R, U))
    terminal = np.einsum("...i,ij,...j->...", xs[..., T, :], cm.P, xs[..., T, :])
    return state_term + ctrl_term + terminal


def total_cost(model: ModelSpec, cm: CostMatrices, x0, U, theta, W) -> float:
    """Cost of the rollout from ``x0`` under ``(U, theta, W)``.

    ``J = sum_t (x_t' Q x_t + u_t' R u_t) + x_T' P x_T`` along the exact
    recursion; always nonnegative.
    """
    U = as_controls(U, model.m)
    xs = rollout_batch(model, np.asarray(x0, dtype=float), U, theta, W)
    return float(stage_costs_batch(cm, xs, U))


def cost_gradients_batch(model: ModelSpec, cm: CostMatrices, x0: Array, U: Array,
                         theta, W: Array, want_theta: bool = True):
    """Adjoint gradients for a batch of (x0, W) pairs sharing one control sequence.

    Backward recursion: ``lam_T = 2 P x_T``, ``lam_t = 2 Q x_t + A_t' lam_{t+1}``,
    with ``dJ/du_t = 2 R u_t + B_t' lam_{t+1}`` and
    ``dJ/dtheta = sum_t C_t' lam_{t+1}``.

    Returns ``(grad_U (..., T, m), grad_theta (..., p) or None, cost (...,))``.
    One forward rollout plus one backward pass.
    """
    th = theta_values(theta)
    U = as_controls(U, model.m)
    T = U.shape[0]
    xs = rollout_batch(model, x0, U, theta, W)
    batch = xs.shape[:-2]
    cost = stage_costs_batch(cm, xs, U)

    xpts = xs[..., :T, :]
    upts = np.broadcast_to(U, batch + (T, model.m))
    A = np.asarray(model.dfdx(xpts, upts, th), dtype=float)
    Bm = np.asarray(model.dfdu(xpts, upts, th), dtype=float)
    C = np.asarray(model.dfdtheta(xpts, upts, th), dtype=float) if want_theta else None

    grad_U = np.empty(batch + (T, model.m))
    grad_theta = np.zeros(batch + (model.p,)) if want_theta else None
    lam = 2.0 * xs[..., T, :] @ cm.P
    Ru2 = 2.0 * U @ cm.R
    for t in range(T - 1, -1, -1):
        grad_U[..., t, :] = Ru2[t] + np.einsum("...nm,...n->...m", Bm[..., t, :, :], lam)
        if want_theta:
            grad_theta += np.einsum("...np,...n->...p", C[..., t, :, :], lam)
        if t > 0:
            lam = 2.0 * xs[..., t, :] @ cm.Q + np.einsum(
                "...nk,...n->...k", A[..., t, :, :], lam)
    return grad_U, grad_theta, cost


def cost_gradients(model: ModelSpec, cm: CostMatrices, x0, U, theta, W):
    """Exact gradients of :func:`total_cost` with respect to U and theta.

    Returns ``(grad_U, grad_theta, cost)`` with ``grad_U`` stacked time-major
    in R^{mT} and ``grad_theta`` in R^p.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ContractViolation(f"x0 must have shape ({model.n},), got {x0.shape}")
    gU, gth, cost = cost_gradients_batch(model, cm, x0, U, theta,
                                         np.asarray(W, dtype=float))
    return gU.ravel(), gth, float(cost)
