"""Parameterized discrete-time dynamics, trajectory rollouts, and rollout Jacobians.

Models follow the recursion ``x_{t+1} = f(x_t, u_t, theta) + w_t`` with an
additive exogenous disturbance ``w_t``.  A :class:`ModelSpec` bundles the map
``f`` with its three first-order Jacobians; everything downstream (adjoint
gradients, optimizer Hessians) is built from these, so second derivatives of
``f`` are never required from model authors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, RolloutOverflow

Array = np.ndarray

__all__ = [
    "Box",
    "ParamVector",
    "ModelSpec",
    "WindSpec",
    "rollout",
    "rollout_jacobians",
    "make_linear_model",
    "make_pointmass_wind_model",
    "wind_disturbance_sequence",
    "get_model",
    "as_controls",
]


def _readonly(a) -> Array:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Box:
    """Axis-aligned box of admissible parameters: compact, convex, nonempty interior."""

    lo: Array
    hi: Array

    def __post_init__(self):
        lo = _readonly(np.atleast_1d(self.lo))
        hi = _readonly(np.atleast_1d(self.hi))
        if lo.ndim != 1 or hi.shape != lo.shape:
            raise ContractViolation("box bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractViolation("box bounds must be finite")
        if lo.size and not np.all(lo < hi):
            raise ContractViolation("box requires lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def p(self) -> int:
        return self.lo.size

    def clip(self, values) -> Array:
        return np.clip(np.asarray(values, dtype=float), self.lo, self.hi)

    def contains(self, values, atol: float = 0.0) -> bool:
        v = np.asarray(values, dtype=float)
        return bool(np.all(v >= self.lo - atol) and np.all(v <= self.hi + atol))

    def sample(self, rng: np.random.Generator, count: int | None = None) -> Array:
        shape = (self.p,) if count is None else (count, self.p)
        return self.lo + (self.hi - self.lo) * rng.uniform(size=shape)


@dataclass(frozen=True)
class ParamVector:
    """Model parameter vector together with the box it must live in."""

    values: Array
    box: Box

    def __post_init__(self):
        v = _readonly(np.atleast_1d(self.values))
        if v.shape != (self.box.p,):
            raise ContractViolation(
                f"parameter vector has length {v.size}, box expects {self.box.p}")
        if not np.all(np.isfinite(v)):
            raise ContractViolation("parameter vector must be finite")
        if not self.box.contains(v):
            raise ContractViolation("parameter vector violates its box bounds")
        object.__setattr__(self, "values", v)

    @property
    def p(self) -> int:
        return self.values.size

    def replace(self, values) -> "ParamVector":
        return ParamVector(values, self.box)


def theta_values(theta) -> Array:
    """Accept a ParamVector or a bare array and return the raw parameter array."""
    if isinstance(theta, ParamVector):
        return theta.values
    return np.atleast_1d(np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    """Discrete-time dynamics model with first-order Jacobians.

    All four callables must accept batched inputs: states of shape
    ``(..., n)``, controls of shape ``(..., m)`` (broadcast against the state
    batch), and a single parameter vector of shape ``(p,)``.  They return
    arrays with matching leading dimensions: ``f -> (..., n)``,
    ``dfdx -> (..., n, n)``, ``dfdu -> (..., n, m)``, ``dfdtheta -> (..., n, p)``.

    ``affine`` marks models whose ``f`` is affine in ``(x, u)`` for every
    fixed ``theta``; solvers exploit this to reuse control-space Hessians.
    ``linear_in_theta`` marks models whose ``f`` is affine in ``theta`` at
    every fixed ``(x, u)``; fits exploit this for Gauss-Newton exactness.
    Instances are immutable and safe to share across threads.
    """

    name: str
    n: int
    m: int
    p: int
    f: Callable[[Array, Array, Array], Array]
    dfdx: Callable[[Array, Array, Array], Array]
    dfdu: Callable[[Array, Array, Array], Array]
    dfdtheta: Callable[[Array, Array, Array], Array]
    affine: bool = False
    linear_in_theta: bool = False
    wind: "WindSpec | None" = None
    dt: float | None = None
    mass: float | None = None


def as_controls(U, m: int, T: int | None = None) -> Array:
    """Normalize a control sequence to shape (T, m).

    Accepts a ``(T, m)`` array or a stacked vector of length ``m*T``
    (time-major, ``u_0`` first).
    """
    a = np.asarray(U, dtype=float)
    if a.ndim == 1:
        if a.size % m != 0:
            raise ContractViolation(
                f"stacked control vector of length {a.size} is not a multiple of m={m}")
        a = a.reshape(-1, m)
    if a.ndim != 2 or a.shape[1] != m:
        raise ContractViolation(f"control sequence must have shape (T, {m}), got {a.shape}")
    if T is not None and a.shape[0] != T:
        raise ContractViolation(f"control sequence has {a.shape[0]} steps, expected {T}")
    return a


def _check_disturbances(W, T: int, n: int) -> Array:
    a = np.asarray(W, dtype=float)
    if a.shape[-2:] != (T, n):
        raise ContractViolation(
            f"disturbance sequence must have trailing shape ({T}, {n}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("disturbance sequence contains non-finite entries")
    return a


def rollout_batch(model: ModelSpec, x0: Array, U: Array, theta, W: Array) -> Array:
    """Rollout with arbitrary leading batch dimensions on ``x0`` and ``W``.

    ``x0`` has shape ``(..., n)`` and ``W`` shape ``(..., T, n)``; the control
    sequence is shared across the batch.  Returns ``(..., T+1, n)``.
    """
    th = theta_values(theta)
    U = as_controls(U, model.m)
    T = U.shape[0]
    x0 = np.asarray(x0, dtype=float)
    W = _check_disturbances(W, T, model.n)
    batch = np.broadcast_shapes(x0.shape[:-1], W.shape[:-2])
    xs = np.empty(batch + (T + 1, model.n))
    x = np.broadcast_to(x0, batch + (model.n,))
    xs[..., 0, :] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            x = model.f(xs[..., t, :], U[t], th) + W[..., t, :]
            if not np.all(np.isfinite(x)):
                raise RolloutOverflow(step=t + 1)
            xs[..., t + 1, :] = x
    return xs


def rollout(model: ModelSpec, x0, U, theta, W) -> Array:
    """Roll the recursion forward and return the states ``(x_0, ..., x_T)``.

    Raises :class:`ContractViolation` on dimension mismatch and
    :class:`RolloutOverflow` (naming the step) if an intermediate state goes
    non-finite.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ContractViolation(f"x0 must have shape ({model.n},), got {x0.shape}")
    return rollout_batch(model, x0, U, theta, np.asarray(W, dtype=float))


def rollout_jacobians(model: ModelSpec, traj, U, theta):
    """Per-step Jacobian triples ``(A_t, B_t, C_t)`` along a trajectory.

    ``A_t = df/dx``, ``B_t = df/du``, ``C_t = df/dtheta`` evaluated at
    ``(x_t, u_t, theta)`` for ``t = 0..T-1``.  Returns arrays of shape
    ``(T, n, n)``, ``(T, n, m)`` and ``(T, n, p)``.
    """
    th = theta_values(theta)
    U = as_controls(U, model.m)
    T = U.shape[0]
    traj = np.asarray(traj, dtype=float)
    if traj.shape != (T + 1, model.n):
        raise ContractViolation(
            f"trajectory must have shape ({T + 1}, {model.n}), got {traj.shape}")
    xs = traj[:-1]
    A = np.asarray(model.dfdx(xs, U, th), dtype=float)
    B = np.asarray(model.dfdu(xs, U, th), dtype=float)
    C = np.asarray(model.dfdtheta(xs, U, th), dtype=float)
    return A, B, C


# ---------------------------------------------------------------------------
# linear model with selectable parameter entries


def make_linear_model(A, B, param_mask: Sequence[tuple[str, int, int]] = ()) -> ModelSpec:
    """Linear model ``f(x, u; theta) = A(theta) x + B(theta) u``.

    ``param_mask`` lists matrix entries, e.g. ``("A", 0, 0)`` or
    ``("B", 1, 0)``, that are replaced by the corresponding component of
    ``theta`` (in mask order).  Unmasked entries keep the values passed in.
    """
    A0 = np.array(A, dtype=float)
    B0 = np.array(B, dtype=float)
    if A0.ndim != 2 or A0.shape[0] != A0.shape[1]:
        raise ContractViolation("A must be square")
    n = A0.shape[0]
    if B0.ndim != 2 or B0.shape[0] != n:
        raise ContractViolation("B must have n rows")
    m = B0.shape[1]
    mask = []
    for entry in param_mask:
        which, i, j = entry
        if which == "A":
            if not (0 <= i < n and 0 <= j < n):
                raise ContractViolation(f"mask index {entry} out of range for A")
        elif which == "B":
            if not (0 <= i < n and 0 <= j < m):
                raise ContractViolation(f"mask index {entry} out of range for B")
        else:
            raise ContractViolation(f"mask entries must name 'A' or 'B', got {which!r}")
        mask.append((which, int(i), int(j)))
    p = len(mask)

    def materialize(th):
        Am, Bm = A0.copy(), B0.copy()
        for k, (which, i, j) in enumerate(mask):
            if which == "A":
                Am[i, j] = th[k]
            else:
                Bm[i, j] = th[k]
        return Am, Bm

    def f(x, u, th):
        Am, Bm = materialize(th)
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return x @ Am.T + u @ Bm.T

    def dfdx(x, u, th):
        Am, _ = materialize(th)
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(Am, x.shape[:-1] + (n, n)).copy()

    def dfdu(x, u, th):
        _, Bm = materialize(th)
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(Bm, x.shape[:-1] + (n, m)).copy()

    def dfdtheta(x, u, th):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        out = np.zeros(batch + (n, p))
        xb = np.broadcast_to(x, batch + (n,))
        ub = np.broadcast_to(u, batch + (m,))
        for k, (which, i, j) in enumerate(mask):
            out[..., i, k] = xb[..., j] if which == "A" else ub[..., j]
        return out

    return ModelSpec(
        name="linear", n=n, m=m, p=p,
        f=f, dfdx=dfdx, dfdu=dfdu, dfdtheta=dfdtheta,
        affine=True, linear_in_theta=True,
    )


# ---------------------------------------------------------------------------
# 3-D point mass in wind


@dataclass(frozen=True)
class WindSpec:
    """Steady force plus per-axis sinusoidal gusts, in newtons.

    ``force(t) = steady + gust_amp * sin(2*pi*gust_freq_hz*t + gust_phase)``
    with ``t`` in seconds.
    """

    steady: Array = (0.35, -0.15, 0.0)
    gust_amp: Array = (0.20, 0.25, 0.0)
    gust_freq_hz: Array = (0.05, 0.08, 0.0)
    gust_phase: Array = (0.0, math.pi / 3.0, 0.0)

    def __post_init__(self):
        for name in ("steady", "gust_amp", "gust_freq_hz", "gust_phase"):
            v = _readonly(np.atleast_1d(getattr(self, name)))
            if v.shape != (3,):
                raise ContractViolation(f"wind field {name} must have 3 components")
            object.__setattr__(self, name, v)

    def force(self, t) -> Array:
        """Wind force at time(s) ``t`` (seconds); returns ``(..., 3)``."""
        t = np.asarray(t, dtype=float)[..., None]
        return self.steady + self.gust_amp * np.sin(
            2.0 * math.pi * self.gust_freq_hz * t + self.gust_phase)


def make_pointmass_wind_model(dt: float, mass: float, wind: WindSpec | None = None,
                              theta_layout: str = "drag3+bias3",
                              drag2=None, bias_scale: float = 1.0) -> ModelSpec:
    """3-D point mass under drag, with wind entering as an exogenous disturbance.

    State is ``[position(3), velocity(3)]`` (n=6), control is a force (m=3).
    Forward-Euler update::

        pos' = pos + dt * vel
        vel' = vel + (dt/mass) * (u - theta_d * vel - drag2 * |vel| * vel
                                  + bias_scale * theta_b)

    ``theta = [theta_d (3), theta_b (3)]`` holds linear drag coefficients and
    a constant wind-bias force estimate (p=6).  ``bias_scale`` sets the
    newtons represented per unit of the bias parameters; choosing it so the
    drag and bias coordinates have comparable curvature keeps plain gradient
    steps effective in both.  ``drag2`` adds a fixed (non-parametric)
    quadratic drag term; the default 0 keeps the model affine.  The attached
    :class:`WindSpec` describes the wind force the *true* simulator injects
    as the disturbance; the model map itself never sees it.
    """
    if dt <= 0 or mass <= 0:
        raise ContractViolation("dt and mass must be positive")
    if theta_layout != "drag3+bias3":
        raise ContractViolation(f"unsupported theta layout {theta_layout!r}")
    if bias_scale <= 0:
        raise ContractViolation("bias_scale must be positive")
    wind = wind if wind is not None else WindSpec()
    q2 = np.zeros(3) if drag2 is None else np.array(drag2, dtype=float)
    if q2.shape != (3,):
        raise ContractViolation("drag2 must have 3 components")
    is_affine = bool(np.all(q2 == 0.0))
    n, m, p = 6, 3, 6
    k = dt / mass

    def f(x, u, th):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        pos, vel = x[..., :3], x[..., 3:]
        drag = th[:3] * vel + q2 * np.abs(vel) * vel
        out = np.empty_like(x)
        out[..., :3] = pos + dt * vel
        out[..., 3:] = vel + k * (u - drag + bias_scale * th[3:])
        return out

    def dfdx(x, u, th):
        x = np.asarray(x, dtype=float)
        vel = x[..., 3:]
        batch = x.shape[:-1]
        J = np.zeros(batch + (n, n))
        idx = np.arange(3)
        J[..., idx, idx] = 1.0
        J[..., idx, idx + 3] = dt
        J[..., idx + 3, idx + 3] = 1.0 - k * (th[:3] + 2.0 * q2 * np.abs(vel))
        return J

    def dfdu(x, u, th):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (n, m))
        idx = np.arange(3)
        J[..., idx + 3, idx] = k
        return J

    def dfdtheta(x, u, th):
        x = np.asarray(x, dtype=float)
        vel = x[..., 3:]
        J = np.zeros(x.shape[:-1] + (n, p))
        idx = np.arange(3)
        J[..., idx + 3, idx] = -k * vel[..., idx]
        J[..., idx + 3, idx + 3] = k * bias_scale
        return J

    return ModelSpec(
        name="pointmass-wind", n=n, m=m, p=p,
        f=f, dfdx=dfdx, dfdu=dfdu, dfdtheta=dfdtheta,
        affine=is_affine, linear_in_theta=True,
        wind=wind, dt=dt, mass=mass,
    )


def wind_disturbance_sequence(model: ModelSpec, T: int, t0: float = 0.0) -> Array:
    """Disturbance sequence injected by the true point-mass simulator.

    The wind force at step ``t`` acts on the velocity components scaled by
    ``dt/mass``; position components are untouched.  ``t0`` shifts the gust
    phase (seconds).
    """
    if model.wind is None or model.dt is None or model.mass is None:
        raise ContractViolation("model carries no wind specification")
    times = t0 + model.dt * np.arange(T)
    W = np.zeros((T, model.n))
    W[:, 3:] = model.wind.force(times) * (model.dt / model.mass)
    return W


# ---------------------------------------------------------------------------
# model zoo


def get_model(model_id: str, **kwargs) -> ModelSpec:
    """Build a zoo model by string identifier.

    ``"scalar"``:            f = theta*x + u  (n=m=p=1)
    ``"double-integrator"``: forward-Euler double integrator, optional mask
    ``"pointmass-wind"``:    see :func:`make_pointmass_wind_model`
    """
    if model_id == "scalar":
        return make_linear_model([[0.0]], [[1.0]], [("A", 0, 0)])
    if model_id == "double-integrator":
        dt = float(kwargs.pop("dt", 0.1))
        mask = kwargs.pop("mask", ())
        if kwargs:
            raise ContractViolation(f"unknown model options {sorted(kwargs)}")
        A = [[1.0, dt], [0.0, 1.0]]
        B = [[0.0], [dt]]
        spec = make_linear_model(A, B, mask)
        return ModelSpec(**{**spec.__dict__, "name": "double-integrator", "dt": dt})
    if model_id == "pointmass-wind":
        dt = float(kwargs.pop("dt", 0.02))
        mass = float(kwargs.pop("mass", 1.0))
        wind = kwargs.pop("wind", None)
        drag2 = kwargs.pop("drag2", None)
        layout = kwargs.pop("theta_layout", "drag3+bias3")
        bias_scale = float(kwargs.pop("bias_scale", 1.0))
        if kwargs:
            raise ContractViolation(f"unknown model options {sorted(kwargs)}")
        return make_pointmass_wind_model(dt, mass, wind, layout, drag2, bias_scale)
    raise ContractViolation(f"unknown model id {model_id!r}")
