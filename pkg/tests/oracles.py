"""Independent numerical oracles used across the test suite.

These deliberately avoid the library's adjoint/implicit-differentiation code
paths: gradients come from central finite differences of scalar evaluations,
and linear-model optima come from an explicitly assembled dense quadratic.
"""

import numpy as np

from spc.dynamics import ModelSpec


def fd_gradient(fun, x, step=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.size)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = step
        g[k] = (fun(x + e) - fun(x - e)) / (2.0 * step)
    return g


def fd_jacobian(fun, x, step=1e-6):
    """Central finite-difference Jacobian of a vector function (rows = outputs)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = step
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2.0 * step))
    return np.stack(cols, axis=-1)


def stacked_quadratic(A, B, Q, R, P, x0, W_list, T):
    """Assemble the scenario objective of a linear model as an explicit quadratic.

    Builds x = Phi U + d_j per disturbance sequence by brute-force matrix
    products and returns (H, g, c) with F(U) = 0.5 U'HU + g'U + c averaged
    over the disturbance sequences.
    """
    A, B = np.asarray(A, float), np.asarray(B, float)
    n, m = B.shape
    mT = m * T
    # Phi maps stacked controls to stacked states x_1..x_T
    Phi = np.zeros((n * T, mT))
    for s in range(1, T + 1):
        for t in range(s):
            block = B.copy()
            for _ in range(s - 1 - t):
                block = A @ block
            Phi[(s - 1) * n:s * n, t * m:(t + 1) * m] = block
    Qbar = np.zeros((n * T, n * T))
    for s in range(1, T):
        Qbar[(s - 1) * n:s * n, (s - 1) * n:s * n] = Q
    Qbar[(T - 1) * n:T * n, (T - 1) * n:T * n] = P
    Rbar = np.kron(np.eye(T), R)

    H = np.zeros((mT, mT))
    g = np.zeros(mT)
    c = 0.0
    for W in W_list:
        W = np.asarray(W, float)
        d = np.zeros(n * T)
        x = x0.copy()
        for s in range(1, T + 1):
            x = A @ x + W[s - 1]
            d[(s - 1) * n:s * n] = x
        H += 2.0 * (Phi.T @ Qbar @ Phi + Rbar)
        g += 2.0 * Phi.T @ Qbar @ d
        c += d @ Qbar @ d + x0 @ Q @ x0
    k = len(W_list)
    return H / k, g / k, c / k


def batch_lqr_solve(A, B, Q, R, P, x0, W_list, T):
    """Minimizer of the averaged stacked quadratic by one dense solve."""
    H, g, _ = stacked_quadratic(A, B, Q, R, P, np.asarray(x0, float), W_list, T)
    return np.linalg.solve(H, -g).reshape(T, -1)


def make_random_smooth_model(rng, n=2, m=1, p=2, scale=0.3):
    """A well-behaved nonlinear model with analytic first derivatives.

    f(x, u, th) = S x + G u + scale * sin(x) * (th . c) + scale * th_0 * sin(u) @ E
    where S is a stable matrix.  Nonlinear in the state and in the pairing of
    theta with the state, so control-space Hessians genuinely vary.
    """
    S = 0.5 * np.eye(n) + 0.15 * rng.standard_normal((n, n))
    G = rng.standard_normal((n, m))
    c = rng.standard_normal(p)
    E = rng.standard_normal((m, n))

    def f(x, u, th):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        lin = x @ S.T + u @ G.T
        nl = scale * np.sin(x) * (th @ c) + scale * th[0] * (np.sin(u) @ E)
        return lin + nl

    def dfdx(x, u, th):
        x = np.asarray(x, float)
        batch = np.broadcast_shapes(x.shape[:-1], np.asarray(u, float).shape[:-1])
        J = np.broadcast_to(S, batch + (n, n)).copy()
        idx = np.arange(n)
        J[..., idx, idx] += scale * (th @ c) * np.cos(np.broadcast_to(x, batch + (n,)))
        return J

    def dfdu(x, u, th):
        u = np.asarray(u, float)
        x = np.asarray(x, float)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        J = np.broadcast_to(G, batch + (n, m)).copy()
        ub = np.broadcast_to(u, batch + (m,))
        J += scale * th[0] * np.cos(ub)[..., None, :] * E.T
        return J

    def dfdtheta(x, u, th):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        J = np.empty(batch + (n, p))
        sx = scale * np.sin(np.broadcast_to(x, batch + (n,)))
        for k in range(p):
            J[..., k] = sx * c[k]
        J[..., 0] += scale * (np.sin(np.broadcast_to(u, batch + (m,))) @ E)
        return J

    return ModelSpec(name="random-smooth", n=n, m=m, p=p,
                     f=f, dfdx=dfdx, dfdu=dfdu, dfdtheta=dfdtheta)
