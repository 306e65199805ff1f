import numpy as np
import pytest

from spc.cost import CostMatrices, cost_gradients, total_cost
from spc.dynamics import get_model
from spc.errors import ContractViolation

from oracles import fd_gradient, make_random_smooth_model


class TestCostMatrices:
    def test_rejects_indefinite_r(self):
        with pytest.raises(ContractViolation):
            CostMatrices(Q=[[1.0]], R=[[0.0]], P=[[1.0]])

    def test_rejects_asymmetric(self):
        with pytest.raises(ContractViolation):
            CostMatrices(Q=[[1.0, 0.5], [0.0, 1.0]], R=np.eye(1), P=np.eye(2))

    def test_tolerates_symmetric_rounding(self):
        Q = np.zeros((2, 2))
        Q[0, 0] = 1e-14  # tiny negative eigenvalues after rounding are fine
        CostMatrices(Q=Q - 5e-11 * np.eye(2), R=np.eye(2), P=np.zeros((2, 2)))


class TestTotalCost:
    def test_zero_trajectory_costs_nothing(self, scalar_model, unit_cost):
        assert total_cost(scalar_model, unit_cost, [0.0], [[0.0]], [0.4], [[0.0]]) == 0.0

    def test_hand_value_no_control(self, scalar_model, unit_cost):
        J = total_cost(scalar_model, unit_cost, [1.0], [[0.0]], [1.0], [[0.0]])
        assert J == pytest.approx(2.0)

    def test_hand_value_with_control(self, scalar_model, unit_cost):
        J = total_cost(scalar_model, unit_cost, [1.0], [[-0.5]], [1.0], [[0.0]])
        assert J == pytest.approx(1.5)

    @pytest.mark.parametrize("seed", range(10))
    def test_nonnegative(self, seed, scalar_model, unit_cost):
        rng = np.random.default_rng(seed)
        J = total_cost(scalar_model, unit_cost, rng.standard_normal(1),
                       rng.standard_normal((4, 1)), [0.5], rng.standard_normal((4, 1)))
        assert J >= 0.0


class TestAdjointGradients:
    def test_zero_instance_has_zero_gradients(self, scalar_model, unit_cost):
        gU, gth, J = cost_gradients(scalar_model, unit_cost, [0.0], [[0.0], [0.0]],
                                    [0.7], [[0.0], [0.0]])
        assert J == 0.0
        np.testing.assert_array_equal(gU, 0.0)
        np.testing.assert_array_equal(gth, 0.0)

    def test_hand_adjoint(self, scalar_model, unit_cost):
        gU, gth, J = cost_gradients(scalar_model, unit_cost, [1.0], [[0.0]], [1.0], [[0.0]])
        assert J == pytest.approx(2.0)
        assert gU[0] == pytest.approx(2.0)
        assert gth[0] == pytest.approx(2.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_finite_differences_random_model(self, seed):
        rng = np.random.default_rng(100 + seed)
        model = make_random_smooth_model(rng, n=3, m=2, p=2)
        cm = CostMatrices(Q=np.diag(rng.uniform(0.1, 1.0, 3)),
                          R=np.diag(rng.uniform(0.2, 1.0, 2)),
                          P=np.diag(rng.uniform(0.0, 1.0, 3)))
        T = 5
        x0 = 0.5 * rng.standard_normal(3)
        U = 0.3 * rng.standard_normal((T, 2))
        W = 0.1 * rng.standard_normal((T, 3))
        th = 0.3 * rng.standard_normal(2)
        gU, gth, _ = cost_gradients(model, cm, x0, U, th, W)
        fd_U = fd_gradient(lambda v: total_cost(model, cm, x0, v.reshape(T, 2), th, W), U.ravel())
        fd_th = fd_gradient(lambda v: total_cost(model, cm, x0, U, v, W), th)
        np.testing.assert_allclose(gU, fd_U, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(gth, fd_th, rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("model_id,kwargs", [
        ("scalar", {}),
        ("double-integrator", {"mask": [("A", 0, 1)]}),
        ("pointmass-wind", {}),
    ])
    def test_matches_finite_differences_zoo(self, model_id, kwargs):
        model = get_model(model_id, **kwargs)
        rng = np.random.default_rng(11)
        cm = CostMatrices(Q=np.eye(model.n), R=0.1 * np.eye(model.m), P=np.eye(model.n))
        T = 6
        x0 = rng.standard_normal(model.n)
        U = rng.standard_normal((T, model.m))
        W = 0.2 * rng.standard_normal((T, model.n))
        th = rng.uniform(0.1, 0.6, model.p)
        gU, gth, _ = cost_gradients(model, cm, x0, U, th, W)
        fd_U = fd_gradient(lambda v: total_cost(model, cm, x0, v.reshape(T, model.m), th, W),
                           U.ravel())
        np.testing.assert_allclose(gU, fd_U, rtol=1e-6, atol=1e-7)
        if model.p:
            fd_th = fd_gradient(lambda v: total_cost(model, cm, x0, U, v, W), th)
            np.testing.assert_allclose(gth, fd_th, rtol=1e-6, atol=1e-7)


class TestQuadraticStructure:
    def test_second_differences_constant_in_controls(self, scalar_model, unit_cost):
        # exact quadratic in U on a linear model: curvature identical across base points
        T = 3
        th = [0.8]
        W = np.zeros((T, 1))
        rng = np.random.default_rng(5)
        h = 1e-3

        def second_diff(U, k):
            e = np.zeros(T)
            e[k] = h
            f = lambda v: total_cost(scalar_model, unit_cost, [1.0], v.reshape(T, 1), th, W)
            return (f(U + e) - 2.0 * f(U) + f(U - e)) / h**2

        base = [rng.standard_normal(T) for _ in range(4)]
        for k in range(T):
            vals = np.array([second_diff(U, k) for U in base])
            assert np.var(vals) / max(np.mean(vals) ** 2, 1e-16) <= 1e-8
