import numpy as np
import pytest

from spc.cost import CostMatrices
from spc.dynamics import Box, ParamVector, get_model
from spc.scenario_control import Scenario, ScenarioSet


@pytest.fixture
def scalar_model():
    return get_model("scalar")


@pytest.fixture
def unit_cost():
    return CostMatrices(Q=[[1.0]], R=[[1.0]], P=[[1.0]])


def make_scalar_set(cost, x0s, Ws, T):
    """Scenario set on the scalar model f = theta*x + u."""
    model = get_model("scalar")
    scenarios = [
        Scenario(x0=np.atleast_1d(float(x0)), W=np.asarray(W, float).reshape(T, 1), id=i)
        for i, (x0, W) in enumerate(zip(x0s, Ws))
    ]
    return ScenarioSet(model=model, cost=cost, scenarios=scenarios, T=T)


def scalar_theta(value, lo=-3.0, hi=3.0):
    return ParamVector(np.atleast_1d(float(value)), Box(lo=[lo], hi=[hi]))
