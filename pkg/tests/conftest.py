import numpy as np
import pytest

from succbound.linear_analysis import fundamental_matrix
from succbound.odeint import IntegratorOptions
from succbound.presets import preset_model

TIGHT = IntegratorOptions(rel_tol=1e-9, abs_tol=1e-12)


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with np.errstate(over="ignore", invalid="ignore", under="ignore", divide="ignore"):
        yield


@pytest.fixture(scope="session")
def vdp():
    return preset_model("vanderpol-8.1")


@pytest.fixture(scope="session")
def vdp_trace(vdp):
    return fundamental_matrix(vdp, 0.0, 20.0)
