import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bimembrane.fields import DomainSpec, GridSpec, Params
from bimembrane.solver import BoundaryData, SolveOptions, solve

PARAMS = Params(0.7, 0.3)
GU, GV = math.sqrt(0.7), math.sqrt(0.3)


def _plane_run(n):
    spec = GridSpec.centered(n, 1.0)
    dom = DomainSpec.disk(1.0)
    data = BoundaryData.from_functions(
        spec, dom,
        lambda X, Y: GU * np.maximum(Y, 0.0),
        lambda X, Y: GV * np.maximum(Y, 0.0),
    )
    res = solve(spec, data, PARAMS, SolveOptions.default_for(spec.h))
    return res, spec, dom


@pytest.fixture(scope="session")
def plane32():
    return _plane_run(65)


@pytest.fixture(scope="session")
def plane64():
    return _plane_run(129)


@pytest.fixture(scope="session")
def plane128():
    return _plane_run(257)


@pytest.fixture(scope="session")
def perturbed128():
    from bimembrane.presets import build_problem

    prob = build_problem("perturbed_plane")
    res = solve(prob.spec, prob.data, prob.params, prob.opts)
    return res, prob


@pytest.fixture(scope="session")
def one_phase128():
    from bimembrane.presets import build_problem

    prob = build_problem("one_phase")
    res = solve(prob.spec, prob.data, prob.params, prob.opts)
    return res, prob
