import numpy as np
import pytest

from parot.cost import PowerCost, QuadraticCost
from parot.flow import Problem
from parot.geometry import DensitySpec, build_grid, density_from_spec, disc, interval, normalize_densities


def make_problem(cost, src, tgt, res=32, rho=None, rho_star=None, target_res=None):
    gs = build_grid(src, res)
    gt = build_grid(tgt, target_res or res)
    r = density_from_spec(gs, rho or DensitySpec("uniform"))
    rs = density_from_spec(gt, rho_star or DensitySpec("uniform"))
    r, rs = normalize_densities(r, rs)
    return Problem(cost, gs, gt, r, rs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_to_23():
    return interval(0.0, 1.0), interval(2.0, 3.0)


@pytest.fixture
def quad_1d(unit_to_23):
    return make_problem(QuadraticCost(), *unit_to_23, res=32)


@pytest.fixture
def power_1d(unit_to_23):
    return make_problem(PowerCost(2.1), *unit_to_23, res=24)


@pytest.fixture
def discs():
    return disc((0.0, 0.0), 0.5), disc((3.0, 0.0), 0.5)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
