import math

import numpy as np
import pytest

from conftest import make_problem
from parot.cost import PerturbedQuadraticCost, PowerCost, QuadraticCost, SinSin
from parot.errors import ConfigurationError
from parot.flow import assemble_state
from parot.geometry import DensitySpec, DomainSpec, build_grid, disc, interval
from parot.initdata import (
    ContinuationConfig,
    affine_map,
    affine_seed,
    check_IC,
    continuation_initial_data,
    dphi_matrix,
    phi_value,
    solve_steady,
)
from parot.oracle import monotone_rearrangement_1d


def test_affine_seed_examples():
    g = build_grid(interval(0, 1), 17)
    x = g.points[:, 0]
    assert np.allclose(affine_seed(g, interval(2, 3)), 2 * x)
    assert np.allclose(affine_seed(g, interval(2, 4)), 0.5 * x**2 + 2 * x)
    gd = build_grid(disc((0, 0), 1.0), 17)
    X = gd.points
    assert np.allclose(affine_seed(gd, disc((5, 0), 2.0)), 0.5 * np.sum(X**2, 1) + 5 * X[:, 0])
    D, b = affine_map(disc((0, 0), 1.0), DomainSpec("ellipse", (1, 1), (2.0, 0.5)))
    assert np.allclose(np.diag(D) if np.ndim(D) == 2 else D, [2.0, 0.5]) and np.allclose(b, [1, 1])
    with pytest.raises(ConfigurationError):
        affine_map(interval(0, 1), disc((0, 0), 1.0))


def test_affine_seed_scaling_state():
    prob = make_problem(QuadraticCost(), interval(0, 1), interval(2, 4), res=17)
    st = assemble_state(affine_seed(prob.source, prob.target.spec), prob)
    assert np.allclose(st.W[prob.source.interior], 2.0)
    assert st.boundary_residual <= 1e-14


def test_solve_steady_translation(quad_1d):
    u0, rep = solve_steady(quad_1d)
    x = quad_1d.source.points[:, 0]
    assert rep.steps == 0 and np.max(np.abs(u0 - (2 * x - 1))) <= 1e-12


def test_solve_steady_identity():
    prob = make_problem(QuadraticCost(), interval(0, 1), interval(0, 1), res=17)
    u0, _ = solve_steady(prob)
    assert np.max(np.abs(u0)) <= 1e-12


def test_solve_steady_matches_rearrangement():
    prob = make_problem(QuadraticCost(), interval(0, 1), interval(2, 3), res=24,
                        rho_star=DensitySpec("linear", 1.5, (1.0,)))
    u0, _ = solve_steady(prob)
    g = prob.source
    T = np.ravel(monotone_rearrangement_1d(prob.rho, prob.rho_star))
    x = g.points[:, 0]
    # u' = T - x under the quadratic cost; integrate by the trapezoid rule
    du = T - x
    u = np.r_[0.0, np.cumsum(0.5 * (du[1:] + du[:-1]) * np.diff(x))]
    u -= np.dot(g.weights, u) / g.weights.sum()
    assert np.max(np.abs(u - u0)) <= 2 * g.h


def test_continuation_identity(quad_1d):
    u0, _ = solve_steady(quad_1d)
    res = continuation_initial_data(QuadraticCost(), QuadraticCost(), u0, quad_1d)
    assert np.max(np.abs(res.u - u0)) <= 1e-12 and set(res.newton_iterations) == {0}


def test_continuation_sinsin():
    prob = make_problem(QuadraticCost(), interval(0, 1), interval(2, 3), res=24)
    u0, _ = solve_steady(prob)
    c = PerturbedQuadraticCost(SinSin(1e-3))
    res = continuation_initial_data(QuadraticCost(), c, u0, prob, ContinuationConfig(steps=4))
    assert res.steps == 4 and max(res.newton_iterations) <= 3
    assert res.boundary_residual <= 1e-8
    assert max(abs(m) for m in res.correction_means) <= 1e-12


def test_continuation_power_and_IC(power_1d):
    q = power_1d.with_cost(QuadraticCost())
    u0, _ = solve_steady(q)
    res = continuation_initial_data(QuadraticCost(), PowerCost(2.05), u0, q)
    prob = power_1d.with_cost(PowerCost(2.05))
    assert res.boundary_residual <= 1e-8
    assert res.harmonic_residual <= 1e-10
    ic = check_IC(res.u, prob)
    assert ic.passed and ic.min_eig > 0 and ic.strict_margin > 0


def test_check_IC_translation_margin(quad_1d):
    u = affine_seed(quad_1d.source, quad_1d.target.spec)
    ic = check_IC(u, quad_1d)
    h = quad_1d.source.h
    # minimum of |x - x0|^2 / 2 over distinct nodes
    assert ic.passed and math.isclose(ic.strict_margin, 0.5 * h * h, rel_tol=1e-9)


def test_check_IC_detects_dent(quad_1d):
    u = affine_seed(quad_1d.source, quad_1d.target.spec)
    u[quad_1d.source.interior[5]] -= 10.0
    ic = check_IC(u, quad_1d)
    assert not ic.passed and ic.strict_margin < 0


def _frechet_errors(prob, u, phi, eps_list):
    base = phi_value(prob, u, u)
    M = dphi_matrix(prob, base.beta)
    lin = M @ phi
    ni = len(prob.source.interior)
    out = []
    for eps in eps_list:
        v = phi_value(prob, u + eps * phi, u)
        ri = v.interior - base.interior - eps * lin[:ni]
        rb = v.boundary - base.boundary - eps * lin[ni:]
        out.append((np.max(np.abs(ri)), np.max(np.abs(rb))))
    return out


@pytest.mark.parametrize("cost", [PowerCost(2.1), PerturbedQuadraticCost(SinSin(0.05))])
def test_frechet_derivative(cost, rng, discs):
    prob = make_problem(cost, *discs, res=14)
    q = prob.with_cost(QuadraticCost())
    u0, _ = solve_steady(q)
    u = continuation_initial_data(QuadraticCost(), cost, u0, q).u
    phi = np.zeros_like(u)
    act = prob.source.active
    phi[act] = rng.normal(size=len(act))
    phi[act] -= np.dot(prob.source.weights[act], phi[act]) / prob.source.weights[act].sum()
    errs = _frechet_errors(prob, u, phi, [1e-3, 5e-4])
    # the interior component is linear in u: remainder is rounding only
    assert max(e[0] for e in errs) <= 1e-8
    slope = math.log2(errs[0][1] / errs[1][1])
    assert slope >= 1.9
