import math

import numpy as np
import pytest

from conftest import make_problem
from parot.cost import PowerCost, QuadraticCost
from parot.errors import ConfigurationError, PositivityError
from parot.flow import (
    FlowConfig,
    assemble_state,
    dual_gradient_check,
    dual_potential,
    duality_gap,
    enforce_boundary,
    read_potential_csv,
    residual,
    run_flow,
    stable_dt,
    step,
    transport_map,
    write_potential_csv,
    write_rows_csv,
)
from parot.geometry import DensitySpec, build_grid, disc, interval
from parot.initdata import affine_seed, solve_steady


def _translation_state(problem):
    u = affine_seed(problem.source, problem.target.spec)
    return assemble_state(u, problem)


def test_translation_is_a_fixed_point(quad_1d):
    st = _translation_state(quad_1d)
    I = quad_1d.source.interior
    assert np.max(np.abs(st.udot[I])) <= 1e-12
    assert np.allclose(st.W[I], 1.0) and st.boundary_residual <= 1e-14
    nxt = step(st, FlowConfig(), quad_1d)
    assert np.max(np.abs(nxt.u - st.u)) <= 1e-12


def test_disc_translation_is_a_fixed_point(discs):
    prob = make_problem(QuadraticCost(), *discs, res=20)
    st = _translation_state(prob)
    assert np.max(np.abs(st.udot[prob.source.interior])) <= 1e-11
    assert st.boundary_residual <= 1e-12


def test_residual_rejects_non_convex(quad_1d):
    g = quad_1d.source
    u = affine_seed(g, quad_1d.target.spec) - 2.0 * g.points[:, 0] ** 2
    st = assemble_state(u, quad_1d)
    with pytest.raises(PositivityError) as ei:
        residual(st)
    assert ei.value.node is not None


def test_stable_dt_formula(quad_1d):
    st = _translation_state(quad_1d)
    h = quad_1d.source.h
    assert math.isclose(stable_dt(st, FlowConfig(dt_safety=0.5)), 0.5 * h * h / 2, rel_tol=1e-10)


def test_enforce_boundary_restores_condition(power_1d):
    g = power_1d.source
    u = affine_seed(g, power_1d.target.spec)
    u[g.boundary] += 0.05
    v, its = enforce_boundary(u, power_1d)
    st = assemble_state(v, power_1d)
    assert its > 0 and st.boundary_residual <= 1e-11
    assert np.array_equal(v[g.interior], u[g.interior])


def test_flow_converges_and_audits(unit_to_23):
    prob = make_problem(PowerCost(2.1), *unit_to_23, res=16, rho_star=DensitySpec("linear", 1.0, (1.0,)))
    _, rep = solve_steady(prob)
    assert rep.verdict == "converged" and rep.converged
    st = rep.final
    assert st.stationarity < 1e-8
    tm = transport_map(st, prob)
    assert tm.injective and tm.contained and tm.monotone
    dual, ustar = dual_potential(st, prob, audit=tm)
    assert duality_gap(st, prob, dual) <= 1e-10
    assert dual_gradient_check(prob, dual) <= 1e-5
    assert np.all(np.isfinite(ustar[prob.target.active]))


def test_flow_verdicts(unit_to_23):
    prob = make_problem(QuadraticCost(), *unit_to_23, res=16, rho_star=DensitySpec("linear", 1.0, (1.0,)))
    u = affine_seed(prob.source, prob.target.spec)
    st = assemble_state(u, prob)
    rep = run_flow(st, FlowConfig(max_steps=1), prob)
    assert rep.verdict == "max_steps" and rep.steps == 1
    rep = run_flow(st, FlowConfig(), prob, monitor=lambda omega: "breach")
    assert rep.verdict == "dichotomy_breach" and rep.steps == 0


def test_flow_config_validation():
    with pytest.raises(ConfigurationError):
        FlowConfig(dt_safety=1.5)
    with pytest.raises(ConfigurationError):
        FlowConfig(residual_tol=0)


def test_potential_csv_roundtrip(tmp_path, quad_1d):
    st = _translation_state(quad_1d)
    path = tmp_path / "u.csv"
    write_potential_csv(st, path, normalize=False)
    u = read_potential_csv(path, quad_1d.source)
    act = quad_1d.source.active
    assert np.array_equal(u[act], st.u[act])
    other = build_grid(interval(0, 1), 17)
    with pytest.raises(ConfigurationError):
        read_potential_csv(path, other)
    with pytest.raises(ConfigurationError):
        read_potential_csv(path, build_grid(disc((0, 0), 1), 8))


def test_rows_csv_header(tmp_path, quad_1d):
    st = _translation_state(quad_1d)
    rep = run_flow(st, FlowConfig(), quad_1d)
    write_rows_csv(rep, tmp_path / "rows.csv")
    lines = (tmp_path / "rows.csv").read_text().splitlines()
    assert lines[0] == "t,residual,omega,mass_err,min_eig,mean_u" and len(lines) == 2


def test_assemble_rejects_bad_shape(quad_1d):
    with pytest.raises(ConfigurationError):
        assemble_state(np.zeros(3), quad_1d)
