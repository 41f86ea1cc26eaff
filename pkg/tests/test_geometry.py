import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parot.errors import ConfigurationError, DensityError
from parot.geometry import (
    BOUNDARY,
    DefiningFunction,
    DensityField,
    DensitySpec,
    DomainSpec,
    build_grid,
    density_from_spec,
    disc,
    interval,
    normalize_densities,
    signed_distance,
)


def test_interval_signed_distance():
    sd, g = signed_distance(interval(2.0, 3.0), np.array([[2.5], [2.0], [3.25], [1.9]]))
    assert np.allclose(sd, [-0.5, 0.0, 0.25, 0.1])
    assert np.allclose(np.abs(g[:, 0]), 1.0)


def test_disc_signed_distance_is_radial():
    d = disc((1.0, -1.0), 0.5)
    pts = np.array([[1.0, 0.0], [1.0, -1.0 + 0.25], [2.0, -1.0]])
    sd, g = signed_distance(d, pts)
    assert np.allclose(sd, [0.5, -0.25, 0.5])
    assert np.allclose(g[0], [0.0, 1.0])


@pytest.mark.parametrize("spec", [interval(0, 1), disc((0, 0), 1.0), DomainSpec("ellipse", (0, 0), (1.0, 0.5)),
                                  DomainSpec("box", (0, 0), (0.5, 1.0))])
def test_boundary_node_invariants(spec):
    g = build_grid(spec, 33)
    Bd = g.boundary
    assert len(Bd) and np.all(g.node_class[Bd] == BOUNDARY)
    sd, grad = signed_distance(spec, g.points[Bd])
    assert np.max(np.abs(sd)) <= 2 * g.h
    if spec.kind != "ellipse":
        assert np.max(np.abs(np.linalg.norm(grad, axis=1) - 1)) <= 1e-10
    # projections land on the boundary
    sdp, _ = signed_distance(spec, g.boundary_points[Bd])
    tol = 1e-10 if spec.kind != "ellipse" else 2 * g.h
    assert np.max(np.abs(sdp)) <= tol


@pytest.mark.parametrize("spec", [interval(0, 1), disc((0, 0), 1.0), DomainSpec("ellipse", (0, 0), (1.0, 0.5))])
def test_quadrature_recovers_volume(spec):
    g = build_grid(spec, 48)
    assert abs(g.weights.sum() - spec.volume) <= 2 * g.h * spec.surface_measure


def test_disc_rejects_unequal_radii():
    with pytest.raises((ConfigurationError, ValueError)):
        DomainSpec("disc", (0, 0), (1.0, 0.5))


def test_normalize_densities_examples():
    gs, gt = build_grid(interval(0, 1), 33), build_grid(interval(2, 3), 33)
    r = density_from_spec(gs, DensitySpec("uniform", 1.0))
    rs = density_from_spec(gt, DensitySpec("uniform", 2.0))
    _, rs2 = normalize_densities(r, rs)
    assert np.allclose(rs2.values, 1.0, rtol=0, atol=1e-14)
    # equal masses: unchanged
    a, b = normalize_densities(r, rs2)
    assert a is r and b is rs2
    # trapezoid mass of 1 + x on [0,1] is 1.5
    r = density_from_spec(gs, DensitySpec("linear", 1.5, (1.0,)))
    rs = density_from_spec(gt, DensitySpec("uniform", 1.0))
    _, rs2 = normalize_densities(r, rs)
    assert np.allclose(rs2.values, 1.5, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(-0.5, 0.5))
def test_normalize_is_idempotent(v, slope):
    gs, gt = build_grid(interval(0, 1), 17), build_grid(interval(2, 3), 17)
    r = density_from_spec(gs, DensitySpec("linear", 1.0, (slope,)))
    rs = density_from_spec(gt, DensitySpec("uniform", v))
    once = normalize_densities(r, rs)
    twice = normalize_densities(*once)
    assert np.array_equal(once[1].values, twice[1].values)
    assert abs(once[0].mass - once[1].mass) <= 1e-12 * once[0].mass


def test_zero_mass_rejected():
    g = build_grid(interval(0, 1), 9)
    with pytest.raises(DensityError):
        DensityField.from_values(g, np.zeros(g.size))


def test_density_interpolation_is_clamped():
    g = build_grid(interval(0, 1), 9)
    f = density_from_spec(g, DensitySpec("linear", 1.0, (1.0,)))
    inside = f(np.array([[0.5]]))
    assert math.isclose(float(inside[0]), 1.0, abs_tol=1e-12)
    far = f(np.array([[50.0]]))
    assert f.lam <= far[0] <= 1 / f.lam


def test_defining_function_shape_operator_of_disc():
    df = DefiningFunction(disc((0, 0), 0.5))
    K = df.shape_operator(np.array([[0.5, 0.0]]))
    # curvature 1/r in the tangential direction
    assert math.isclose(float(K[0, 1, 1]), 2.0, rel_tol=1e-8)


def test_csv_density_requires_file(tmp_path):
    g = build_grid(interval(0, 1), 9)
    with pytest.raises(ConfigurationError):
        density_from_spec(g, DensitySpec("csv", path=str(tmp_path / "nope.csv")))
