import math

import numpy as np
import pytest
from scipy import integrate

from gravalloc import geometry as geo
from gravalloc.errors import PoleSingularity
from gravalloc.geometry import SphereParams
from gravalloc.processes import uniform_sphere_points


def test_params_area_radius_relation():
    for n in [1, 2, 7, 64, 4096]:
        p = SphereParams(n)
        assert abs(4.0 * math.pi * p.radius**2 - n) <= 1e-12 * n


def test_south_pole_projects_to_origin(params16):
    r = params16.radius
    w = geo.project_to_plane(np.array([0.0, 0.0, -r]), params16)
    assert np.allclose(w, 0.0)


def test_equator_point_projects_to_sqrt_n():
    p = SphereParams(4)
    w = geo.project_to_plane(np.array([p.radius, 0.0, 0.0]), p)
    assert abs(np.linalg.norm(w) - 2.0) < 1e-12


def test_projection_rejects_pole(params16):
    r = params16.radius
    with pytest.raises(PoleSingularity):
        geo.project_to_plane(np.array([0.0, 0.0, r]), params16)


def test_lift_origin_is_south_pole(params16):
    x = geo.lift_to_sphere(np.zeros(2), params16)
    assert np.allclose(x, [0.0, 0.0, -params16.radius])


def test_lift_far_point_approaches_pole(params16):
    r = params16.radius
    x = geo.lift_to_sphere(np.array([1e9, 0.0]), params16)
    assert np.linalg.norm(x - np.array([0.0, 0.0, r])) < 1e-6 * r


def test_round_trip_many_points(rng, params16):
    pts = uniform_sphere_points(rng, 10_000, params16)
    w = geo.project_to_plane(pts, params16)
    back = geo.lift_to_sphere(w, params16)
    err = np.linalg.norm(back - pts, axis=1)
    assert err.max() < 1e-9 * params16.radius


def test_distance_identity_special_case():
    # South pole against an equator point: closed form gives exactly n.
    p = SphereParams(9)
    r = p.radius
    val = geo.chordal_distance_sq_via_projection(
        np.array([0.0, 0.0, -r]), np.array([r, 0.0, 0.0]), p
    )
    assert abs(val - p.n) < 1e-12 * p.n


def test_distance_identity_random_pairs(rng, params16):
    # Oracle: project both points directly and take the planar distance.
    x = uniform_sphere_points(rng, 10_000, params16)
    y = uniform_sphere_points(rng, 10_000, params16)
    direct = np.sum(
        (geo.project_to_plane(x, params16) - geo.project_to_plane(y, params16)) ** 2,
        axis=1,
    )
    formula = geo.chordal_distance_sq_via_projection(x, y, params16)
    rel = np.abs(formula - direct) / np.maximum(direct, 1e-300)
    assert rel.max() < 1e-9


def test_identical_points_project_identically(rng, params16):
    x = uniform_sphere_points(rng, 5, params16)
    assert np.all(geo.chordal_distance_sq_via_projection(x, x, params16) == 0.0)


def test_rho_values():
    p = SphereParams(25)
    assert geo.rho(np.zeros(2), p) == 1.0
    assert abs(geo.rho(np.array([5.0, 0.0]), p) - math.sqrt(2.0)) < 1e-12
    w = np.array([math.sqrt(3 * 25.0), 0.0])
    assert abs(geo.rho(w, p) - 2.0) < 1e-12


def test_mu_density_values():
    p = SphereParams(25)
    assert abs(geo.mu_density(np.zeros(2), p) - 1.0 / (math.pi * 25)) < 1e-15
    assert abs(geo.mu_density(np.array([5.0, 0.0]), p) - 1.0 / (4 * math.pi * 25)) < 1e-15


def test_mu_density_integrates_to_one():
    # Radial quadrature oracle: 2*pi*int r/(pi n (1+r^2/n)^2) dr == 1.
    p = SphereParams(17)

    def integrand(r):
        return 2.0 * math.pi * r * geo.mu_density(np.array([r, 0.0]), p)

    val, _ = integrate.quad(integrand, 0.0, np.inf, limit=200)
    assert abs(val - 1.0) < 1e-4


def test_conformal_factor_matches_finite_difference(rng, params16):
    # Push a tiny tangent step through the projection and compare lengths.
    pts = uniform_sphere_points(rng, 200, params16)
    h = 1e-6
    for x in pts:
        e1, _ = geo.tangent_basis(x)
        w_plus = geo.project_to_plane(x + h * e1, params16)
        w_minus = geo.project_to_plane(x - h * e1, params16)
        measured = np.linalg.norm(w_plus - w_minus) / (2.0 * h)
        expected = geo.conformal_factor(x, params16)
        assert abs(measured - expected) / expected < 1e-6


def test_recenter_rotation_properties(rng, params16):
    r = params16.radius
    south = np.array([0.0, 0.0, -r])
    # South pole may map to itself.
    rot = geo.recenter_rotation(south)
    assert np.linalg.norm(rot @ south - south) < 1e-9 * r
    # North pole must land on the south pole.
    rot = geo.recenter_rotation(np.array([0.0, 0.0, r]))
    assert np.linalg.norm(rot @ np.array([0.0, 0.0, r]) - south) < 1e-9 * r
    # Random points: proper rotation carrying x to the south pole.
    for x in uniform_sphere_points(rng, 500, params16):
        rot = geo.recenter_rotation(x)
        assert np.abs(rot @ rot.T - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(rot) - 1.0) < 1e-12
        assert np.linalg.norm(rot @ x - south) < 1e-9 * r


def test_pole_action_far_mode(params16):
    r = params16.radius
    w = geo.project_to_plane(np.array([0.0, 0.0, r]), params16, pole_action="far")
    assert np.isfinite(w).all()
    assert np.linalg.norm(w) > 1e10


def test_fibonacci_sphere_on_sphere():
    pts = geo.fibonacci_sphere(1000, 2.5)
    assert np.allclose(np.linalg.norm(pts, axis=1), 2.5)
    # Near-uniform: octant counts should be balanced within a loose band.
    signs = (pts > 0).sum(axis=0)
    assert np.all(np.abs(signs - 500) < 60)
