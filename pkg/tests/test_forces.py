import math

import numpy as np
import pytest

from gravalloc import forces as F
from gravalloc import geometry as geo
from gravalloc.config import Configuration, make_configuration
from gravalloc.errors import SourceSingularity
from gravalloc.geometry import SphereParams
from gravalloc.processes import sample_uniform, substream_rng, uniform_sphere_points


def single_source_cfg(n=1, z=None):
    p = SphereParams(n)
    if z is None:
        z = np.array([0.0, 0.0, -p.radius])
    return Configuration(params=p, sources=np.atleast_2d(z))


def test_potential_single_source_log_distance():
    cfg = single_source_cfg()
    r = cfg.params.radius
    x = np.array([r, 0.0, 0.0])
    d = np.linalg.norm(x - cfg.sources[0])
    assert abs(F.potential(x, cfg) - math.log(d)) < 1e-12
    antipode = np.array([0.0, 0.0, r])
    assert abs(F.potential(antipode, cfg) - math.log(2 * r)) < 1e-12


def test_potential_rotation_invariance(rng, cfg64):
    from gravalloc.geometry import random_rotation

    x = uniform_sphere_points(rng, 50, cfg64.params)
    for i in range(50):
        rot = random_rotation(rng)
        u0 = F.potential(x[i], cfg64)
        u1 = F.potential(rot @ x[i], cfg64.rotated(rot))
        assert abs(u1 - u0) < 1e-10 * abs(u0)


def test_potential_raises_on_source(cfg64):
    with pytest.raises(SourceSingularity):
        F.potential(cfg64.sources[3], cfg64)


def test_force_single_source_points_toward_source(rng):
    cfg = single_source_cfg()
    pts = uniform_sphere_points(rng, 200, cfg.params)
    f, dmin, _ = F.force_eval(pts, cfg)
    toward = cfg.sources[0] - pts
    toward_t = F.tangential(toward, pts)
    inner = (f * toward_t).sum(axis=1)
    # Excluding the antipode (measure zero), the force attracts.
    assert np.all(inner > 0.0)


def test_force_zero_at_antipode():
    cfg = single_source_cfg()
    r = cfg.params.radius
    f = F.force_direct(np.array([0.0, 0.0, r]), cfg)
    assert np.linalg.norm(f) < 1e-12


def test_single_source_closed_form_magnitude(rng):
    # Oracle: |F| = sqrt(1 - (d/2r)^2)/d at chordal distance d.
    cfg = single_source_cfg()
    r = cfg.params.radius
    pts = uniform_sphere_points(rng, 500, cfg.params)
    d = np.linalg.norm(pts - cfg.sources[0], axis=1)
    f, _, _ = F.force_eval(pts, cfg)
    expected = np.sqrt(1.0 - (d / (2 * r)) ** 2) / d
    assert np.abs(np.linalg.norm(f, axis=1) - expected).max() < 1e-10


def test_force_tangency_and_gradient_consistency(rng, cfg64):
    pts = uniform_sphere_points(rng, 300, cfg64.params)
    f, dmin, _ = F.force_eval(pts, cfg64)
    r = cfg64.params.radius
    tang = np.abs((f * pts).sum(axis=1)) / r
    assert np.all(tang <= 1e-9 * np.linalg.norm(f, axis=1) * r + 1e-12)
    # The h^2 truncation of the central difference needs generic points:
    # within ~0.1 of a source it exceeds the 1e-6 target (that regime is
    # covered exactly by the closed-form single-source test).
    generic = np.nonzero(dmin > 0.1)[0][:100]
    h = 1e-5 * r
    for i in generic:
        x = pts[i]
        for e in geo.tangent_basis(x):
            up = x + h * e
            up *= r / np.linalg.norm(up)
            dn = x - h * e
            dn *= r / np.linalg.norm(dn)
            fd = -(F.potential(up, cfg64) - F.potential(dn, cfg64)) / (2 * h)
            assert abs(fd - f[i] @ e) < 1e-6


def test_force_rotation_equivariance(rng, cfg64):
    from gravalloc.geometry import random_rotation

    pts = uniform_sphere_points(rng, 1000, cfg64.params)
    for i in range(0, 1000, 10):
        rot = random_rotation(rng)
        f0 = F.force_direct(pts[i], cfg64)
        f1 = F.force_direct(rot @ pts[i], cfg64.rotated(rot))
        assert np.linalg.norm(f1 - rot @ f0) < 1e-9 * np.linalg.norm(f0)


def test_force_plane_single_source_at_origin():
    p = SphereParams(3)
    y = np.array([1.5, -0.75])
    cfg = Configuration(
        params=p,
        sources=geo.lift_to_sphere(y, p)[None, :],
        planar_sources=y[None, :],
    )
    f = F.force_plane(np.zeros(2), cfg)
    assert np.allclose(f, y / (y @ y), atol=1e-14)


def test_plane_sphere_consistency(rng, cfg64):
    # Pushforward oracle: finite-difference the projection along F and
    # compare with pi * rho^4 * f at the image point.
    p = cfg64.params
    pts = uniform_sphere_points(rng, 200, p)
    f_sphere, _, _ = F.force_eval(pts, cfg64)
    h = 1e-7
    for i in range(200):
        x, fs = pts[i], f_sphere[i]
        w = geo.project_to_plane(x, p)
        push = (
            geo.project_to_plane(x + h * fs, p) - geo.project_to_plane(x - h * fs, p)
        ) / (2 * h)
        expected = math.pi * geo.rho(w, p) ** 4 * F.force_plane(w, cfg64)
        denom = np.linalg.norm(expected)
        assert np.linalg.norm(push - expected) < 1e-6 * max(denom, 1e-12)


def test_jacobian_trace_identity(rng, cfg64):
    for _ in range(200):
        w = substream_rng(99).normal(size=2) * 3.0
        w = w + rng.normal(size=2) * 2.0
        tr = np.trace(F.force_jacobian_plane(w, cfg64))
        expected = F.jacobian_trace_reference(w, cfg64)
        assert abs(tr - expected) < 1e-9 * abs(expected)


def test_jacobian_matches_finite_difference(rng, cfg64):
    h = 1e-6
    for _ in range(50):
        w = rng.normal(size=2) * 2.0
        jac = F.force_jacobian_plane(w, cfg64)
        for c in range(2):
            e = np.zeros(2)
            e[c] = h
            fd = (F.force_plane(w + e, cfg64) - F.force_plane(w - e, cfg64)) / (2 * h)
            assert np.abs(fd - jac[:, c]).max() < 1e-5


def test_jacobian_single_source_first_term():
    # One source at planar distance 1 from the origin: the attraction part
    # of the Jacobian is 2 y y^T - I.
    p = SphereParams(5)
    y = np.array([math.cos(0.3), math.sin(0.3)])
    cfg = Configuration(
        params=p,
        sources=geo.lift_to_sphere(y, p)[None, :],
        planar_sources=y[None, :],
    )
    jac = F.force_jacobian_plane(np.zeros(2), cfg)
    first = jac - (1.0 / p.n) * np.eye(2)  # curvature term at the origin
    assert np.abs(first - (2.0 * np.outer(y, y) - np.eye(2))).max() < 1e-12


def test_mean_planar_force_is_zero_vector():
    # Resampled uniform configurations: the planar field at the origin
    # averages to zero by symmetry.
    n, trials = 16, 4000
    acc = np.zeros(2)
    for t in range(trials):
        cfg = sample_uniform(n, 50_000 + t)
        acc += F.force_plane(np.zeros(2), cfg)
    mean = acc / trials
    # Per-sample component std is about sqrt(log n); allow 4 standard errors.
    se = math.sqrt(math.log(n)) / math.sqrt(trials)
    assert np.abs(mean).max() < 4.0 * se


def test_single_source_force_tail_law(rng):
    # X = sqrt(n) f(0, z) for z ~ mu_n satisfies P(|X| > t) = 1/(1+t^2).
    from gravalloc.stats import ks_statistic

    n = 36
    p = SphereParams(n)
    pts = uniform_sphere_points(rng, 100_000, p)
    w = geo.project_to_plane(pts, p)
    mags = math.sqrt(n) / np.linalg.norm(w, axis=1)
    ks = ks_statistic(mags, lambda t: t**2 / (1.0 + t**2))
    assert ks <= 0.01


def test_mean_force_magnitude_single_source_oracle(rng):
    # Closed-form check through the public Monte Carlo helper.
    def sampler(seed):
        return single_source_cfg()

    x = geo.lift_to_sphere(np.array([0.4, 0.2]), SphereParams(1))
    mean, stderr = F.mean_force_magnitude(sampler, x, trials=3)
    cfg = single_source_cfg()
    d = np.linalg.norm(x - cfg.sources[0])
    r = cfg.params.radius
    assert abs(mean - math.sqrt(1.0 - (d / (2 * r)) ** 2) / d) < 1e-12
