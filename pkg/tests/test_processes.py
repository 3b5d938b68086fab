import math

import numpy as np
import pytest

from gravalloc import geometry as geo
from gravalloc.aberth import aberth_roots
from gravalloc.config import configuration_from_json, configuration_to_json
from gravalloc.errors import RootFindingFailed
from gravalloc.processes import (
    kostlan_coefficients,
    kostlan_roots_batch,
    log_binom_sqrt,
    sample_kostlan_roots,
    sample_uniform,
    standard_complex_gaussians,
    substream_rng,
)
from gravalloc.stats import ks_statistic


def test_uniform_sample_mean_near_zero():
    cfg = sample_uniform(100_000, 7)
    mean = cfg.sources.mean(axis=0)
    # Component std is r/sqrt(3); allow four standard errors.
    se = cfg.params.radius / math.sqrt(3) / math.sqrt(100_000)
    assert np.abs(mean).max() < 4.0 * se


def test_uniform_sample_hat_box_law():
    # Archimedes: the z-coordinate of a uniform sphere point is uniform.
    cfg = sample_uniform(100_000, 8)
    r = cfg.params.radius
    z = cfg.sources[:, 2]
    ks = ks_statistic(z, lambda t: (np.asarray(t) + r) / (2.0 * r))
    assert ks <= 0.01


def test_uniform_sample_reproducible():
    a = sample_uniform(500, 42)
    b = sample_uniform(500, 42)
    assert np.array_equal(a.sources, b.sources)
    assert configuration_to_json(a) == configuration_to_json(b)


def test_complex_gaussian_normalization():
    rng = substream_rng(3)
    z = standard_complex_gaussians(rng, 200_000)
    second = np.abs(z) ** 2
    assert abs(second.mean() - 1.0) < 3.0 / math.sqrt(len(z))


def test_kostlan_factor_values():
    c4 = kostlan_coefficients(4, 0)
    factors = np.exp(c4.log_factor)
    assert abs(factors[0] - 1.0) < 1e-12
    assert abs(factors[4] - 1.0) < 1e-12
    assert abs(factors[1] - 2.0) < 1e-12  # sqrt(binom(4,1)) = 2
    assert abs(factors[2] - math.sqrt(6.0)) < 1e-12
    c9 = kostlan_coefficients(9, 0)
    assert abs(math.exp(c9.log_factor[1]) - 3.0) < 1e-12  # sqrt(9)


def test_log_binom_sqrt_against_exact():
    from math import comb

    for n in (5, 12, 40):
        lb = log_binom_sqrt(n)
        exact = np.array([0.5 * math.log(comb(n, k)) for k in range(n + 1)])
        assert np.abs(lb - exact).max() < 1e-10


def test_degree_one_root_formula():
    cfg = sample_kostlan_roots(1, 5)
    coeffs = kostlan_coefficients(1, 5)
    lam = -coeffs.zeta[0] / coeffs.zeta[1]
    w = math.sqrt(1.0) * np.array([lam.real, lam.imag])
    assert np.linalg.norm(cfg.planar_sources[0] - w) < 1e-9 * (1 + np.linalg.norm(w))


def test_polynomial_reconstruction_oracle():
    # Expand prod (z - root) * c_n and compare against the coefficients.
    for n, seed in [(8, 1), (32, 2), (64, 3)]:
        coeffs = kostlan_coefficients(n, seed)
        roots = aberth_roots(coeffs.zeta[None, :], coeffs.log_factor)[0]
        rebuilt = np.atleast_1d(np.poly(roots))[::-1] * coeffs.values[-1]
        expected = coeffs.values
        scale = np.abs(expected).max()
        assert np.abs(rebuilt - expected).max() < 1e-6 * scale


def test_roots_sorted_and_start_order_free():
    coeffs = kostlan_coefficients(24, 9)
    r1 = aberth_roots(coeffs.zeta[None, :], coeffs.log_factor)[0]
    assert np.array_equal(np.lexsort((r1.imag, r1.real)), np.arange(24))
    # Residuals meet the advertised bound.
    vals = np.polyval(coeffs.values[::-1], r1)
    dvals = np.polyval(np.polyder(coeffs.values[::-1]), r1)
    assert np.all(np.abs(vals / dvals) < 1e-10 * (1.0 + np.abs(r1)))


def test_closed_form_force_identity_small():
    for n in (2, 8, 32):
        coeffs = kostlan_coefficients(n, 11)
        roots = aberth_roots(coeffs.zeta[None, :], coeffs.log_factor)[0]
        f0 = abs(np.conj(1.0 / roots).sum()) / math.sqrt(n)
        ratio = abs(coeffs.zeta[1] / coeffs.zeta[0])
        assert abs(f0 - ratio) < 1e-6 * ratio


def test_log_domain_solver_high_degree():
    # Above the direct-materialization threshold the log path must engage.
    from gravalloc.aberth import _Evaluator

    n = 1400
    coeffs = kostlan_coefficients(n, 2)
    assert not _Evaluator(coeffs.zeta[None, :], coeffs.log_factor).direct
    roots = aberth_roots(coeffs.zeta[None, :], coeffs.log_factor)[0]
    f0 = abs(np.conj(1.0 / roots).sum()) / math.sqrt(n)
    ratio = abs(coeffs.zeta[1] / coeffs.zeta[0])
    assert abs(f0 - ratio) < 1e-6 * ratio


def test_batch_matches_individual_draws():
    zetas, roots = kostlan_roots_batch(16, 77, 5)
    for d in range(5):
        single = aberth_roots(zetas[d : d + 1], log_binom_sqrt(16))[0]
        assert np.abs(single - roots[d]).max() < 1e-9


def test_kostlan_rotation_equivariance_proxy():
    # Pooled root z-coordinates should be uniform on [-r, r].
    n = 24
    zs = []
    for d in range(400):
        cfg = sample_kostlan_roots(n, 900 + d)
        zs.append(cfg.sources[:, 2])
    z = np.concatenate(zs)
    r = geo.SphereParams(n).radius
    ks = ks_statistic(z, lambda t: (np.asarray(t) + r) / (2.0 * r))
    assert ks <= 0.02


def test_kostlan_configuration_roundtrips():
    cfg = sample_kostlan_roots(32, 4)
    # Planar cache equals sqrt(n) * roots and reprojections agree.
    w = geo.project_to_plane(cfg.sources, cfg.params)
    assert np.abs(w - cfg.planar_sources).max() < 1e-9 * (1.0 + np.abs(cfg.planar_sources).max())
    again = configuration_from_json(configuration_to_json(cfg))
    assert np.array_equal(again.sources, cfg.sources)
    assert again.process == "kostlan"


def test_leading_coefficient_guard():
    with pytest.raises(RootFindingFailed):
        aberth_roots(np.array([[1.0 + 0j, 1.0 + 0j, 0.0 + 0j]]), np.zeros(3))
