"""Source point processes: uniform points and Gaussian-polynomial roots.

All sampling is deterministic per seed. Substreams for workers or repeated
draws are derived with ``substream_rng(seed, *key)`` so results never depend
on scheduling or batch layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .aberth import aberth_roots
from .config import Configuration
from .geometry import POLE_EXCLUSION, SphereParams, lift_to_sphere

_LEADING_COEFF_FLOOR = 1e-12


def substream_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...); stable across runs."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def uniform_sphere_points(rng: np.random.Generator, m: int, params: SphereParams) -> np.ndarray:
    """m points uniform on the sphere, avoiding the projection-pole ball.

    Normalized Gaussian triples; rows landing in the excluded pole ball (or
    with negligible norm) are redrawn, an event of probability ~ 0.
    """
    r = params.radius
    pts = np.empty((m, 3))
    need = np.arange(m)
    while len(need):
        g = rng.normal(size=(len(need), 3))
        nrm = np.linalg.norm(g, axis=1)
        ok = nrm > 1e-12
        cand = np.where(ok[:, None], g / np.where(ok, nrm, 1.0)[:, None] * r, 0.0)
        pole_d2 = (cand[:, 0] ** 2 + cand[:, 1] ** 2 + (cand[:, 2] - r) ** 2)
        ok &= pole_d2 > (POLE_EXCLUSION * r) ** 2
        pts[need[ok]] = cand[ok]
        need = need[~ok]
    return pts


def sample_uniform(n: int, seed: int) -> Configuration:
    """Configuration of n i.i.d. uniform points on the sphere of area n."""
    params = SphereParams(n)
    pts = uniform_sphere_points(substream_rng(seed), n, params)
    return Configuration(params=params, sources=pts, process="uniform", seed=seed)


def standard_complex_gaussians(rng: np.random.Generator, size) -> np.ndarray:
    """Complex Gaussians with E|zeta|^2 = 1 (variance 1/2 per component)."""
    return (rng.normal(size=size) + 1j * rng.normal(size=size)) / math.sqrt(2.0)


def log_binom_sqrt(n: int) -> np.ndarray:
    """log sqrt(binom(n, k)) for k = 0..n, accumulated incrementally."""
    k = np.arange(1, n + 1, dtype=float)
    steps = 0.5 * (np.log(n - k + 1.0) - np.log(k))
    out = np.empty(n + 1)
    out[0] = 0.0
    np.cumsum(steps, out=out[1:])
    return out


@dataclass
class KostlanCoefficients:
    """Random polynomial coefficients zeta_k * sqrt(binom(n, k)) in split form.

    ``zeta`` are the standard complex Gaussians; ``log_factor`` holds
    log sqrt(binom(n, k)), kept separate because the combined magnitude
    overflows doubles once n is in the thousands.
    """

    zeta: np.ndarray
    log_factor: np.ndarray

    @property
    def n(self) -> int:
        return len(self.zeta) - 1

    @property
    def values(self) -> np.ndarray:
        """Materialized coefficients (overflow-prone for n >~ 1200)."""
        return self.zeta * np.exp(self.log_factor)


def _draw_zeta(rng: np.random.Generator, n: int) -> np.ndarray:
    """Coefficient Gaussians, redrawn while the leading one is negligible."""
    while True:
        zeta = standard_complex_gaussians(rng, n + 1)
        if abs(zeta[n]) > _LEADING_COEFF_FLOOR:
            return zeta


def kostlan_coefficients(n: int, seed: int) -> KostlanCoefficients:
    if n < 1:
        raise ValueError("n must be at least 1")
    zeta = _draw_zeta(substream_rng(seed), n)
    return KostlanCoefficients(zeta=zeta, log_factor=log_binom_sqrt(n))


def kostlan_roots_batch(n: int, seed: int, draws: int) -> tuple[np.ndarray, np.ndarray]:
    """(zetas, roots) for a batch of independent polynomial draws.

    zetas is (draws, n+1), roots (draws, n) sorted by (real, imag) per draw.
    Draw d uses the substream (seed, d), so any batch partition yields
    identical results.
    """
    rng_list = [substream_rng(seed, d) for d in range(draws)]
    zetas = np.stack([_draw_zeta(r, n) for r in rng_list])
    roots = aberth_roots(zetas, log_binom_sqrt(n))
    return zetas, roots


def roots_to_configuration(roots: np.ndarray, n: int, seed=None) -> Configuration:
    """Bring polynomial roots to the sphere through the scaled projection."""
    params = SphereParams(n)
    planar = math.sqrt(n) * np.column_stack([roots.real, roots.imag])
    sources = lift_to_sphere(planar, params)
    return Configuration(
        params=params,
        sources=sources,
        planar_sources=planar,
        process="kostlan",
        seed=seed,
    )


def sample_kostlan_roots(n: int, seed: int) -> Configuration:
    """Configuration of the n roots of a coefficient draw, on the sphere."""
    coeffs = kostlan_coefficients(n, seed)
    roots = aberth_roots(coeffs.zeta[None, :], coeffs.log_factor)[0]
    return roots_to_configuration(roots, n, seed=seed)
