"""Potential and force evaluation, on the sphere and in the plane.

The potential of a configuration is the sum of log chordal distances to the
sources; the spherical force is the negative gradient with respect to the
round metric, computed as the tangential projection of the ambient sum
(z - x) / |x - z|^2 over sources z. A separate planar code path evaluates
the projected field and its Jacobian, used for Hessian classification and
for consistency tests.

Batch kernels avoid (m, n, 3) intermediates: with all points near the
sphere, pairwise squared distances come from one skinny matmul, and the
force from a second (weights @ sources) matmul.
"""

from __future__ import annotations

import math

import numpy as np

from .config import Configuration
from .errors import SourceSingularity, TreeNotBuilt
from .geometry import rho

# Distance below which a field evaluation counts as sitting on a source,
# as a fraction of the sphere radius.
SINGULARITY_EXCLUSION = 1e-12


def _batch(points):
    points = np.asarray(points, dtype=float)
    single = points.ndim == 1
    return np.atleast_2d(points), single


def pairwise_sq_distances(points: np.ndarray, cfg: Configuration) -> np.ndarray:
    """(m, n) squared chordal distances from points to the sources.

    Built from broadcasting only (no BLAS), so each row is bit-identical no
    matter how the points are batched; basin assignments near separatrices
    must not depend on chunking.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    src = cfg.sources
    d2 = np.multiply(points[:, 0:1], src[:, 0])
    tmp = np.multiply(points[:, 1:2], src[:, 1])
    d2 += tmp
    np.multiply(points[:, 2:3], src[:, 2], out=tmp)
    d2 += tmp
    d2 *= -2.0
    d2 += (points**2).sum(axis=1)[:, None]
    d2 += cfg._source_sq[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def weighted_source_sum(w: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """Batch-deterministic (m, n) x (n, 3) contraction (einsum, no BLAS)."""
    return np.einsum("mn,nc->mc", w, sources, optimize=False)


def ambient_force_sum(points: np.ndarray, cfg: Configuration, d2: np.ndarray = None):
    """Unprojected sum of (z - x) / |x - z|^2 over sources, batch form."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if d2 is None:
        d2 = pairwise_sq_distances(points, cfg)
    w = 1.0 / d2
    s = w.sum(axis=1)
    return weighted_source_sum(w, cfg.sources) - points * s[:, None]


def tangential(vectors: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Project ambient vectors onto the tangent planes at the given points."""
    u = points / np.linalg.norm(points, axis=1, keepdims=True)
    return vectors - (vectors * u).sum(axis=1, keepdims=True) * u


def force_eval(points, cfg: Configuration):
    """Fused field evaluation for a batch of points.

    Returns (force, dmin, jmin): tangential forces (m, 3), distance to the
    nearest source (m,), and its index (m,). Rows whose nearest-source
    distance is zero get a zero force rather than NaN; callers treat those
    rows as captured.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d2 = pairwise_sq_distances(points, cfg)
    jmin = d2.argmin(axis=1)
    rows = np.arange(len(points))
    d2min = d2[rows, jmin]
    with np.errstate(divide="ignore"):
        w = 1.0 / d2
    bad = ~np.isfinite(w)
    if bad.any():
        w[bad] = 0.0
    s = w.sum(axis=1)
    amb = weighted_source_sum(w, cfg.sources) - points * s[:, None]
    return tangential(amb, points), np.sqrt(d2min), jmin


def potential(x, cfg: Configuration):
    """Sum of log chordal distances from x to the sources."""
    points, single = _batch(x)
    d2 = pairwise_sq_distances(points, cfg)
    limit = (SINGULARITY_EXCLUSION * cfg.params.radius) ** 2
    if np.any(d2.min(axis=1) < limit):
        raise SourceSingularity("potential evaluated on top of a source")
    out = 0.5 * np.log(d2).sum(axis=1)
    return float(out[0]) if single else out


def force_direct(x, cfg: Configuration):
    """Tangential force at x from the direct O(n) sum over sources."""
    points, single = _batch(x)
    f, dmin, _ = force_eval(points, cfg)
    if np.any(dmin < SINGULARITY_EXCLUSION * cfg.params.radius):
        raise SourceSingularity("force evaluated on top of a source")
    return f[0] if single else f


def force_tree(x, cfg: Configuration, theta: float = 0.3):
    """Tangential force at x from the hierarchical accelerator.

    theta = 0 degenerates to the direct sum (every node is opened).
    """
    if cfg.force_tree is None:
        raise TreeNotBuilt("call build_force_tree(cfg) first")
    points, single = _batch(x)
    dmin, _ = cfg.kdtree().query(points)
    if np.any(dmin < SINGULARITY_EXCLUSION * cfg.params.radius):
        raise SourceSingularity("force evaluated on top of a source")
    amb = cfg.force_tree.ambient_force(points, theta)
    f = tangential(amb, points)
    return f[0] if single else f


def force_plane(w, cfg: Configuration):
    """Planar field at w: sum of (y - w)/|w - y|^2 plus the curvature term."""
    points, single = _batch(w)
    y = cfg.planar_sources
    zw = points[:, 0] + 1j * points[:, 1]
    zy = y[:, 0] + 1j * y[:, 1]
    diff = zy[None, :] - zw[:, None]
    d2 = np.abs(diff) ** 2
    if np.any(d2.min(axis=1) < (SINGULARITY_EXCLUSION * cfg.params.radius) ** 2):
        raise SourceSingularity("planar force evaluated on top of a source")
    # (y - w)/|y - w|^2 equals 1/conj(y - w) in complex form.
    attract = (1.0 / np.conj(diff)).sum(axis=1)
    n = cfg.params.n
    curvature = (len(y) / n) * zw / (1.0 + np.abs(zw) ** 2 / n)
    val = attract + curvature
    out = np.column_stack([val.real, val.imag])
    return out[0] if single else out


def force_jacobian_plane(w, cfg: Configuration):
    """Jacobian of the planar field at w, a symmetric 2x2 matrix."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError("force_jacobian_plane takes a single planar point")
    y = cfg.planar_sources
    diff = w[None, :] - y
    d2 = (diff**2).sum(axis=1)
    if np.any(d2 < (SINGULARITY_EXCLUSION * cfg.params.radius) ** 2):
        raise SourceSingularity("Jacobian evaluated on top of a source")
    inv2 = 1.0 / d2**2
    # First term: (2 (w-y)^{x2} - |w-y|^2 I) / |w-y|^4, summed over sources.
    a = np.empty((2, 2))
    a[0, 0] = (inv2 * (2.0 * diff[:, 0] ** 2 - d2)).sum()
    a[1, 1] = (inv2 * (2.0 * diff[:, 1] ** 2 - d2)).sum()
    a[0, 1] = a[1, 0] = (inv2 * 2.0 * diff[:, 0] * diff[:, 1]).sum()
    n = cfg.params.n
    r2 = 1.0 + (w**2).sum() / n
    m = len(y)
    b = (m / n) * (np.eye(2) / r2 - 2.0 * np.outer(w, w) / (n * r2**2))
    return a + b


def planar_hessian(w, cfg: Configuration):
    """Hessian of the planar potential at w (negative field Jacobian)."""
    return -force_jacobian_plane(w, cfg)


def jacobian_trace_reference(w, cfg: Configuration) -> float:
    """Closed form 2 / rho(w)^4 for the planar Jacobian trace."""
    return 2.0 / rho(w, cfg.params) ** 4


def ambient_force_jacobian(points: np.ndarray, cfg: Configuration):
    """Batch 3x3 Jacobians of the ambient force sum at the given points.

    d/dx sum (z - x)/|z - x|^2 = sum [ 2 (x-z)(x-z)^T / d^4 - I / d^2 ].
    Used by the tangential Newton refinement of critical points.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m = len(points)
    d2 = pairwise_sq_distances(points, cfg)
    w1 = 1.0 / d2
    w2 = w1 * w1
    s1 = w1.sum(axis=1)
    jac = np.empty((m, 3, 3))
    # sum 2 w2 (x-z)(x-z)^T = 2 [ (sum w2) x x^T - x (w2 @ Z)^T - (w2 @ Z) x^T + sum w2 z z^T ]
    s2 = w2.sum(axis=1)
    w2z = w2 @ cfg.sources
    zz = np.einsum("mj,ja,jb->mab", w2, cfg.sources, cfg.sources, optimize=True)
    x = points
    xxT = x[:, :, None] * x[:, None, :]
    xw2zT = x[:, :, None] * w2z[:, None, :]
    jac[:] = 2.0 * (s2[:, None, None] * xxT - xw2zT - xw2zT.transpose(0, 2, 1) + zz)
    jac -= s1[:, None, None] * np.eye(3)[None, :, :]
    return jac


def mean_force_magnitude(cfg_sampler, x, trials: int, base_seed: int = 0):
    """Monte Carlo mean of |F(x)| over resampled configurations.

    ``cfg_sampler`` maps an integer seed to a Configuration. Returns
    (mean, stderr) of the force magnitude at the fixed evaluation point x.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    x = np.asarray(x, dtype=float)
    mags = np.empty(trials)
    for t in range(trials):
        cfg = cfg_sampler(base_seed + t)
        mags[t] = np.linalg.norm(force_direct(x, cfg))
    stderr = mags.std(ddof=1) / math.sqrt(trials) if trials > 1 else float("inf")
    return float(mags.mean()), float(stderr)
