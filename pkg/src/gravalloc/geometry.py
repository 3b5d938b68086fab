"""Sphere coordinates, stereographic projection, and conformal bookkeeping.

Conventions used throughout the package:

* A sphere point is a length-3 float array with |x| = radius(n); batches are
  (m, 3) arrays.
* A planar point is a length-2 float array (the horizontal image under the
  rescaled stereographic projection); batches are (m, 2).
* The projection pole sits at radius(n) * (0, 0, 1); the projection center
  (image of the origin) is the south pole.

All functions are pure and accept either single points or batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PoleSingularity

# Fraction of the radius below which a point counts as "at the pole".
POLE_EXCLUSION = 1e-9


def radius(n: int) -> float:
    """Radius of the sphere with surface area n."""
    return math.sqrt(n / (4.0 * math.pi))


@dataclass(frozen=True)
class SphereParams:
    """Geometry of the working sphere: n points on a sphere of area n."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")

    @property
    def radius(self) -> float:
        return radius(self.n)

    @property
    def area(self) -> float:
        return float(self.n)


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[-1] != dim:
        raise ValueError(f"expected trailing dimension {dim}, got shape {x.shape}")
    return x, single


def project_to_plane(x, params: SphereParams, pole_action: str = "raise"):
    """Rescaled stereographic image of sphere points, as 2-vectors.

    The map sends the south pole to the origin and blows up at the north
    pole. Points within POLE_EXCLUSION * radius of the pole are rejected by
    default; with pole_action="far" they are instead sent to a conventional
    far point (at 1e12 * sqrt(n) * radius), whose field contribution at
    moderate planar points is below every tolerance in the package. The
    "far" mode exists for recentered charts where a source may sit at the
    antipode of the chart center.
    """
    x, single = _as_batch(x, 3)
    r = params.radius
    pole = np.array([0.0, 0.0, r])
    dist_pole_sq = ((x - pole) ** 2).sum(axis=-1)
    near = dist_pole_sq < (POLE_EXCLUSION * r) ** 2
    if near.any():
        if pole_action != "far":
            raise PoleSingularity("point too close to the projection pole")
        dist_pole_sq = dist_pole_sq.copy()
    scale = 2.0 * math.sqrt(params.n) * r / np.where(near, 1.0, dist_pole_sq)
    w = x[:, :2] * scale[:, None]
    if near.any():
        far = 1e12 * math.sqrt(params.n) * r
        horiz = np.linalg.norm(x[near, :2], axis=-1)
        unit = np.where(
            horiz[:, None] > 0.0,
            x[near, :2] / np.where(horiz, horiz, 1.0)[:, None],
            np.array([1.0, 0.0]),
        )
        w[near] = far * unit
    return w[0] if single else w


def lift_to_sphere(w, params: SphereParams):
    """Inverse stereographic map from the plane back to the sphere.

    Total on the plane; |w| -> infinity approaches the north pole.
    """
    w, single = _as_batch(w, 2)
    r = params.radius
    s = (w**2).sum(axis=-1) / params.n  # |w/sqrt(n)|^2
    denom = 1.0 + s
    x = np.empty(w.shape[:-1] + (3,))
    x[:, 0] = 2.0 * w[:, 0] / (math.sqrt(params.n) * denom)
    x[:, 1] = 2.0 * w[:, 1] / (math.sqrt(params.n) * denom)
    x[:, 2] = (s - 1.0) / denom
    x *= r
    return x[0] if single else x


def chordal_distance_sq_via_projection(x, y, params: SphereParams):
    """Squared planar distance of two projected points, from the closed form.

    Computed from chordal distances alone, without projecting; serves as the
    reference for the projection implementation.
    """
    x, single = _as_batch(x, 3)
    y, _ = _as_batch(y, 3)
    r = params.radius
    pole = np.array([0.0, 0.0, r])
    dxp = ((x - pole) ** 2).sum(axis=-1)
    dyp = ((y - pole) ** 2).sum(axis=-1)
    if np.any(dxp < (POLE_EXCLUSION * r) ** 2) or np.any(dyp < (POLE_EXCLUSION * r) ** 2):
        raise PoleSingularity("point too close to the projection pole")
    out = 4.0 * params.n * r**2 * ((x - y) ** 2).sum(axis=-1) / (dxp * dyp)
    return float(out[0]) if single else out


def rho(w, params: SphereParams):
    """Conformal weight sqrt(1 + |w|^2 / n) of a planar point."""
    w, single = _as_batch(w, 2)
    out = np.sqrt(1.0 + (w**2).sum(axis=-1) / params.n)
    return float(out[0]) if single else out


def mu_density(w, params: SphereParams):
    """Density at w of the projection of the uniform sphere measure."""
    w, single = _as_batch(w, 2)
    out = 1.0 / (math.pi * params.n * rho(w, params) ** 4) * np.ones(w.shape[0])
    return float(out[0]) if single else out


def conformal_factor(x, params: SphereParams):
    """Local length scaling of the projection at sphere point x."""
    x, single = _as_batch(x, 3)
    r = params.radius
    pole = np.array([0.0, 0.0, r])
    dist_pole_sq = ((x - pole) ** 2).sum(axis=-1)
    if np.any(dist_pole_sq < (POLE_EXCLUSION * r) ** 2):
        raise PoleSingularity("point too close to the projection pole")
    out = 2.0 * math.sqrt(params.n) * r / dist_pole_sq
    return float(out[0]) if single else out


def recenter_rotation(x) -> np.ndarray:
    """Proper rotation carrying x to the south pole (projection center).

    Used to study the field in a chart centered at an arbitrary point.
    """
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x)
    if nrm == 0.0:
        raise ValueError("cannot recenter the origin")
    u = x / nrm
    v = np.array([0.0, 0.0, -1.0])
    c = float(u @ v)
    if c > 1.0 - 1e-15:
        return np.eye(3)
    if c < -1.0 + 1e-15:
        # x is the north pole: rotate half a turn about the x-axis.
        return np.diag([1.0, -1.0, -1.0])
    axis = np.cross(u, v)
    s = np.linalg.norm(axis)
    axis = axis / s
    K = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed proper rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def tangent_basis(x) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal basis of the tangent plane at x."""
    x = np.asarray(x, dtype=float)
    u = x / np.linalg.norm(x)
    # Pick the seed axis least aligned with u.
    seed = np.zeros(3)
    seed[np.argmin(np.abs(u))] = 1.0
    e1 = seed - (seed @ u) * u
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    return e1, e2


def sphere_batch_tangent_bases(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized tangent bases for a batch of sphere points (m, 3)."""
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    seed = np.zeros_like(u)
    idx = np.argmin(np.abs(u), axis=1)
    seed[np.arange(len(u)), idx] = 1.0
    e1 = seed - (seed * u).sum(axis=1, keepdims=True) * u
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(u, e1)
    return e1, e2


def fibonacci_sphere(k: int, r: float) -> np.ndarray:
    """k near-uniform points on the sphere of radius r (golden-angle spiral)."""
    i = np.arange(k, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / k
    phi = i * (math.pi * (3.0 - math.sqrt(5.0)))
    s = np.sqrt(np.maximum(0.0, 1.0 - z**2))
    pts = np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    return r * pts
