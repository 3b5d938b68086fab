"""Locating and certifying local maxima of the potential.

Strategy: seed the sphere with a Fibonacci lattice (seeds_per_source per
source), ride the ascending field +F toward the attracting maxima, then
polish with a tangential Newton iteration and certify. The ascent has a
cheap transport stage (normalized-field Euler steps, which follow the same
streamlines) before switching to the error-controlled RK4 stepper; nearby
seeds are merged along the way since only the set of limit points matters.

Certification of a maximum is twofold: the recentered planar Hessian must
be negative definite with margin, and the potential must strictly drop in
eight probed directions around the point. Candidates failing either are
reported as Rejected, never silently promoted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .config import Configuration
from .errors import NotCritical
from .flow import FlowOptions, Stepper
from .forces import (
    ambient_force_jacobian,
    force_jacobian_plane,
    force_plane,
    potential,
    tangential,
)
from .geometry import (
    fibonacci_sphere,
    project_to_plane,
    recenter_rotation,
    sphere_batch_tangent_bases,
    tangent_basis,
)

MAXIMUM = "maximum"
SADDLE = "saddle"
REJECTED = "rejected"


@dataclass
class CriticalPoint:
    location: np.ndarray
    gradient_norm: float
    hessian_eigs: tuple[float, float]
    kind: str


@dataclass
class CriticalOptions:
    """Search and certification knobs for the maxima finder."""

    seeds_per_source: int = 20
    transport_steps: int = 24
    transport_alpha: float = 0.2
    transport_merge_every: int = 6
    transport_merge_radius: float = 0.02
    ascent_tolerance: Optional[float] = None  # None -> 1e-5 * radius
    switch_force: float = 0.05
    ascent_max_steps: int = 200
    ascent_merge_every: int = 8
    newton_iters: int = 8
    grad_tol: float = 1e-8
    eig_margin: float = 1e-6
    dedup_radius_rel: float = 1e-4
    probe_radius_rel: float = 1e-4
    use_tree: Optional[bool] = None  # None -> only for large n
    tree_theta: float = 0.3


def _merge_close(points: np.ndarray, radius: float) -> np.ndarray:
    """Drop near-duplicates by grid rounding; keeps first occurrence order."""
    keys = np.round(points / radius).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def _cluster_representatives(points: np.ndarray, radius: float) -> np.ndarray:
    """Indices of one representative per radius-connected cluster."""
    if len(points) == 0:
        return np.empty(0, dtype=np.intp)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    m = len(points)
    graph = csr_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m)
    )
    _, labels = connected_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    return np.sort(first)


def _stepper_options(cfg: Configuration, opts: CriticalOptions) -> FlowOptions:
    use_tree = opts.use_tree
    if use_tree is None:
        use_tree = cfg.num_sources >= 1024 and cfg.force_tree is not None
    return FlowOptions(use_tree=use_tree, tree_theta=opts.tree_theta)


def _transport(pos: np.ndarray, stepper: Stepper, opts: CriticalOptions, r: float):
    """Cheap streamline-following sweep that concentrates seeds near maxima."""
    alpha = opts.transport_alpha
    for it in range(opts.transport_steps):
        f = stepper.field(pos)
        mag = np.linalg.norm(f, axis=1)
        step = alpha / np.maximum(mag, 1e-12)
        pos = pos + f * step[:, None]
        pos *= (r / np.linalg.norm(pos, axis=1))[:, None]
        if (it + 1) % opts.transport_merge_every == 0:
            pos = _merge_close(pos, opts.transport_merge_radius)
    return _merge_close(pos, opts.transport_merge_radius)


def _ascend(pos: np.ndarray, stepper: Stepper, opts: CriticalOptions, r: float):
    """Error-controlled RK4 ascent until the force is small; returns candidates."""
    tol = opts.ascent_tolerance if opts.ascent_tolerance is not None else 1e-5 * r
    h = np.full(len(pos), 0.01)
    settled = []
    for it in range(opts.ascent_max_steps):
        if len(pos) == 0:
            break
        f = stepper.field(pos)
        mag = np.linalg.norm(f, axis=1)
        low = mag < opts.switch_force
        if low.any():
            settled.append(pos[low])
            pos = pos[~low]
            h = h[~low]
            f = f[~low]
        if len(pos) == 0:
            break
        hcur = np.minimum(h, 1.0)
        cand, err, _ = stepper.attempt(pos, hcur, f)
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = 0.9 * (tol / np.where(err > 0.0, err, 1e-30)) ** 0.2
        factor[~np.isfinite(factor)] = 0.2
        accept = err < tol
        moved = cand[accept]
        moved *= (r / np.linalg.norm(moved, axis=1))[:, None]
        pos[accept] = moved
        h[accept] = hcur[accept] * np.clip(factor[accept], 0.2, 5.0)
        h[~accept] = hcur[~accept] * np.clip(factor[~accept], 0.1, 0.9)
        if (it + 1) % opts.ascent_merge_every == 0:
            pos = _merge_close(pos, opts.transport_merge_radius)
            h = np.full(len(pos), h.mean() if len(h) else 0.01)
    dropped = len(pos)
    if settled:
        out = np.concatenate(settled)
    else:
        out = np.empty((0, 3))
    return out, dropped


def _newton_refine(pos: np.ndarray, cfg: Configuration, iters: int, r: float):
    """Tangential Newton toward F = 0; quadratic near any critical point."""
    from .forces import ambient_force_sum

    for _ in range(iters):
        if len(pos) == 0:
            break
        g = ambient_force_sum(pos, cfg)
        jac = ambient_force_jacobian(pos, cfg)
        e1, e2 = sphere_batch_tangent_bases(pos)
        u = pos / np.linalg.norm(pos, axis=1, keepdims=True)
        radial = (g * u).sum(axis=1)
        # 2x2 system in the (e1, e2) basis.
        j11 = np.einsum("mi,mij,mj->m", e1, jac, e1) - radial / r
        j22 = np.einsum("mi,mij,mj->m", e2, jac, e2) - radial / r
        j12 = np.einsum("mi,mij,mj->m", e1, jac, e2)
        j21 = np.einsum("mi,mij,mj->m", e2, jac, e1)
        b1 = -(g * e1).sum(axis=1)
        b2 = -(g * e2).sum(axis=1)
        det = j11 * j22 - j12 * j21
        det = np.where(np.abs(det) < 1e-30, np.inf, det)
        d1 = (b1 * j22 - b2 * j12) / det
        d2 = (j11 * b2 - j21 * b1) / det
        step = e1 * d1[:, None] + e2 * d2[:, None]
        # Clamp runaway steps (ill-conditioned candidates get dropped later).
        nrm = np.linalg.norm(step, axis=1)
        big = nrm > 0.1 * r
        if big.any():
            step[big] *= (0.1 * r / nrm[big])[:, None]
        pos = pos + step
        pos *= (r / np.linalg.norm(pos, axis=1))[:, None]
    return pos


def _recentered_chart(x: np.ndarray, cfg: Configuration):
    """Planar images of the sources in the chart centered at x."""
    rot = recenter_rotation(x)
    rotated = cfg.sources @ rot.T
    planar = project_to_plane(rotated, cfg.params, pole_action="far")
    chart = cfg.subset(slice(None))
    chart.sources = rotated
    chart.planar_sources = planar
    return chart


def classify_critical_point(x, cfg: Configuration, grad_tol: float = 1e-8,
                            eig_margin: float = 1e-6) -> CriticalPoint:
    """Classify a near-critical point by its recentered planar Hessian.

    The Hessian trace away from sources is strictly negative, so the only
    possible kinds are maximum, saddle, and (near-degenerate) rejected.
    """
    x = np.asarray(x, dtype=float)
    chart = _recentered_chart(x, cfg)
    origin = np.zeros(2)
    gnorm = float(np.linalg.norm(force_plane(origin, chart)))
    if gnorm > grad_tol:
        raise NotCritical(f"gradient norm {gnorm:.3e} exceeds {grad_tol:.1e}")
    hess = -force_jacobian_plane(origin, chart)
    eigs = np.linalg.eigvalsh(hess)
    if eigs[0] < -eig_margin and eigs[1] < -eig_margin:
        kind = MAXIMUM
    elif eigs[0] < -eig_margin and eigs[1] > eig_margin:
        kind = SADDLE
    else:
        kind = REJECTED
    return CriticalPoint(
        location=x.copy(),
        gradient_norm=gnorm,
        hessian_eigs=(float(eigs[0]), float(eigs[1])),
        kind=kind,
    )


def _probe_is_strict_max(x: np.ndarray, cfg: Configuration, radius: float) -> bool:
    """Potential strictly smaller at 8 compass points around x."""
    e1, e2 = tangent_basis(x)
    angles = np.arange(8) * (math.pi / 4.0)
    probes = x[None, :] + radius * (
        np.cos(angles)[:, None] * e1[None, :] + np.sin(angles)[:, None] * e2[None, :]
    )
    probes *= (cfg.params.radius / np.linalg.norm(probes, axis=1))[:, None]
    u0 = potential(x, cfg)
    return bool(np.all(potential(probes, cfg) < u0))


def find_local_maxima(cfg: Configuration, opts: CriticalOptions = None):
    """All certified local maxima of the potential of cfg.

    Returns (maxima, diagnostics): a list of CriticalPoint with kind
    "maximum" (sorted by location for determinism), and a dict of counters
    covering everything that was filtered along the way.
    """
    if opts is None:
        opts = CriticalOptions()
    r = cfg.params.radius
    n = cfg.num_sources
    seeds = fibonacci_sphere(opts.seeds_per_source * n, r)

    flow_opts = _stepper_options(cfg, opts)
    stepper = Stepper(cfg, flow_opts, direction=-1.0)  # ascend: flow along +grad U
    diagnostics = {
        "seeds": len(seeds),
        "ascent_dropped": 0,
        "newton_dropped": 0,
        "saddles": 0,
        "rejected": 0,
        "probe_failures": 0,
    }

    pos = _transport(seeds, stepper, opts, r)
    pos, dropped = _ascend(pos, stepper, opts, r)
    diagnostics["ascent_dropped"] = dropped
    if len(pos) == 0:
        return [], diagnostics

    pos = _newton_refine(pos, cfg, opts.newton_iters, r)

    keep = _cluster_representatives(pos, opts.dedup_radius_rel * r)
    pos = pos[keep]

    maxima = []
    probe_radius = opts.probe_radius_rel * r
    for x in pos:
        try:
            cp = classify_critical_point(x, cfg, opts.grad_tol, opts.eig_margin)
        except NotCritical:
            diagnostics["newton_dropped"] += 1
            continue
        if cp.kind == SADDLE:
            diagnostics["saddles"] += 1
        elif cp.kind == REJECTED:
            diagnostics["rejected"] += 1
        elif not _probe_is_strict_max(x, cfg, probe_radius):
            diagnostics["probe_failures"] += 1
        else:
            maxima.append(cp)

    maxima.sort(key=lambda cp: tuple(cp.location))
    return maxima, diagnostics
