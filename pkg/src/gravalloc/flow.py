"""Trajectory integration, basin assignment, and rasters.

Trajectories follow dY/dt = F(Y) with adaptive step-doubling RK4 in ambient
coordinates, renormalizing to the sphere after every accepted step. A
trajectory is captured by the source within ``capture_radius`` once the
force points inward; the remaining fall takes d^2/2 time units and d length
units (from the near-source law d|Y-z|^2/dt = -2), which are added to the
flow duration and arc length so the discretization bias stays O(d^3).

Batches integrate many trajectories at once, but every per-trajectory
quantity (step sizes, acceptance, totals) evolves element-wise, so each
outcome is identical to integrating that trajectory alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import Configuration
from .errors import GravallocError, NonFiniteState, TreeNotBuilt
from .forces import pairwise_sq_distances, tangential, weighted_source_sum

UNASSIGNED = -1

_H_MIN_FACTOR = 1e-14
_GROW_LIMIT = 5.0
_SHRINK_LIMIT = 0.2
_SAFETY = 0.9


@dataclass
class FlowOptions:
    """Integrator knobs; defaults suit every study in the package.

    ``error_tolerance`` is the per-step position discrepancy between one
    full step and two half steps; None means 1e-7 times the sphere radius.
    ``near_clamp`` bounds the step by near_clamp * (distance to the nearest
    source)^2 so wells are never overshot.
    """

    capture_radius: float = 1e-3
    max_flow_time: float = 10.0
    initial_step: float = 1e-3
    error_tolerance: Optional[float] = None
    max_steps: int = 10_000_000
    near_clamp: float = 0.25
    max_step_size: float = 0.25
    use_tree: bool = False
    tree_theta: float = 0.3
    check_energy: bool = False

    def resolved_tolerance(self, radius: float) -> float:
        return self.error_tolerance if self.error_tolerance is not None else 1e-7 * radius

    def validate(self, radius: float) -> None:
        if not (0.0 < self.capture_radius < radius / 10.0):
            raise ValueError("capture_radius must be positive and below radius/10")
        for name in ("max_flow_time", "initial_step", "near_clamp", "max_step_size"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


@dataclass
class FlowOutcome:
    """Result of one trajectory: where it ended up and what it cost."""

    target: int
    tau: float
    arc_length: float
    steps: int
    terminal_point: np.ndarray

    @property
    def assigned(self) -> bool:
        return self.target != UNASSIGNED


@dataclass
class FlowBatchResult:
    """Array-of-struct view over many FlowOutcomes (study-friendly)."""

    target: np.ndarray
    tau: np.ndarray
    arc_length: np.ndarray
    steps: np.ndarray
    terminal: np.ndarray

    def __len__(self):
        return len(self.target)

    def outcome(self, i: int) -> FlowOutcome:
        return FlowOutcome(
            target=int(self.target[i]),
            tau=float(self.tau[i]),
            arc_length=float(self.arc_length[i]),
            steps=int(self.steps[i]),
            terminal_point=self.terminal[i].copy(),
        )

    def outcomes(self) -> list[FlowOutcome]:
        return [self.outcome(i) for i in range(len(self))]


class Stepper:
    """Field evaluation plus one step-doubled RK4 attempt, batch form."""

    def __init__(self, cfg: Configuration, opts: FlowOptions, direction: float = 1.0):
        self.cfg = cfg
        self.direction = direction
        self.use_tree = opts.use_tree
        self.theta = opts.tree_theta
        if self.use_tree:
            if cfg.force_tree is None:
                raise TreeNotBuilt("FlowOptions.use_tree set but no tree on the configuration")
            self._kdtree = cfg.kdtree()

    def field(self, pos: np.ndarray) -> np.ndarray:
        """Tangential force (times direction) at a batch of points."""
        if self.use_tree:
            amb = self.cfg.force_tree.ambient_force(pos, self.theta)
        else:
            d2 = pairwise_sq_distances(pos, self.cfg)
            with np.errstate(divide="ignore"):
                w = 1.0 / d2
            bad = ~np.isfinite(w)
            if bad.any():
                w[bad] = 0.0
            amb = weighted_source_sum(w, self.cfg.sources) - pos * w.sum(axis=1)[:, None]
        f = tangential(amb, pos)
        return f if self.direction == 1.0 else -f

    def eval_with_nearest(self, pos: np.ndarray):
        """(force, dmin, jmin) fused; dmin/jmin locate the nearest source."""
        if self.use_tree:
            dmin, jmin = self._kdtree.query(pos)
            return self.field(pos), dmin, jmin
        d2 = pairwise_sq_distances(pos, self.cfg)
        jmin = d2.argmin(axis=1)
        d2min = d2[np.arange(len(pos)), jmin]
        with np.errstate(divide="ignore"):
            w = 1.0 / d2
        bad = ~np.isfinite(w)
        if bad.any():
            w[bad] = 0.0
        amb = weighted_source_sum(w, self.cfg.sources) - pos * w.sum(axis=1)[:, None]
        f = tangential(amb, pos)
        if self.direction != 1.0:
            f = -f
        return f, np.sqrt(d2min), jmin

    def _rk4(self, pos, h, k1):
        hh = h[:, None]
        k2 = self.field(pos + 0.5 * hh * k1)
        k3 = self.field(pos + 0.5 * hh * k2)
        k4 = self.field(pos + hh * k3)
        new = pos + hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        speed = (
            np.linalg.norm(k1, axis=1)
            + 2.0 * np.linalg.norm(k2, axis=1)
            + 2.0 * np.linalg.norm(k3, axis=1)
            + np.linalg.norm(k4, axis=1)
        ) / 6.0
        return new, speed

    def attempt(self, pos, h, k1):
        """One full step vs two half steps: (candidate, error, arc increment)."""
        full, _ = self._rk4(pos, h, k1)
        mid, speed_a = self._rk4(pos, 0.5 * h, k1)
        k1b = self.field(mid)
        out, speed_b = self._rk4(mid, 0.5 * h, k1b)
        err = np.linalg.norm(full - out, axis=1)
        arc_inc = 0.5 * h * (speed_a + speed_b)
        return out, err, arc_inc


def _renormalize(pos: np.ndarray, radius: float) -> np.ndarray:
    return pos * (radius / np.linalg.norm(pos, axis=1))[:, None]


def flow_batch(starts, cfg: Configuration, opts: FlowOptions = None) -> FlowBatchResult:
    """Integrate a batch of trajectories down the force field to capture."""
    if opts is None:
        opts = FlowOptions()
    r = cfg.params.radius
    opts.validate(r)
    tol = opts.resolved_tolerance(r)
    delta = opts.capture_radius
    starts = np.ascontiguousarray(np.atleast_2d(np.asarray(starts, dtype=float)))
    m = len(starts)

    stepper = Stepper(cfg, opts)
    pos = starts.copy()
    h = np.full(m, opts.initial_step)
    t = np.zeros(m)
    arc = np.zeros(m)
    steps = np.zeros(m, dtype=np.int64)
    target = np.full(m, UNASSIGNED, dtype=np.int64)
    tau = np.zeros(m)
    terminal = starts.copy()
    done = np.zeros(m, dtype=bool)
    idx = np.arange(m)

    first = True
    while len(idx):
        p = pos[idx]
        f, dmin, jmin = stepper.eval_with_nearest(p)
        if not np.all(np.isfinite(p)):
            raise NonFiniteState("trajectory left the finite domain")

        near = dmin < delta
        if near.any():
            if first:
                captured = near
            else:
                # Inward motion toward the nearest source required mid-flow.
                znear = cfg.sources[jmin] - p
                captured = near & ((f * znear).sum(axis=1) > 0.0)
            if captured.any():
                rows = idx[captured]
                target[rows] = jmin[captured]
                tau[rows] = t[rows] + 0.5 * dmin[captured] ** 2
                arc[rows] += dmin[captured]
                terminal[rows] = p[captured]
                done[rows] = True
        first = False

        alive = ~done[idx]
        out_of_time = alive & (t[idx] >= opts.max_flow_time)
        out_of_steps = alive & (steps[idx] >= opts.max_steps)
        stopped = out_of_time | out_of_steps
        if stopped.any():
            rows = idx[stopped]
            tau[rows] = t[rows]
            terminal[rows] = pos[rows]
            done[rows] = True

        keep = ~done[idx]
        if not keep.all():
            idx = idx[keep]
            if len(idx) == 0:
                break
            p = pos[idx]
            f = f[keep]
            dmin = dmin[keep]

        hcur = np.minimum(h[idx], opts.near_clamp * dmin**2)
        np.minimum(hcur, opts.max_flow_time - t[idx], out=hcur)
        np.minimum(hcur, opts.max_step_size, out=hcur)
        np.maximum(hcur, _H_MIN_FACTOR, out=hcur)

        if opts.check_energy:
            u_before = _potential_rows(p, cfg)

        cand, err, arc_inc = stepper.attempt(p, hcur, f)
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = _SAFETY * (tol / np.where(err > 0.0, err, 1e-30)) ** 0.2
        factor[~np.isfinite(factor)] = _SHRINK_LIMIT
        accept = err < tol

        if accept.any():
            rows = idx[accept]
            newpos = _renormalize(cand[accept], r)
            if opts.check_energy:
                u_after = _potential_rows(newpos, cfg)
                bad = u_after > u_before[accept] + 1e-9 * (1.0 + np.abs(u_before[accept]))
                if bad.any():
                    raise GravallocError("potential increased along an accepted step")
            pos[rows] = newpos
            t[rows] += hcur[accept]
            arc[rows] += arc_inc[accept]
            steps[rows] += 1
            h[rows] = hcur[accept] * np.clip(factor[accept], _SHRINK_LIMIT, _GROW_LIMIT)
        if (~accept).any():
            rows = idx[~accept]
            h[rows] = hcur[~accept] * np.clip(factor[~accept], 0.1, 0.9)

    return FlowBatchResult(target=target, tau=tau, arc_length=arc, steps=steps, terminal=terminal)


def _potential_rows(p: np.ndarray, cfg: Configuration) -> np.ndarray:
    d2 = pairwise_sq_distances(p, cfg)
    return 0.5 * np.log(d2).sum(axis=1)


def integrate_to_basin(x, cfg: Configuration, opts: FlowOptions = None) -> FlowOutcome:
    """Flow a single point to its basin owner."""
    return flow_batch(np.asarray(x, dtype=float)[None, :], cfg, opts).outcome(0)


def allocate_many(xs, cfg: Configuration, opts: FlowOptions = None, chunk: int = None,
                  threads: int = 1) -> list[FlowOutcome]:
    """Element-wise integrate_to_basin over a list of starts, order preserved."""
    return allocate_arrays(xs, cfg, opts, chunk=chunk, threads=threads).outcomes()


def _auto_chunk(n_sources: int) -> int:
    return int(min(16384, max(256, 4_000_000 // max(n_sources, 1))))


def allocate_arrays(xs, cfg: Configuration, opts: FlowOptions = None, chunk: int = None,
                    threads: int = 1) -> FlowBatchResult:
    """flow_batch over fixed-size chunks (bounded memory, optional threads).

    Chunk boundaries depend only on the chunk size, never on the thread
    count, so results are reproducible under any parallelism.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if chunk is None:
        chunk = _auto_chunk(cfg.num_sources)
    pieces = [xs[s : s + chunk] for s in range(0, len(xs), chunk)]
    if threads > 1 and len(pieces) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda block: flow_batch(block, cfg, opts), pieces))
    else:
        results = [flow_batch(block, cfg, opts) for block in pieces]
    return FlowBatchResult(
        target=np.concatenate([r.target for r in results]),
        tau=np.concatenate([r.tau for r in results]),
        arc_length=np.concatenate([r.arc_length for r in results]),
        steps=np.concatenate([r.steps for r in results]),
        terminal=np.concatenate([r.terminal for r in results]),
    )


def raster_grid_points(params, width: int, height: int) -> np.ndarray:
    """Pixel-center sphere points of the equirectangular grid, row-major.

    Row 0 is the north edge; longitude spans [-pi, pi) left to right.
    """
    r = params.radius
    i = (np.arange(width) + 0.5) / width
    j = (np.arange(height) + 0.5) / height
    lon = 2.0 * math.pi * i - math.pi
    lat = math.pi / 2.0 - math.pi * j
    coslat = np.cos(lat)[:, None]
    x = r * coslat * np.cos(lon)[None, :]
    y = r * coslat * np.sin(lon)[None, :]
    z = r * np.sin(lat)[:, None] * np.ones((1, width))
    return np.stack([x, y, z], axis=-1).reshape(-1, 3)


def raster_pixel_weights(height: int) -> np.ndarray:
    """Relative pixel areas (cos latitude) per raster row."""
    j = (np.arange(height) + 0.5) / height
    return np.cos(math.pi / 2.0 - math.pi * j)


def basin_raster(cfg: Configuration, opts: FlowOptions = None, width: int = 128,
                 height: int = 64, threads: int = 1) -> np.ndarray:
    """(height, width) grid of basin indices; UNASSIGNED where the flow stalls."""
    if width < 1 or height < 1:
        raise ValueError("raster dimensions must be at least 1")
    pts = raster_grid_points(cfg.params, width, height)
    res = allocate_arrays(pts, cfg, opts, threads=threads)
    return res.target.reshape(height, width)
