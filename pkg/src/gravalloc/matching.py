"""Bijections between two point sets on the sphere (and a square baseline).

Four constructions: the exact minimum-total-distance assignment (the
reference all others are compared against), an online scheme that flows
each left point to its basin owner in the remaining right set, a coupling
scheme that matches by co-allocation frequencies of uniform samples, and
the greedy nearest-pair heuristic. Distances are chordal throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import Configuration, make_configuration
from .errors import DegenerateWeights
from .flow import UNASSIGNED, FlowOptions, allocate_arrays, integrate_to_basin
from .processes import substream_rng, uniform_sphere_points


@dataclass
class MatchingResult:
    """A bijection i -> permutation[i] with its per-pair chordal distances."""

    permutation: np.ndarray
    distances: np.ndarray
    mean_distance: float
    max_distance: float
    method: str
    diagnostics: dict

    @property
    def total_distance(self) -> float:
        return float(self.distances.sum())

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "permutation": [int(i) for i in self.permutation],
            "distances": [float(d) for d in self.distances],
            "mean_distance": self.mean_distance,
            "max_distance": self.max_distance,
            "diagnostics": self.diagnostics,
        }


def _points(obj) -> np.ndarray:
    if isinstance(obj, Configuration):
        return obj.sources
    return np.atleast_2d(np.asarray(obj, dtype=float))


def _result(a, b, perm, method, diagnostics=None) -> MatchingResult:
    d = np.linalg.norm(a - b[perm], axis=1)
    return MatchingResult(
        permutation=np.asarray(perm, dtype=np.int64),
        distances=d,
        mean_distance=float(d.mean()),
        max_distance=float(d.max()),
        method=method,
        diagnostics=diagnostics or {},
    )


def distance_matrix(a, b) -> np.ndarray:
    a = _points(a)
    b = _points(b)
    d2 = (a**2).sum(axis=1)[:, None] + (b**2).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(d2, 0.0))


def optimal_match(a, b) -> MatchingResult:
    """Exact minimizer of the total chordal distance (assignment problem)."""
    a = _points(a)
    b = _points(b)
    if len(a) != len(b):
        raise ValueError("point sets must have equal size")
    cost = distance_matrix(a, b)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(a), dtype=np.int64)
    perm[rows] = cols
    return _result(a, b, perm, "optimal")


def greedy_nearest_pair_match(a, b) -> MatchingResult:
    """Repeatedly pair the globally closest remaining points.

    Ties break toward the lexicographically smallest (i, j), so the result
    is deterministic.
    """
    a = _points(a)
    b = _points(b)
    n = len(a)
    if len(b) != n:
        raise ValueError("point sets must have equal size")
    cost = distance_matrix(a, b)
    flat = cost.ravel()
    order = np.lexsort((np.arange(n * n) % n, np.arange(n * n) // n, flat))
    perm = np.full(n, -1, dtype=np.int64)
    used_b = np.zeros(n, dtype=bool)
    assigned = 0
    for k in order:
        i, j = divmod(int(k), n)
        if perm[i] >= 0 or used_b[j]:
            continue
        perm[i] = j
        used_b[j] = True
        assigned += 1
        if assigned == n:
            break
    return _result(a, b, perm, "greedy")


def online_gravitational_match(a, b, opts: FlowOptions = None,
                               threads: int = 1) -> MatchingResult:
    """Match left points one at a time to their basin owner on the right.

    Point a_k flows in the field of the still-unmatched right points; the
    owner is committed and removed. The sphere geometry stays that of the
    full right set, so the residual allocations have cells of area
    n / (number remaining). The rare stalled flow (start at a maximum of
    the residual potential) falls back to the nearest remaining point and
    is counted in the diagnostics.
    """
    a = _points(a)
    bcfg = b if isinstance(b, Configuration) else make_configuration(b)
    bpts = bcfg.sources
    n = len(a)
    if len(bpts) != n:
        raise ValueError("point sets must have equal size")
    remaining = list(range(n))
    perm = np.empty(n, dtype=np.int64)
    fallbacks = 0
    for k in range(n):
        residual = bcfg.subset(np.array(remaining, dtype=np.intp))
        out = integrate_to_basin(a[k], residual, opts)
        if out.target == UNASSIGNED:
            fallbacks += 1
            d = np.linalg.norm(residual.sources - a[k], axis=1)
            pick = int(d.argmin())
        else:
            pick = out.target
        perm[k] = remaining[pick]
        remaining.pop(pick)
    return _result(a, bpts, perm, "online", {"unassigned_fallbacks": fallbacks})


def coupling_match(a, b, num_samples: int, seed: int, opts: FlowOptions = None,
                   threads: int = 1, enforce_sample_floor: bool = True) -> MatchingResult:
    """Match by co-allocation: basins of A and B visited by common samples.

    Draws uniform points X, allocates each under both configurations, and
    accumulates the visit matrix W[a, b]; the returned bijection is the
    maximum-weight perfect matching of W. Rows or columns never hit mean
    the evidence is insufficient (DegenerateWeights): increase num_samples.
    """
    acfg = a if isinstance(a, Configuration) else make_configuration(a)
    bcfg = b if isinstance(b, Configuration) else make_configuration(b)
    n = acfg.num_sources
    if bcfg.num_sources != n:
        raise ValueError("point sets must have equal size")
    if enforce_sample_floor and num_samples < 10 * n * n:
        raise ValueError(f"num_samples must be at least 10 n^2 = {10 * n * n}")
    rng = substream_rng(seed)
    xs = uniform_sphere_points(rng, num_samples, acfg.params)
    ra = allocate_arrays(xs, acfg, opts, threads=threads)
    rb = allocate_arrays(xs, bcfg, opts, threads=threads)
    ok = (ra.target != UNASSIGNED) & (rb.target != UNASSIGNED)
    w = np.zeros((n, n))
    np.add.at(w, (ra.target[ok], rb.target[ok]), 1.0)
    if (w.sum(axis=1) == 0).any() or (w.sum(axis=0) == 0).any():
        raise DegenerateWeights("some source was never visited; increase num_samples")
    rows, cols = linear_sum_assignment(w, maximize=True)
    perm = np.empty(n, dtype=np.int64)
    perm[rows] = cols
    dropped = int(num_samples - ok.sum())
    return _result(acfg.sources, bcfg.sources, perm, "coupling",
                   {"samples": num_samples, "unassigned_samples": dropped})


def brute_force_match(a, b) -> MatchingResult:
    """Exact minimum by full permutation enumeration (oracle, n <= ~8)."""
    from itertools import permutations

    a = _points(a)
    b = _points(b)
    n = len(a)
    cost = distance_matrix(a, b)
    best, best_perm = np.inf, None
    for perm in permutations(range(n)):
        tot = cost[np.arange(n), perm].sum()
        if tot < best - 1e-15:
            best = tot
            best_perm = perm
    return _result(a, b, np.array(best_perm), "brute-force")


def square_uniform_points(rng: np.random.Generator, n: int) -> np.ndarray:
    """n i.i.d. uniform points in the square [0, sqrt(n)]^2."""
    return rng.uniform(0.0, np.sqrt(n), size=(n, 2))


def square_optimal_mean(n: int, seed: int) -> float:
    """Mean optimal matching distance of two uniform draws in [0, sqrt(n)]^2."""
    rng = substream_rng(seed)
    a = square_uniform_points(rng, n)
    b = square_uniform_points(rng, n)
    d2 = (a**2).sum(axis=1)[:, None] + (b**2).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    cost = np.sqrt(np.maximum(d2, 0.0))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())
