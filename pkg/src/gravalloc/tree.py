"""Hierarchical (octree) accelerator for the source force sum.

Monopole-only nodes: each node stores the count, centroid, and a tight
radius bounding member distances from the centroid. A node is accepted for
a query when radius / distance < theta; otherwise it is opened, down to
leaves which are summed directly. theta = 0 therefore reproduces the direct
sum up to summation order.

Queries are batched: the traversal keeps a frontier of (query, node) pairs
and processes whole levels with array operations, accumulating per-query
contributions with bincount. For a fixed query the traversal order, and
hence the floating-point accumulation order, does not depend on what else
is in the batch.
"""

from __future__ import annotations

import numpy as np

_LEAF_SIZE = 8

_OCTANT_SIGNS = np.array(
    [[dx, dy, dz] for dx in (-1.0, 1.0) for dy in (-1.0, 1.0) for dz in (-1.0, 1.0)]
)


class ForceTree:
    """Octree over source coordinates with per-node monopole summaries."""

    def __init__(self, sources: np.ndarray, leaf_size: int = _LEAF_SIZE):
        sources = np.asarray(sources, dtype=float)
        n = len(sources)
        lo = sources.min(axis=0)
        hi = sources.max(axis=0)
        root_center = 0.5 * (lo + hi)
        root_half = 0.5 * float((hi - lo).max()) * (1.0 + 1e-12) + 1e-300

        centers = []
        halves = []
        counts = []
        centroids = []
        radii = []
        second_moments = []
        children = []
        leaf_start = []
        leaf_end = []

        perm = np.empty(n, dtype=np.intp)
        order = np.arange(n)
        cursor = 0

        def build(idx, center, half):
            nonlocal cursor
            node = len(counts)
            pts = sources[idx]
            centroid = pts.mean(axis=0)
            delta = pts - centroid
            rad = float(np.sqrt((delta**2).sum(axis=1).max()))
            mom = delta.T @ delta  # second moment about the centroid
            centers.append(center)
            halves.append(half)
            counts.append(len(idx))
            centroids.append(centroid)
            radii.append(rad)
            second_moments.append(
                [mom[0, 0], mom[1, 1], mom[2, 2], mom[0, 1], mom[0, 2], mom[1, 2]]
            )
            children.append(np.full(8, -1, dtype=np.intp))
            leaf_start.append(-1)
            leaf_end.append(-1)
            if len(idx) <= leaf_size:
                leaf_start[node] = cursor
                perm[cursor : cursor + len(idx)] = idx
                cursor += len(idx)
                leaf_end[node] = cursor
                return node
            octant = (
                (pts[:, 0] >= center[0]).astype(np.intp) * 4
                + (pts[:, 1] >= center[1]).astype(np.intp) * 2
                + (pts[:, 2] >= center[2]).astype(np.intp)
            )
            for o in range(8):
                sub = idx[octant == o]
                if len(sub) == 0:
                    continue
                child_center = center + 0.5 * half * _OCTANT_SIGNS[o]
                children[node][o] = build(sub, child_center, 0.5 * half)
            return node

        import sys

        old_limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old_limit, 10000))
        try:
            build(order, root_center, root_half)
        finally:
            sys.setrecursionlimit(old_limit)

        self.sources = sources
        self.perm = perm
        self.count = np.array(counts, dtype=float)
        self.centroid = np.array(centroids)
        self.radius = np.array(radii)
        self.second_moment = np.array(second_moments)  # xx, yy, zz, xy, xz, yz
        self.children = np.array(children, dtype=np.intp)
        self.leaf_start = np.array(leaf_start, dtype=np.intp)
        self.leaf_end = np.array(leaf_end, dtype=np.intp)
        self.is_leaf = self.leaf_start >= 0
        self.points_permuted = sources[perm]

    @property
    def num_nodes(self) -> int:
        return len(self.count)

    def ambient_force(self, points: np.ndarray, theta: float) -> np.ndarray:
        """Approximate sum of (z - x)/|x - z|^2 for a batch of query points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m = len(points)
        acc = np.zeros((m, 3))
        q = np.arange(m)
        nodes = np.zeros(m, dtype=np.intp)
        while len(q):
            cen = self.centroid[nodes]
            delta = cen - points[q]
            d2 = (delta**2).sum(axis=1)
            accept = self.radius[nodes] ** 2 < theta**2 * d2
            take = accept & (d2 > 0.0)
            if take.any():
                w = self.count[nodes[take]] / d2[take]
                contrib = delta[take] * w[:, None]
                qt = q[take]
                for c in range(3):
                    acc[:, c] += np.bincount(qt, weights=contrib[:, c], minlength=m)
            rest = ~accept
            leaf = rest & self.is_leaf[nodes]
            if leaf.any():
                ql = q[leaf]
                starts = self.leaf_start[nodes[leaf]]
                lens = self.leaf_end[nodes[leaf]] - starts
                total = int(lens.sum())
                if total:
                    qq = np.repeat(ql, lens)
                    # Flattened per-leaf point ranges.
                    head = np.concatenate([[0], lens.cumsum()[:-1]])
                    offs = np.repeat(starts - head, lens) + np.arange(total)
                    pts = self.points_permuted[offs]
                    dd = pts - points[qq]
                    w = 1.0 / (dd**2).sum(axis=1)
                    contrib = dd * w[:, None]
                    for c in range(3):
                        acc[:, c] += np.bincount(qq, weights=contrib[:, c], minlength=m)
            inner = rest & ~self.is_leaf[nodes]
            if inner.any():
                kids = self.children[nodes[inner]]
                keep = kids >= 0
                q = np.repeat(q[inner], 8)[keep.ravel()]
                nodes = kids.ravel()[keep.ravel()]
            else:
                q = np.empty(0, dtype=np.intp)
                nodes = np.empty(0, dtype=np.intp)
        return acc


def build_force_tree(cfg, leaf_size: int = _LEAF_SIZE):
    """Attach a ForceTree to the configuration (in place) and return it."""
    tree = ForceTree(cfg.sources, leaf_size=leaf_size)
    cfg.force_tree = tree
    return cfg
