"""Source configurations: the point set all field and flow queries take."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import geometry
from .geometry import SphereParams


@dataclass
class Configuration:
    """An ordered set of source points on the working sphere.

    ``planar_sources`` caches the stereographic images of the sources and is
    computed on construction when not supplied (the Kostlan sampler supplies
    it directly, since there the planar points are primary). Treat instances
    as immutable after construction; ``force_tree`` is attached once by
    :func:`gravalloc.tree.build_force_tree`.

    ``sources`` normally has ``params.n`` rows. Derived configurations (the
    residual sets used by online matching) keep the original sphere geometry
    while holding fewer sources; ``subset`` builds those.
    """

    params: SphereParams
    sources: np.ndarray
    planar_sources: Optional[np.ndarray] = None
    process: str = "custom"
    seed: Optional[int] = None
    force_tree: object = None

    def __post_init__(self):
        self._kdtree = None
        self.sources = np.ascontiguousarray(self.sources, dtype=float)
        if self.sources.ndim != 2 or self.sources.shape[1] != 3:
            raise ValueError("sources must be an (m, 3) array")
        r = self.params.radius
        norms = np.linalg.norm(self.sources, axis=1)
        if np.any(np.abs(norms - r) > 1e-9 * r):
            raise ValueError("sources must lie on the sphere of the given params")
        if len(self.sources) > 1:
            dmin, _ = cKDTree(self.sources).query(self.sources, k=2)
            if np.any(dmin[:, 1] == 0.0):
                raise ValueError("sources must be pairwise distinct")
        if self.planar_sources is None:
            self.planar_sources = geometry.project_to_plane(self.sources, self.params)
        else:
            self.planar_sources = np.ascontiguousarray(self.planar_sources, dtype=float)
        self._source_sq = (self.sources**2).sum(axis=1)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def num_sources(self) -> int:
        return len(self.sources)

    def kdtree(self) -> cKDTree:
        """Spatial index over the sources, built lazily (nearest-source queries)."""
        if self._kdtree is None:
            self._kdtree = cKDTree(self.sources)
        return self._kdtree

    def rotated(self, rot: np.ndarray) -> "Configuration":
        """Configuration with every source rotated by the 3x3 matrix rot."""
        return Configuration(
            params=self.params,
            sources=self.sources @ rot.T,
            process=self.process,
            seed=self.seed,
        )

    def subset(self, indices) -> "Configuration":
        """Configuration keeping the selected sources on the same sphere."""
        sub = Configuration.__new__(Configuration)
        sub.params = self.params
        sub.sources = np.ascontiguousarray(self.sources[indices])
        sub.planar_sources = np.ascontiguousarray(self.planar_sources[indices])
        sub.process = self.process
        sub.seed = self.seed
        sub.force_tree = None
        sub._source_sq = (sub.sources**2).sum(axis=1)
        sub._kdtree = None
        return sub


def make_configuration(points, process: str = "custom", seed=None) -> Configuration:
    """Configuration from an (n, 3) array; n is inferred from the row count."""
    points = np.asarray(points, dtype=float)
    return Configuration(
        params=SphereParams(len(points)), sources=points, process=process, seed=seed
    )


def configuration_to_json(cfg: Configuration) -> str:
    """Serialize a configuration; coordinates round-trip exactly."""
    doc = {
        "n": cfg.params.n,
        "process": cfg.process,
        "seed": cfg.seed,
        "points": [["%.17g" % c for c in row] for row in cfg.sources],
    }
    return json.dumps(doc, separators=(",", ":"))


def configuration_from_json(text: str) -> Configuration:
    doc = json.loads(text)
    pts = np.array([[float(c) for c in row] for row in doc["points"]])
    return Configuration(
        params=SphereParams(doc["n"]),
        sources=pts,
        process=doc.get("process", "custom"),
        seed=doc.get("seed"),
    )
