"""Experiment reports and their serialization (JSON, CSV, PPM images).

Reports are fully determined by (study, parameters, seed): two runs of the
same configuration produce byte-identical JSON apart from the wall-clock
field, which is always emitted last so it is easy to strip.
"""

from __future__ import annotations

import colorsys
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .flow import UNASSIGNED

VERSION_STRING = "gravalloc-0.1.0"

_GOLDEN_ANGLE_DEG = 137.50776405003785


@dataclass
class ExperimentReport:
    study: str
    parameters: dict
    summary: dict
    records: list = field(default_factory=list)
    reference: dict = field(default_factory=dict)
    version: str = VERSION_STRING
    wall_clock_seconds: float = 0.0

    def to_json(self, include_wall_clock: bool = True) -> str:
        doc = {
            "study": self.study,
            "version": self.version,
            "parameters": self.parameters,
            "reference": self.reference,
            "summary": self.summary,
            "records": self.records,
        }
        if include_wall_clock:
            doc["wall_clock_seconds"] = self.wall_clock_seconds
        return json.dumps(doc, indent=1)

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    def write_csv(self, path) -> None:
        """Per-sample table; column order follows the first record."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if not self.records:
                fh.write("")
                return
            names = list(self.records[0].keys())
            writer = csv.writer(fh)
            writer.writerow(names)
            for rec in self.records:
                writer.writerow([_csv_cell(rec.get(k)) for k in names])


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def golden_angle_palette(count: int) -> np.ndarray:
    """(count, 3) uint8 palette; hue advances by the golden angle per index."""
    out = np.empty((count, 3), dtype=np.uint8)
    for i in range(count):
        hue = (i * _GOLDEN_ANGLE_DEG / 360.0) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.62, 0.95)
        out[i] = (int(round(255 * r)), int(round(255 * g)), int(round(255 * b)))
    return out


def write_ppm(path, index_grid: np.ndarray, palette: np.ndarray) -> None:
    """Binary PPM (P6, maxval 255); UNASSIGNED pixels are black."""
    grid = np.asarray(index_grid)
    h, w = grid.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    ok = grid != UNASSIGNED
    rgb[ok] = palette[grid[ok] % len(palette)]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def raster_sidecar(params, width: int, height: int) -> dict:
    """Pixel-to-sphere mapping of the equirectangular raster.

    Pixel (row j, column i) sits at longitude lon[i], latitude lat[j] on the
    sphere of the given radius; x = r cos(lat) cos(lon), y = r cos(lat)
    sin(lon), z = r sin(lat).
    """
    i = (np.arange(width) + 0.5) / width
    j = (np.arange(height) + 0.5) / height
    lon = 2.0 * np.pi * i - np.pi
    lat = np.pi / 2.0 - np.pi * j
    return {
        "projection": "equirectangular",
        "width": width,
        "height": height,
        "radius": params.radius,
        "longitude_per_column": [float(v) for v in lon],
        "latitude_per_row": [float(v) for v in lat],
        "coordinates": "x = r cos(lat) cos(lon); y = r cos(lat) sin(lon); z = r sin(lat)",
        "unassigned_index": UNASSIGNED,
    }
