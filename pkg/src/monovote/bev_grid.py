"""BEV pillar voxelization and metric-to-cell coordinate mapping.

The grid covers a rectangular bird's-eye-view range with square-footprint
pillars (vertical columns; the height axis is never binned).  Cell counts
default to round(extent / cell) but can be overridden, since some feature
extractors crop to stride-friendly dimensions (e.g. 496x432 instead of the
range-derived 500x440).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .pointcloud import PointCloud


@dataclass(frozen=True)
class GridConfig:
    """BEV voxelization parameters.

    Defaults: 80 m x 70.4 m range at 0.16 m cells (500 x 440 pillars),
    height window [-1, 3] m, at most 128 points per pillar, and a
    feature-map stride of 2.
    """

    x_min: float = -40.0
    x_max: float = 40.0
    z_min: float = 0.0
    z_max: float = 70.4
    y_min: float = -1.0
    y_max: float = 3.0
    cell_x: float = 0.16
    cell_z: float = 0.16
    max_points_per_pillar: int = 128
    downsample_rate: int = 2  # feature-map stride (lambda)
    n_x_override: int | None = None
    n_z_override: int | None = None

    def __post_init__(self):
        if self.cell_x <= 0 or self.cell_z <= 0:
            raise ValidationError(f"cell sizes must be positive, got ({self.cell_x}, {self.cell_z})")
        if not (self.x_max > self.x_min and self.z_max > self.z_min and self.y_max > self.y_min):
            raise ValidationError("grid ranges must satisfy max > min on every axis")
        if self.max_points_per_pillar < 1:
            raise ValidationError(f"max_points_per_pillar must be >= 1, got {self.max_points_per_pillar}")
        if not isinstance(self.downsample_rate, (int, np.integer)) or self.downsample_rate < 1:
            raise ValidationError(f"downsample_rate must be a positive integer, got {self.downsample_rate!r}")
        if self.n_x < 1 or self.n_z < 1:
            raise ValidationError("grid must contain at least one cell per axis")

    @property
    def n_x(self) -> int:
        if self.n_x_override is not None:
            return self.n_x_override
        return round((self.x_max - self.x_min) / self.cell_x)

    @property
    def n_z(self) -> int:
        if self.n_z_override is not None:
            return self.n_z_override
        return round((self.z_max - self.z_min) / self.cell_z)

    @property
    def feature_shape(self) -> tuple:
        """Feature-map cell counts after applying the stride."""
        lam = self.downsample_rate
        return (self.n_x // lam, self.n_z // lam)


def cell_index(p, cfg: GridConfig):
    """Map a point to its (i_x, i_z) pillar index, or None when out of range.

    ``p`` may be a PseudoPoint or any object with x and z attributes.
    Indexing is half-open: a point exactly at the upper range edge is out.
    """
    i_x = math.floor((p.x - cfg.x_min) / cfg.cell_x)
    i_z = math.floor((p.z - cfg.z_min) / cfg.cell_z)
    if 0 <= i_x < cfg.n_x and 0 <= i_z < cfg.n_z:
        return (i_x, i_z)
    return None


def cell_indices(pts: np.ndarray, cfg: GridConfig):
    """Vectorized cell_index over an (n, >=3) point array.

    Returns (i_x, i_z, in_range) where in_range also requires y inside
    [y_min, y_max).
    """
    i_x = np.floor((pts[:, 0] - cfg.x_min) / cfg.cell_x).astype(np.int64)
    i_z = np.floor((pts[:, 2] - cfg.z_min) / cfg.cell_z).astype(np.int64)
    in_range = (
        (i_x >= 0) & (i_x < cfg.n_x) & (i_z >= 0) & (i_z < cfg.n_z)
        & (pts[:, 1] >= cfg.y_min) & (pts[:, 1] < cfg.y_max)
    )
    return i_x, i_z, in_range


@dataclass
class PillarGrid:
    """Sparse mapping from (i_x, i_z) to the point rows stored in that pillar.

    Immutable after construction by convention; safe for concurrent reads.
    """

    config: GridConfig
    cells: dict = field(default_factory=dict)  # (i_x, i_z) -> (m, 4) float64 array

    def occupied_cells(self):
        return self.cells.keys()

    def point_count(self) -> int:
        return sum(len(v) for v in self.cells.values())

    def cell_points(self, key) -> np.ndarray:
        return self.cells.get(key, np.empty((0, 4)))


def voxelize(cloud: PointCloud, cfg: GridConfig, seed=0) -> PillarGrid:
    """Bin in-range points into pillars, capping each pillar's population.

    In-range means x and z fall inside the grid and y inside [y_min, y_max).
    Pillars holding more than max_points_per_pillar points keep a seeded
    uniform subsample of exactly that many.  Deterministic for a fixed seed:
    cells are capped in sorted key order.
    """
    pts = cloud.points
    cells: dict = {}
    if len(pts) == 0:
        return PillarGrid(config=cfg, cells=cells)
    i_x, i_z, ok = cell_indices(pts, cfg)
    sel = np.nonzero(ok)[0]
    if sel.size == 0:
        return PillarGrid(config=cfg, cells=cells)
    keys = np.stack([i_x[sel], i_z[sel]], axis=1)
    order = np.lexsort((keys[:, 1], keys[:, 0]))
    keys = keys[order]
    sel = sel[order]
    boundaries = np.nonzero(np.any(np.diff(keys, axis=0) != 0, axis=1))[0] + 1
    groups = np.split(sel, boundaries)
    starts = np.concatenate([[0], boundaries])
    rng = np.random.default_rng(seed)
    cap = cfg.max_points_per_pillar
    for start, rows in zip(starts, groups):
        key = (int(keys[start, 0]), int(keys[start, 1]))
        if len(rows) > cap:
            rows = rows[np.sort(rng.choice(len(rows), size=cap, replace=False))]
        cells[key] = pts[rows]
    return PillarGrid(config=cfg, cells=cells)


def feature_coords(cell, lam: int):
    """Map a pillar index to its feature-map position at stride ``lam``."""
    if not isinstance(lam, (int, np.integer)) or lam < 1:
        raise ValidationError(f"stride must be a positive integer, got {lam!r}")
    return (cell[0] // lam, cell[1] // lam)


def feature_cell_center(j, cfg: GridConfig) -> tuple:
    """Metric BEV center of feature cell (j_x, j_z) at the configured stride."""
    lam = cfg.downsample_rate
    x = cfg.x_min + (j[0] + 0.5) * cfg.cell_x * lam
    z = cfg.z_min + (j[1] + 0.5) * cfg.cell_z * lam
    return (x, z)
