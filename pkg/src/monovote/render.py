"""Static top-down BEV rasterization to portable pixel-map (PPM) images.

One image pixel per grid cell; far depths at the top of the image, the
camera at the bottom.  Points paint white, predicted boxes outline in red,
ground-truth boxes in green.  Output is deterministic.
"""

from __future__ import annotations

import numpy as np

from .bev_grid import GridConfig
from .evaluation import OrientedBox

BACKGROUND = (0, 0, 0)
POINT_COLOR = (255, 255, 255)
DET_COLOR = (255, 64, 64)
GT_COLOR = (64, 255, 64)


def _to_pixel(x, z, cfg: GridConfig):
    ix = int(np.floor((x - cfg.x_min) / cfg.cell_x))
    iz = int(np.floor((z - cfg.z_min) / cfg.cell_z))
    if 0 <= ix < cfg.n_x and 0 <= iz < cfg.n_z:
        return (cfg.n_z - 1 - iz, ix)  # row, col
    return None


def _draw_box(img, box: OrientedBox, color, cfg: GridConfig) -> None:
    corners = box.corners()
    step = min(cfg.cell_x, cfg.cell_z) / 2.0
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        n = max(2, int(np.ceil(np.hypot(*(b - a)) / step)) + 1)
        for t in np.linspace(0.0, 1.0, n):
            p = a + t * (b - a)
            px = _to_pixel(p[0], p[1], cfg)
            if px is not None:
                img[px[0], px[1]] = color


def render_bev(cloud=None, det_boxes=(), gt_boxes=(), cfg: GridConfig = None) -> np.ndarray:
    """Rasterize a scene; returns an (n_z, n_x, 3) uint8 image."""
    cfg = cfg if cfg is not None else GridConfig()
    img = np.zeros((cfg.n_z, cfg.n_x, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    if cloud is not None and len(cloud):
        pts = cloud.points
        i_x = np.floor((pts[:, 0] - cfg.x_min) / cfg.cell_x).astype(np.int64)
        i_z = np.floor((pts[:, 2] - cfg.z_min) / cfg.cell_z).astype(np.int64)
        ok = (i_x >= 0) & (i_x < cfg.n_x) & (i_z >= 0) & (i_z < cfg.n_z)
        img[cfg.n_z - 1 - i_z[ok], i_x[ok]] = POINT_COLOR
    for box in gt_boxes:
        _draw_box(img, box, GT_COLOR, cfg)
    for box in det_boxes:
        _draw_box(img, box, DET_COLOR, cfg)
    return img


def ppm_bytes(img: np.ndarray) -> bytes:
    """Encode an (h, w, 3) uint8 image as binary PPM (P6)."""
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.astype(np.uint8).tobytes()
