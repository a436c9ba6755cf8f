"""Pinhole backprojection of depth maps into pseudo-LiDAR point clouds.

Camera frame convention: X right, Y down, Z forward (optical axis).  A pixel
(u, v) with depth z backprojects to

    x = (u - cx) * z / fx
    y = (v - cy) * z / fy

and the bird's-eye-view plane used downstream is (x, z).

The fourth point channel ``sigma`` is a foreground likelihood: the score of
the highest-scoring 2D ROI box whose bounds contain the point's projected
pixel (inclusive), or 0 when no box covers it.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ValidationError
from .kitti_io import CameraIntrinsics, DepthMap
from .pointcloud import PointCloud, PseudoPoint


def backproject(dm: DepthMap, cam: CameraIntrinsics) -> PointCloud:
    """Lift every valid (depth > 0) pixel into camera coordinates.

    Points appear in row-major pixel order (scanlines top to bottom, left
    to right); sigma is initialized to 0.  An all-invalid depth map yields
    an empty cloud.
    """
    vs, us = np.nonzero(dm.depth > 0)
    z = dm.depth[vs, us]
    u = us.astype(np.float64)
    v = vs.astype(np.float64)
    x = (u - cam.cx) * z / cam.fx
    y = (v - cam.cy) * z / cam.fy
    return PointCloud(np.stack([x, y, z, np.zeros_like(z)], axis=1))


def project_to_pixel(p, cam: CameraIntrinsics) -> tuple:
    """Project a camera-frame point back to pixel coordinates.

    ``p`` may be a PseudoPoint or any (x, y, z[, sigma]) sequence.
    Exact inverse of the backprojection map for z > 0.
    """
    if isinstance(p, PseudoPoint):
        x, y, z = p.x, p.y, p.z
    else:
        x, y, z = p[0], p[1], p[2]
    if z <= 0:
        raise DomainError(f"cannot project a point at nonpositive depth z={z}")
    u = x * cam.fx / z + cam.cx
    v = y * cam.fy / z + cam.cy
    return (u, v)


def project_cloud(cloud: PointCloud, cam: CameraIntrinsics):
    """Vectorized projection of a whole cloud; returns (u, v) arrays."""
    x, y, z = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
    if z.size and z.min() <= 0:
        raise DomainError("cloud contains points at nonpositive depth")
    u = x * cam.fx / z + cam.cx
    v = y * cam.fy / z + cam.cy
    return u, v


def pixel_roi_scores(us, vs, boxes) -> np.ndarray:
    """Max ROI score per pixel position; 0 where no box contains it.

    Box bounds are inclusive on all four edges.
    """
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    sigma = np.zeros(us.shape, dtype=np.float64)
    for box in boxes:
        inside = (us >= box.left) & (us <= box.right) & (vs >= box.top) & (vs <= box.bottom)
        np.maximum(sigma, np.where(inside, box.score, 0.0), out=sigma)
    return sigma


def associate_roi_scores(cloud: PointCloud, cam: CameraIntrinsics, boxes) -> PointCloud:
    """Attach 2D detector confidences to points as the sigma channel.

    Each point is projected to its pixel; sigma becomes the max score over
    boxes containing that pixel (0 if none).  Geometry is unchanged and the
    operation is idempotent for fixed boxes.
    """
    u, v = project_cloud(cloud, cam)
    out = cloud.points.copy()
    out[:, 3] = pixel_roi_scores(u, v, boxes)
    return PointCloud(out)


def crop_range(cloud: PointCloud, x_range, y_range, z_range) -> PointCloud:
    """Keep points with x, y, z inside the half-open ranges [min, max).

    Output order is the input order (the result is a subsequence).
    """
    for name, (lo, hi) in (("x", x_range), ("y", y_range), ("z", z_range)):
        if not lo < hi:
            raise ValidationError(f"{name} range ({lo}, {hi}) is not well-ordered")
    pts = cloud.points
    keep = (
        (pts[:, 0] >= x_range[0]) & (pts[:, 0] < x_range[1])
        & (pts[:, 1] >= y_range[0]) & (pts[:, 1] < y_range[1])
        & (pts[:, 2] >= z_range[0]) & (pts[:, 2] < z_range[1])
    )
    return PointCloud(pts[keep])


def downsample(cloud: PointCloud, factor: int, seed=0) -> PointCloud:
    """Seeded uniform subsampling to floor(n / factor) points.

    Selected points keep their original relative order; factor 1 is the
    identity.  Deterministic for a fixed seed.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValidationError(f"downsample factor must be a positive integer, got {factor!r}")
    n = len(cloud)
    keep = n // factor
    if keep == n:
        return PointCloud(cloud.points.copy())
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=keep, replace=False))
    return PointCloud(cloud.points[idx])
