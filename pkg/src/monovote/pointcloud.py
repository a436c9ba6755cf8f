"""Four-channel point clouds (x, y, z, sigma) and their binary container.

Coordinates follow the camera convention: x right, y down, z forward.
The fourth channel sigma is a foreground likelihood in [0, 1].

Binary container ("NVPC"): a 16-byte header (4-byte magic ``NVPC``,
u32 format version, u32 point count, u32 reserved, all little-endian)
followed by ``count`` records of four little-endian float32 values
(x, y, z, sigma).  Round trip through the container is bit-exact for
clouds whose values are float32-representable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

POINT_CLOUD_MAGIC = b"NVPC"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_POINT_BYTES = 16  # 4 channels x float32


@dataclass(frozen=True)
class PseudoPoint:
    """A single backprojected point with its foreground likelihood."""

    x: float
    y: float
    z: float
    sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.sigma <= 1.0:
            raise ValidationError(f"sigma must be in [0, 1], got {self.sigma}")


@dataclass
class PointCloud:
    """An ordered collection of pseudo-LiDAR points.

    Stored as an (N, 4) float64 array with columns (x, y, z, sigma).
    Order is meaningful and deterministic (row-major pixel order for
    backprojected clouds).
    """

    points: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValidationError(f"point array must have shape (N, 4), got {pts.shape}")
        sigma = pts[:, 3]
        if pts.size and (np.any(sigma < 0.0) or np.any(sigma > 1.0) or not np.all(np.isfinite(sigma))):
            raise ValidationError("sigma channel must lie in [0, 1]")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def sigma(self) -> np.ndarray:
        return self.points[:, 3]

    def point(self, i: int) -> PseudoPoint:
        x, y, z, s = self.points[i]
        return PseudoPoint(x, y, z, s)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.empty((0, 4)))

    @classmethod
    def from_points(cls, points) -> "PointCloud":
        rows = [(p.x, p.y, p.z, p.sigma) if isinstance(p, PseudoPoint) else tuple(p) for p in points]
        if not rows:
            return cls.empty()
        return cls(np.asarray(rows, dtype=np.float64))


def write_point_cloud(cloud: PointCloud) -> bytes:
    """Serialize a cloud to the NVPC binary container."""
    pts = np.ascontiguousarray(cloud.points, dtype="<f4")
    header = _HEADER.pack(POINT_CLOUD_MAGIC, _FORMAT_VERSION, len(cloud), 0)
    return header + pts.tobytes()


def read_point_cloud(buf: bytes) -> PointCloud:
    """Parse an NVPC buffer back into a cloud.

    Raises FormatError on bad magic, unknown version, or truncated payload.
    """
    if len(buf) < _HEADER.size:
        raise FormatError(f"buffer too short for NVPC header ({len(buf)} bytes)")
    magic, version, count, _ = _HEADER.unpack_from(buf)
    if magic != POINT_CLOUD_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {POINT_CLOUD_MAGIC!r}")
    if version != _FORMAT_VERSION:
        raise FormatError(f"unsupported NVPC version {version}")
    payload = buf[_HEADER.size:]
    expected = count * _POINT_BYTES
    if len(payload) != expected:
        raise FormatError(
            f"payload length {len(payload)} does not match count {count} ({expected} bytes expected)"
        )
    pts = np.frombuffer(payload, dtype="<f4").reshape(count, 4).astype(np.float64)
    return PointCloud(pts)


def write_point_cloud_text(cloud: PointCloud) -> str:
    """Plain-text x y z sigma export, one point per line (debugging aid)."""
    lines = ["%.9g %.9g %.9g %.9g" % tuple(row) for row in cloud.points]
    return "\n".join(lines) + ("\n" if lines else "")
