"""Parsers and writers for KITTI-style text formats and 16-bit depth maps.

Covers:
  * calibration files (the ``P2:`` projection-matrix line),
  * object label files (15 whitespace-separated fields per line),
  * detection result files (label fields plus a trailing score),
  * 2D box lists (left top right bottom score per line),
  * 16-bit single-channel depth images (meters = raw / 256, raw 0 invalid).

All parsers are pure functions over text or buffers and are safe to call
concurrently.  Point-cloud serialization lives in :mod:`monovote.pointcloud`
and is re-exported here.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import FormatError, ParseError, ValidationError
from .pointcloud import (  # noqa: F401  (re-exported container API)
    PointCloud,
    PseudoPoint,
    read_point_cloud,
    write_point_cloud,
    write_point_cloud_text,
)

DEPTH_SCALE = 256.0  # raw 16-bit counts per meter; raw 0 marks an invalid pixel

DONT_CARE = "DontCare"

_LABEL_FIELDS = 15
_DETECTION_FIELDS = 16


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics extracted from the P2 projection matrix."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.cx < 0 or self.cy < 0:
            raise ValidationError(f"principal point must be nonnegative, got ({self.cx}, {self.cy})")


@dataclass
class DepthMap:
    """Per-pixel depth in meters; 0 marks an invalid (missing) pixel."""

    width: int
    height: int
    depth: np.ndarray  # (height, width) float64 meters

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.shape != (self.height, self.width):
            raise ValidationError(
                f"depth array shape {d.shape} does not match {self.height}x{self.width}"
            )
        if d.size and np.any(d < 0):
            raise ValidationError("depth values must be nonnegative")
        self.depth = d


@dataclass
class GroundTruthObject:
    """One row of a KITTI label file.

    ``DontCare`` rows are retained (with their placeholder numeric fields)
    so evaluators can implement ignore regions.
    """

    label: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple  # (left, top, right, bottom) pixels
    dimensions: tuple  # (h, w, l) meters
    location: tuple  # (x, y, z) meters, camera frame
    rotation_y: float

    def __post_init__(self):
        left, top, right, bottom = self.bbox2d
        if not (right > left and bottom > top):
            raise ValidationError(f"degenerate 2D box {self.bbox2d}")
        if self.label != DONT_CARE:
            if not 0.0 <= self.truncation <= 1.0:
                raise ValidationError(f"truncation {self.truncation} outside [0, 1]")
            if self.occlusion not in (0, 1, 2, 3):
                raise ValidationError(f"occlusion level {self.occlusion} not in {{0,1,2,3}}")
            if any(d <= 0 for d in self.dimensions):
                raise ValidationError(f"dimensions must be positive, got {self.dimensions}")

    @property
    def bbox_height(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]


@dataclass
class Detection(GroundTruthObject):
    """A detector output row: label fields plus a confidence score."""

    score: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class Box2D:
    """An axis-aligned 2D image box with a detector confidence."""

    left: float
    top: float
    right: float
    bottom: float
    score: float

    def __post_init__(self):
        if not (self.right > self.left and self.bottom > self.top):
            raise ValidationError(f"degenerate 2D box ({self.left}, {self.top}, {self.right}, {self.bottom})")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")


def _float(token: str, lineno: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: non-numeric {what} {token!r}") from None


def parse_calib(text: str) -> CameraIntrinsics:
    """Extract pinhole intrinsics from a calibration file's P2 line."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.startswith("P2:"):
            continue
        tokens = line[len("P2:"):].split()
        if len(tokens) != 12:
            raise ParseError(f"line {lineno}: P2 expects 12 values, got {len(tokens)}")
        values = [_float(t, lineno, "P2 entry") for t in tokens]
        p = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return CameraIntrinsics(fx=p[0, 0], fy=p[1, 1], cx=p[0, 2], cy=p[1, 2])
    raise ParseError("no P2 line found in calibration text")


def _parse_object_fields(tokens, lineno):
    label = tokens[0]
    truncation = _float(tokens[1], lineno, "truncation")
    occlusion = int(_float(tokens[2], lineno, "occlusion"))
    alpha = _float(tokens[3], lineno, "alpha")
    bbox = tuple(_float(t, lineno, "bbox") for t in tokens[4:8])
    dims = tuple(_float(t, lineno, "dimension") for t in tokens[8:11])
    loc = tuple(_float(t, lineno, "location") for t in tokens[11:14])
    rot = _float(tokens[14], lineno, "rotation_y")
    return dict(
        label=label,
        truncation=truncation,
        occlusion=occlusion,
        alpha=alpha,
        bbox2d=bbox,
        dimensions=dims,
        location=loc,
        rotation_y=rot,
    )


def parse_labels(text: str) -> list:
    """Parse a KITTI label file; one object per non-empty line."""
    objects = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != _LABEL_FIELDS:
            raise ParseError(f"line {lineno}: expected {_LABEL_FIELDS} fields, got {len(tokens)}")
        objects.append(GroundTruthObject(**_parse_object_fields(tokens, lineno)))
    return objects


def parse_detections(text: str) -> list:
    """Parse a KITTI result file (label fields plus trailing score)."""
    detections = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != _DETECTION_FIELDS:
            raise ParseError(f"line {lineno}: expected {_DETECTION_FIELDS} fields, got {len(tokens)}")
        fields = _parse_object_fields(tokens[:-1], lineno)
        score = _float(tokens[-1], lineno, "score")
        detections.append(Detection(score=score, **fields))
    return detections


def parse_boxes2d(text: str) -> list:
    """Parse 2D ROI boxes: ``left top right bottom score`` per line."""
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise ParseError(f"line {lineno}: expected 5 fields, got {len(tokens)}")
        l, t, r, b, s = (_float(tok, lineno, "box field") for tok in tokens)
        boxes.append(Box2D(l, t, r, b, s))
    return boxes


def format_label_line(obj: GroundTruthObject) -> str:
    parts = [obj.label, "%.2f" % obj.truncation, "%d" % obj.occlusion, "%.6f" % obj.alpha]
    parts += ["%.6f" % v for v in obj.bbox2d]
    parts += ["%.6f" % v for v in obj.dimensions]
    parts += ["%.6f" % v for v in obj.location]
    parts.append("%.6f" % obj.rotation_y)
    return " ".join(parts)


def format_detection_line(det: Detection) -> str:
    return format_label_line(det) + " %.6f" % det.score


def write_detections(detections) -> str:
    """Serialize detections back to the KITTI result format."""
    return "".join(format_detection_line(d) + "\n" for d in detections)


def depth_from_raw(raw: np.ndarray) -> DepthMap:
    """Convert a raw 16-bit depth image to meters (raw / 256; 0 invalid)."""
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise FormatError(f"depth image must be single-channel, got shape {raw.shape}")
    if raw.dtype != np.uint16:
        if not np.issubdtype(raw.dtype, np.integer):
            raise FormatError(f"raw depth must be integer-typed, got {raw.dtype}")
        if raw.size and (raw.min() < 0 or raw.max() > 0xFFFF):
            raise FormatError("raw depth values exceed the 16-bit range")
        raw = raw.astype(np.uint16)
    depth = raw.astype(np.float64) / DEPTH_SCALE
    return DepthMap(width=raw.shape[1], height=raw.shape[0], depth=depth)


def raw_from_depth(dm: DepthMap) -> np.ndarray:
    """Inverse of :func:`depth_from_raw` (lossless for /256-scaled values)."""
    raw = np.rint(dm.depth * DEPTH_SCALE)
    if raw.size and (raw.min() < 0 or raw.max() > 0xFFFF):
        raise ValidationError("depth map does not fit the 16-bit raw encoding")
    return raw.astype(np.uint16)


_PIL_16BIT_MODES = ("I;16", "I;16B", "I;16L", "I;16N", "I")


def load_depth_map(source) -> DepthMap:
    """Load a 16-bit single-channel depth image.

    ``source`` may be a file path, a bytes buffer, a file object, a PIL
    image, or a raw integer array.  Images that are not single-channel
    16-bit raise FormatError.
    """
    if isinstance(source, np.ndarray):
        return depth_from_raw(source)
    if isinstance(source, Image.Image):
        img = source
    else:
        if isinstance(source, (bytes, bytearray)):
            source = io.BytesIO(source)
        try:
            img = Image.open(source)
        except Exception as exc:
            raise FormatError(f"cannot decode depth image: {exc}") from exc
    if img.mode not in _PIL_16BIT_MODES:
        raise FormatError(f"unsupported depth image mode {img.mode!r} (16-bit grayscale required)")
    raw = np.asarray(img)
    if raw.ndim != 2:
        raise FormatError(f"depth image must be single-channel, got shape {raw.shape}")
    if img.mode == "I" and raw.size and (raw.min() < 0 or raw.max() > 0xFFFF):
        raise FormatError("32-bit image values exceed the 16-bit depth range")
    return depth_from_raw(raw.astype(np.uint16))


def write_depth_map(dm: DepthMap, path) -> None:
    """Write a depth map as a 16-bit grayscale PNG."""
    raw = raw_from_depth(dm)
    Image.fromarray(raw).save(path, format="PNG")  # uint16 maps to mode I;16
