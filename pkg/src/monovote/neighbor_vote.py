"""Front/back neighbor voting over a BEV grid of feature points.

Every voter (a BEV feature-cell center) looks at a set of object centers and
records, for each of the two depth half-planes, the nearest object:

  * front: objects with z_c <= z_v (closer to the camera, ties included)
  * back:  objects with z_c >  z_v (farther than the voter)

A vote is stored as (sin theta, cos theta, dz) where theta = atan2(dz', dx')
is the angle of the voter-to-object vector against the +X axis and dz is the
nonnegative depth offset |z_c - z_v|.  Six channels per voter (front triple
then back triple) plus two validity masks make up the neighbor distance map.
Decoded votes are aggregated per candidate; the fraction of a candidate's
nearby voters whose votes land on it (its support) separates real objects
from spurious detections.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bev_grid import GridConfig
from .errors import FormatError, ValidationError

ABSTAIN_SIN = 1e-6  # |sin| below this: position unrecoverable from a z-offset
_NORM_TOL = 1e-6
_DECODE_NORM_TOL = 1e-3  # loose enough for 4-decimal rounded records
_SENTINEL = (0.0, 0.0, -1.0)

DISTANCE_MAP_MAGIC = b"NVDM"
_DMAP_HEADER = struct.Struct("<4sII")  # magic, n_voters, n_channels
_N_CHANNELS = 6


@dataclass(frozen=True)
class VoteParams:
    """Radii and threshold governing target generation and tallying.

    r_valid is the max voter-to-object distance for a training target
    (None disables the cutoff, the inference-time behavior).  r_voter
    bounds which voters count as eligible for a candidate, r_assign bounds
    how far a decoded vote may land from the candidate it elects, and tau
    is the minimum support for a detection to survive filtering.  nms_iou
    is the suppression threshold applied after filtering (None disables
    NMS).
    """

    r_valid: float | None = 15.0
    r_voter: float = 6.0
    r_assign: float = 2.0
    tau: float = 0.3
    nms_iou: float | None = 0.25

    def __post_init__(self):
        if self.r_valid is not None and self.r_valid <= 0:
            raise ValidationError(f"r_valid must be positive or None, got {self.r_valid}")
        if self.r_voter <= 0 or self.r_assign <= 0:
            raise ValidationError("r_voter and r_assign must be positive")
        if self.tau < 0:
            raise ValidationError(f"tau must be nonnegative, got {self.tau}")
        if self.nms_iou is not None and not 0 < self.nms_iou <= 1:
            raise ValidationError(f"nms_iou must lie in (0, 1] or be None, got {self.nms_iou}")


@dataclass
class VoterGrid:
    """BEV positions of the voting feature points."""

    positions: np.ndarray  # (n, 2) float64 (x, z)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if len(pos) and len(np.unique(pos, axis=0)) != len(pos):
            raise ValidationError("voter positions must be distinct")
        self.positions = pos

    def __len__(self):
        return len(self.positions)

    @classmethod
    def from_grid(cls, cfg: GridConfig) -> "VoterGrid":
        """Centers of all feature cells at the configured stride.

        Order is x-major: feature column j_x varies slowest, j_z fastest.
        """
        n_jx, n_jz = cfg.feature_shape
        lam = cfg.downsample_rate
        jx, jz = np.meshgrid(np.arange(n_jx), np.arange(n_jz), indexing="ij")
        x = cfg.x_min + (jx.ravel() + 0.5) * cfg.cell_x * lam
        z = cfg.z_min + (jz.ravel() + 0.5) * cfg.cell_z * lam
        return cls(np.stack([x, z], axis=1))


@dataclass
class ObjectSet:
    """BEV object centers, optionally linked to richer per-object records."""

    centers: np.ndarray  # (n, 2) float64 (x, z)
    objects: list | None = None

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(c)):
            raise ValidationError("object centers must be finite")
        if self.objects is not None and len(self.objects) != len(c):
            raise ValidationError("objects list must align with centers")
        self.centers = c

    def __len__(self):
        return len(self.centers)

    @classmethod
    def from_detections(cls, dets) -> "ObjectSet":
        centers = np.array([[d.location[0], d.location[2]] for d in dets], dtype=np.float64)
        return cls(centers.reshape(-1, 2), objects=list(dets))


class VoteRecord(NamedTuple):
    """One voter's two optional votes; each side is (sin, cos, dz) or None."""

    front: tuple | None
    back: tuple | None


@dataclass
class NeighborDistanceMap:
    """Per-voter 6-channel vote encoding plus validity masks.

    Channel order: sin_f, cos_f, dz_f, sin_b, cos_b, dz_b.  Absent sides
    hold the sentinel (0, 0, -1) and a False mask bit.
    """

    channels: np.ndarray  # (n, 6) float64
    front_valid: np.ndarray  # (n,) bool
    back_valid: np.ndarray  # (n,) bool

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64).reshape(-1, _N_CHANNELS)
        fv = np.asarray(self.front_valid, dtype=bool).reshape(-1)
        bv = np.asarray(self.back_valid, dtype=bool).reshape(-1)
        if len(fv) != len(ch) or len(bv) != len(ch):
            raise ValidationError("validity masks must align with channels")
        for name, valid, off, dz_floor in (("front", fv, 0, 0.0), ("back", bv, 3, None)):
            if valid.any():
                s, c, dz = ch[valid, off], ch[valid, off + 1], ch[valid, off + 2]
                if np.max(np.abs(s * s + c * c - 1.0), initial=0.0) > _NORM_TOL:
                    raise ValidationError(f"{name} records must have sin^2+cos^2 = 1")
                bad = (dz < 0.0) if dz_floor == 0.0 else (dz <= 0.0)
                if bad.any():
                    raise ValidationError(f"{name} dz out of range on a present record")
            absent = ~valid
            if absent.any() and not np.all(ch[absent, off:off + 3] == _SENTINEL):
                raise ValidationError(f"absent {name} records must hold the sentinel (0, 0, -1)")
        self.channels = ch
        self.front_valid = fv
        self.back_valid = bv

    def __len__(self):
        return len(self.channels)

    def record(self, i: int) -> VoteRecord:
        row = self.channels[i]
        front = tuple(row[0:3]) if self.front_valid[i] else None
        back = tuple(row[3:6]) if self.back_valid[i] else None
        return VoteRecord(front=front, back=back)


def _encode_side(vx, vz, ox, oz, chosen, valid, flip_dz):
    """Fill (sin, cos, dz) triples for one side; sentinel where invalid."""
    n = len(vx)
    out = np.empty((n, 3), dtype=np.float64)
    out[:] = _SENTINEL
    if not valid.any():
        return out
    idx = chosen[valid]
    dx = ox[idx] - vx[valid]
    dz = oz[idx] - vz[valid]
    dist = np.hypot(dx, dz)
    safe = dist > 0
    sin = np.where(safe, dz / np.where(safe, dist, 1.0), 0.0)
    cos = np.where(safe, dx / np.where(safe, dist, 1.0), 1.0)
    out[valid, 0] = sin
    out[valid, 1] = cos
    out[valid, 2] = -dz if flip_dz else dz
    return out


def compute_vote_targets(voters: VoterGrid, objects: ObjectSet, r_valid=15.0) -> NeighborDistanceMap:
    """Select each voter's nearest front and back objects (Euclidean BEV).

    A side is absent when no object lies on it, or (if r_valid is not
    None) when the nearest one is farther than r_valid.  Distance ties
    break toward the lowest object index.  An empty object set yields
    all-absent records.
    """
    if r_valid is not None and r_valid <= 0:
        raise ValidationError(f"r_valid must be positive or None, got {r_valid}")
    n_v = len(voters)
    vx, vz = voters.positions[:, 0], voters.positions[:, 1]
    sentinel = np.tile(np.array(_SENTINEL * 2), (n_v, 1))
    if len(objects) == 0:
        invalid = np.zeros(n_v, dtype=bool)
        return NeighborDistanceMap(sentinel, invalid, invalid)
    ox, oz = objects.centers[:, 0], objects.centers[:, 1]
    dx = ox[None, :] - vx[:, None]
    dz = oz[None, :] - vz[:, None]
    d2 = dx * dx + dz * dz
    front_mask = oz[None, :] <= vz[:, None]
    channels = sentinel
    valids = []
    for side_mask, flip in ((front_mask, True), (~front_mask, False)):
        d2_side = np.where(side_mask, d2, np.inf)
        chosen = np.argmin(d2_side, axis=1)
        dist = np.sqrt(d2_side[np.arange(n_v), chosen])
        valid = np.isfinite(dist)
        if r_valid is not None:
            valid &= dist <= r_valid
        triple = _encode_side(vx, vz, ox, oz, chosen, valid, flip_dz=flip)
        if flip:
            channels[:, 0:3] = triple
        else:
            channels[:, 3:6] = triple
        valids.append(valid)
    return NeighborDistanceMap(channels, valids[0], valids[1])


def decode_vote(voter, record):
    """Recover the BEV position a (sin, cos, dz) record points at.

    Returns None (abstains) when |sin| < 1e-6: a z-offset of dz cannot
    locate a target on a near-horizontal ray.  ``voter`` is an (x_v, z_v)
    pair.
    """
    sin, cos, dz = float(record[0]), float(record[1]), float(record[2])
    if dz < 0:
        raise ValidationError(f"present vote record has negative dz {dz}")
    if abs(sin * sin + cos * cos - 1.0) > _DECODE_NORM_TOL:
        raise ValidationError("vote record direction is not normalized")
    if abs(sin) < ABSTAIN_SIN:
        return None
    t = dz / abs(sin)
    return (voter[0] + t * cos, voter[1] + t * sin)


def decode_map(dmap: NeighborDistanceMap, voters: VoterGrid):
    """Vectorized decode of both sides.

    Returns (front_pos, front_ok, back_pos, back_ok); positions are (n, 2)
    arrays, valid only where the corresponding mask is True.
    """
    vx, vz = voters.positions[:, 0], voters.positions[:, 1]
    results = []
    for off, valid in ((0, dmap.front_valid), (3, dmap.back_valid)):
        sin = dmap.channels[:, off]
        cos = dmap.channels[:, off + 1]
        dz = dmap.channels[:, off + 2]
        ok = valid & (np.abs(sin) >= ABSTAIN_SIN)
        t = np.where(ok, dz / np.where(ok, np.abs(sin), 1.0), 0.0)
        pos = np.stack([vx + t * cos, vz + t * sin], axis=1)
        results.extend([pos, ok])
    return tuple(results)


@dataclass
class VoteTally:
    """Per-candidate consensus statistics.

    support = votes_received / max(1, eligible_voters); a vote counts for
    a candidate only when its voter is eligible for that candidate, so
    votes_received <= 2 * eligible_voters.
    """

    eligible_voters: np.ndarray  # (n_c,) int
    votes_received: np.ndarray  # (n_c,) int
    support: np.ndarray  # (n_c,) float

    def __len__(self):
        return len(self.support)


def tally_votes(dmap: NeighborDistanceMap, voters: VoterGrid, candidates: ObjectSet,
                r_voter: float = 6.0, r_assign: float = 2.0) -> VoteTally:
    """Aggregate decoded votes onto candidate centers.

    A voter is eligible for a candidate within r_voter of it.  Each decoded
    vote (front and back separately) elects the nearest candidate within
    r_assign of the decoded position; ties break toward the lowest
    candidate index, and votes landing farther are unassigned.
    """
    if r_voter <= 0 or r_assign <= 0:
        raise ValidationError("r_voter and r_assign must be positive")
    if len(dmap) != len(voters):
        raise ValidationError("distance map does not align with the voter grid")
    n_c = len(candidates)
    if n_c == 0:
        empty = np.zeros(0)
        return VoteTally(empty.astype(int), empty.astype(int), empty)
    cx, cz = candidates.centers[:, 0], candidates.centers[:, 1]
    vx, vz = voters.positions[:, 0], voters.positions[:, 1]
    eligible = (
        np.hypot(cx[None, :] - vx[:, None], cz[None, :] - vz[:, None]) <= r_voter
    )  # (n_v, n_c)
    votes = np.zeros(n_c, dtype=np.int64)
    front_pos, front_ok, back_pos, back_ok = decode_map(dmap, voters)
    for pos, ok in ((front_pos, front_ok), (back_pos, back_ok)):
        if not ok.any():
            continue
        d = np.hypot(pos[ok, 0:1] - cx[None, :], pos[ok, 1:2] - cz[None, :])
        nearest = np.argmin(d, axis=1)
        assigned = d[np.arange(len(nearest)), nearest] <= r_assign
        counted = assigned & eligible[ok, nearest]
        np.add.at(votes, nearest[counted], 1)
    n_eligible = eligible.sum(axis=0).astype(np.int64)
    support = votes / np.maximum(1, n_eligible)
    return VoteTally(n_eligible, votes, support)


def filter_by_votes(dets: list, tally: VoteTally, tau: float) -> list:
    """Keep detections whose support meets the threshold; order preserved."""
    if tau < 0:
        raise ValidationError(f"tau must be nonnegative, got {tau}")
    if len(dets) != len(tally):
        raise ValidationError("tally does not align with the detection list")
    return [d for d, s in zip(dets, tally.support) if s >= tau]


def vote_support_stats(tally: VoteTally, tp_flags) -> tuple:
    """Mean support over TP-flagged and FP-flagged candidates.

    Either mean is None when no candidate carries that flag.
    """
    flags = np.asarray(tp_flags, dtype=bool).reshape(-1)
    if len(flags) != len(tally):
        raise ValidationError("tp_flags must align with the tally")
    tp = float(np.mean(tally.support[flags])) if flags.any() else None
    fp = float(np.mean(tally.support[~flags])) if (~flags).any() else None
    return (tp, fp)


def write_distance_map(dmap: NeighborDistanceMap) -> bytes:
    """Serialize: 12-byte header, f32 channel rows, two validity bitmasks.

    Header is magic "NVDM", u32 voter count, u32 channel count (6), little
    endian.  Masks are LSB-first packed bits, front then back, each padded
    to whole bytes.
    """
    n = len(dmap)
    parts = [_DMAP_HEADER.pack(DISTANCE_MAP_MAGIC, n, _N_CHANNELS)]
    parts.append(dmap.channels.astype("<f4").tobytes())
    for mask in (dmap.front_valid, dmap.back_valid):
        parts.append(np.packbits(mask, bitorder="little").tobytes())
    return b"".join(parts)


def read_distance_map(buf: bytes) -> NeighborDistanceMap:
    """Inverse of write_distance_map; FormatError on malformed input."""
    if len(buf) < _DMAP_HEADER.size:
        raise FormatError("distance map buffer shorter than its header")
    magic, n, n_ch = _DMAP_HEADER.unpack_from(buf)
    if magic != DISTANCE_MAP_MAGIC:
        raise FormatError(f"bad distance map magic {magic!r}")
    if n_ch != _N_CHANNELS:
        raise FormatError(f"expected {_N_CHANNELS} channels, got {n_ch}")
    mask_bytes = (n + 7) // 8
    expected = _DMAP_HEADER.size + n * _N_CHANNELS * 4 + 2 * mask_bytes
    if len(buf) != expected:
        raise FormatError(f"distance map buffer is {len(buf)} bytes, expected {expected}")
    off = _DMAP_HEADER.size
    channels = np.frombuffer(buf, dtype="<f4", count=n * _N_CHANNELS, offset=off)
    channels = channels.reshape(n, _N_CHANNELS).astype(np.float64)
    off += n * _N_CHANNELS * 4
    masks = []
    for _ in range(2):
        raw = np.frombuffer(buf, dtype=np.uint8, count=mask_bytes, offset=off)
        masks.append(np.unpackbits(raw, count=n, bitorder="little").astype(bool))
        off += mask_bytes
    return NeighborDistanceMap(channels, masks[0], masks[1])
