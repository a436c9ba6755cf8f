"""Synthetic BEV scenes with depth-style noise and detector error.

The simulator places non-overlapping cars in a BEV region, samples ideal
surface points on their camera-visible faces, deforms those points with a
depth-proportional Gaussian, edge-tail smearing, and slice quantization,
and fabricates detections (jittered true positives plus injected false
positives).  The voting experiment then models an imperfect-but-unbiased
vote predictor: every voter perceives each real-object estimate through an
independent zero-mean noise draw, votes for its nearest perceived front and
back objects, and the resulting consensus separates true detections (high
support) from injected false positives (near-zero support).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bev_grid import GridConfig, feature_cell_center, feature_coords, voxelize
from .errors import GenerationError, ValidationError
from .evaluation import OrientedBox
from .kitti_io import Detection
from .neighbor_vote import (
    NeighborDistanceMap,
    ObjectSet,
    VoteParams,
    VoterGrid,
    filter_by_votes,
    tally_votes,
    vote_support_stats,
)
from .pointcloud import PointCloud

DEFAULT_REGION = (-20.0, 20.0, 8.0, 60.0)  # x_lo, x_hi, z_lo, z_hi
FP_MIN_GT_DISTANCE = 4.0  # injected FPs keep at least this far from every GT

# nominal camera used to synthesize plausible 2D boxes for simulated detections
_NOMINAL_F, _NOMINAL_CX, _NOMINAL_CY = 700.0, 600.0, 180.0
_CAR_HEIGHT = 1.5
_CAR_Y = 1.65  # camera height above ground; KITTI-style y-down location


@dataclass(frozen=True)
class SceneConfig:
    """Car placement parameters for one synthetic scene."""

    n_objects: tuple = (2, 6)  # inclusive count range
    region: tuple = DEFAULT_REGION
    length_range: tuple = (3.6, 4.6)
    width_range: tuple = (1.6, 1.9)
    min_separation: float = 6.0
    points_per_car: int = 80
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.n_objects
        if not (isinstance(lo, int) and isinstance(hi, int) and 0 <= lo <= hi):
            raise ValidationError(f"n_objects range {self.n_objects} is invalid")
        x_lo, x_hi, z_lo, z_hi = self.region
        if not (x_lo < x_hi and z_lo < z_hi):
            raise ValidationError(f"region {self.region} is not well-ordered")
        for name, (a, b) in (("length_range", self.length_range), ("width_range", self.width_range)):
            if not 0 < a <= b:
                raise ValidationError(f"{name} {(a, b)} is invalid")
        if self.min_separation <= 0:
            raise ValidationError("min_separation must be positive")
        if self.points_per_car < 1:
            raise ValidationError("points_per_car must be at least 1")


@dataclass(frozen=True)
class NoiseConfig:
    """Depth-noise and detector-error model parameters.

    Depth noise: z' = z + Normal(0, (sigma0 + sigma1 * z)^2), so distortion
    grows with distance.  Edge points may smear into a tail of up to
    tail_length meters behind the object; slice_step quantizes final depths
    (0 disables).  fp_rate is the Poisson mean of injected false detections
    per scene and det_jitter the detection-center noise.
    """

    sigma0: float = 0.1
    sigma1: float = 0.01
    p_edge: float = 0.1
    tail_length: float = 3.0
    slice_step: float = 0.4
    fp_rate: float = 0.5
    det_jitter: float = 0.5

    def __post_init__(self):
        for name in ("sigma0", "sigma1", "tail_length", "slice_step", "fp_rate", "det_jitter"):
            if getattr(self, name) < 0:
                raise ValidationError(f"noise parameter {name} must be nonnegative")
        if not 0.0 <= self.p_edge <= 1.0:
            raise ValidationError(f"p_edge {self.p_edge} outside [0, 1]")


def _sample_surface_points(box: OrientedBox, n: int, rng) -> np.ndarray:
    """Sample n points on the faces of ``box`` visible from the origin."""
    corners = box.corners()
    edges = [(corners[i], corners[(i + 1) % 4]) for i in range(4)]
    lengths = np.array([np.hypot(*(b - a)) for a, b in edges])
    weights = lengths / lengths.sum()
    out = []
    for _ in range(64):
        k = max(n, 8)
        picks = rng.choice(4, size=k, p=weights)
        ts = rng.uniform(0.0, 1.0, size=k)
        for e, t in zip(picks, ts):
            a, b = edges[e]
            p = a + t * (b - a)
            d = b - a
            normal = np.array([d[1], -d[0]])  # outward for CCW corners
            if float(normal @ p) < 0:  # face turned toward the camera at (0, 0)
                out.append(p)
                if len(out) == n:
                    return np.array(out)
    raise GenerationError("box has no camera-visible surface (is the origin inside it?)")


def _place_cars(cfg: SceneConfig, rng) -> list:
    lo, hi = cfg.n_objects
    n = int(rng.integers(lo, hi + 1))
    x_lo, x_hi, z_lo, z_hi = cfg.region
    boxes: list = []
    attempts = 0
    while len(boxes) < n:
        attempts += 1
        if attempts > 200 * max(n, 1):
            raise GenerationError(
                f"could not place {n} cars at separation {cfg.min_separation} in {cfg.region}"
            )
        cx = rng.uniform(x_lo, x_hi)
        cz = rng.uniform(z_lo, z_hi)
        if any(math.hypot(cx - b.cx, cz - b.cz) < cfg.min_separation for b in boxes):
            continue
        boxes.append(OrientedBox(
            cx=cx, cz=cz,
            length=rng.uniform(*cfg.length_range),
            width=rng.uniform(*cfg.width_range),
            yaw=rng.uniform(-math.pi, math.pi),
        ))
    return boxes


def _generate_scene_with_ids(cfg: SceneConfig):
    """generate_scene plus a per-point object-id array."""
    rng = np.random.default_rng(cfg.seed)
    boxes = _place_cars(cfg, rng)
    rows = []
    ids = []
    for i, box in enumerate(boxes):
        xz = _sample_surface_points(box, cfg.points_per_car, rng)
        pts = np.zeros((len(xz), 4))
        pts[:, 0] = xz[:, 0]
        pts[:, 2] = xz[:, 1]
        rows.append(pts)
        ids.extend([i] * len(xz))
    cloud = PointCloud(np.concatenate(rows) if rows else np.empty((0, 4)))
    centers = np.array([[b.cx, b.cz] for b in boxes], dtype=np.float64).reshape(-1, 2)
    return ObjectSet(centers, objects=boxes), cloud, np.asarray(ids, dtype=np.int64)


def generate_scene(cfg: SceneConfig):
    """Place cars and sample ideal surface points; deterministic per seed.

    Returns (ObjectSet whose objects are OrientedBoxes, PointCloud).
    Raises GenerationError when the separation constraint cannot be met
    after bounded retries.
    """
    objects, cloud, _ = _generate_scene_with_ids(cfg)
    return objects, cloud


def apply_pseudolidar_noise(cloud: PointCloud, noise: NoiseConfig, seed=0,
                            object_ids=None) -> PointCloud:
    """Deform a cloud with the configured depth-error model.

    Stages, in order: depth-proportional Gaussian on z; per-object
    extremal-x (silhouette edge) points smeared by Uniform(0, tail_length)
    with probability p_edge each; z quantized to multiples of slice_step
    when positive.  ``object_ids`` groups points by object for the edge
    stage; without it the whole cloud is one group.  Deterministic per
    seed; an all-zero config is the identity.
    """
    rng = np.random.default_rng(seed)
    pts = cloud.points.copy()
    n = len(pts)
    if n == 0:
        return PointCloud(pts)
    z = pts[:, 2]
    pts[:, 2] = z + rng.normal(size=n) * (noise.sigma0 + noise.sigma1 * z)
    groups = np.zeros(n, dtype=np.int64) if object_ids is None else np.asarray(object_ids)
    if len(groups) != n:
        raise ValidationError("object_ids must align with the cloud")
    for g in np.unique(groups):
        members = np.nonzero(groups == g)[0]
        xs = pts[members, 0]
        for edge in (members[xs == xs.min()], members[xs == xs.max()]):
            for i in edge:
                if rng.uniform() < noise.p_edge:
                    pts[i, 2] += rng.uniform(0.0, noise.tail_length)
    if noise.slice_step > 0:
        pts[:, 2] = np.round(pts[:, 2] / noise.slice_step) * noise.slice_step
    return PointCloud(pts)


def _synth_bbox2d(x: float, z: float) -> tuple:
    """A plausible 2D image box for a car at BEV position (x, z)."""
    u = _NOMINAL_F * x / z + _NOMINAL_CX
    v = _NOMINAL_F * (_CAR_Y - _CAR_HEIGHT / 2) / z + _NOMINAL_CY
    w_px = _NOMINAL_F * 1.7 / z
    h_px = _NOMINAL_F * _CAR_HEIGHT / z
    return (u - w_px / 2, v - h_px / 2, u + w_px / 2, v + h_px / 2)


def _make_detection(x, z, length, width, yaw, score) -> Detection:
    return Detection(
        label="Car",
        truncation=0.0,
        occlusion=0,
        alpha=yaw - math.atan2(x, z),
        bbox2d=_synth_bbox2d(x, z),
        dimensions=(_CAR_HEIGHT, width, length),
        location=(x, _CAR_Y, z),
        rotation_y=yaw,
        score=score,
    )


def simulate_detections(gt: ObjectSet, noise: NoiseConfig, seed=0, region=None) -> list:
    """Fabricate detector output for a scene.

    One jittered detection per ground-truth object (center + Normal(0,
    det_jitter^2) per axis, score Uniform(0.7, 1.0)), then Poisson(fp_rate)
    injected false positives at uniform background positions at least 4 m
    from every GT center, score Uniform(0.5, 0.9).  TPs come first, in GT
    order.  Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    region = DEFAULT_REGION if region is None else region
    dets = []
    for i in range(len(gt)):
        cx, cz = gt.centers[i]
        jx, jz = rng.normal(size=2) * noise.det_jitter
        box = gt.objects[i] if gt.objects is not None else None
        dets.append(_make_detection(
            cx + jx, cz + jz,
            length=box.length if box is not None else 4.0,
            width=box.width if box is not None else 1.7,
            yaw=box.yaw if box is not None else 0.0,
            score=rng.uniform(0.7, 1.0),
        ))
    x_lo, x_hi, z_lo, z_hi = region
    for _ in range(int(rng.poisson(noise.fp_rate))):
        for _attempt in range(1000):
            fx = rng.uniform(x_lo, x_hi)
            fz = rng.uniform(z_lo, z_hi)
            if len(gt) == 0 or np.min(np.hypot(gt.centers[:, 0] - fx, gt.centers[:, 1] - fz)) >= FP_MIN_GT_DISTANCE:
                break
        else:
            raise GenerationError("could not place an injected FP away from all GT centers")
        dets.append(_make_detection(
            fx, fz,
            length=rng.uniform(3.6, 4.6),
            width=rng.uniform(1.6, 1.9),
            yaw=rng.uniform(-math.pi, math.pi),
            score=rng.uniform(0.5, 0.9),
        ))
    return dets


def _noisy_vote_targets(voters: VoterGrid, estimates: np.ndarray,
                        noise: NoiseConfig, seed) -> NeighborDistanceMap:
    """Per-voter vote targets against independently perturbed estimates.

    Models the learned vote head's unbiased prediction error: voter v
    perceives estimate o at o + Normal(0, (sigma0 + sigma1 * z_o)^2) per
    axis, independently per (voter, estimate), then votes for its nearest
    perceived front and back objects with no distance cutoff.
    """
    rng = np.random.default_rng(seed)
    n_v = len(voters)
    estimates = np.asarray(estimates, dtype=np.float64).reshape(-1, 2)
    n_o = len(estimates)
    channels = np.tile(np.array([0.0, 0.0, -1.0, 0.0, 0.0, -1.0]), (n_v, 1))
    none = np.zeros(n_v, dtype=bool)
    if n_o == 0 or n_v == 0:
        return NeighborDistanceMap(channels, none, none)
    sigma = noise.sigma0 + noise.sigma1 * estimates[:, 1]
    perceived = estimates[None, :, :] + rng.normal(size=(n_v, n_o, 2)) * sigma[None, :, None]
    vx = voters.positions[:, 0][:, None]
    vz = voters.positions[:, 1][:, None]
    dx = perceived[:, :, 0] - vx
    dz = perceived[:, :, 1] - vz
    d2 = dx * dx + dz * dz
    rows = np.arange(n_v)
    valids = []
    for is_front in (True, False):
        side = dz <= 0 if is_front else dz > 0
        d2_side = np.where(side, d2, np.inf)
        chosen = np.argmin(d2_side, axis=1)
        valid = np.isfinite(d2_side[rows, chosen])
        cdx = dx[rows, chosen]
        cdz = dz[rows, chosen]
        dist = np.hypot(cdx, cdz)
        safe = valid & (dist > 0)
        off = 0 if is_front else 3
        channels[safe, off] = cdz[safe] / dist[safe]
        channels[safe, off + 1] = cdx[safe] / dist[safe]
        channels[valid, off + 2] = np.abs(cdz[valid])
        degenerate = valid & ~safe
        if degenerate.any():
            channels[degenerate, off] = 0.0
            channels[degenerate, off + 1] = 1.0
        valids.append(valid)
    return NeighborDistanceMap(channels, valids[0], valids[1])


def occupied_voters(grid) -> VoterGrid:
    """Voters at the centers of feature cells holding at least one point."""
    lam = grid.config.downsample_rate
    feats = sorted({feature_coords(c, lam) for c in grid.occupied_cells()})
    positions = np.array([feature_cell_center(j, grid.config) for j in feats], dtype=np.float64)
    return VoterGrid(positions.reshape(-1, 2))


@dataclass
class SceneStats:
    scene_id: int
    n_tp: int
    n_fp: int
    mean_tp_support: float | None
    mean_fp_support: float | None
    removed_fp: int
    removed_tp: int


@dataclass
class ExperimentReport:
    """Aggregate voting-experiment results plus per-scene rows."""

    n_scenes: int
    total_tp: int
    total_fp: int
    removed_tp: int
    removed_fp: int
    mean_tp_support: float | None
    mean_fp_support: float | None
    tp_retention_rate: float | None
    fp_removal_rate: float | None
    scenes_with_fp: int
    scenes_tp_support_higher: int
    scenes: list = field(default_factory=list)

    def to_text(self) -> str:
        def fmt(v):
            if v is None:
                return "absent"
            return "%.6f" % v if isinstance(v, float) else str(v)

        keys = ("n_scenes", "total_tp", "total_fp", "removed_tp", "removed_fp",
                "mean_tp_support", "mean_fp_support", "tp_retention_rate",
                "fp_removal_rate", "scenes_with_fp", "scenes_tp_support_higher")
        return "".join(f"{k}={fmt(getattr(self, k))}\n" for k in keys)

    def to_csv(self) -> str:
        lines = ["scene_id,n_tp,n_fp,mean_tp_support,mean_fp_support,removed_fp,removed_tp"]
        for s in self.scenes:
            def fmt(v):
                if v is None:
                    return "absent"
                return "%.6f" % v if isinstance(v, float) else str(v)
            lines.append(",".join(fmt(v) for v in (
                s.scene_id, s.n_tp, s.n_fp, s.mean_tp_support,
                s.mean_fp_support, s.removed_fp, s.removed_tp)))
        return "\n".join(lines) + "\n"


def _run_scene(scene_id, scene_cfg, noise_cfg, params, grid_cfg, seed, dump_dir):
    scene_seed = seed + scene_id
    objects, cloud, ids = _generate_scene_with_ids(replace(scene_cfg, seed=scene_seed))
    noisy = apply_pseudolidar_noise(cloud, noise_cfg, seed=(scene_seed, 1), object_ids=ids)
    pillar_grid = voxelize(noisy, grid_cfg, seed=(scene_seed, 2))
    voters = occupied_voters(pillar_grid)
    dets = simulate_detections(objects, noise_cfg, seed=(scene_seed, 3), region=scene_cfg.region)
    n_tp = len(objects)
    n_fp = len(dets) - n_tp
    tp_flags = np.zeros(len(dets), dtype=bool)
    tp_flags[:n_tp] = True
    estimates = np.array([[d.location[0], d.location[2]] for d in dets[:n_tp]], dtype=np.float64)
    dmap = _noisy_vote_targets(voters, estimates.reshape(-1, 2), noise_cfg, seed=(scene_seed, 4))
    candidates = ObjectSet.from_detections(dets)
    tally = tally_votes(dmap, voters, candidates, params.r_voter, params.r_assign)
    mean_tp, mean_fp = vote_support_stats(tally, tp_flags) if len(dets) else (None, None)
    kept_mask = tally.support >= params.tau
    stats = SceneStats(
        scene_id=scene_id,
        n_tp=n_tp,
        n_fp=n_fp,
        mean_tp_support=mean_tp,
        mean_fp_support=mean_fp,
        removed_fp=int(np.sum(~kept_mask[~tp_flags])) if len(dets) else 0,
        removed_tp=int(np.sum(~kept_mask[tp_flags])) if len(dets) else 0,
    )
    supports = (tally.support[tp_flags], tally.support[~tp_flags]) if len(dets) else (np.zeros(0), np.zeros(0))
    if dump_dir is not None:
        _dump_scene(dump_dir, scene_id, dets, voters, dmap)
    return stats, supports


def _dump_scene(dump_dir, scene_id, dets, voters, dmap):
    from pathlib import Path

    from .fileio import atomic_write_bytes, atomic_write_text
    from .kitti_io import write_detections
    from .neighbor_vote import write_distance_map

    base = Path(dump_dir)
    base.mkdir(parents=True, exist_ok=True)
    stem = f"{scene_id:06d}"
    atomic_write_text(base / f"{stem}_detections.txt", write_detections(dets))
    voter_text = "".join("%.9g %.9g\n" % (x, z) for x, z in voters.positions)
    atomic_write_text(base / f"{stem}_voters.txt", voter_text)
    atomic_write_bytes(base / f"{stem}_map.nvdm", write_distance_map(dmap))


def run_voting_experiment(scene_cfg: SceneConfig, noise_cfg: NoiseConfig,
                          params: VoteParams, grid_cfg: GridConfig,
                          n_scenes: int, seed: int = 0, dump_dir=None,
                          workers: int = 1) -> ExperimentReport:
    """Generate scenes, vote, filter, and aggregate TP/FP statistics.

    Scene i uses seed + i for every stage, so reports are bit-identical
    across runs and independent of worker scheduling.
    """
    if n_scenes < 1:
        raise ValidationError("n_scenes must be at least 1")
    ids = range(n_scenes)

    def job(i):
        return _run_scene(i, scene_cfg, noise_cfg, params, grid_cfg, seed, dump_dir)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, ids))
    else:
        results = [job(i) for i in ids]

    scenes = [r[0] for r in results]
    tp_supports = np.concatenate([r[1][0] for r in results])
    fp_supports = np.concatenate([r[1][1] for r in results])
    total_tp = int(sum(s.n_tp for s in scenes))
    total_fp = int(sum(s.n_fp for s in scenes))
    removed_tp = int(sum(s.removed_tp for s in scenes))
    removed_fp = int(sum(s.removed_fp for s in scenes))
    with_fp = [s for s in scenes if s.n_fp > 0]
    higher = sum(
        1 for s in with_fp
        if s.n_tp > 0 and s.mean_tp_support is not None and s.mean_fp_support is not None
        and s.mean_tp_support > s.mean_fp_support
    )
    return ExperimentReport(
        n_scenes=n_scenes,
        total_tp=total_tp,
        total_fp=total_fp,
        removed_tp=removed_tp,
        removed_fp=removed_fp,
        mean_tp_support=float(tp_supports.mean()) if len(tp_supports) else None,
        mean_fp_support=float(fp_supports.mean()) if len(fp_supports) else None,
        tp_retention_rate=(total_tp - removed_tp) / total_tp if total_tp else None,
        fp_removal_rate=removed_fp / total_fp if total_fp else None,
        scenes_with_fp=len(with_fp),
        scenes_tp_support_higher=higher,
        scenes=scenes,
    )
