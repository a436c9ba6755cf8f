"""Command-line front-end.

Subcommands: backproject, vote-filter, eval, simulate, render, and
kernels-selftest.  Exit codes are a stable scripting contract: 0 success,
1 usage error, 2 input/parse error, 3 validation error.  Output files are
written atomically (temp file + rename).  MONOVOTE_THREADS sets the
default worker count for per-scene parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import bev_grid, evaluation, kitti_io, neighbor_vote, projection, render, scene_sim
from .config import RunConfig, parse_config
from .errors import (
    DomainError,
    FormatError,
    GenerationError,
    ParseError,
    ValidationError,
)
from .fileio import atomic_write_bytes, atomic_write_text

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_VALIDATION = 3


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that signals usage errors instead of exiting with code 2."""

    def error(self, message):
        raise _UsageExit(f"{self.prog}: {message}")


def default_workers() -> int:
    raw = os.environ.get("MONOVOTE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"MONOVOTE_THREADS must be an integer, got {raw!r}") from None


def _load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def _read_detections(path) -> list:
    return kitti_io.parse_detections(Path(path).read_text())


def cmd_backproject(args) -> int:
    cam = kitti_io.parse_calib(Path(args.calib).read_text())
    dm = kitti_io.load_depth_map(args.depth)
    cloud = projection.backproject(dm, cam)
    if args.boxes2d:
        boxes = kitti_io.parse_boxes2d(Path(args.boxes2d).read_text())
        cloud = projection.associate_roi_scores(cloud, cam, boxes)
    if args.downsample > 1:
        cloud = projection.downsample(cloud, args.downsample, seed=args.seed)
    atomic_write_bytes(args.out, kitti_io.write_point_cloud(cloud))
    print(f"points={len(cloud)}")
    return EXIT_OK


def _parse_voters(text: str) -> neighbor_vote.VoterGrid:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 2:
            raise ParseError(f"line {lineno}: voter lines are 'x z', got {len(tokens)} fields")
        try:
            rows.append((float(tokens[0]), float(tokens[1])))
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric voter coordinate") from None
    return neighbor_vote.VoterGrid(np.array(rows, dtype=np.float64).reshape(-1, 2))


def cmd_vote_filter(args) -> int:
    cfg = _load_config(args.config)
    dets = _read_detections(args.detections)
    if args.voters:
        voters = _parse_voters(Path(args.voters).read_text())
    else:
        voters = neighbor_vote.VoterGrid.from_grid(cfg.grid)
    candidates = neighbor_vote.ObjectSet.from_detections(dets)
    if args.distance_map:
        dmap = neighbor_vote.read_distance_map(Path(args.distance_map).read_bytes())
        if len(dmap) != len(voters):
            raise ValidationError(
                f"distance map holds {len(dmap)} voters but the grid has {len(voters)}"
            )
    else:
        dmap = neighbor_vote.compute_vote_targets(voters, candidates, r_valid=None)
    tally = neighbor_vote.tally_votes(dmap, voters, candidates,
                                      cfg.vote.r_voter, cfg.vote.r_assign)
    kept = neighbor_vote.filter_by_votes(dets, tally, cfg.vote.tau)
    if cfg.vote.nms_iou is not None:
        kept = evaluation.nms(kept, cfg.vote.nms_iou)
    atomic_write_text(args.out, kitti_io.write_detections(kept))
    print(f"kept={len(kept)} of {len(dets)}")
    return EXIT_OK


def _frame_stems(directory) -> dict:
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"not a directory: {directory}")
    return {p.stem: p for p in sorted(d.glob("*.txt"))}


def _parse_buckets(text: str) -> list:
    buckets = []
    for part in text.split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise ParseError(f"bucket {part!r} is not 'lo:hi'")
        try:
            buckets.append((float(lo), float(hi)))
        except ValueError:
            raise ParseError(f"bucket {part!r} has non-numeric bounds") from None
    return buckets


def cmd_eval(args) -> int:
    det_files = _frame_stems(args.detections)
    gt_files = _frame_stems(args.labels)
    missing = sorted(set(det_files) ^ set(gt_files))
    if missing:
        raise FormatError("frame sets do not match; unpaired ids: " + ", ".join(missing))
    frames = []
    for stem in sorted(gt_files):
        dets = kitti_io.parse_detections(det_files[stem].read_text())
        gts = kitti_io.parse_labels(gt_files[stem].read_text())
        frames.append((dets, gts))
    cfg = evaluation.EvalConfig(iou_threshold=args.iou, recall_points=args.recall_points,
                                difficulty=args.difficulty)
    report = evaluation.evaluate_frames(frames, cfg)
    buckets = None
    if args.buckets:
        buckets = evaluation.distance_bucket_eval(frames, _parse_buckets(args.buckets), cfg)
    sys.stdout.write(evaluation.format_report(report, buckets))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    report = scene_sim.run_voting_experiment(
        cfg.scene, cfg.noise, cfg.vote, cfg.grid,
        n_scenes=args.scenes, seed=args.seed,
        dump_dir=args.dump_dir, workers=default_workers(),
    )
    text = report.to_text()
    atomic_write_text(args.report, text)
    if args.csv:
        atomic_write_text(args.csv, report.to_csv())
    sys.stdout.write(text)
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = _load_config(args.config) if args.config else RunConfig()
    cloud = None
    if args.cloud:
        cloud = kitti_io.read_point_cloud(Path(args.cloud).read_bytes())
    det_boxes = []
    if args.detections:
        det_boxes = [evaluation.box_from_object(d) for d in _read_detections(args.detections)]
    gt_boxes = []
    if args.labels:
        gt_boxes = [
            evaluation.box_from_object(g)
            for g in kitti_io.parse_labels(Path(args.labels).read_text())
            if g.label != kitti_io.DONT_CARE
        ]
    img = render.render_bev(cloud, det_boxes, gt_boxes, cfg.grid)
    atomic_write_bytes(args.out, render.ppm_bytes(img))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_kernels_selftest(args) -> int:
    from .numeric_kernels import (
        FusionInputs,
        LossWeights,
        attention_weights,
        focal_loss,
        fuse_scores,
        total_loss,
    )

    w = attention_weights(np.array([[1.0], [2.0]]), np.array([[1.0], [0.0]]))
    expected = np.array([[0.7311, 0.2689], [0.8808, 0.1192]])
    ok = bool(np.all(np.abs(w - expected) < 1e-4))
    fusion = float(fuse_scores(FusionInputs(0.8, 0.2, 0.3, 0.7)))
    ok &= abs(fusion - 0.38) < 1e-12
    losses = total_loss(0.1, 0.2, 0.3, 0.0, 1.0, 1.0, LossWeights())
    ok &= losses.l_cls == 0.9 and losses.l_nv == 0.26
    focal = focal_loss(0.5)
    ok &= abs(focal - 0.043322) < 1e-6
    print(f"attention_row0={w[0, 0]:.4f},{w[0, 1]:.4f}")
    print(f"attention_row1={w[1, 0]:.4f},{w[1, 1]:.4f}")
    print(f"fusion={fusion:.6f}")
    print(f"l_cls={losses.l_cls:.6f}")
    print(f"l_nv={losses.l_nv:.6f}")
    print(f"focal={focal:.6f}")
    print(f"selftest={'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_VALIDATION


def build_parser() -> _Parser:
    parser = _Parser(prog="monovote", description="BEV neighbor-voting toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("backproject", help="depth map to pseudo-LiDAR point cloud")
    p.add_argument("--depth", required=True, help="16-bit depth PNG")
    p.add_argument("--calib", required=True, help="calibration file with a P2 line")
    p.add_argument("--out", required=True, help="output NVPC point cloud")
    p.add_argument("--boxes2d", help="optional 2D ROI boxes (left top right bottom score)")
    p.add_argument("--downsample", type=int, default=1, metavar="K")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_backproject)

    p = sub.add_parser("vote-filter", help="filter detections by vote support")
    p.add_argument("--detections", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--distance-map", help="precomputed neighbor distance map (NVDM)")
    p.add_argument("--voters", help="voter positions file for the distance map (x z per line)")
    p.set_defaults(func=cmd_vote_filter)

    p = sub.add_parser("eval", help="KITTI-style average precision")
    p.add_argument("--detections", required=True, help="directory of result files")
    p.add_argument("--labels", required=True, help="directory of label files")
    p.add_argument("--iou", type=float, required=True)
    p.add_argument("--recall-points", type=int, choices=(11, 40), default=11)
    p.add_argument("--difficulty", choices=("easy", "moderate", "hard"), default="moderate")
    p.add_argument("--buckets", help="comma-separated z ranges, e.g. 0:40,40:70")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="run the voting experiment on synthetic scenes")
    p.add_argument("--config", required=True)
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.add_argument("--csv", help="optional per-scene CSV")
    p.add_argument("--dump-dir", help="write per-scene detections, voters, and distance maps")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="rasterize a BEV scene to a PPM image")
    p.add_argument("--cloud", help="NVPC point cloud")
    p.add_argument("--detections")
    p.add_argument("--labels")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("kernels-selftest", help="check the numeric kernels' hand cases")
    p.set_defaults(func=cmd_kernels_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except _UsageExit as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValidationError, DomainError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
