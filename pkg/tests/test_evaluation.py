"""Tests for rotated-box IoU, NMS, difficulty binning, and AP."""

import math

import numpy as np
import pytest

from monovote.errors import ValidationError
from monovote.evaluation import (
    EvalConfig,
    OrientedBox,
    assign_difficulty,
    average_precision,
    box_from_object,
    distance_bucket_eval,
    evaluate_frames,
    format_report,
    nms,
    nms_indices,
    polygon_area,
    rotated_iou,
    tp_fp_counts,
)
from monovote.kitti_io import Detection, GroundTruthObject


def gt_box(x, z, length=4.0, width=2.0, yaw=0.0, height_px=50.0, occ=0,
           trunc=0.0, label="Car"):
    return GroundTruthObject(
        label=label,
        truncation=trunc,
        occlusion=occ,
        alpha=0.0,
        bbox2d=(100.0, 100.0, 200.0, 100.0 + height_px),
        dimensions=(1.5, width, length) if label != "DontCare" else (-1.0, -1.0, -1.0),
        location=(x, 1.65, z),
        rotation_y=yaw,
    )


def det_box(x, z, score, length=4.0, width=2.0, yaw=0.0, bbox2d=None):
    return Detection(
        label="Car",
        truncation=0.0,
        occlusion=0,
        alpha=0.0,
        bbox2d=bbox2d or (100.0, 100.0, 200.0, 150.0),
        dimensions=(1.5, width, length),
        location=(x, 1.65, z),
        rotation_y=yaw,
        score=score,
    )


class TestGeometry:
    def test_corners_are_counterclockwise(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            box = OrientedBox(cx=rng.uniform(-10, 10), cz=rng.uniform(0, 40),
                              length=rng.uniform(1, 5), width=rng.uniform(1, 3),
                              yaw=rng.uniform(-math.pi, math.pi))
            c = box.corners()
            signed = 0.5 * np.sum(c[:, 0] * np.roll(c[:, 1], -1)
                                  - c[:, 1] * np.roll(c[:, 0], -1))
            assert signed > 0

    def test_polygon_area_unit_square(self):
        assert polygon_area([(0, 0), (1, 0), (1, 1), (0, 1)]) == 1.0

    def test_polygon_area_degenerate(self):
        assert polygon_area([(0, 0), (1, 1)]) == 0.0

    def test_corner_area_matches_sides(self):
        box = OrientedBox(cx=3.0, cz=7.0, length=4.0, width=2.0, yaw=0.7)
        assert polygon_area(box.corners()) == pytest.approx(8.0, abs=1e-12)

    def test_nonpositive_side_rejected(self):
        with pytest.raises(ValidationError):
            OrientedBox(cx=0, cz=0, length=0.0, width=1.0)


class TestRotatedIoU:
    def test_identical_boxes_give_exactly_one(self):
        box = OrientedBox(cx=1.0, cz=10.0, length=4.0, width=2.0, yaw=0.3)
        assert rotated_iou(box, box) == 1.0

    def test_disjoint_boxes(self):
        a = OrientedBox(cx=0, cz=0, length=4, width=2)
        b = OrientedBox(cx=100, cz=0, length=4, width=2)
        assert rotated_iou(a, b) == 0.0

    def test_half_offset_unit_squares(self):
        a = OrientedBox(cx=0.0, cz=0.0, length=1.0, width=1.0)
        b = OrientedBox(cx=0.5, cz=0.0, length=1.0, width=1.0)
        assert rotated_iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            a = OrientedBox(rng.uniform(-3, 3), rng.uniform(-3, 3),
                            rng.uniform(1, 4), rng.uniform(1, 3),
                            rng.uniform(-math.pi, math.pi))
            b = OrientedBox(rng.uniform(-3, 3), rng.uniform(-3, 3),
                            rng.uniform(1, 4), rng.uniform(1, 3),
                            rng.uniform(-math.pi, math.pi))
            assert rotated_iou(a, b) == pytest.approx(rotated_iou(b, a), abs=1e-12)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            a = OrientedBox(rng.uniform(-3, 3), rng.uniform(-3, 3),
                            rng.uniform(1, 4), rng.uniform(1, 3),
                            rng.uniform(-math.pi, math.pi))
            b = OrientedBox(a.cx + rng.uniform(-2, 2), a.cz + rng.uniform(-2, 2),
                            rng.uniform(1, 4), rng.uniform(1, 3),
                            rng.uniform(-math.pi, math.pi))
            phi = rng.uniform(-math.pi, math.pi)
            cs, sn = math.cos(phi), math.sin(phi)

            def spin(box):
                return OrientedBox(cs * box.cx - sn * box.cz,
                                   sn * box.cx + cs * box.cz,
                                   box.length, box.width, box.yaw + phi)

            assert rotated_iou(spin(a), spin(b)) == pytest.approx(
                rotated_iou(a, b), abs=1e-9
            )

    def test_monte_carlo_agreement(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a = OrientedBox(rng.uniform(-2, 2), rng.uniform(-2, 2),
                            rng.uniform(1, 4), rng.uniform(1, 3),
                            rng.uniform(-math.pi, math.pi))
            b = OrientedBox(rng.uniform(-2, 2), rng.uniform(-2, 2),
                            rng.uniform(1, 4), rng.uniform(1, 3),
                            rng.uniform(-math.pi, math.pi))
            pts = rng.uniform(-6, 6, size=(100_000, 2))

            def inside(box, p):
                d = p - np.array([box.cx, box.cz])
                c, s = math.cos(box.yaw), math.sin(box.yaw)
                local = d @ np.array([[c, -s], [s, c]])
                return (np.abs(local[:, 0]) <= box.length / 2) & (
                    np.abs(local[:, 1]) <= box.width / 2
                )

            inter = np.mean(inside(a, pts) & inside(b, pts)) * 144.0
            union = a.length * a.width + b.length * b.width - inter
            est = inter / union
            assert rotated_iou(a, b) == pytest.approx(est, abs=3e-2)


def reference_nms(boxes, scores, thr):
    """Independent greedy trace used as the comparison oracle."""
    remaining = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [j for j in remaining if rotated_iou(boxes[best], boxes[j]) <= thr]
    return kept


class TestNms:
    def test_disjoint_boxes_both_kept(self):
        boxes = [OrientedBox(0, 0, 2, 1), OrientedBox(50, 0, 2, 1)]
        assert nms_indices(boxes, [0.9, 0.8], 0.25) == [0, 1]

    def test_identical_boxes_keep_higher_score(self):
        boxes = [OrientedBox(0, 0, 2, 1), OrientedBox(0, 0, 2, 1)]
        assert nms_indices(boxes, [0.8, 0.9], 0.25) == [1]

    def test_chain_suppression(self):
        # A overlaps B, B overlaps C, A and C disjoint
        boxes = [OrientedBox(0.0, 0.0, 2, 1), OrientedBox(1.0, 0.0, 2, 1),
                 OrientedBox(2.0, 0.0, 2, 1)]
        assert rotated_iou(boxes[0], boxes[1]) > 0.25
        assert rotated_iou(boxes[1], boxes[2]) > 0.25
        assert rotated_iou(boxes[0], boxes[2]) == 0.0
        assert nms_indices(boxes, [0.9, 0.8, 0.7], 0.25) == [0, 2]

    def test_iou_equal_to_threshold_survives(self):
        boxes = [OrientedBox(0.0, 0.0, 1, 1), OrientedBox(0.5, 0.0, 1, 1)]
        thr = rotated_iou(boxes[0], boxes[1])
        assert nms_indices(boxes, [0.9, 0.8], thr) == [0, 1]

    def test_score_tie_prefers_earlier_input(self):
        boxes = [OrientedBox(0, 0, 2, 1), OrientedBox(0, 0, 2, 1)]
        assert nms_indices(boxes, [0.8, 0.8], 0.25) == [0]

    def test_matches_reference(self):
        rng = np.random.default_rng(71)
        for _ in range(60):
            n = int(rng.integers(1, 9))
            boxes = [OrientedBox(rng.uniform(-5, 5), rng.uniform(-5, 5),
                                 rng.uniform(1, 4), rng.uniform(1, 3),
                                 rng.uniform(-math.pi, math.pi)) for _ in range(n)]
            scores = rng.uniform(0, 1, n).tolist()
            assert nms_indices(boxes, scores, 0.25) == reference_nms(boxes, scores, 0.25)

    def test_detection_wrapper(self):
        dets = [det_box(0.0, 10.0, 0.8), det_box(0.0, 10.0, 0.9)]
        assert nms(dets, 0.25) == [dets[1]]


class TestDifficulty:
    def test_easy(self):
        assert assign_difficulty(gt_box(0, 10, height_px=50, occ=0, trunc=0.0)) == "easy"

    def test_moderate(self):
        assert assign_difficulty(gt_box(0, 10, height_px=30, occ=1, trunc=0.2)) == "moderate"

    def test_hard(self):
        assert assign_difficulty(gt_box(0, 10, height_px=26, occ=2, trunc=0.45)) == "hard"

    def test_too_small_ignored(self):
        assert assign_difficulty(gt_box(0, 10, height_px=20)) == "ignored"

    def test_dont_care_ignored(self):
        assert assign_difficulty(gt_box(0, 10, label="DontCare")) == "ignored"


class TestAveragePrecision:
    CFG = EvalConfig(iou_threshold=0.5, recall_points=11, difficulty="moderate")

    def hand_case(self):
        gts = [gt_box(0.0, 10.0), gt_box(20.0, 10.0)]
        dets = [det_box(0.0, 10.0, 0.9), det_box(40.0, 10.0, 0.8),
                det_box(20.0, 10.0, 0.7)]
        return dets, gts

    def test_perfect_detector_both_grids(self):
        gts = [gt_box(0.0, 10.0), gt_box(20.0, 10.0)]
        dets = [det_box(0.0, 10.0, 1.0), det_box(20.0, 10.0, 0.9)]
        for points in (11, 40):
            cfg = EvalConfig(0.5, points, "moderate")
            assert average_precision(dets, gts, cfg).ap == 1.0

    def test_complete_miss(self):
        gts = [gt_box(0.0, 10.0)]
        assert average_precision([det_box(30.0, 10.0, 0.9)], gts, self.CFG).ap == 0.0

    def test_no_detections(self):
        report = average_precision([], [gt_box(0.0, 10.0)], self.CFG)
        assert report.ap == 0.0 and report.n_tp == 0

    def test_no_ground_truth_gives_absent_ap(self):
        report = average_precision([det_box(0.0, 10.0, 0.9)], [], self.CFG)
        assert report.ap is None and report.n_fp == 1

    def test_three_detection_hand_case(self):
        dets, gts = self.hand_case()
        report = average_precision(dets, gts, self.CFG)
        assert report.ap == pytest.approx(28.0 / 33.0, abs=1e-12)
        assert report.ap == pytest.approx(0.8485, abs=1e-4)
        assert (report.n_tp, report.n_fp) == (2, 1)

    def test_recall_grid_inclusion_differs(self):
        # one perfect detection over two GTs: recall stops at 0.5
        gts = [gt_box(0.0, 10.0), gt_box(20.0, 10.0)]
        dets = [det_box(0.0, 10.0, 0.9)]
        ap11 = average_precision(dets, gts, EvalConfig(0.5, 11, "moderate")).ap
        ap40 = average_precision(dets, gts, EvalConfig(0.5, 40, "moderate")).ap
        # 11-point grid includes recall 0 (6 of 11 points reachable),
        # the 40-point grid starts at 1/40 (20 of 40 reachable)
        assert ap11 == pytest.approx(6.0 / 11.0, abs=1e-12)
        assert ap40 == pytest.approx(0.5, abs=1e-12)

    def test_pooled_frames_not_averaged(self):
        frame_a = ([det_box(0.0, 10.0, 0.9)], [gt_box(0.0, 10.0)])
        frame_b = ([det_box(50.0, 10.0, 0.95), det_box(20.0, 10.0, 0.5)],
                   [gt_box(20.0, 10.0)])
        report = evaluate_frames([frame_a, frame_b], self.CFG)
        assert report.ap == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_duplicate_detection_is_fp(self):
        gts = [gt_box(0.0, 10.0)]
        dets = [det_box(0.0, 10.0, 0.9), det_box(0.0, 10.0, 0.8)]
        report = average_precision(dets, gts, self.CFG)
        assert (report.n_tp, report.n_fp) == (1, 1)

    def test_harder_than_config_gt_is_ignored(self):
        # a hard GT under moderate evaluation neither counts nor penalizes
        gts = [gt_box(0.0, 10.0), gt_box(20.0, 10.0, height_px=26, occ=2, trunc=0.45)]
        dets = [det_box(0.0, 10.0, 0.9), det_box(20.0, 10.0, 0.8)]
        report = average_precision(dets, gts, self.CFG)
        assert report.ap == 1.0
        assert (report.n_tp, report.n_fp) == (1, 0)

    def test_dont_care_region_discards_overlapping_detection(self):
        gts = [gt_box(0.0, 10.0),
               gt_box(50.0, 10.0, label="DontCare")]
        stray = det_box(50.0, 10.0, 0.95, bbox2d=(110.0, 110.0, 190.0, 140.0))
        dets = [det_box(0.0, 10.0, 0.9), stray]
        report = average_precision(dets, gts, self.CFG)
        assert report.ap == 1.0 and report.n_fp == 0
        # without the DontCare region the stray detection costs precision
        report2 = average_precision(dets, [gts[0]], self.CFG)
        assert report2.n_fp == 1

    def test_tp_fp_counts(self):
        assert tp_fp_counts([], [gt_box(0.0, 10.0)], 0.5) == (0, 0)
        assert tp_fp_counts([det_box(0.0, 10.0, 0.9)], [gt_box(0.0, 10.0)], 0.5) == (1, 0)
        dets, gts = self.hand_case()
        assert tp_fp_counts(dets, gts, 0.5) == (2, 1)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            EvalConfig(iou_threshold=0.0)
        with pytest.raises(ValidationError):
            EvalConfig(recall_points=12)
        with pytest.raises(ValidationError):
            EvalConfig(difficulty="extreme")


class TestDistanceBuckets:
    CFG = EvalConfig(0.5, 11, "moderate")
    BUCKETS = [(0.0, 40.0), (40.0, 70.0)]

    def test_perfect_detector_both_buckets(self):
        gts = [gt_box(0.0, 10.0), gt_box(5.0, 50.0)]
        dets = [det_box(0.0, 10.0, 0.9), det_box(5.0, 50.0, 0.8)]
        out = distance_bucket_eval([(dets, gts)], self.BUCKETS, self.CFG)
        assert out["0_40"].ap == 1.0
        assert out["40_70"].ap == 1.0

    def test_empty_bucket_absent(self):
        gts = [gt_box(0.0, 10.0)]
        dets = [det_box(0.0, 10.0, 0.9)]
        out = distance_bucket_eval([(dets, gts)], self.BUCKETS, self.CFG)
        assert out["0_40"].ap == 1.0
        assert out["40_70"].ap is None

    def test_far_bucket_with_injected_fp(self):
        gts = [gt_box(0.0, 10.0), gt_box(5.0, 50.0)]
        dets = [det_box(0.0, 10.0, 0.95), det_box(5.0, 50.0, 0.8),
                det_box(-10.0, 60.0, 0.9)]
        out = distance_bucket_eval([(dets, gts)], self.BUCKETS, self.CFG)
        # far bucket: FP at score 0.9 precedes the TP at 0.8, so the single
        # recall level is reached at precision 1/2
        assert out["40_70"].ap == pytest.approx(0.5, abs=1e-12)
        assert out["0_40"].ap == 1.0

    def test_bucket_order_enforced(self):
        with pytest.raises(ValidationError):
            distance_bucket_eval([], [(0.0, 40.0), (30.0, 70.0)], self.CFG)
        with pytest.raises(ValidationError):
            distance_bucket_eval([], [(40.0, 40.0)], self.CFG)


class TestReportFormatting:
    def test_plain_report(self):
        gts = [gt_box(0.0, 10.0)]
        report = average_precision([det_box(0.0, 10.0, 0.9)], gts,
                                   EvalConfig(0.5, 11, "moderate"))
        text = format_report(report)
        assert text == "ap=1.000000\nn_tp=1\nn_fp=0\n"

    def test_absent_ap_and_buckets(self):
        report = average_precision([], [], EvalConfig(0.5, 11, "moderate"))
        out = distance_bucket_eval([([], [])], [(0.0, 40.0)],
                                   EvalConfig(0.5, 11, "moderate"))
        text = format_report(report, out)
        assert "ap=absent" in text
        assert "bucket_0_40_ap=absent" in text
