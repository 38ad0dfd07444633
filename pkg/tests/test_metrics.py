import numpy as np
import pytest

from vpseg.arrays import BinaryMask, pad_to_square
from vpseg.errors import ShapeMismatchError
from vpseg.metrics import (
    IOU_THRESHOLDS,
    boundary_band,
    boundary_f1,
    boundary_iou,
    c_iou,
    evaluate_semantic,
    g_iou,
    instance_ap,
    mask_boundary,
)
from vpseg.refine import InstanceSet

from helpers import random_blob_mask
from reference_impls import (
    ap_oracle,
    band_brute,
    boundary_f1_brute,
    boundary_iou_brute,
    c_iou_brute,
    g_iou_brute,
)


def block(h, w, y0, y1, x0, x1):
    bits = np.zeros((h, w), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return BinaryMask(bits)


class TestGiouCiou:
    def test_identical_pairs(self, rng):
        m = random_blob_mask(rng, 16, 16)
        assert g_iou([(m, m), (m, m)]) == 1.0

    def test_mean_of_ious(self):
        a = block(8, 8, 0, 4, 0, 4)
        e = BinaryMask(np.zeros((8, 8), dtype=bool))
        assert g_iou([(a, a), (a, e)]) == 0.5

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            g_iou([])
        with pytest.raises(ValueError):
            c_iou([])

    def test_single_pair_ciou_equals_iou(self):
        a = block(8, 8, 0, 4, 0, 4)
        b = block(8, 8, 2, 6, 0, 4)
        assert c_iou([(a, b)]) == pytest.approx(g_iou([(a, b)]))

    def test_size_bias_fixture(self):
        # pair A: intersection 50, union 100; pair B: intersection 0, union 10
        pred_a = block(20, 20, 0, 5, 0, 15)  # 75 px
        gt_a = block(20, 20, 0, 5, 5, 20)  # 75 px, overlap 50, union 100
        pred_b = block(20, 20, 10, 11, 0, 5)  # 5 px
        gt_b = block(20, 20, 15, 16, 0, 5)  # 5 px, disjoint
        pairs = [(pred_a, gt_a), (pred_b, gt_b)]
        assert c_iou(pairs) == pytest.approx(50 / 110)
        assert g_iou(pairs) == pytest.approx(0.25)

    def test_all_empty_dataset_warns(self):
        e = BinaryMask(np.zeros((4, 4), dtype=bool))
        with pytest.warns(UserWarning):
            assert c_iou([(e, e)]) == 1.0

    def test_oracle_agreement(self, rng):
        pairs = [
            (random_blob_mask(rng, 48, 64), random_blob_mask(rng, 48, 64)) for _ in range(10)
        ]
        raw = [(p.bits, g.bits) for p, g in pairs]
        assert g_iou(pairs) == pytest.approx(g_iou_brute(raw), abs=1e-9)
        assert c_iou(pairs) == pytest.approx(c_iou_brute(raw), abs=1e-9)


class TestBoundaryBand:
    def test_band_matches_bruteforce(self, rng):
        for _ in range(10):
            m = random_blob_mask(rng, 40, 40)
            for d in (1, 2, 3):
                got = boundary_band(m, d).bits
                want = band_brute(m.bits, d)
                assert np.array_equal(got, want)

    def test_small_mask_band_is_mask(self):
        m = block(16, 16, 5, 7, 5, 7)  # 2x2: entirely within 3px of background
        assert np.array_equal(boundary_band(m, 3).bits, m.bits)


class TestBoundaryIou:
    def test_identical_is_one(self, rng):
        m = block(32, 32, 4, 20, 6, 28)
        assert boundary_iou(m, m) == 1.0
        assert boundary_iou(m, m, d=1) == 1.0

    def test_heavily_dilated_bands_disjoint(self):
        # gt: large solid square; pred: same square dilated by > 2d
        d = 3
        gt = block(64, 64, 20, 40, 20, 40)
        pred = block(64, 64, 12, 48, 12, 48)  # dilated by 8 > 2*3
        assert boundary_iou(pred, gt, d) == 0.0

    def test_interior_hole_hurts_boundary_more(self):
        gt = block(64, 64, 10, 50, 10, 50)
        holed = gt.bits.copy()
        holed[28:32, 28:32] = False  # small hole far from the outer edge
        pred = BinaryMask(holed)
        plain_iou = np.logical_and(pred.bits, gt.bits).sum() / np.logical_or(pred.bits, gt.bits).sum()
        assert boundary_iou(pred, gt) < plain_iou

    def test_both_empty_warns_one(self):
        e = BinaryMask(np.zeros((8, 8), dtype=bool))
        with pytest.warns(UserWarning):
            assert boundary_iou(e, e) == 1.0

    def test_oracle_agreement(self, rng):
        for _ in range(10):
            p = random_blob_mask(rng, 48, 48)
            g = random_blob_mask(rng, 48, 48)
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                got = boundary_iou(p, g, 3)
            assert got == pytest.approx(boundary_iou_brute(p.bits, g.bits, 3), abs=1e-9)


class TestBoundaryF1:
    def test_identical_is_one(self):
        m = block(32, 32, 4, 20, 6, 28)
        assert boundary_f1(m, m) == 1.0

    def test_shift_by_exactly_d_is_one(self):
        d = 3
        gt = block(64, 64, 20, 40, 20, 40)
        pred = block(64, 64, 20 + d, 40 + d, 20, 40)  # straight-edge square moved d px
        assert boundary_f1(pred, gt, d) == 1.0

    def test_shift_by_3d_well_below_one(self):
        d = 3
        gt = block(64, 64, 20, 40, 20, 40)
        pred = block(64, 64, 20 + 3 * d, 40 + 3 * d, 20, 40)
        got = boundary_f1(pred, gt, d)
        assert got < 0.75
        assert got == pytest.approx(boundary_f1_brute(pred.bits, gt.bits, d), abs=1e-9)

    def test_one_empty_is_zero(self):
        e = BinaryMask(np.zeros((8, 8), dtype=bool))
        m = block(8, 8, 2, 5, 2, 5)
        assert boundary_f1(e, m) == 0.0
        assert boundary_f1(m, e) == 0.0

    def test_oracle_agreement(self, rng):
        import warnings

        for _ in range(10):
            p = random_blob_mask(rng, 40, 40)
            g = random_blob_mask(rng, 40, 40)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                got = boundary_f1(p, g, 3)
            assert got == pytest.approx(boundary_f1_brute(p.bits, g.bits, 3), abs=1e-9)

    def test_contour_matches_bruteforce(self, rng):
        from reference_impls import contour_brute

        for _ in range(6):
            m = random_blob_mask(rng, 24, 24)
            assert np.array_equal(mask_boundary(m).bits, contour_brute(m.bits))


class TestPaddingInvariance:
    def test_metrics_survive_joint_padding(self, rng):
        import warnings

        for _ in range(5):
            p = random_blob_mask(rng, 24, 37)
            g = random_blob_mask(rng, 24, 37)
            pp, _ = pad_to_square(p)
            gp, _ = pad_to_square(g)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert g_iou([(p, g)]) == pytest.approx(g_iou([(pp, gp)]), abs=1e-12)
                assert boundary_iou(p, g) == pytest.approx(boundary_iou(pp, gp), abs=1e-12)
                assert boundary_f1(p, g) == pytest.approx(boundary_f1(pp, gp), abs=1e-12)


class TestEvaluateSemantic:
    def test_aggregates_recomputable(self, rng):
        samples = [
            (f"s{i}", random_blob_mask(rng, 20, 20), random_blob_mask(rng, 20, 20))
            for i in range(8)
        ]
        report = evaluate_semantic(samples)
        assert report.n_samples == 8
        assert report.g_iou == pytest.approx(
            sum(s.iou for s in report.per_sample) / 8, abs=1e-12
        )
        assert report.intersection_sum == sum(s.intersection for s in report.per_sample)
        assert report.union_sum == sum(s.union for s in report.per_sample)
        if report.union_sum:
            assert report.c_iou == pytest.approx(
                report.intersection_sum / report.union_sum, abs=1e-12
            )

    def test_jobs_do_not_change_result(self, rng):
        samples = [
            (f"s{i}", random_blob_mask(rng, 16, 16), random_blob_mask(rng, 16, 16))
            for i in range(12)
        ]
        a = evaluate_semantic(samples, jobs=1)
        b = evaluate_semantic(samples, jobs=4)
        assert a == b

    def test_shape_mismatch_rejected(self):
        a = block(4, 4, 0, 2, 0, 2)
        b = block(5, 5, 0, 2, 0, 2)
        with pytest.raises(ShapeMismatchError):
            evaluate_semantic([("s", a, b)])


def crafted_sample():
    """2 ground truths, 3 predictions: TP at IoU 0.9 (conf 0.9), duplicate
    (conf 0.8), miss (conf 0.7)."""
    h = w = 64
    g1 = block(h, w, 0, 10, 0, 9)  # 90 px
    g2 = block(h, w, 40, 50, 40, 50)  # 100 px
    p1 = block(h, w, 0, 10, 0, 10)  # 100 px, IoU 0.9 with g1
    p2 = block(h, w, 0, 10, 0, 9)  # exact duplicate of g1
    p3 = block(h, w, 60, 62, 0, 2)  # miss
    preds = InstanceSet(members=((p1, 0.9), (p2, 0.8), (p3, 0.7)))
    return preds, [g1, g2]


class TestInstanceAp:
    def test_perfect_predictions_all_ones(self):
        h = w = 128
        gts = [
            [block(h, w, 0, 10, 0, 10), block(h, w, 20, 60, 20, 60), block(h, w, 0, 100, 64, 164 - 36)],
        ]
        preds = [InstanceSet(members=tuple((g, 1.0) for g in gts[0]))]
        report = instance_ap(preds, gts)
        for value in (report.ap50, report.ap75, report.map, report.ap_s, report.ap_m, report.ap_l):
            assert value == 1.0

    def test_no_predictions_zero_everywhere(self):
        h = w = 128
        gts = [[block(h, w, 0, 10, 0, 10), block(h, w, 20, 60, 20, 60), block(h, w, 0, 104, 0, 104)]]
        preds = [InstanceSet(members=())]
        report = instance_ap(preds, gts)
        for value in (report.ap50, report.ap75, report.map, report.ap_s, report.ap_m, report.ap_l):
            assert value == 0.0

    def test_crafted_fixture_hand_ap50(self):
        preds, gts = crafted_sample()
        report = instance_ap([preds], [gts])
        # PR: TP then 2 FPs; recall caps at 0.5, precision envelope 1.0 up to 0.5
        assert report.ap50 == pytest.approx(51 / 101, abs=1e-12)
        # at 0.95 the duplicate (IoU 1.0) becomes the TP after conf-0.9 pred fails
        assert report.per_threshold[-1].ap == pytest.approx(25.5 / 101, abs=1e-12)
        assert report.ap75 == pytest.approx(51 / 101, abs=1e-12)

    def test_crafted_fixture_matches_oracle_at_every_threshold(self):
        preds, gts = crafted_sample()
        report = instance_ap([preds], [gts])
        sample = [([(m.bits, c) for m, c in preds], [g.bits for g in gts], [True, True])]
        for curve in report.per_threshold:
            assert curve.ap == pytest.approx(
                ap_oracle(sample, curve.threshold), abs=1e-12
            ), f"threshold {curve.threshold}"

    def test_duplicate_counts_as_fp(self):
        preds, gts = crafted_sample()
        report = instance_ap([preds], [gts])
        curve50 = report.per_threshold[0]
        assert curve50.tp == 1
        assert curve50.fp == 2

    def test_monotone_confidence_transform_invariance(self, rng):
        samples_preds = []
        samples_gts = []
        for i in range(3):
            gt = [random_blob_mask(rng, 32, 32) for _ in range(2)]
            gt = [g for g in gt if g.area() > 0] or [block(32, 32, 0, 4, 0, 4)]
            preds = []
            for j in range(3):
                m = random_blob_mask(rng, 32, 32)
                if m.area() == 0:
                    m = block(32, 32, j, j + 2, 0, 2)
                preds.append((m, 0.2 + 0.2 * j))
            samples_preds.append(InstanceSet(members=tuple(preds)))
            samples_gts.append(gt)
        base = instance_ap(samples_preds, samples_gts)
        transformed = [
            InstanceSet(members=tuple((m, c**3 * 0.5 + 0.1) for m, c in inst))
            for inst in samples_preds
        ]
        out = instance_ap(transformed, samples_gts)
        assert out == base

    def test_ap75_le_ap50_on_random_suites(self, rng):
        for _ in range(5):
            gts = []
            preds = []
            for _ in range(4):
                gt = [random_blob_mask(rng, 24, 24) for _ in range(2)]
                gt = [g for g in gt if g.area() > 0] or [block(24, 24, 0, 6, 0, 6)]
                gts.append(gt)
                members = []
                for g in gt:
                    noisy = g.bits.copy()
                    noisy[:3, :] = False
                    if noisy.any():
                        members.append((BinaryMask(noisy), float(rng.random())))
                preds.append(InstanceSet(members=tuple(members)))
            report = instance_ap(preds, gts)
            assert report.ap75 <= report.ap50 + 1e-12

    def test_size_buckets_restrict_gt(self):
        h = w = 128
        small = block(h, w, 0, 10, 0, 10)  # 100 px < 32^2
        medium = block(h, w, 20, 60, 20, 60)  # 1600 px
        large = block(h, w, 0, 104, 64, 128)  # 6656... make it > 9216
        large = block(h, w, 0, 100, 0, 100)  # 10000 px > 96^2
        gts = [[small, medium, large]]
        # predict only the small object
        preds = [InstanceSet(members=((small, 0.9),))]
        report = instance_ap(preds, gts)
        assert report.ap_s == 1.0  # medium/large ignored, small matched
        assert report.ap_m == 0.0
        assert report.ap_l == 0.0
        assert report.map == pytest.approx(
            np.mean([c.ap for c in report.per_threshold]), abs=1e-12
        )

    def test_prediction_matching_ignored_gt_is_excluded(self):
        h = w = 128
        small = block(h, w, 0, 10, 0, 10)
        large = block(h, w, 0, 100, 0, 100)
        gts = [[small, large]]
        preds = [InstanceSet(members=((large, 0.95), (small, 0.9)))]
        report = instance_ap(preds, gts)
        # in the small bucket the large prediction matches an ignored gt -> dropped
        assert report.ap_s == 1.0

    def test_misaligned_lists_rejected(self):
        with pytest.raises(ValueError):
            instance_ap([InstanceSet(members=())], [])

    def test_all_points_interpolation(self):
        preds, gts = crafted_sample()
        report = instance_ap([preds], [gts], interpolation="all-points")
        assert report.ap50 == pytest.approx(0.5, abs=1e-12)
        sample = [([(m.bits, c) for m, c in preds], [g.bits for g in gts], [True, True])]
        assert report.ap50 == pytest.approx(
            ap_oracle(sample, 0.50, interpolation="all-points"), abs=1e-12
        )

    def test_random_suite_matches_oracle(self, rng):
        gts = []
        preds = []
        for _ in range(4):
            gt = []
            for _ in range(3):
                m = random_blob_mask(rng, 32, 32)
                if m.area():
                    gt.append(m)
            if not gt:
                gt = [block(32, 32, 0, 5, 0, 5)]
            gts.append(gt)
            members = []
            for j in range(4):
                m = random_blob_mask(rng, 32, 32)
                if m.area():
                    members.append((m, float(rng.random())))
            preds.append(InstanceSet(members=tuple(members)))
        report = instance_ap(preds, gts)
        for curve in report.per_threshold:
            oracle_samples = [
                (
                    [(m.bits, c) for m, c in inst],
                    [g.bits for g in gt],
                    [True] * len(gt),
                )
                for inst, gt in zip(preds, gts)
            ]
            assert curve.ap == pytest.approx(
                ap_oracle(oracle_samples, curve.threshold), abs=1e-12
            )
