"""Metric formulas versus per-pixel counting oracles."""

import numpy as np
import pytest

from arcd.errors import ShapeError
from arcd.metrics import (ConfusionMatrix, confusion, format_kv,
                          format_table, score, uncertainty_separation)


def counting_oracle(pred, gt):
    """Pixel-by-pixel loop, no vectorization."""
    tp = fp = fn = tn = 0
    for p, g in zip(pred.reshape(-1), gt.reshape(-1)):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


class TestConfusion:
    def test_all_ones_agreement(self):
        ones = np.ones((2, 2), dtype=np.uint8)
        cm = confusion(ones, ones)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (4, 0, 0, 0)

    def test_inverted_prediction(self):
        rng = np.random.default_rng(0)
        gt = (rng.uniform(size=(8, 8)) < 0.5).astype(np.uint8)
        cm = confusion(1 - gt, gt)
        assert cm.tp == 0 and cm.tn == 0
        assert cm.fp + cm.fn == gt.size

    def test_random_masks_match_counting_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(100):
            pred = (rng.uniform(size=(16, 16)) < 0.5).astype(np.uint8)
            gt = (rng.uniform(size=(16, 16)) < 0.5).astype(np.uint8)
            cm = confusion(pred, gt)
            assert (cm.tp, cm.fp, cm.fn, cm.tn) == counting_oracle(pred, gt)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            confusion(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            confusion(np.full((2, 2), 2), np.zeros((2, 2)))

    def test_merge_is_count_sum(self):
        a = ConfusionMatrix(1, 2, 3, 4)
        b = ConfusionMatrix(10, 20, 30, 40)
        m = a + b
        assert (m.tp, m.fp, m.fn, m.tn) == (11, 22, 33, 44)


class TestScore:
    def test_worked_case(self):
        s = score(ConfusionMatrix(6, 2, 2, 90))
        assert s.pre == pytest.approx(0.75, abs=1e-9)
        assert s.rec == pytest.approx(0.75, abs=1e-9)
        assert s.f1 == pytest.approx(0.75, abs=1e-9)
        assert s.iou == pytest.approx(0.6, abs=1e-9)
        assert s.oa == pytest.approx(0.96, abs=1e-9)
        assert s.kappa == pytest.approx(0.728261, abs=1e-6)

    def test_perfect_prediction_all_ones(self):
        rng = np.random.default_rng(2)
        x = (rng.uniform(size=(16, 16)) < 0.5).astype(np.uint8)
        x[0, 0], x[0, 1] = 0, 1  # keep it nonconstant
        s = score(confusion(x, x))
        for name in ("kappa", "iou", "f1", "rec", "pre", "oa"):
            assert getattr(s, name) == pytest.approx(1.0, abs=1e-12), name
        assert not s.degenerate

    def test_all_background_prediction_degenerates(self):
        gt = np.zeros((4, 4), dtype=np.uint8)
        gt[1, 1] = 1
        s = score(confusion(np.zeros_like(gt), gt))
        assert s.f1 == 0.0 and s.iou == 0.0 and s.rec == 0.0
        assert "pre" in s.degenerate and "f1" in s.degenerate

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            score(ConfusionMatrix(0, 0, 0, 0))

    def test_swapping_pred_gt_exchanges_pre_rec(self):
        rng = np.random.default_rng(3)
        pred = (rng.uniform(size=(12, 12)) < 0.4).astype(np.uint8)
        gt = (rng.uniform(size=(12, 12)) < 0.6).astype(np.uint8)
        s1 = score(confusion(pred, gt))
        s2 = score(confusion(gt, pred))
        assert s1.pre == pytest.approx(s2.rec, abs=1e-12)
        assert s1.rec == pytest.approx(s2.pre, abs=1e-12)
        for name in ("f1", "iou", "oa", "kappa"):
            assert getattr(s1, name) == pytest.approx(getattr(s2, name),
                                                      abs=1e-12), name

    def test_micro_average_equals_single_image_when_one_image(self):
        rng = np.random.default_rng(4)
        pred = (rng.uniform(size=(10, 10)) < 0.5).astype(np.uint8)
        gt = (rng.uniform(size=(10, 10)) < 0.5).astype(np.uint8)
        single = score(confusion(pred, gt))
        accumulated = score(confusion(pred, gt) + ConfusionMatrix(0, 0, 0, 0))
        assert single == accumulated

    def test_kappa_against_independent_formula(self):
        rng = np.random.default_rng(5)
        for trial in range(25):
            pred = (rng.uniform(size=(9, 9)) < rng.uniform()).astype(np.uint8)
            gt = (rng.uniform(size=(9, 9)) < rng.uniform()).astype(np.uint8)
            cm = confusion(pred, gt)
            s = score(cm)
            n = cm.total
            po = (cm.tp + cm.tn) / n
            p_yes = ((cm.tp + cm.fp) / n) * ((cm.tp + cm.fn) / n)
            p_no = ((cm.fn + cm.tn) / n) * ((cm.fp + cm.tn) / n)
            pe = p_yes + p_no
            if pe < 1.0:
                assert s.kappa == pytest.approx((po - pe) / (1 - pe),
                                                abs=1e-12)


class TestUncertaintySeparation:
    def test_exact_error_indicator(self):
        rng = np.random.default_rng(6)
        pred = (rng.uniform(size=(8, 8)) < 0.5).astype(np.uint8)
        gt = (rng.uniform(size=(8, 8)) < 0.5).astype(np.uint8)
        p_unc = (pred != gt).astype(float)
        sep = uncertainty_separation(p_unc, pred, gt)
        assert sep.mean_on_errors == 1.0
        assert sep.mean_on_correct == 0.0

    def test_constant_uncertainty(self):
        pred = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        gt = np.array([[1, 1], [0, 0]], dtype=np.uint8)
        sep = uncertainty_separation(np.full((2, 2), 0.4), pred, gt)
        assert sep.mean_on_errors == pytest.approx(0.4)
        assert sep.mean_on_correct == pytest.approx(0.4)

    def test_empty_partition_flagged(self):
        gt = np.array([[1, 0]], dtype=np.uint8)
        sep = uncertainty_separation(np.zeros((1, 2)), gt, gt)
        assert sep.mean_on_errors is None
        assert sep.mean_on_correct is not None

    def test_matches_partition_oracle(self):
        rng = np.random.default_rng(7)
        p_unc = rng.uniform(size=(16, 16))
        pred = (rng.uniform(size=(16, 16)) < 0.5).astype(np.uint8)
        gt = (rng.uniform(size=(16, 16)) < 0.5).astype(np.uint8)
        sep = uncertainty_separation(p_unc, pred, gt)
        err_vals, ok_vals = [], []
        for i in range(16):
            for j in range(16):
                (err_vals if pred[i, j] != gt[i, j] else ok_vals).append(
                    p_unc[i, j])
        assert sep.mean_on_errors == pytest.approx(np.mean(err_vals),
                                                   abs=1e-12)
        assert sep.mean_on_correct == pytest.approx(np.mean(ok_vals),
                                                    abs=1e-12)


class TestReportFormats:
    def test_kv_lines(self):
        s = score(ConfusionMatrix(6, 2, 2, 90))
        kv = format_kv(s)
        lines = kv.splitlines()
        assert lines[0].startswith("kappa=")
        assert [ln.split("=")[0] for ln in lines] == \
            ["kappa", "iou", "f1", "rec", "pre", "oa"]
        parsed = dict(ln.split("=") for ln in lines)
        assert float(parsed["kappa"]) == pytest.approx(0.728261, abs=1e-6)
        assert float(parsed["f1"]) == pytest.approx(0.75, abs=1e-6)

    def test_table_mentions_degenerate(self):
        gt = np.zeros((3, 3), dtype=np.uint8)
        gt[0, 0] = 1
        s = score(confusion(np.zeros_like(gt), gt))
        assert "degenerate" in format_table(s)
