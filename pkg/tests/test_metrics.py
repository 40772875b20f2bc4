import numpy as np
import pytest

from floodsynth.grid import Raster
from floodsynth.metrics import (
    best_threshold_iou,
    ensemble_average,
    evaluate,
    iou,
    lshi,
    rmse,
)


class TestRmse:
    def test_identical_zero(self):
        x = np.random.default_rng(0).normal(size=(8, 8))
        assert rmse(x, x) == 0.0

    def test_constant_offset(self):
        x = np.random.default_rng(1).normal(size=(8, 8))
        assert abs(rmse(x + 0.5, x) - 0.5) < 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(16, 16))
        b = rng.normal(size=(16, 16))
        total = 0.0
        for i in range(16):
            for j in range(16):
                total += (a[i, j] - b[i, j]) ** 2
        assert abs(rmse(a, b) - np.sqrt(total / 256)) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
        assert rmse(a, b) == rmse(b, a)

    def test_masked(self):
        a = np.array([[0.0, 100.0]])
        b = np.array([[0.0, 0.0]])
        m = np.array([[True, False]])
        assert rmse(a, b, m) == 0.0

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            rmse(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), dtype=bool))


class TestIou:
    def test_identical_nonempty(self):
        m = np.random.default_rng(4).random((8, 8)) < 0.4
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[:2] = True
        b[2:] = True
        assert iou(a, b) == 0.0

    def test_half_overlap(self):
        ref = np.ones((4, 4), dtype=bool)
        pred = np.zeros((4, 4), dtype=bool)
        pred[:, :2] = True
        assert iou(pred, ref) == 0.5

    def test_both_empty_is_one(self):
        z = np.zeros((3, 3), dtype=bool)
        assert iou(z, z) == 1.0


class TestBestThresholdIou:
    def test_binary_prediction_perfect(self):
        rng = np.random.default_rng(5)
        ref = rng.random((10, 10)) < 0.3
        val, t = best_threshold_iou(ref.astype(float), ref)
        assert val == 1.0

    def test_constant_zero_prediction(self):
        ref = np.ones((5, 5), dtype=bool)
        val, _ = best_threshold_iou(np.zeros((5, 5)), ref)
        assert val == 0.0

    def test_at_least_any_fixed_threshold(self):
        rng = np.random.default_rng(6)
        pred = rng.normal(size=(12, 12))
        ref = rng.random((12, 12)) < 0.3
        best, _ = best_threshold_iou(pred, ref)
        for t in (0.1, 0.5, 1.0):
            fixed = iou((np.abs(pred) >= t) & (np.abs(pred) > 0), ref)
            assert best >= fixed - 1e-15

    def test_matches_brute_force_sweep(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            pred = rng.normal(size=(12, 12)) * rng.uniform(0.1, 3)
            if rng.random() < 0.3:
                pred[rng.random((12, 12)) < 0.5] = 0.0
            ref = rng.random((12, 12)) < rng.uniform(0.1, 0.6)
            got_iou, got_t = best_threshold_iou(pred, ref)

            a = np.abs(pred)
            candidates = np.unique(np.concatenate([a.ravel(), [0.0]]))
            best_iou, best_t = -1.0, None
            for t in candidates:  # ascending; strict > keeps the smallest
                val = iou((a >= t) & (a > 0), ref)
                if val > best_iou:
                    best_iou, best_t = val, t
            assert got_iou == pytest.approx(best_iou, abs=1e-15)
            assert got_t == pytest.approx(best_t, abs=1e-15)


class TestLshi:
    def test_identical_is_one(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(0.02, 50.0, (10, 10))
        assert lshi(x, x) == 1.0

    def test_disjoint_bins_zero(self):
        a = np.full((4, 4), 0.05)   # log10 ~ -1.3
        b = np.full((4, 4), 5.0)    # log10 ~ 0.7
        assert lshi(a, b) == 0.0

    def test_two_bin_hand_case(self):
        pred = np.full(100, 1.0)
        ref = np.concatenate([np.full(50, 1.0), np.full(50, 10.0)])
        assert lshi(pred, ref) == 0.5

    def test_below_floor_ignored(self):
        a = np.full((3, 3), 0.001)
        b = np.full((3, 3), 0.001)
        assert lshi(a, b) == 1.0  # both empty histograms

    def test_one_empty_zero(self):
        a = np.full((3, 3), 0.001)
        b = np.full((3, 3), 1.0)
        assert lshi(a, b) == 0.0

    def test_symmetry_and_permutation_invariance(self):
        rng = np.random.default_rng(9)
        a = rng.uniform(0.02, 20, 64)
        b = rng.uniform(0.02, 20, 64)
        assert lshi(a, b) == lshi(b, a)
        assert lshi(rng.permutation(a), b) == lshi(a, b)

    def test_outliers_clamp_to_end_bins(self):
        a = np.full(10, 1e6)
        b = np.full(10, 150.0)  # both clamp into the top bin
        assert lshi(a, b) == 1.0


class TestEnsembleAverage:
    def raster(self, values):
        return Raster(values=np.asarray(values, dtype=float), cellsize=5.0)

    def test_identical_cases(self):
        r = self.raster(np.random.default_rng(10).normal(size=(5, 5)))
        out = ensemble_average([r, r, r])
        assert np.allclose(out.values, r.values)

    def test_two_case_mean(self):
        a = self.raster(np.zeros((3, 3)))
        b = self.raster(np.full((3, 3), 2.0))
        out = ensemble_average([a, b])
        assert np.all(out.values == 1.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        cases = [self.raster(rng.normal(size=(4, 4))) for _ in range(7)]
        out = ensemble_average(cases)
        for i in range(4):
            for j in range(4):
                mean = sum(c.values[i, j] for c in cases) / 7
                assert abs(out.values[i, j] - mean) < 1e-12

    def test_header_mismatch_rejected(self):
        a = self.raster(np.zeros((3, 3)))
        b = Raster(values=np.zeros((3, 3)), cellsize=10.0)
        with pytest.raises(ValueError):
            ensemble_average([a, b])


class TestEvaluate:
    def test_report_fields(self):
        rng = np.random.default_rng(12)
        pred = rng.uniform(0, 2, (8, 8))
        ref = rng.uniform(0, 2, (8, 8))
        ref_bin = ref > 1.0
        rep = evaluate(pred, ref, ref_bin=ref_bin)
        assert rep.rmse >= 0
        assert 0 <= rep.lshi <= 1
        assert rep.iou is not None and 0 <= rep.iou <= 1
        assert rep.n_valid == 64
        d = rep.to_dict()
        assert "lshi_bin_width" in d
