"""RMSE and match-rate metrics against one-line references; the eval protocol."""

import numpy as np
import pytest

from osreg.config import ConfigError, RunConfig
from osreg.geometry import AffineTransform
from osreg.matching import MatchSet
from osreg.metrics import (
    CMR_THRESHOLDS,
    check_grid,
    cmr,
    evaluate_pairs,
    rmse,
    write_report_csv,
)
from osreg.synth import PairSample


class FakeMatcher:
    """Returns correspondences exactly transformed by a fixed affine."""

    def __init__(self, transform, n_points=12, offset=(0.0, 0.0)):
        self.transform = transform
        self.n_points = n_points
        self.offset = np.asarray(offset)

    def match_pair(self, optical, sar):
        h, w = optical.shape
        rng = np.random.default_rng(0)
        po = rng.uniform(5, min(h, w) - 5, size=(self.n_points, 2))
        ps = self.transform.apply(po) + self.offset
        k = self.n_points
        return MatchSet(
            coarse_ij=np.zeros((k, 2), np.int64),
            coarse_conf=np.ones(k),
            fine_po=po,
            fine_ps=ps,
            fine_weights=np.ones(k),
            fine_parent=np.arange(k),
        )


class TestRmse:
    def test_perfect(self):
        pts = np.random.default_rng(1).random((5, 2))
        assert rmse(pts, pts) == 0.0

    def test_three_four_five(self):
        assert rmse(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == 5.0

    def test_hand_mixed(self):
        pred = np.array([[0.0, 0.0], [0.0, 0.0]])
        gt = np.array([[0.0, 0.0], [5.0, 0.0]])
        assert abs(rmse(pred, gt) - np.sqrt(12.5)) < 1e-12

    def test_zero_points_rejected(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((0, 2)), np.zeros((0, 2)))

    def test_against_one_line_reference(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(1, 20))
            a = rng.normal(size=(n, 2))
            b = rng.normal(size=(n, 2))
            ref = np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1)))
            assert abs(rmse(a, b) - ref) < 1e-9


class TestCmr:
    def test_all_below(self):
        assert cmr([0.1, 0.2, 0.9], 1.0) == 1.0

    def test_hand_count(self):
        assert abs(cmr([0.5, 2.0, 4.0], 3.0) - 2.0 / 3.0) < 1e-12

    def test_thresholds_fixed(self):
        assert CMR_THRESHOLDS == (1.0, 3.0, 5.0)

    def test_failures_count_against(self):
        assert cmr([0.5, np.inf], 5.0) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            cmr([], 1.0)

    def test_against_one_line_reference_and_monotone(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            vals = rng.uniform(0, 8, size=n)
            vals[rng.random(n) < 0.1] = np.inf
            ref = {tau: float(np.mean(vals < tau)) for tau in (1, 3, 5)}
            got = {tau: cmr(vals, tau) for tau in (1, 3, 5)}
            for tau in (1, 3, 5):
                assert abs(got[tau] - ref[tau]) < 1e-9
            assert got[1] <= got[3] <= got[5]


class TestEvaluate:
    def make_samples(self, transform, n=4):
        img = np.zeros((64, 64), dtype=np.float32)
        return [PairSample(optical=img, sar=img, gt_affine=transform) for _ in range(n)]

    def test_perfect_model(self):
        t = AffineTransform(np.array([[1.1, 0.05, 3.0], [-0.05, 1.1, -2.0]]))
        cfg = RunConfig(estimator="lsq")
        report = evaluate_pairs(FakeMatcher(t), self.make_samples(t), cfg)
        np.testing.assert_allclose(report.rmses, 0.0, atol=1e-9)
        assert report.cmr_at[1.0] == report.cmr_at[3.0] == report.cmr_at[5.0] == 1.0

    def test_two_px_translation_error(self):
        t = AffineTransform.identity()
        cfg = RunConfig(estimator="lsq")
        report = evaluate_pairs(FakeMatcher(t, offset=(2.0, 0.0)), self.make_samples(t), cfg)
        np.testing.assert_allclose(report.rmses, 2.0, atol=1e-9)
        assert report.cmr_at[1.0] == 0.0
        assert report.cmr_at[3.0] == 1.0
        assert report.cmr_at[5.0] == 1.0

    def test_too_few_matches_is_failure(self):
        t = AffineTransform.identity()
        cfg = RunConfig(estimator="lsq")
        report = evaluate_pairs(FakeMatcher(t, n_points=2), self.make_samples(t, n=3), cfg)
        assert np.all(np.isinf(report.rmses))
        assert report.cmr_at[5.0] == 0.0
        assert report.mean_rmse == float("inf")

    def test_deterministic_row_order(self):
        t = AffineTransform.identity()
        cfg = RunConfig()
        a = evaluate_pairs(FakeMatcher(t), self.make_samples(t), cfg)
        b = evaluate_pairs(FakeMatcher(t), self.make_samples(t), cfg)
        np.testing.assert_array_equal(a.rmses, b.rmses)
        assert a.pair_ids == b.pair_ids

    def test_report_csv_format(self, tmp_path):
        t = AffineTransform.identity()
        cfg = RunConfig(estimator="lsq")
        report = evaluate_pairs(FakeMatcher(t, offset=(2.0, 0.0)), self.make_samples(t, n=2), cfg)
        out = tmp_path / "report.csv"
        write_report_csv(report, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "pair_id,rmse,n_matches,cmr1_hit,cmr3_hit,cmr5_hit"
        assert lines[1].startswith("00000,2.000000,12,0,1,1")
        assert lines[-1] == "TOTAL,2.000000,-,0.000000,1.000000,1.000000"


class TestCheckGrid:
    def test_shape_and_bounds(self):
        grid = check_grid((64, 64), 8)
        assert grid.shape == (64, 2)
        assert grid.min() > 0 and grid.max() < 64
