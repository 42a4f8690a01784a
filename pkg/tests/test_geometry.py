"""Affine algebra, perturbation sampling, warping, and estimation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osreg.geometry import (
    AffineTransform,
    EstimationError,
    GeometryError,
    PerturbConfig,
    estimate_affine,
    estimate_affine_lsq,
    sample_perturbation,
    warp_image,
)


def random_transform(rng):
    s = rng.uniform(0.8, 1.2)
    ang = rng.uniform(-0.5, 0.5)
    t = AffineTransform(
        np.array(
            [
                [s * np.cos(ang), -s * np.sin(ang), rng.uniform(-5, 5)],
                [s * np.sin(ang), s * np.cos(ang), rng.uniform(-5, 5)],
            ]
        )
    )
    return t


class TestAffineAlgebra:
    def test_identity(self):
        p = AffineTransform.identity().apply([[5.0, 7.0]])
        np.testing.assert_array_equal(p, [[5.0, 7.0]])

    def test_rotation_90(self):
        rot = AffineTransform(np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(rot.apply([[1.0, 0.0]]), [[0.0, 1.0]], atol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_invert_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        t = random_transform(rng)
        pts = rng.uniform(-50, 50, size=(10, 2))
        back = t.invert().apply(t.apply(pts))
        np.testing.assert_allclose(back, pts, atol=1e-9)

    def test_singular_invert_rejected(self):
        t = AffineTransform(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
        with pytest.raises(GeometryError):
            t.invert()

    def test_compose_order(self):
        shift = AffineTransform(np.array([[1.0, 0.0, 3.0], [0.0, 1.0, 0.0]]))
        scalex = AffineTransform(np.array([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
        # scale after shift: (x+3)*2
        np.testing.assert_allclose(scalex.compose(shift).apply([[1.0, 0.0]]), [[8.0, 0.0]])

    def test_bad_shape(self):
        with pytest.raises(GeometryError):
            AffineTransform(np.eye(3))


class TestPerturbation:
    def test_degenerate_is_identity(self):
        cfg = PerturbConfig(scale_min=1.0, scale_max=1.0, rot_deg=0.0, trans_frac=0.0)
        t = sample_perturbation(np.random.default_rng(0), cfg, 64)
        np.testing.assert_allclose(t.matrix, AffineTransform.identity().matrix, atol=1e-12)

    def test_ranges_respected(self):
        cfg = PerturbConfig()
        rng = np.random.default_rng(1)
        size = 100
        for _ in range(10_000):
            t = sample_perturbation(rng, cfg, size)
            lin = t.matrix[:, :2]
            s = np.sqrt(abs(np.linalg.det(lin)))
            assert 0.7 - 1e-9 <= s <= 1.3 + 1e-9
            ang = np.degrees(np.arctan2(lin[1, 0], lin[0, 0]))
            assert -35 - 1e-9 <= ang <= 35 + 1e-9
            # translation of the image center is the pure translation part
            center = np.array([[(size - 1) / 2, (size - 1) / 2]])
            tvec = t.apply(center)[0] - center[0]
            assert np.all(np.abs(tvec) <= 0.1 * size + 1e-9)

    def test_seed_determinism(self):
        cfg = PerturbConfig()
        a = [sample_perturbation(np.random.default_rng(7), cfg, 64).matrix for _ in range(1)]
        b = [sample_perturbation(np.random.default_rng(7), cfg, 64).matrix for _ in range(1)]
        np.testing.assert_array_equal(a[0], b[0])

    def test_validate(self):
        assert PerturbConfig(scale_min=0.0).validate()
        assert PerturbConfig(trans_frac=1.5).validate()
        assert PerturbConfig().validate() == []


class TestWarp:
    def test_identity_bit_exact(self):
        img = np.random.default_rng(2).random((16, 16)).astype(np.float32)
        out = warp_image(img, AffineTransform.identity())
        np.testing.assert_array_equal(out, img)

    def test_integer_shift_matches_oracle(self):
        img = np.random.default_rng(3).random((12, 12))
        t = AffineTransform(np.array([[1.0, 0.0, 3.0], [0.0, 1.0, 0.0]]))
        out = warp_image(img, t)
        expect = np.zeros_like(img)
        expect[:, 3:] = img[:, :-3]
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_constant_interior(self):
        img = np.full((32, 32), 0.5)
        cfg = PerturbConfig(scale_min=0.9, scale_max=1.1, rot_deg=10.0, trans_frac=0.05)
        t = sample_perturbation(np.random.default_rng(4), cfg, 32)
        out = warp_image(img, t)
        np.testing.assert_allclose(out[8:24, 8:24], 0.5, atol=1e-12)


class TestEstimation:
    def test_three_exact_points(self):
        rng = np.random.default_rng(5)
        t = random_transform(rng)
        src = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        est = estimate_affine(src, t.apply(src), method="lsq")
        np.testing.assert_allclose(est.matrix, t.matrix, atol=1e-9)

    def test_lsq_recovery_noise_free(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            t = random_transform(rng)
            src = rng.uniform(0, 64, size=(rng.integers(3, 40), 2))
            if np.linalg.matrix_rank(np.column_stack([src, np.ones(len(src))])) < 3:
                continue
            est = estimate_affine_lsq(src, t.apply(src))
            assert np.abs(est.matrix - t.matrix).max() < 1e-6

    def test_collinear_rejected(self):
        src = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        with pytest.raises(EstimationError):
            estimate_affine_lsq(src, src)

    def test_too_few_rejected(self):
        with pytest.raises(EstimationError):
            estimate_affine(np.zeros((2, 2)), np.zeros((2, 2)), method="lsq")

    def test_ransac_under_outliers(self):
        rng = np.random.default_rng(7)
        t = random_transform(rng)
        src_in = rng.uniform(0, 64, size=(100, 2))
        dst_in = t.apply(src_in)
        src_out = rng.uniform(0, 64, size=(30, 2))
        dst_out = rng.uniform(0, 64, size=(30, 2))
        model = t.apply(src_out)
        for k in range(30):  # keep synthetic outliers genuinely off-model
            while np.linalg.norm(dst_out[k] - model[k]) < 6.0:
                dst_out[k] = rng.uniform(0, 64, size=2)
        src = np.vstack([src_in, src_out])
        dst = np.vstack([dst_in, dst_out])
        est = estimate_affine(src, dst, method="ransac", rng=np.random.default_rng(8))
        assert np.abs(est.matrix - t.matrix).max() < 1e-3
