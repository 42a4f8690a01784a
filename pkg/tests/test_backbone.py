"""Backbone shape contract, finiteness, and shift equivariance."""

import numpy as np
import pytest

from osreg import autodiff as ad
from osreg.autodiff import Tensor, precision
from osreg.backbone import BackboneConfig, extract, init_backbone_params, instance_norm
from osreg.geometry import GeometryError


def make_params(cfg=None, seed=0):
    cfg = cfg or BackboneConfig()
    return cfg, init_backbone_params(cfg, np.random.default_rng(seed))


class TestShapes:
    def test_64_input(self):
        cfg, params = make_params()
        pyr = extract(Tensor(np.random.default_rng(1).random((1, 64, 64))), cfg, params)
        assert pyr.fine.shape == (cfg.d_f, 32, 32)
        assert pyr.coarse.shape == (cfg.d_c, 8, 8)

    @pytest.mark.parametrize("h,w", [(8, 8), (16, 40), (96, 64), (256, 256)])
    def test_shape_contract(self, h, w):
        cfg, params = make_params(BackboneConfig(d_f=8, d_c=16, stem_width=4, mid_width=8))
        pyr = extract(Tensor(np.zeros((1, h, w))), cfg, params)
        assert pyr.fine.shape == (8, h // 2, w // 2)
        assert pyr.coarse.shape == (16, h // 8, w // 8)

    def test_non_divisible_rejected(self):
        cfg, params = make_params()
        with pytest.raises(GeometryError):
            extract(Tensor(np.zeros((1, 60, 64))), cfg, params)

    def test_zero_image_finite(self):
        cfg, params = make_params()
        pyr = extract(Tensor(np.zeros((1, 64, 64))), cfg, params)
        assert np.all(np.isfinite(pyr.fine.data))
        assert np.all(np.isfinite(pyr.coarse.data))


class TestConfig:
    def test_dc_must_dominate(self):
        assert BackboneConfig(d_f=64, d_c=32).validate()

    def test_defaults_valid(self):
        assert BackboneConfig().validate() == []


class TestSharedWeights:
    def test_same_params_same_features(self):
        cfg, params = make_params()
        img = np.random.default_rng(2).random((1, 64, 64))
        a = extract(Tensor(img.copy()), cfg, params)
        b = extract(Tensor(img.copy()), cfg, params)
        np.testing.assert_array_equal(a.coarse.data, b.coarse.data)


class TestShiftEquivariance:
    def test_interior_shift_by_8(self):
        # content sits deep inside the frame so that shifted content never
        # reaches conv range of the border ring at any pyramid level
        with precision("f64"):
            cfg, params = make_params(BackboneConfig(d_f=8, d_c=16, stem_width=4, mid_width=8), seed=3)
            rng = np.random.default_rng(4)
            img = np.zeros((1, 128, 128))
            img[0, 48:80, 48:80] = rng.random((32, 32))

            shifted = np.zeros_like(img)
            shifted[0, :, 8:] = img[0, :, :-8]  # shift by (8, 0) pixels in x

            base = extract(Tensor(img), cfg, params).coarse.data
            moved = extract(Tensor(shifted), cfg, params).coarse.data

        margin = 3  # receptive-field radius in coarse cells
        hc = base.shape[1]
        interior = np.s_[:, margin:hc - margin, margin + 1 : hc - margin]
        dev = np.abs(moved[interior] - base[:, margin:hc - margin, margin : hc - margin - 1])
        assert dev.max() < 1e-5


class TestInstanceNorm:
    def test_normalizes_stats(self):
        x = Tensor(np.random.default_rng(5).normal(size=(3, 8, 8)), dtype="f64")
        gain = Tensor(np.ones((3, 1, 1)))
        bias = Tensor(np.zeros((3, 1, 1)))
        y = instance_norm(x, gain, bias).data
        np.testing.assert_allclose(y.mean(axis=(1, 2)), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.std(axis=(1, 2)), 1.0, atol=1e-3)

    def test_gradient(self):
        from helpers import check_grads

        rng = np.random.default_rng(6)
        w = Tensor(rng.normal(size=(2, 4, 4)), dtype="f64")
        check_grads(
            lambda x, g, b: ad.tsum(instance_norm(x, g, b) * w),
            [rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 1, 1)), rng.normal(size=(2, 1, 1))],
        )


class TestBackboneGradients:
    def test_flows_to_all_params(self):
        with precision("f64"):
            cfg, params = make_params(BackboneConfig(d_f=4, d_c=8, stem_width=2, mid_width=4), seed=7)
            img = Tensor(np.random.default_rng(8).random((1, 16, 16)))
            pyr = extract(img, cfg, params)
            ad.backward(ad.tsum(pyr.fine * pyr.fine) + ad.tsum(pyr.coarse * pyr.coarse))
        for name, p in params.items():
            assert p.grad is not None, name
            assert np.all(np.isfinite(p.grad)), name
