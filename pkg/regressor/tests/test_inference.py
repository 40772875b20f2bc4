import numpy as np
import pytest
import torch

from floodregress.inference import fuse, infer_scene
from floodregress.models import ModelConfig, build_model

SMALL = (8, 16, 24, 32)


class TestFuse:
    def test_identical_inputs(self):
        a = np.random.default_rng(0).normal(size=(8, 8))
        assert np.array_equal(fuse(a, a.copy()), a)

    def test_mean_of_constants(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 2.0)
        assert np.all(fuse(a, b) == 1.0)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
        assert np.array_equal(fuse(a, b), fuse(b, a))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fuse(np.zeros((2, 2)), np.zeros((3, 3)))


def small_model(seed=0, activation="linear"):
    torch.manual_seed(seed)
    model = build_model(ModelConfig(arch="linknet", encoder_widths=SMALL,
                                    output_activation=activation))
    model.eval()
    return model


class TestInferScene:
    def test_single_tile_equals_direct_call(self):
        model = small_model()
        rng = np.random.default_rng(2)
        change = (rng.random((64, 64)) < 0.3).astype(np.float64)
        slope = rng.uniform(0, np.pi / 2, (64, 64))
        out = infer_scene(model, change, slope, tile=64, overlap=16, scale=3.0)
        x = np.stack([change, np.clip(slope / (np.pi / 2), 0, 1)]).astype(np.float32)
        with torch.no_grad():
            direct = model(torch.from_numpy(x).unsqueeze(0))[0, 0].numpy()
        assert np.allclose(out, direct.astype(np.float64) * 3.0, atol=1e-6)

    def test_tiled_scene_is_translation_consistent(self):
        model = small_model(seed=3)
        change = np.zeros((96, 96))
        slope = np.full((96, 96), 0.4)
        out = infer_scene(model, change, slope, tile=64, overlap=32)
        # every tile sees identical input, so the fully within-one-tile
        # region of the mosaic equals that unique tile prediction
        x = np.stack([change[:64, :64],
                      np.clip(slope[:64, :64] / (np.pi / 2), 0, 1)]).astype(np.float32)
        with torch.no_grad():
            tile_pred = model(torch.from_numpy(x).unsqueeze(0))[0, 0].numpy()
        assert np.allclose(out[:32, :32], tile_pred[:32, :32], atol=1e-6)

    def test_nonneg_clamp(self):
        model = small_model(seed=4, activation="linear")
        rng = np.random.default_rng(5)
        change = (rng.random((64, 64)) < 0.5).astype(np.float64)
        slope = rng.uniform(0, 1.0, (64, 64))
        out = infer_scene(model, change, slope, tile=64, overlap=0, nonneg=True)
        assert out.min() >= 0.0

    def test_scene_smaller_than_tile_rejected(self):
        model = small_model()
        with pytest.raises(ValueError):
            infer_scene(model, np.zeros((32, 32)), np.zeros((32, 32)), tile=64)

    def test_full_coverage_weights(self):
        model = small_model(seed=6)
        rng = np.random.default_rng(7)
        change = (rng.random((100, 130)) < 0.2).astype(np.float64)
        slope = rng.uniform(0, 1, (100, 130))
        out = infer_scene(model, change, slope, tile=64, overlap=16)
        assert out.shape == (100, 130)
        assert np.all(np.isfinite(out))
