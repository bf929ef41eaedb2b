import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glomnet.augment import AugmentConfig, AugmentParams, apply_affine, augment_chip, center_path, sample_params
from glomnet.imgcore import Image, ImageError, center_crop, downsample
from glomnet.rng import stream

CFG = AugmentConfig()


def random_chip(seed, side=800):
    return Image(np.random.default_rng(seed).integers(0, 256, (side, side, 3), dtype=np.uint8))


class TestSampler:
    def test_bounds_and_means(self):
        rng = np.random.default_rng(0)
        draws = [sample_params(rng, CFG, 1000) for _ in range(100_000)]
        angle = np.array([d.angle_deg for d in draws])
        dx = np.array([d.dx_px for d in draws])
        scale = np.array([d.scale for d in draws])
        flips = np.array([d.flip_lr for d in draws])
        assert np.abs(angle).max() <= 15 and np.abs(dx).max() <= 70
        assert scale.min() >= 0.95 and scale.max() <= 1.05
        assert abs(angle.mean()) < 0.5
        assert abs(flips.mean() - 0.5) < 0.01

    def test_identity_config(self):
        p = sample_params(np.random.default_rng(1), AugmentConfig.identity(), 800)
        assert p == AugmentParams()

    def test_same_stream_same_params(self):
        a = sample_params(stream(3, "aug", 0, 5), CFG, 1000)
        b = sample_params(stream(3, "aug", 0, 5), CFG, 1000)
        c = sample_params(stream(3, "aug", 1, 5), CFG, 1000)
        assert a == b and a != c


class TestAffine:
    def test_identity_params_return_input(self):
        img = random_chip(2, 64)
        assert apply_affine(img, AugmentParams()) == img

    def test_flip_involution(self):
        img = random_chip(3, 32)
        p = AugmentParams(flip_lr=True, flip_ud=True)
        assert apply_affine(apply_affine(img, p), p) == img

    def test_flip_lr_mirrors_columns(self):
        img = random_chip(4, 16)
        out = apply_affine(img, AugmentParams(flip_lr=True))
        assert np.array_equal(out.pixels, img.pixels[:, ::-1])

    def test_integer_translation(self):
        img = random_chip(5, 500)
        out = apply_affine(img, AugmentParams(dx_px=35.0), fill=255)
        assert np.array_equal(out.pixels[:, 35:], img.pixels[:, :-35])
        assert np.all(out.pixels[:, :35] == 255)

    def test_quarter_turn_on_square(self):
        img = random_chip(6, 9)
        out = apply_affine(img, AugmentParams(angle_deg=90.0))
        # +x turns toward +y: the top row lands in the right column
        assert np.array_equal(out.pixels[:, -1], img.pixels[0])

    def test_zoom_keeps_center_pixel(self):
        img = random_chip(7, 33)
        out = apply_affine(img, AugmentParams(scale=1.05))
        assert np.array_equal(out.pixels[16, 16], img.pixels[16, 16])

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-15, 15), st.floats(-20, 20), st.floats(-20, 20), st.floats(0.95, 1.05))
    def test_values_stay_in_source_range_or_fill(self, angle, dx, dy, scale):
        px = np.full((40, 40, 3), 100, np.uint8)
        px[10:30, 10:30] = 50
        out = apply_affine(Image(px), AugmentParams(angle, dx, dy, scale), fill=255).pixels
        assert out.min() >= 50


class TestAugmentChip:
    def test_shape(self):
        out = augment_chip(random_chip(8), stream(0, "aug", 0, 0), CFG)
        assert (out.height, out.width, out.channels) == (400, 400, 3)

    def test_deterministic(self):
        chip = random_chip(9)
        a = augment_chip(chip, stream(1, "aug", 2, 3), CFG)
        b = augment_chip(chip, stream(1, "aug", 2, 3), CFG)
        assert a == b

    def test_identity_matches_center_path(self):
        chip = random_chip(10)
        cfg = AugmentConfig.identity()
        out = augment_chip(chip, np.random.default_rng(0), cfg)
        assert out == center_path(chip, cfg) == center_crop(downsample(chip, 2), 400, 400)

    def test_rejects_small_chip(self):
        with pytest.raises(ImageError):
            augment_chip(random_chip(11, 600), np.random.default_rng(0), CFG)

    def test_rejects_grayscale(self):
        gray = Image(np.zeros((800, 800, 1), np.uint8))
        with pytest.raises(ImageError):
            augment_chip(gray, np.random.default_rng(0), CFG)
