import numpy as np
import pytest

from capsulefusion.corruption import (
    CorruptionKind,
    CorruptionSpec,
    LossPolicy,
    corrupt,
    corrupt_batch,
    add_gaussian_noise,
    mask_patches,
    masked_tile_count,
    reconstruction_loss,
)
from capsulefusion.errors import ConfigError, DomainError, ShapeError
from capsulefusion.rng import make_rng
from capsulefusion.tensor import Tensor


@pytest.fixture
def image(rng):
    return Tensor(rng.uniform(0.2, 0.8, size=(3, 16, 16)).astype(np.float32))


TRIALS = 100
MASK = CorruptionSpec(kind=CorruptionKind.PATCH_MASK, patch_size=8, mask_ratio=0.5)
NOISE = CorruptionSpec(kind=CorruptionKind.GAUSSIAN_NOISE, sigma=0.1)


class TestSpec:
    def test_default_loss_policy(self):
        assert MASK.policy is LossPolicy.MASKED_ONLY
        assert NOISE.policy is LossPolicy.FULL
        assert CorruptionSpec(kind="combined").policy is LossPolicy.FULL

    def test_explicit_policy_wins(self):
        spec = CorruptionSpec(kind="patch_mask", loss_policy="full")
        assert spec.policy is LossPolicy.FULL

    def test_mask_ratio_range(self):
        with pytest.raises(ConfigError):
            CorruptionSpec(kind="patch_mask", mask_ratio=1.5)

    def test_negative_sigma(self):
        with pytest.raises(DomainError):
            CorruptionSpec(sigma=-0.1)

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            CorruptionSpec.from_dict({"kind": "gaussian_noise", "strength": 2})

    def test_dict_round_trip(self):
        assert CorruptionSpec.from_dict(MASK.to_dict()) == MASK


class TestPatchMask:
    def test_tile_count_rounds_half_up(self):
        assert masked_tile_count(MASK, 16, 16) == 2
        assert masked_tile_count(MASK, 24, 8) == 2
        assert masked_tile_count(CorruptionSpec(kind="patch_mask", patch_size=8, mask_ratio=0.0), 16, 16) == 0

    def test_masked_pixels_filled_on_every_channel(self, image):
        out, mask = mask_patches(image, MASK, make_rng(1, 2))
        assert mask.count == 2 * 8 * 8
        assert np.all(out.data[:, mask.pixels] == 0.0)
        np.testing.assert_array_equal(out.data[:, ~mask.pixels], image.data[:, ~mask.pixels])

    def test_whole_tiles_are_masked(self, image):
        _, mask = mask_patches(image, MASK, make_rng(1, 2))
        tiles = mask.pixels.reshape(2, 8, 2, 8).transpose(0, 2, 1, 3).reshape(4, 64)
        assert all(row.all() or not row.any() for row in tiles)

    def test_patch_must_divide_image(self):
        with pytest.raises(ShapeError):
            mask_patches(Tensor(np.zeros((3, 12, 12))), MASK, make_rng(0))

    def test_deterministic_for_seed(self, image):
        a, _ = corrupt(image, MASK, make_rng(4, 2))
        b, _ = corrupt(image, MASK, make_rng(4, 2))
        np.testing.assert_array_equal(a.data, b.data)

    def test_fill_value(self, image):
        spec = CorruptionSpec(kind="patch_mask", patch_size=4, mask_ratio=1.0, fill_value=0.5)
        out, mask = mask_patches(image, spec, make_rng(0))
        assert mask.pixels.all()
        np.testing.assert_array_equal(out.data, 0.5)

    def test_masked_tile_count_is_exact(self):
        rng = make_rng(100)
        for trial in range(TRIALS):
            patch = int(rng.choice([2, 4, 8]))
            rows, cols = (int(v) for v in rng.integers(1, 6, size=2))
            ratio = float(rng.uniform(0, 1))
            spec = CorruptionSpec(kind="patch_mask", patch_size=patch, mask_ratio=ratio)
            image = Tensor(rng.uniform(0, 1, size=(3, rows * patch, cols * patch)))
            _, mask = mask_patches(image, spec, make_rng(trial))
            expected_tiles = int(np.floor(ratio * rows * cols + 0.5))
            assert mask.count == expected_tiles * patch * patch

    def test_unmasked_pixels_are_bit_identical(self):
        rng = make_rng(101)
        for trial in range(TRIALS):
            spec = CorruptionSpec(kind="patch_mask", patch_size=4, mask_ratio=float(rng.uniform(0, 1)),
                                  fill_value=float(rng.uniform(-1, 1)))
            image = Tensor(rng.standard_normal((3, 16, 12)).astype(np.float32))
            out, mask = mask_patches(image, spec, make_rng(trial))
            assert np.array_equal(out.data[:, ~mask.pixels], image.data[:, ~mask.pixels])
            assert np.all(out.data[:, mask.pixels] == np.float32(spec.fill_value))


class TestNoise:
    def test_zero_sigma_is_identity(self, image):
        out = add_gaussian_noise(image, CorruptionSpec(sigma=0.0), make_rng(0))
        np.testing.assert_array_equal(out.data, image.data)

    def test_clamped_to_unit_range(self, image):
        out = add_gaussian_noise(image, CorruptionSpec(sigma=2.0), make_rng(0))
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_noise_level(self):
        flat = Tensor(np.full((3, 64, 64), 0.5))
        out = add_gaussian_noise(flat, CorruptionSpec(sigma=0.05), make_rng(0))
        assert np.std(out.data - 0.5) == pytest.approx(0.05, rel=0.05)

    def test_rejects_out_of_range_input(self):
        with pytest.raises(DomainError):
            add_gaussian_noise(Tensor(np.full((3, 4, 4), 1.5)), NOISE, make_rng(0))

    def test_full_mask(self, image):
        _, mask = corrupt(image, NOISE, make_rng(0))
        assert mask.pixels.all()

    def test_combined_masks_then_noises(self, image):
        spec = CorruptionSpec(kind="combined", patch_size=8, mask_ratio=0.5, sigma=0.1)
        out, mask = corrupt(image, spec, make_rng(0))
        assert mask.pixels.all()
        assert not np.array_equal(out.data, image.data)

    def test_zero_sigma_is_identity_over_random_images(self):
        rng = make_rng(102)
        for trial in range(TRIALS):
            image = Tensor(rng.uniform(0, 1, size=(3, 8, 8)).astype(np.float32))
            out = add_gaussian_noise(image, CorruptionSpec(sigma=0.0), make_rng(trial))
            assert np.array_equal(out.data, image.data)

    def test_clamped_over_random_sigmas(self):
        rng = make_rng(103)
        for trial in range(TRIALS):
            image = Tensor(rng.uniform(0, 1, size=(3, 8, 8)).astype(np.float32))
            out = add_gaussian_noise(image, CorruptionSpec(sigma=float(rng.uniform(0, 3))), make_rng(trial))
            assert out.data.min() >= 0.0 and out.data.max() <= 1.0


class TestBatchAndLoss:
    def test_corrupt_batch_shapes(self, images):
        out, masks = corrupt_batch(images, MASK, make_rng(0))
        assert out.shape == images.shape
        assert masks.shape == (2, 16, 16)

    def test_masked_only_ignores_visible_pixels(self, images):
        out, masks = corrupt_batch(images, MASK, make_rng(0))
        prediction = Tensor(images.copy())
        prediction.data[:, :, ~masks[0]] += 1.0  # error only where image 0 was visible
        loss = reconstruction_loss(Tensor(prediction.data[:1]), Tensor(images[:1]), masks[:1], "masked_only")
        assert loss.item() == pytest.approx(0.0)

    def test_full_policy_counts_everything(self):
        pred, target = Tensor(np.ones((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 4, 4)))
        assert reconstruction_loss(pred, target, None, "full").item() == pytest.approx(1.0)

    def test_empty_mask_rejected(self):
        pred = Tensor(np.zeros((3, 4, 4)))
        with pytest.raises(ShapeError):
            reconstruction_loss(pred, pred, np.zeros((4, 4), dtype=bool), "masked_only")

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reconstruction_loss(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((3, 4, 5))), None)
