"""Shared fixtures: seeded generators, tiny model configs and a small synthetic dataset."""
import numpy as np
import pytest

from capsulefusion.data import SyntheticSpec, generate_synthetic
from capsulefusion.models import BackboneConfig, FusionConfig, StageSpec, UNetConfig, VariantKind
from capsulefusion.rng import make_rng
from capsulefusion.training import TrainConfig


@pytest.fixture
def rng():
    return make_rng(0, 99)


@pytest.fixture
def unet_config():
    return UNetConfig(base_channels=4, depth=2, attention_heads=2)


@pytest.fixture
def backbone_config():
    return BackboneConfig(
        stem_channels=8,
        stages=(StageSpec(1, 8, 1, 1, 3), StageSpec(4, 16, 1, 2, 3)),
        feature_dim=16,
    )


@pytest.fixture
def fusion_config():
    def make(variant=VariantKind.EFFICIENT_FUSION_UNET, **changes):
        values = dict(variant=variant, common_dim=8, head_dims=(16,), dropout=0.1)
        values.update(changes)
        return FusionConfig(**values)
    return make


@pytest.fixture
def train_config():
    return TrainConfig(learning_rate=1e-3, batch_size=8, epochs=1, pretrain_epochs=1, seed=5)


@pytest.fixture
def synthetic_manifest(tmp_path):
    """Four 16x16 images per class written under tmp_path/synth."""
    return generate_synthetic(SyntheticSpec(per_class=4, size=16, seed=3), tmp_path / "synth")


@pytest.fixture
def images(rng):
    return rng.uniform(0.0, 1.0, size=(2, 3, 16, 16)).astype(np.float32)
