import numpy as np
import pytest

from capsulefusion.errors import ConfigError, ShapeError
from capsulefusion.models import (
    AttentionFusion,
    BackboneConfig,
    FusionConfig,
    MBConv,
    SqueezeExcite,
    StageSpec,
    UNetConfig,
    VariantKind,
    build_backbone,
    build_fused_model,
    build_unet,
    classify_forward,
    fuse_attention,
    fuse_concat,
    predict,
    psnr,
    psnr_from_mse,
    se_gate,
)
from capsulefusion.rng import make_rng
from capsulefusion.tensor import Tape, Tensor, argmax, backward, softmax_cross_entropy


class TestUNet:
    def test_reconstruction_shape_and_range(self, unet_config, images):
        out = build_unet(unet_config, 0)(Tensor(images)).data
        assert out.shape == images.shape
        assert out.min() > 0.0 and out.max() < 1.0

    def test_encode_shapes(self, unet_config, images):
        feats = build_unet(unet_config, 0).encode(Tensor(images), keep_maps=True)
        assert feats.bottleneck_vector.shape == (2, unet_config.feature_dim)
        assert [m.shape[1] for m in feats.per_level_maps] == [4, 8]
        assert feats.bottleneck_map.shape == (2, 16, 4, 4)

    def test_seeded_init_is_deterministic(self, unet_config):
        a, b = build_unet(unet_config, 3).state_dict(), build_unet(unet_config, 3).state_dict()
        assert a.keys() == b.keys()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        c = build_unet(unet_config, 4).state_dict()
        assert not np.array_equal(a["enc0.conv1.weight"], c["enc0.conv1.weight"])

    def test_input_must_divide_depth(self, unet_config):
        with pytest.raises(ShapeError):
            build_unet(unet_config, 0)(Tensor(np.zeros((1, 3, 18, 18), dtype=np.float32)))

    def test_channel_mismatch(self, unet_config):
        with pytest.raises(ShapeError):
            build_unet(unet_config, 0)(Tensor(np.zeros((1, 1, 16, 16), dtype=np.float32)))

    def test_zero_skips_changes_output(self, unet_config, images):
        model = build_unet(unet_config, 0).eval()
        with_skips = model(Tensor(images)).data
        without = model(Tensor(images), zero_skips=True).data
        assert not np.allclose(with_skips, without)

    def test_reconstruct_and_encode_matches_separate_passes(self, unet_config, images):
        model = build_unet(unet_config, 0).eval()
        recon, feats = model.reconstruct_and_encode(Tensor(images))
        np.testing.assert_allclose(recon.data, model(Tensor(images)).data, rtol=1e-6)
        np.testing.assert_allclose(feats.bottleneck_vector.data,
                                   model.encode(Tensor(images)).bottleneck_vector.data, rtol=1e-6)

    def test_heads_must_divide_bottleneck(self):
        with pytest.raises(ConfigError):
            UNetConfig(base_channels=4, depth=2, attention_heads=3).validate()

    def test_psnr(self):
        assert psnr_from_mse(0.01) == pytest.approx(20.0)
        assert psnr_from_mse(0.0) == 100.0
        assert psnr(np.zeros(4), np.zeros(4)) == 100.0


class TestBackbone:
    def test_feature_vector(self, backbone_config, images):
        out = build_backbone(backbone_config, 0)(Tensor(images))
        assert out.shape == (2, 16)

    def test_cumulative_stride_check(self, backbone_config):
        assert backbone_config.cumulative_stride == 4
        with pytest.raises(ShapeError):
            build_backbone(backbone_config, 0)(Tensor(np.zeros((1, 3, 18, 18), dtype=np.float32)))

    def test_config_round_trip(self, backbone_config):
        assert BackboneConfig.from_dict(backbone_config.to_dict()) == backbone_config

    def test_stage_parse_forms(self):
        expected = StageSpec(6, 24, 2, 2, 3)
        assert StageSpec.parse([6, 24, 2, 2, 3]) == expected
        assert StageSpec.parse({"expansion": 6, "channels": 24, "repeats": 2, "stride": 2, "kernel": 3}) == expected

    def test_width_and_depth_scaling(self):
        config = BackboneConfig(width_mult=1.5, depth_mult=1.6)
        assert config.scaled_channels(16) == 24
        assert config.scaled_channels(2) == 8
        assert config.scaled_repeats(2) == 4

    def test_invalid_stride(self):
        with pytest.raises(ConfigError):
            BackboneConfig(stages=[(1, 16, 1, 3, 3)]).validate()

    def test_zero_init_squeeze_excite_halves(self, rng):
        se = SqueezeExcite(8, 0.25, rng, zero_init=True)
        x = Tensor(rng.normal(size=(2, 8, 3, 3)).astype(np.float32))
        np.testing.assert_allclose(se(x).data, x.data * 0.5, rtol=1e-6)

    def test_squeeze_excite_gate_range(self, rng):
        gate = SqueezeExcite(8, 0.25, rng).gate(Tensor(rng.normal(size=(2, 8, 3, 3)).astype(np.float32)))
        assert gate.shape == (2, 8)
        assert gate.data.min() > 0.0 and gate.data.max() < 1.0

    def test_se_gate_from_ratio(self, rng):
        x = Tensor(rng.uniform(0.1, 1.0, size=(2, 8, 3, 3)).astype(np.float32))
        out = se_gate(x, 0.25, seed=3)
        assert out.shape == x.shape
        assert np.all(out.data > 0) and np.all(out.data < x.data)
        np.testing.assert_array_equal(out.data, se_gate(x, 0.25, seed=3).data)

    def test_se_gate_with_block(self, rng):
        se = SqueezeExcite(8, 0.25, rng, zero_init=True)
        x = Tensor(rng.normal(size=(1, 8, 2, 2)).astype(np.float32))
        np.testing.assert_allclose(se_gate(x, se).data, x.data * 0.5, rtol=1e-6)

    def test_se_gate_rejects_bad_input(self, rng):
        with pytest.raises(ShapeError):
            se_gate(Tensor(np.ones((8, 3, 3))), 0.25)
        with pytest.raises(ConfigError):
            se_gate(Tensor(np.ones((1, 2, 3, 3), dtype=np.float32)), 0.25)

    def test_mbconv_residual_rule(self, rng):
        assert MBConv(8, 8, 4, 1, 3, 0.25, "silu", "batch", rng).use_residual
        assert not MBConv(8, 8, 4, 2, 3, 0.25, "silu", "batch", rng).use_residual
        assert not MBConv(8, 16, 4, 1, 3, 0.25, "silu", "batch", rng).use_residual


class TestFusion:
    @pytest.mark.parametrize("variant", list(VariantKind))
    def test_every_variant_produces_logits(self, variant, unet_config, backbone_config, fusion_config, images):
        model = build_fused_model(fusion_config(variant), unet_config, backbone_config, 0)
        assert classify_forward(model, Tensor(images)).shape == (2, 10)

    def test_concat_order(self):
        out = fuse_concat(Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 4))))
        np.testing.assert_array_equal(out.data[0], [1, 1, 1, 0, 0, 0, 0])

    def test_attention_weights_sum_to_one(self, unet_config, backbone_config, fusion_config, images):
        config = fusion_config(VariantKind.EFFICIENT_FUSION_UNET_ATTENTION)
        model = build_fused_model(config, unet_config, backbone_config, 0)
        model(Tensor(images))
        weights = model.attention_weights
        assert weights.shape == (2, 2)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, rtol=1e-6)

    def test_fuse_attention_single_vector(self, rng):
        fusion = AttentionFusion(4, 6, 5, rng)
        fused, weights = fuse_attention(Tensor(np.ones(4, dtype=np.float32)),
                                        Tensor(np.ones(6, dtype=np.float32)), fusion)
        assert fused.shape == (5,)
        assert weights.shape == (1, 2)

    def test_concat_variant_has_no_attention(self, unet_config, backbone_config, fusion_config, images):
        model = build_fused_model(fusion_config(), unet_config, backbone_config, 0)
        model(Tensor(images))
        assert model.attention_weights is None

    def test_frozen_encoder_gets_no_gradient(self, unet_config, backbone_config, fusion_config, images):
        model = build_fused_model(fusion_config(freeze_encoder=True), unet_config, backbone_config, 0)
        model.train()
        assert not model.unet.training
        with Tape() as tape:
            loss = softmax_cross_entropy(classify_forward(model, Tensor(images)), [1, 2])
        backward(tape, loss)
        assert all(p.grad is None for p in model.unet.parameters())
        assert all(p.grad is not None for p in model.head.parameters())
        assert all(p.grad is not None for p in model.backbone.parameters())

    def test_raw_efficient_variant_skips_unet(self, unet_config, backbone_config, fusion_config):
        config = fusion_config(VariantKind.EFFICIENT_ONLY, backbone_input="raw")
        model = build_fused_model(config, unet_config, backbone_config, 0)
        assert model.unet is None
        assert not any(name.startswith("unet.") for name, _ in model.named_parameters())

    def test_eval_forward_is_deterministic(self, unet_config, backbone_config, fusion_config, images):
        config = fusion_config(VariantKind.UNET_ONLY, dropout=0.5)
        model = build_fused_model(config, unet_config, backbone_config, 0)
        model.eval()
        a, b = model(Tensor(images)).data, model(Tensor(images)).data
        np.testing.assert_array_equal(a, b)

    def test_input_normalisation_is_applied(self, unet_config, backbone_config, fusion_config, images):
        config = fusion_config(VariantKind.EFFICIENT_ONLY, backbone_input="raw")
        model = build_fused_model(config, unet_config, backbone_config, 0).eval()
        before = model(Tensor(images)).data
        model.set_input_stats([0.5, 0.5, 0.5], [0.25, 0.25, 0.25])
        assert not np.allclose(before, model(Tensor(images)).data)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError) as err:
            VariantKind.parse("resnet")
        assert "fusion-attention" in str(err.value)

    def test_wrong_class_count(self):
        with pytest.raises(ConfigError):
            FusionConfig(num_classes=5).validate()

    def test_config_round_trip(self, fusion_config):
        config = fusion_config(VariantKind.EFFICIENT_FUSION_UNET_ATTENTION)
        assert FusionConfig.from_dict(config.to_dict()) == config

    def test_argmax_ties_go_low(self):
        assert argmax(np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]]), axis=1).tolist() == [0, 1]

    def test_predict_returns_class_indices(self, unet_config, backbone_config, fusion_config, images):
        model = build_fused_model(fusion_config(), unet_config, backbone_config, 0).eval()
        preds = predict(model, Tensor(images))
        assert preds.shape == (2,)
        assert all(0 <= p < 10 for p in preds)

    def test_variant_titles(self):
        assert [v.title for v in VariantKind] == [
            "U-Net", "Efficient", "Efficient Fusion U-Net", "Efficient Fusion U-Net with Attention",
        ]

    def test_init_is_seeded(self, unet_config, backbone_config, fusion_config):
        a = build_fused_model(fusion_config(), unet_config, backbone_config, 9).state_dict()
        b = build_fused_model(fusion_config(), unet_config, backbone_config, 9).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_seed_streams_are_independent(self):
        assert not np.array_equal(make_rng(1, 1).random(4), make_rng(1, 2).random(4))
