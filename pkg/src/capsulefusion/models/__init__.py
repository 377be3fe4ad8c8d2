from .backbone import (
    BackboneConfig,
    BackboneModel,
    MBConv,
    SqueezeExcite,
    StageSpec,
    backbone_forward,
    build_backbone,
    nano_stages,
    se_gate,
)
from .fusion import (
    AttentionFusion,
    ClassifierHead,
    FusedModel,
    FusionConfig,
    VariantKind,
    build_fused_model,
    classify_forward,
    fuse_attention,
    fuse_concat,
    predict,
)
from .unet import EncoderFeatures, UNetConfig, UNetModel, build_unet, encode, psnr, psnr_from_mse, unet_forward

__all__ = [
    "AttentionFusion", "BackboneConfig", "BackboneModel", "ClassifierHead", "EncoderFeatures",
    "FusedModel", "FusionConfig", "MBConv", "SqueezeExcite", "StageSpec", "UNetConfig", "UNetModel",
    "VariantKind", "backbone_forward", "build_backbone", "build_fused_model", "build_unet",
    "classify_forward", "encode", "fuse_attention", "fuse_concat", "nano_stages", "predict", "psnr",
    "psnr_from_mse", "se_gate", "unet_forward",
]
