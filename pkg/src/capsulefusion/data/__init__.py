from .batching import Batch, ChannelStats, ImageLoader, compute_channel_stats, epoch_order, load_all, make_batches
from .images import load_image, quantize, read_ppm, resize_bilinear, write_ppm
from .labels import CLASS_NAMES, NUM_CLASSES, class_name, dir_name, parse_label
from .manifest import DatasetManifest, ManifestEntry, load_manifest, split, write_manifest
from .synthetic import SyntheticSpec, TextureParams, class_textures, generate_synthetic, render_texture

__all__ = [
    "Batch", "CLASS_NAMES", "ChannelStats", "DatasetManifest", "ImageLoader", "ManifestEntry",
    "NUM_CLASSES", "SyntheticSpec", "TextureParams", "class_name", "class_textures",
    "compute_channel_stats", "dir_name", "epoch_order", "generate_synthetic", "load_all",
    "load_image", "load_manifest", "make_batches", "parse_label", "quantize", "read_ppm",
    "render_texture", "resize_bilinear", "split", "write_manifest", "write_ppm",
]
