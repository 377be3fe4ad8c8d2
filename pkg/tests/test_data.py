import numpy as np
import pytest

from capsulefusion.data import (
    ChannelStats,
    DatasetManifest,
    ManifestEntry,
    SyntheticSpec,
    class_name,
    compute_channel_stats,
    dir_name,
    epoch_order,
    generate_synthetic,
    load_all,
    load_image,
    load_manifest,
    make_batches,
    parse_label,
    quantize,
    read_ppm,
    resize_bilinear,
    split,
    write_ppm,
)
from capsulefusion.errors import ConfigError, DataError


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def balanced_manifest(root, per_class):
    entries = tuple(ManifestEntry(f"{k}_{i:03d}.ppm", k) for k in range(10) for i in range(per_class))
    return DatasetManifest(root, entries)


class TestLabels:
    def test_names_are_normalised(self):
        assert parse_label("  Foreign   Body ") == 4
        assert parse_label("ULCER") == 8

    def test_unknown_label(self):
        with pytest.raises(DataError) as err:
            parse_label("tumour")
        assert "polyp" in err.value.details["valid"]

    def test_dir_name(self):
        assert dir_name(4) == "foreign_body"
        with pytest.raises(DataError):
            class_name(10)


class TestImages:
    def test_ppm_pixels_survive_disk(self, tmp_path):
        pixels = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        write_ppm(tmp_path / "a.ppm", pixels)
        np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), pixels)

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([10, 20, 30]))
        assert read_ppm(path).tolist() == [[[10, 20, 30]]]

    def test_load_scales_to_unit_range(self, tmp_path):
        path = tmp_path / "w.ppm"
        path.write_bytes(b"P6 1 1 255\n" + bytes([255, 0, 51]))
        np.testing.assert_allclose(load_image(path).data[:, 0, 0], [1.0, 0.0, 0.2], rtol=1e-6)

    @pytest.mark.parametrize("raw", [
        b"P3\n1 1\n255\n\x00\x00\x00",
        b"P6\n1 1\n65535\n\x00\x00\x00",
        b"P6\n2 2\n255\n\x00\x00\x00",
        b"P6\n1",
    ])
    def test_malformed_files(self, tmp_path, raw):
        path = tmp_path / "bad.ppm"
        path.write_bytes(raw)
        with pytest.raises(DataError):
            read_ppm(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_ppm(tmp_path / "nope.ppm")

    def test_quantize_rounds_half_up(self):
        image = np.full((3, 1, 1), 0.5)
        assert quantize(image)[0, 0, 0] == 128
        assert quantize(np.full((3, 1, 1), 1.7))[0, 0, 0] == 255

    def test_bilinear_upsampling(self):
        image = np.array([[[0.0, 1.0], [2.0, 3.0]]])
        out = resize_bilinear(image, 4, 4)
        np.testing.assert_allclose(out[0, 0], [0.0, 0.25, 0.75, 1.0])
        np.testing.assert_allclose(out[0, :, 0], [0.0, 0.5, 1.5, 2.0])

    def test_bilinear_checker(self):
        out = resize_bilinear(np.array([[[0.0, 1.0], [1.0, 0.0]]]), 4, 4)
        np.testing.assert_allclose(out[0, 1], [0.25, 0.375, 0.625, 0.75])

    def test_white_image_is_ones(self, tmp_path):
        path = tmp_path / "white.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes([255] * 12))
        np.testing.assert_array_equal(load_image(path).data, np.ones((3, 2, 2), dtype=np.float32))

    def test_resize_to_same_size_is_identity(self):
        image = np.random.default_rng(0).random((3, 5, 5))
        assert resize_bilinear(image, 5, 5) is image


class TestManifest:
    def test_load(self, tmp_path):
        path = write_csv(tmp_path / "labels.csv", "filename,label\na.ppm, Polyp\nb.ppm,normal\n")
        manifest = load_manifest(path)
        assert [e.label for e in manifest.entries] == [7, 6]
        assert manifest.root == tmp_path
        assert manifest.counts[7] == 1 and sum(manifest.counts) == 2

    def test_explicit_root(self, tmp_path):
        path = write_csv(tmp_path / "labels.csv", "filename,label\na.ppm,polyp\n")
        manifest = load_manifest(path, root=tmp_path / "imgs")
        assert manifest.paths() == [tmp_path / "imgs" / "a.ppm"]

    def test_unknown_label_reports_row(self, tmp_path):
        path = write_csv(tmp_path / "labels.csv", "filename,label\na.ppm,polyp\nb.ppm,dragon\n")
        with pytest.raises(DataError) as err:
            load_manifest(path)
        assert err.value.details["row"] == 2
        assert "dragon" in str(err.value)

    def test_duplicate_filename(self, tmp_path):
        path = write_csv(tmp_path / "labels.csv", "filename,label\na.ppm,polyp\na.ppm,ulcer\n")
        with pytest.raises(DataError) as err:
            load_manifest(path)
        assert err.value.details["row"] == 2

    @pytest.mark.parametrize("text", ["", "filename,label\n", "file,class\na.ppm,polyp\n"])
    def test_rejected_files(self, tmp_path, text):
        with pytest.raises(DataError):
            load_manifest(write_csv(tmp_path / "labels.csv", text))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path / "absent.csv")


class TestSplit:
    def test_stratified_counts(self, synthetic_manifest):
        train, val = split(synthetic_manifest, 0.25, seed=1)
        assert val.counts == [1] * 10
        assert train.counts == [3] * 10

    def test_partition_keeps_order(self, synthetic_manifest):
        train, val = split(synthetic_manifest, 0.5, seed=1)
        paths = [e.path for e in synthetic_manifest.entries]
        assert sorted(e.path for e in train.entries + val.entries) == sorted(paths)
        assert not {e.path for e in train.entries} & {e.path for e in val.entries}
        for part in (train, val):
            positions = [paths.index(e.path) for e in part.entries]
            assert positions == sorted(positions)

    def test_seeded(self, synthetic_manifest):
        a = split(synthetic_manifest, 0.5, seed=1)[1]
        b = split(synthetic_manifest, 0.5, seed=1)[1]
        assert a.entries == b.entries

    def test_hundred_per_class_gives_twenty(self, tmp_path):
        manifest = balanced_manifest(tmp_path, 100)
        train, val = split(manifest, 0.2, seed=3)
        assert val.counts == [20] * 10
        assert train.counts == [80] * 10

    def test_small_fraction_can_leave_a_class_out_of_validation(self, tmp_path):
        entries = [ManifestEntry(f"a{i}.ppm", 0) for i in range(10)] + [ManifestEntry(f"b{i}.ppm", 1) for i in range(4)]
        train, val = split(DatasetManifest(tmp_path, tuple(entries)), 0.1, seed=0)
        assert val.counts[:2] == [1, 0]
        assert train.counts[:2] == [9, 4]

    def test_different_seeds_give_different_splits(self, tmp_path):
        manifest = balanced_manifest(tmp_path, 20)
        splits = {tuple(e.path for e in split(manifest, 0.2, seed=s)[1].entries) for s in range(20)}
        assert len(splits) == 20

    @pytest.mark.parametrize("fraction", [0.1, 0.9])
    def test_empty_half_is_rejected(self, synthetic_manifest, fraction):
        with pytest.raises(DataError) as err:
            split(synthetic_manifest, fraction, seed=1)
        assert err.value.details["train"] == 0 or err.value.details["val"] == 0

    def test_singleton_class_rejected(self, tmp_path):
        manifest = DatasetManifest(tmp_path, (ManifestEntry("a.ppm", 0), ManifestEntry("b.ppm", 1),
                                              ManifestEntry("c.ppm", 1)))
        with pytest.raises(DataError):
            split(manifest, 0.5, seed=0)

    def test_fraction_range(self, synthetic_manifest):
        with pytest.raises(ConfigError):
            split(synthetic_manifest, 1.0, seed=0)


class TestSynthetic:
    def test_layout(self, synthetic_manifest, tmp_path):
        assert len(synthetic_manifest) == 40
        assert synthetic_manifest.counts == [4] * 10
        assert (tmp_path / "synth" / "images" / "foreign_body" / "0003.ppm").is_file()
        reloaded = load_manifest(tmp_path / "synth" / "labels.csv")
        assert reloaded.entries == synthetic_manifest.entries

    def test_bytes_are_reproducible(self, tmp_path):
        spec = SyntheticSpec(per_class=1, size=8, seed=11)
        a = generate_synthetic(spec, tmp_path / "a")
        b = generate_synthetic(spec, tmp_path / "b")
        for pa, pb in zip(a.paths(), b.paths()):
            assert pa.read_bytes() == pb.read_bytes()

    def test_uneven_class_counts(self, tmp_path):
        counts = (1, 2, 1, 1, 1, 1, 3, 1, 1, 1)
        manifest = generate_synthetic(SyntheticSpec(per_class=counts, size=8), tmp_path)
        assert manifest.counts == list(counts)

    def test_invalid_counts(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(per_class=(1, 2)).validate()
        with pytest.raises(ConfigError):
            SyntheticSpec(per_class=0).validate()

    def test_classes_differ_in_colour(self, synthetic_manifest):
        images, labels = load_all(synthetic_manifest)
        means = np.stack([images[labels == k].mean(axis=(0, 2, 3)) for k in range(10)])
        distances = np.linalg.norm(means[:, None] - means[None], axis=-1)
        assert distances[~np.eye(10, dtype=bool)].min() > 0.01


class TestBatching:
    def test_sequential_batches(self, synthetic_manifest):
        batches = list(make_batches(synthetic_manifest, 16))
        assert [len(b) for b in batches] == [16, 16, 8]
        assert np.concatenate([b.indices for b in batches]).tolist() == list(range(40))
        assert batches[0].images.shape == (16, 3, 16, 16)

    def test_shuffle_covers_each_entry_once(self, synthetic_manifest):
        indices = np.concatenate([b.indices for b in make_batches(synthetic_manifest, 7, shuffle_seed=2)])
        assert sorted(indices.tolist()) == list(range(40))
        assert indices.tolist() != list(range(40))

    def test_epochs_reshuffle(self):
        assert not np.array_equal(epoch_order(50, 1, 0), epoch_order(50, 1, 1))
        np.testing.assert_array_equal(epoch_order(50, 1, 3), epoch_order(50, 1, 3))

    def test_workers_keep_order(self, synthetic_manifest):
        serial = list(make_batches(synthetic_manifest, 6, shuffle_seed=4))
        threaded = list(make_batches(synthetic_manifest, 6, shuffle_seed=4, workers=2))
        for a, b in zip(serial, threaded, strict=True):
            np.testing.assert_array_equal(a.indices, b.indices)
            np.testing.assert_array_equal(a.images, b.images)

    def test_labels_follow_indices(self, synthetic_manifest):
        for batch in make_batches(synthetic_manifest, 9, shuffle_seed=0):
            np.testing.assert_array_equal(batch.labels, synthetic_manifest.labels[batch.indices])

    def test_resize_on_load(self, synthetic_manifest):
        batch = next(make_batches(synthetic_manifest, 4, image_size=8))
        assert batch.images.shape == (4, 3, 8, 8)

    def test_bad_batch_size(self, synthetic_manifest):
        with pytest.raises(ConfigError):
            next(make_batches(synthetic_manifest, 0))

    def test_empty_manifest(self, tmp_path):
        with pytest.raises(DataError):
            next(make_batches(DatasetManifest(tmp_path, ()), 4))

    def test_channel_stats(self, synthetic_manifest):
        stats = compute_channel_stats(synthetic_manifest)
        images, _ = load_all(synthetic_manifest)
        np.testing.assert_allclose(stats.mean, images.astype(np.float64).mean(axis=(0, 2, 3)), rtol=1e-6)
        normalised = stats.apply(images.astype(np.float64))
        np.testing.assert_allclose(normalised.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
        np.testing.assert_allclose(normalised.std(axis=(0, 2, 3)), 1.0, rtol=1e-5)

    def test_stats_apply_broadcasts_per_channel(self):
        stats = ChannelStats((0.5, 0.0, 1.0), (0.5, 1.0, 2.0))
        out = stats.apply(np.ones((1, 3, 2, 2), dtype=np.float32))
        np.testing.assert_allclose(out[0, :, 0, 0], [1.0, 1.0, 0.0])
