import numpy as np
import pytest
from PIL import Image

from texsyn.corpus import (
    CorpusManifest,
    TextureRecord,
    build_synthetic_corpus,
    crop_at,
    crops_to_tensor,
    estimate_period,
    grid_crops,
    ingest_image,
    load_corpus,
    luminance,
    sample_crops,
    save_corpus,
    synth_texture,
)
from texsyn.errors import ConfigError, DataError


def checker_image(size=64, tile=4):
    h, w = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    f = (((h // tile) + (w // tile)) % 2).astype(np.uint8) * 255
    return np.stack([f, f, f], axis=-1)


class TestLuminance:
    def test_rec601_weights(self):
        img = np.zeros((1, 1, 3), dtype=np.uint8)
        img[0, 0] = [255, 0, 0]
        assert luminance(img)[0, 0] == pytest.approx(0.299)
        img[0, 0] = [0, 255, 0]
        assert luminance(img)[0, 0] == pytest.approx(0.587)
        img[0, 0] = [0, 0, 255]
        assert luminance(img)[0, 0] == pytest.approx(0.114)

    def test_range(self):
        img = np.full((2, 2, 3), 255, dtype=np.uint8)
        assert luminance(img).max() == pytest.approx(1.0)


class TestPeriodEstimation:
    def test_checker_period(self):
        ph, pw = estimate_period(checker_image(size=64, tile=4))
        assert ph == pytest.approx(8, abs=1)
        assert pw == pytest.approx(8, abs=1)

    def test_horizontal_stripes(self):
        size, period = 60, 6
        h = np.arange(size)[:, None] * np.ones((1, size))
        f = (0.5 * (1 + np.sin(2 * np.pi * h / period)) * 255).astype(np.uint8)
        img = np.stack([f, f, f], axis=-1)
        ph, pw = estimate_period(img)
        assert ph == pytest.approx(period, abs=1)
        assert pw <= 2.0  # constant along width: no repeat longer than 2px

    def test_white_noise_reports_unit_period(self):
        img = np.random.default_rng(0).integers(0, 255, size=(64, 64, 3),
                                                dtype=np.uint8)
        ph, pw = estimate_period(img)
        assert ph == 1.0 and pw == 1.0


class TestIngestion:
    def save(self, tmp_path, img, name="tex.png"):
        path = str(tmp_path / name)
        Image.fromarray(img).save(path)
        return path

    def test_admits_repeating_texture(self, tmp_path):
        path = self.save(tmp_path, checker_image(size=128, tile=2))
        rec = ingest_image(path, crop_size=64, license_tag="cc0")
        assert rec.source == "file"
        assert rec.metadata["license"] == "cc0"
        assert rec.metadata["period_h"] == pytest.approx(4, abs=1)

    def test_rejects_too_small_image(self, tmp_path):
        path = self.save(tmp_path, checker_image(size=64, tile=2))
        with pytest.raises(DataError, match="fewer than 2"):
            ingest_image(path, crop_size=64)

    def test_rejects_too_few_repetitions(self, tmp_path):
        # period 32 checker: only 2 repetitions per 64px crop side
        path = self.save(tmp_path, checker_image(size=256, tile=16))
        with pytest.raises(DataError, match="repetitions"):
            ingest_image(path, crop_size=64, min_texton_reps=5)

    def test_rejects_nonuniform_luminance(self, tmp_path):
        base = checker_image(size=128, tile=2).astype(np.float64)
        ramp = np.linspace(0.02, 1.0, 128)[:, None, None]
        img = (base * ramp).astype(np.uint8)
        path = self.save(tmp_path, img)
        with pytest.raises(DataError, match="luminance"):
            ingest_image(path, crop_size=64, max_luminance_cv=0.3)

    def test_rejects_unreadable_file(self, tmp_path):
        path = str(tmp_path / "junk.png")
        with open(path, "wb") as fh:
            fh.write(b"not a png")
        with pytest.raises(DataError, match="cannot read"):
            ingest_image(path, crop_size=8)


class TestSyntheticTextures:
    @pytest.mark.parametrize("kind", ["grating", "checker", "blob_noise",
                                      "brick", "dot_lattice"])
    def test_kinds_produce_valid_records(self, kind, np_rng):
        rec = synth_texture(kind, np_rng, size=96)
        assert rec.image.shape == (96, 96, 3)
        assert rec.image.dtype == np.uint8
        assert rec.metadata["kind"] == kind

    def test_checker_effective_period_is_exact(self):
        rng = np.random.default_rng(0)
        rec = synth_texture("checker", rng, size=96, period=8, jitter=0.0)
        p = int(rec.metadata["period_h"])
        assert p == 8
        assert np.array_equal(rec.image[:-p, :], rec.image[p:, :])
        assert np.array_equal(rec.image[:, :-p], rec.image[:, p:])

    def test_brick_effective_period_is_exact(self):
        rng = np.random.default_rng(0)
        rec = synth_texture("brick", rng, size=96, period=8, jitter=0.0)
        p = int(rec.metadata["period_w"])
        assert np.array_equal(rec.image[:, :-p], rec.image[:, p:])

    def test_deterministic_for_same_rng_seed(self):
        a = synth_texture("grating", np.random.default_rng(5), size=64)
        b = synth_texture("grating", np.random.default_rng(5), size=64)
        assert np.array_equal(a.image, b.image)

    def test_unknown_kind_rejected(self, np_rng):
        with pytest.raises(ConfigError, match="kind"):
            synth_texture("plaid", np_rng)

    def test_build_corpus_counts_and_unique_ids(self):
        m = build_synthetic_corpus(num_textures=7, crop_size=32, image_size=128)
        assert len(m.records) == 7
        assert len({r.id for r in m.records}) == 7
        assert m.crop_size == 32


class TestCropSampling:
    def test_crop_at_contents(self):
        rec = TextureRecord(id="t", source="synthetic",
                            image=checker_image(size=16, tile=2))
        crop = crop_at(rec, 2, 4, 8)
        assert np.array_equal(crop, rec.image[2:10, 4:12])

    def test_crop_at_bounds(self):
        rec = TextureRecord(id="t", source="synthetic",
                            image=checker_image(size=16, tile=2))
        with pytest.raises(ValueError, match="invalid-input"):
            crop_at(rec, 10, 0, 8)

    def test_sample_crops_shape_and_grouping(self):
        m = build_synthetic_corpus(num_textures=5, crop_size=16, image_size=64)
        batch, ids = sample_crops(m, 3, 2, np.random.default_rng(0))
        assert batch.shape == (3, 2, 16, 16, 3)
        assert len(ids) == len(set(ids)) == 3  # distinct textures per batch

    def test_sample_crops_needs_enough_textures(self):
        m = build_synthetic_corpus(num_textures=2, crop_size=16, image_size=64)
        with pytest.raises(ConfigError, match="textures"):
            sample_crops(m, 3, 2, np.random.default_rng(0))

    def test_grid_crops_tile_without_overlap(self):
        rec = TextureRecord(id="t", source="synthetic",
                            image=checker_image(size=32, tile=2))
        crops = grid_crops(rec, 16)
        assert crops.shape == (4, 16, 16, 3)
        assert np.array_equal(crops[0], rec.image[:16, :16])
        assert np.array_equal(crops[3], rec.image[16:, 16:])

    def test_crops_to_tensor_range_and_layout(self):
        crops = np.zeros((2, 4, 4, 3), dtype=np.uint8)
        crops[0, ..., 0] = 255
        t = crops_to_tensor(crops)
        assert t.shape == (2, 3, 4, 4)
        assert t.dtype.is_floating_point
        assert t.max().item() == pytest.approx(1.0)
        assert t.min().item() == pytest.approx(-1.0)
        assert t[0, 0].min().item() == pytest.approx(1.0)  # red channel first


class TestManifestRoundtrip:
    def test_save_load_preserves_images_and_metadata(self, tmp_path):
        m = build_synthetic_corpus(num_textures=4, crop_size=16, image_size=64,
                                   seed=3)
        save_corpus(m, str(tmp_path / "corpus"))
        loaded = load_corpus(str(tmp_path / "corpus"))
        assert loaded.crop_size == 16 and loaded.seed == 3
        assert [r.id for r in loaded.records] == [r.id for r in m.records]
        for a, b in zip(m.records, loaded.records):
            assert np.array_equal(a.image, b.image)
            assert b.metadata["license"] == "synthetic"

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            load_corpus(str(tmp_path))

    def test_duplicate_ids_rejected(self):
        img = checker_image(size=32, tile=2)
        recs = [TextureRecord(id="x", source="synthetic", image=img),
                TextureRecord(id="x", source="synthetic", image=img)]
        with pytest.raises(DataError, match="duplicate"):
            CorpusManifest(records=recs, crop_size=16)
