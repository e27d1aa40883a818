"""Impairment chain: crop law, output contract, determinism and skip reporting."""
import hashlib
from fractions import Fraction

import numpy as np
import pytest
from PIL import Image

from conftest import write_random_manifest
from python_synthetic_image_detector import dataset
from python_synthetic_image_detector.errors import ImpairmentError
from python_synthetic_image_detector.impairments import (ImpairmentConfig, apply_impairment, build_dataset,
                                                         decode_jpeg, derive_rng, impair, read_skip_report,
                                                         sample_crop)


def digests(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted((directory / "images").iterdir())}


def test_crop_law_on_large_images():
    cfg = ImpairmentConfig()
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        box = sample_crop(4096, 4096, cfg, rng)
        assert 160 <= box.w <= 2048 and 160 <= box.h <= 2048
        assert Fraction(min(box.w, box.h), max(box.w, box.h)) >= Fraction(5, 8)
        assert 0 <= box.x <= 4096 - box.w and 0 <= box.y <= 4096 - box.h


def test_crop_law_on_thin_images():
    cfg = ImpairmentConfig()
    rng = np.random.default_rng(1)
    for width, height in [(4000, 170), (170, 4000), (300, 161), (2100, 2049)]:
        for _ in range(500):
            box = sample_crop(width, height, cfg, rng)
            assert 160 <= box.w <= min(2048, width) and 160 <= box.h <= min(2048, height)
            assert min(box.w, box.h) / max(box.w, box.h) >= 5 / 8 - 1e-9


def test_minimum_image_is_cropped_to_full_frame():
    box = sample_crop(160, 160, ImpairmentConfig(), np.random.default_rng(7))
    assert (box.x, box.y, box.w, box.h) == (0, 0, 160, 160)


def test_too_small_image_is_rejected():
    with pytest.raises(ImpairmentError) as info:
        sample_crop(159, 400, ImpairmentConfig(), np.random.default_rng(0))
    assert info.value.code == "image-too-small"


def test_config_validation_and_profiles():
    assert ImpairmentConfig(crop_ratio="5/8").crop_ratio == Fraction(5, 8)
    assert ImpairmentConfig(crop_ratio=0.625).crop_ratio == Fraction(5, 8)
    toy = ImpairmentConfig.from_profile('toy', q_max=90)
    assert (toy.crop_min, toy.target_size, toy.q_max) == (48, 64, 90)
    with pytest.raises(ValueError):
        ImpairmentConfig(q_min=70, q_max=60)
    with pytest.raises(ValueError):
        ImpairmentConfig(crop_min=300, crop_max=200)
    with pytest.raises(ValueError):
        ImpairmentConfig.from_profile('instagram')


def test_derived_streams_depend_only_on_seed_and_entry():
    a = derive_rng(5, "img_1").integers(0, 2**31, size=4)
    b = derive_rng(5, "img_1").integers(0, 2**31, size=4)
    c = derive_rng(6, "img_1").integers(0, 2**31, size=4)
    d = derive_rng(5, "img_1", "augment", 0).integers(0, 2**31, size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def reference_crop(master_seed, entry_id, width, height, crop_min, crop_max, ratio):
    """Crop law re-derived from its description: hash seeding, then w, h, x, y, then quality."""
    digest = hashlib.sha256(f"{master_seed}|{entry_id}".encode("utf-8")).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))
    w_hi = min(crop_max, width, (min(crop_max, height) * ratio.denominator) // ratio.numerator)
    w = int(rng.integers(crop_min, w_hi + 1))
    h_lo = max(crop_min, -(-w * ratio.numerator // ratio.denominator))
    h_hi = min(crop_max, height, w * ratio.denominator // ratio.numerator)
    h = int(rng.integers(h_lo, h_hi + 1))
    x = int(rng.integers(0, width - w + 1))
    y = int(rng.integers(0, height - h + 1))
    return (x, y, w, h), rng


def test_crop_of_entry_e0_on_512_square_follows_the_seeded_law():
    cfg = ImpairmentConfig()
    (x, y, w, h), rng = reference_crop(0, "e0", 512, 512, 160, 2048, Fraction(5, 8))
    box = sample_crop(512, 512, cfg, derive_rng(0, "e0"))
    assert (box.x, box.y, box.w, box.h) == (x, y, w, h)
    assert 160 <= box.w <= 512 and 160 <= box.h <= 512
    assert min(box.w, box.h) / max(box.w, box.h) >= 0.625
    assert box.x + box.w <= 512 and box.y + box.h <= 512

    image = np.zeros((512, 512, 3), dtype=np.uint8)
    result = impair(image, cfg, derive_rng(0, "e0"))
    assert result.crop == box
    assert result.quality == int(rng.integers(65, 101))


def test_forced_quality_100():
    cfg = ImpairmentConfig(q_min=100, q_max=100)
    ramp = np.add.outer(np.arange(300), np.arange(400)) * 255 // 698
    image = np.repeat(ramp.astype(np.uint8)[..., None], 3, axis=-1)
    for i in range(20):
        result = impair(image, cfg, derive_rng(1, f"q{i}"))
        assert result.quality == 100
        crop = result.crop
        patch = Image.fromarray(image[crop.y:crop.y + crop.h, crop.x:crop.x + crop.w])
        expected = np.asarray(patch.resize((200, 200), Image.Resampling.BILINEAR), dtype=float)
        assert np.abs(decode_jpeg(result.data).astype(float) - expected).mean() < 1.0


def test_streams_of_neighbouring_entries_are_independent():
    a = derive_rng(42, "a").random(10_000)
    b = derive_rng(42, "b").random(10_000)
    assert not np.array_equal(a[:8], b[:8])
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
    assert abs(np.corrcoef(a[1:], b[:-1])[0, 1]) < 0.05
    assert np.array_equal(derive_rng(42, "a").random(8), a[:8])


def test_impair_output_contract():
    cfg = ImpairmentConfig()
    image = np.random.default_rng(0).integers(0, 256, size=(480, 640, 3), dtype=np.uint8)
    result = impair(image, cfg, derive_rng(0, "x"))
    assert decode_jpeg(result.data).shape == (200, 200, 3)
    assert 65 <= result.quality <= 100
    assert apply_impairment(image, cfg, derive_rng(0, "x")) == result.data
    gray = image[..., 0]
    assert decode_jpeg(apply_impairment(gray, cfg, derive_rng(0, "x"))).shape == (200, 200, 3)


def test_build_dataset_contract(tmp_path):
    manifest, taxonomy, entries = write_random_manifest(tmp_path / "src", 200, seed=11)
    cfg = ImpairmentConfig(master_seed=3)
    result = build_dataset(manifest, cfg, tmp_path / "out", workers=1, comments=["psid test"])
    assert len(result.entries) == 200 and result.skipped == []

    taxonomy_out, entries_out = dataset.read_manifest(result.manifest_path)
    assert dataset.taxonomy_to_dict(taxonomy_out) == dataset.taxonomy_to_dict(taxonomy)
    for before, after in zip(entries, entries_out):
        assert (before.entry_id, before.class_index, before.generator_id, before.category, before.source) == \
            (after.entry_id, after.class_index, after.generator_id, after.category, after.source)
        assert decode_jpeg((tmp_path / "out" / after.path).read_bytes()).shape == (200, 200, 3)

    qualities = []
    for line in (tmp_path / "out" / "impairments.tsv").read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            continue
        entry_id, x, y, w, h, quality = line.split("\t")
        qualities.append(int(quality))
        assert min(int(w), int(h)) >= 160
    assert len(qualities) == 200
    assert min(qualities) >= 65 and max(qualities) <= 100


def test_build_dataset_is_reproducible_across_runs_and_workers(tmp_path):
    manifest, _, _ = write_random_manifest(tmp_path / "src", 40, seed=2)
    cfg = ImpairmentConfig(master_seed=9)
    build_dataset(manifest, cfg, tmp_path / "a", workers=1)
    build_dataset(manifest, cfg, tmp_path / "b", workers=1)
    build_dataset(manifest, cfg, tmp_path / "c", workers=4)
    assert digests(tmp_path / "a") == digests(tmp_path / "b") == digests(tmp_path / "c")
    assert (tmp_path / "a" / "manifest.tsv").read_bytes() == (tmp_path / "c" / "manifest.tsv").read_bytes()

    build_dataset(manifest, ImpairmentConfig(master_seed=10), tmp_path / "d", workers=1)
    assert digests(tmp_path / "a") != digests(tmp_path / "d")


def test_unreadable_and_small_images_are_skipped(tmp_path):
    manifest, taxonomy, entries = write_random_manifest(tmp_path / "src", 6, seed=4)
    (tmp_path / "src" / entries[1].path).write_bytes(b"not an image")
    small = write_random_manifest(tmp_path / "small", 1, seed=5, min_side=100, max_side=120)[2][0]
    (tmp_path / "src" / entries[2].path).write_bytes((tmp_path / "small" / small.path).read_bytes())

    result = build_dataset(manifest, ImpairmentConfig(), tmp_path / "out")
    skipped = dict(read_skip_report(tmp_path / "out" / "skipped.tsv"))
    assert set(skipped) == {entries[1].entry_id, entries[2].entry_id}
    assert skipped[entries[1].entry_id].startswith("unreadable")
    assert skipped[entries[2].entry_id] == "image-too-small"
    assert [e.entry_id for e in result.entries] == [e.entry_id for i, e in enumerate(entries) if i not in (1, 2)]
