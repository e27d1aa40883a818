"""Shared fixtures: small toy datasets and random-size image manifests written to temporary dirs."""
import numpy as np
import pytest
from PIL import Image

from python_synthetic_image_detector import dataset, toy_data


@pytest.fixture(scope="session")
def small_spec():
    return toy_data.ToySpec(images_per_class=8, image_size=32)


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory, small_spec):
    out = tmp_path_factory.mktemp("toy")
    toy_data.synth_dataset(small_spec, out)
    return out


def write_random_manifest(root, n_images, seed=0, min_side=160, max_side=400):
    """Random-size PNGs under root/images plus root/manifest.tsv, reals and three generators."""
    rng = np.random.default_rng(seed)
    generators = [dataset.GeneratorInfo("ganA"), dataset.GeneratorInfo("diffB", "Diffusion"),
                  dataset.GeneratorInfo("otherC", "Other", "Partial", seen=False)]
    taxonomy = dataset.make_taxonomy(generators)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_images):
        width, height = rng.integers(min_side, max_side + 1, size=2)
        pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        path = f"images/img_{i:04d}.png"
        Image.fromarray(pixels).save(root / path)
        kind = i % 4
        if kind == 0:
            entries.append(dataset.ManifestEntry(f"img_{i:04d}", path, 0, None, "faces", "camera"))
        elif kind == 3:
            entries.append(dataset.ManifestEntry(f"img_{i:04d}", path, taxonomy.uf_index, "otherC", "art", "otherC"))
        else:
            gen = generators[kind - 1]
            entries.append(dataset.ManifestEntry(f"img_{i:04d}", path, taxonomy.seen_generator_map[gen.id],
                                                 gen.id, "animals", gen.id))
    dataset.write_manifest(taxonomy, entries, root / "manifest.tsv")
    return root / "manifest.tsv", taxonomy, entries


@pytest.fixture
def random_manifest(tmp_path):
    return write_random_manifest(tmp_path / "src", 24, seed=3)
