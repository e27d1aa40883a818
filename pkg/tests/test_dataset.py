"""Taxonomy, manifest format and manifest validation."""
from dataclasses import replace

import numpy as np
import pytest

from python_synthetic_image_detector import dataset
from python_synthetic_image_detector.errors import ManifestParseError, SchemaError


def seven_class_taxonomy():
    generators = [dataset.GeneratorInfo(f"g{i}", seen=i < 5) for i in range(7)]
    return dataset.make_taxonomy(generators)


def test_make_taxonomy_index_contract():
    taxonomy = seven_class_taxonomy()
    assert taxonomy.n_classes == 7
    assert taxonomy.k_seen == 5
    assert taxonomy.real_index == 0
    assert taxonomy.uf_index == 6
    assert taxonomy.class_names == ["real", "g0", "g1", "g2", "g3", "g4", "unseen_fake"]
    assert taxonomy.seen_generator_map == {"g0": 1, "g1": 2, "g2": 3, "g3": 4, "g4": 5}
    assert taxonomy.role(6) is dataset.ClassRole.UNSEEN


def test_taxonomy_rejects_unseen_generator_with_class():
    classes = (dataset.ClassInfo("real", "real"), dataset.ClassInfo("a", "seen"), dataset.ClassInfo("uf", "uf"))
    with pytest.raises(SchemaError):
        dataset.ClassTaxonomy(classes, (dataset.GeneratorInfo("a", seen=False),), {"a": 1})
    with pytest.raises(SchemaError):
        dataset.ClassTaxonomy(classes[:1] + classes[1:2], (), {})


def test_manifest_write_then_read(tmp_path):
    taxonomy = seven_class_taxonomy()
    entries = [dataset.ManifestEntry("r0", "images/r0.png", 0, None, "faces", "ffhq"),
               dataset.ManifestEntry("f0", "images/f0.png", 1, "g0", "", "", fold=2),
               dataset.ManifestEntry("u0", "images/u0.png", 6, "g6", "art", "laion")]
    path = tmp_path / "manifest.tsv"
    dataset.write_manifest(taxonomy, entries, path, comments=["psid test header"])
    text = path.read_text(encoding="utf-8")
    assert text.startswith("@psid-manifest\t1\n")
    assert "# psid test header\n" in text
    assert "\r" not in text

    taxonomy_back, entries_back = dataset.read_manifest(path)
    assert dataset.taxonomy_to_dict(taxonomy_back) == dataset.taxonomy_to_dict(taxonomy)
    assert entries_back == entries


def test_manifest_rejects_tabs_and_reserved_tokens(tmp_path):
    taxonomy = seven_class_taxonomy()
    with pytest.raises(SchemaError):
        dataset.write_manifest(taxonomy, [dataset.ManifestEntry("a\tb", "x.png", 0)], tmp_path / "m.tsv")
    with pytest.raises(SchemaError):
        dataset.write_manifest(taxonomy, [dataset.ManifestEntry("a", "x.png", 0, category="-")], tmp_path / "m.tsv")
    with pytest.raises(SchemaError):
        dataset.GeneratorInfo("-")


def test_read_manifest_names_line_and_field(tmp_path):
    taxonomy = seven_class_taxonomy()
    path = tmp_path / "manifest.tsv"
    dataset.write_manifest(taxonomy, [dataset.ManifestEntry("r0", "r0.png", 0)], path)
    lines = path.read_text(encoding="utf-8").split("\n")
    lines[-2] = "r0\tr0.png\tzero\t-\t\t\t-"
    path.write_text("\n".join(lines), encoding="utf-8")
    with pytest.raises(ManifestParseError) as info:
        dataset.read_manifest(path)
    assert info.value.line == len(lines) - 1
    assert info.value.field == "class_index"

    path.write_text("not a manifest\n", encoding="utf-8")
    with pytest.raises(ManifestParseError) as info:
        dataset.read_manifest(path)
    assert info.value.line == 1


def test_validate_manifest_rules():
    taxonomy = seven_class_taxonomy()
    entries = [dataset.ManifestEntry("ok_real", "a", 0),
               dataset.ManifestEntry("ok_seen", "a", 1, "g0"),
               dataset.ManifestEntry("ok_uf", "a", 6, "g5"),
               dataset.ManifestEntry("dup", "a", 0),
               dataset.ManifestEntry("dup", "a", 0),
               dataset.ManifestEntry("bad_fold", "a", 0, fold=-1),
               dataset.ManifestEntry("out_of_range", "a", 9),
               dataset.ManifestEntry("real_gen", "a", 0, "g0"),
               dataset.ManifestEntry("fake_nogen", "a", 2),
               dataset.ManifestEntry("unknown_gen", "a", 2, "zz"),
               dataset.ManifestEntry("uf_seen", "a", 6, "g1"),
               dataset.ManifestEntry("mismatch", "a", 2, "g0")]
    found = {(v.entry_id, v.rule) for v in dataset.validate_manifest(entries, taxonomy)}
    assert found == {("dup", "duplicate-entry-id"),
                     ("bad_fold", "invalid-fold"),
                     ("out_of_range", "class-index-out-of-range"),
                     ("real_gen", "real-with-generator"),
                     ("fake_nogen", "fake-without-generator"),
                     ("unknown_gen", "unknown-generator"),
                     ("uf_seen", "uf-generator-seen"),
                     ("mismatch", "seen-generator-mismatch")}
    duplicates = [v for v in dataset.validate_manifest(entries, taxonomy) if v.rule == "duplicate-entry-id"]
    assert len(duplicates) == 2
    assert dataset.validate_manifest(entries[:3], taxonomy) == []


def test_validation_ignores_entry_order():
    taxonomy = seven_class_taxonomy()
    entries = [dataset.ManifestEntry("x", "a", 0, "g0"), dataset.ManifestEntry("x", "a", 2),
               dataset.ManifestEntry("y", "a", 6, "g2")]
    forward = sorted((v.entry_id, v.rule) for v in dataset.validate_manifest(entries, taxonomy))
    backward = sorted((v.entry_id, v.rule) for v in dataset.validate_manifest(entries[::-1], taxonomy))
    assert forward == backward


def test_summarize_manifest_counts():
    generators = [dataset.GeneratorInfo("a", "GAN"), dataset.GeneratorInfo("b", "Diffusion", "Partial", seen=False)]
    taxonomy = dataset.make_taxonomy(generators)
    entries = [dataset.ManifestEntry("r0", "p", 0, None, "faces", "coco"),
               dataset.ManifestEntry("r1", "p", 0, None, "cars", "coco"),
               dataset.ManifestEntry("a0", "p", 1, "a", "faces", "a"),
               dataset.ManifestEntry("b0", "p", 2, "b", "faces", "b")]
    summary = dataset.summarize_manifest(entries, taxonomy)
    counts = {(g, k): c for g, k, c in summary.itertuples(index=False)}
    assert counts[("class", "real")] == 2
    assert counts[("label", "fake")] == 2
    assert counts[("family", "Diffusion")] == 1
    assert counts[("family", "none")] == 2
    assert counts[("manipulation", "Partial")] == 1
    assert counts[("category", "faces")] == 3
    assert summary[summary["group"] == "class"]["count"].sum() == len(entries)


ALPHABET = list("abcdefghijkXYZ0123456789_.é ü/")


def random_token(rng, low=1, high=12):
    return "".join(rng.choice(ALPHABET, size=int(rng.integers(low, high + 1))))


def random_valid_manifest(rng, n_entries):
    n_unseen = int(rng.integers(1, 4))
    families = list(dataset.GeneratorFamily)
    generators = [dataset.GeneratorInfo(f"s{i}", families[i % len(families)]) for i in range(3)]
    generators += [dataset.GeneratorInfo(f"u{i}", seen=False) for i in range(n_unseen)]
    taxonomy = dataset.make_taxonomy(generators)
    entries = []
    for i in range(n_entries):
        c = int(rng.integers(0, taxonomy.n_classes))
        if c == taxonomy.real_index:
            gen = None
        elif c == taxonomy.uf_index:
            gen = f"u{int(rng.integers(0, n_unseen))}"
        else:
            gen = taxonomy.class_names[c]
        fold = None if rng.random() < 0.3 else int(rng.integers(0, 6))
        entries.append(dataset.ManifestEntry(f"e{i}_{random_token(rng, 0, 6)}", f"images/{random_token(rng)}.png", c,
                                             gen, random_token(rng, 0, 8), random_token(rng, 0, 8), fold))
    return taxonomy, entries


def test_random_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    taxonomy, entries = random_valid_manifest(rng, 1000)
    assert dataset.validate_manifest(entries, taxonomy) == []
    path = tmp_path / "manifest.tsv"
    dataset.write_manifest(taxonomy, entries, path, comments=["round trip"])
    taxonomy_back, entries_back = dataset.read_manifest(path)
    assert dataset.taxonomy_to_dict(taxonomy_back) == dataset.taxonomy_to_dict(taxonomy)
    assert entries_back == entries


def test_header_only_manifest_round_trip(tmp_path):
    taxonomy = seven_class_taxonomy()
    path = tmp_path / "empty.tsv"
    dataset.write_manifest(taxonomy, [], path)
    taxonomy_back, entries_back = dataset.read_manifest(path)
    assert entries_back == []
    assert dataset.taxonomy_to_dict(taxonomy_back) == dataset.taxonomy_to_dict(taxonomy)
    assert dataset.validate_manifest(entries_back, taxonomy_back) == []


FAULTS = ("duplicate-entry-id", "invalid-fold", "class-index-out-of-range", "real-with-generator",
          "fake-without-generator", "unknown-generator", "uf-generator-seen", "seen-generator-mismatch")


def inject(entry, rule, taxonomy, rng, other):
    """Copy of a valid entry breaking exactly ``rule``."""
    seen = sorted(taxonomy.seen_generator_map)
    if rule == "duplicate-entry-id":
        return replace(entry, entry_id=other.entry_id)
    if rule == "invalid-fold":
        return replace(entry, fold=-int(rng.integers(1, 5)))
    if rule == "class-index-out-of-range":
        return replace(entry, class_index=taxonomy.n_classes + int(rng.integers(0, 3)), generator_id=None)
    if rule == "real-with-generator":
        return replace(entry, class_index=taxonomy.real_index, generator_id=str(rng.choice(seen)))
    if rule == "fake-without-generator":
        return replace(entry, class_index=int(rng.choice(taxonomy.seen_indices)), generator_id=None)
    if rule == "unknown-generator":
        return replace(entry, class_index=int(rng.choice(taxonomy.seen_indices)), generator_id="nobody")
    if rule == "uf-generator-seen":
        return replace(entry, class_index=taxonomy.uf_index, generator_id=str(rng.choice(seen)))
    gen = str(rng.choice(seen))
    wrong = [c for c in taxonomy.seen_indices if c != taxonomy.seen_generator_map[gen]]
    return replace(entry, class_index=int(rng.choice(wrong)), generator_id=gen)


@pytest.mark.parametrize("seed", range(10))
def test_validation_reports_exactly_the_injected_faults(seed):
    rng = np.random.default_rng(seed)
    taxonomy, entries = random_valid_manifest(rng, 200)
    rules = [FAULTS[int(k)] for k in rng.integers(0, len(FAULTS), size=int(rng.integers(1, 12)))]
    slots = rng.choice(len(entries), size=2 * len(rules), replace=False)
    expected = set()
    for rule, target, source in zip(rules, slots[::2], slots[1::2]):
        entries[target] = inject(entries[target], rule, taxonomy, rng, entries[source])
        expected.add((entries[target].entry_id, rule))
    violations = dataset.validate_manifest(entries, taxonomy)
    assert {(v.entry_id, v.rule) for v in violations} == expected
    assert len(violations) == len(rules) + rules.count("duplicate-entry-id")
