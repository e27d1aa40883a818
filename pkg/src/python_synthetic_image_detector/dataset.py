"""Shared data model: generator metadata, class taxonomy and the manifest file format."""
# Standard import
import logging
from dataclasses import dataclass, field, replace, asdict
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

# Third party imports
import pandas as pd

# Local imports
from ._version import MANIFEST_FORMAT_VERSION
from .errors import ManifestParseError, SchemaError

logger = logging.getLogger(__name__)

ABSENT = "-"
FORMAT_TAG = "@psid-manifest"
RECORD_COLUMNS = ("entry_id", "path", "class_index", "generator_id", "category", "source", "fold")


class GeneratorFamily(str, Enum):
    GAN = "GAN"
    DIFFUSION = "Diffusion"
    OTHER = "Other"


class Manipulation(str, Enum):
    FULL = "Full"
    PARTIAL = "Partial"


class ClassRole(str, Enum):
    REAL = "real"
    SEEN = "seen"
    UNSEEN = "uf"


def _check_token(value: str, what: str, allow_empty: bool = False) -> None:
    if not isinstance(value, str):
        raise SchemaError(f"{what} must be a string, got {type(value).__name__}")
    if not allow_empty and value == "":
        raise SchemaError(f"{what} must not be empty")
    if "\t" in value or "\n" in value or "\r" in value:
        raise SchemaError(f"{what} {value!r} contains a tab or a line break")


@dataclass(frozen=True)
class GeneratorInfo:
    """Metadata of one generative model.

    Parameters
    ----------
    id : str
        Unique token, never the reserved ``-``.
    family : GeneratorFamily
        GAN, Diffusion or Other.
    manipulation : Manipulation
        Full (whole image synthesized) or Partial (inpainting, face swap...).
    seen : bool
        Whether the generator's images appear in training under their own class.
    """

    id: str
    family: GeneratorFamily = GeneratorFamily.GAN
    manipulation: Manipulation = Manipulation.FULL
    seen: bool = True

    def __post_init__(self):
        _check_token(self.id, "generator id")
        if self.id == ABSENT:
            raise SchemaError(f"generator id '{ABSENT}' is reserved for absent values")
        object.__setattr__(self, "family", GeneratorFamily(self.family))
        object.__setattr__(self, "manipulation", Manipulation(self.manipulation))
        object.__setattr__(self, "seen", bool(self.seen))


@dataclass(frozen=True)
class ClassInfo:
    name: str
    role: ClassRole

    def __post_init__(self):
        _check_token(self.name, "class name")
        object.__setattr__(self, "role", ClassRole(self.role))


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class set {real, seen-fake 1..K, unseen-fake} with its index contract.

    Parameters
    ----------
    classes : tuple of ClassInfo
        Ordered class descriptors, exactly one with role ``real`` and one with role ``uf``.
    generators : tuple of GeneratorInfo
        Every generator the manifest may reference, seen and unseen.
    seen_generator_map : dict
        Generator id -> class index, one entry per seen generator, targets are seen classes.

    Attributes
    ----------
    real_index : int
        Index of the real class.
    uf_index : int
        Index of the unseen-fake class.
    """

    classes: Tuple[ClassInfo, ...]
    generators: Tuple[GeneratorInfo, ...] = ()
    seen_generator_map: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "seen_generator_map", dict(self.seen_generator_map))

        roles = [c.role for c in self.classes]
        if roles.count(ClassRole.REAL) != 1:
            raise SchemaError(f"taxonomy needs exactly one real class, found {roles.count(ClassRole.REAL)}")
        if roles.count(ClassRole.UNSEEN) != 1:
            raise SchemaError(f"taxonomy needs exactly one unseen-fake class, found {roles.count(ClassRole.UNSEEN)}")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise SchemaError("class names must be unique")

        ids = [g.id for g in self.generators]
        if len(set(ids)) != len(ids):
            raise SchemaError("generator ids must be unique within a taxonomy")
        by_id = {g.id: g for g in self.generators}
        for gen_id, index in self.seen_generator_map.items():
            if gen_id not in by_id:
                raise SchemaError(f"seen generator map references unknown generator '{gen_id}'")
            if not by_id[gen_id].seen:
                raise SchemaError(f"generator '{gen_id}' is unseen and cannot own a seen-fake class")
            if not 0 <= index < len(self.classes) or self.classes[index].role is not ClassRole.SEEN:
                raise SchemaError(f"generator '{gen_id}' maps to {index}, which is not a seen-fake class")
        for gen in self.generators:
            if gen.seen and gen.id not in self.seen_generator_map:
                raise SchemaError(f"seen generator '{gen.id}' has no seen-fake class")

    @property
    def real_index(self) -> int:
        return next(i for i, c in enumerate(self.classes) if c.role is ClassRole.REAL)

    @property
    def uf_index(self) -> int:
        return next(i for i, c in enumerate(self.classes) if c.role is ClassRole.UNSEEN)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def k_seen(self) -> int:
        return sum(c.role is ClassRole.SEEN for c in self.classes)

    @property
    def class_names(self) -> List[str]:
        return [c.name for c in self.classes]

    @property
    def seen_indices(self) -> List[int]:
        return [i for i, c in enumerate(self.classes) if c.role is ClassRole.SEEN]

    def generator(self, generator_id: str) -> Optional[GeneratorInfo]:
        for gen in self.generators:
            if gen.id == generator_id:
                return gen
        return None

    def role(self, class_index: int) -> ClassRole:
        return self.classes[class_index].role


def make_taxonomy(generators: Sequence[GeneratorInfo], real_name: str = "real",
                  uf_name: str = "unseen_fake") -> ClassTaxonomy:
    """Build the canonical taxonomy for a generator list.

    Class 0 is the real class, then one class per seen generator in the given order, and the last
    class collects every unseen generator. Five seen generators give the seven-class scheme.

    Parameters
    ----------
    generators : sequence of GeneratorInfo
        Seen and unseen generators.
    real_name : str, optional
        Name of the real class. The default is 'real'.
    uf_name : str, optional
        Name of the unseen-fake class. The default is 'unseen_fake'.

    Returns
    -------
    ClassTaxonomy
        The taxonomy, ``real_index == 0`` and ``uf_index == K_seen + 1``.

    """
    classes = [ClassInfo(real_name, ClassRole.REAL)]
    seen_map = {}
    for gen in generators:
        if gen.seen:
            seen_map[gen.id] = len(classes)
            classes.append(ClassInfo(gen.id, ClassRole.SEEN))
    classes.append(ClassInfo(uf_name, ClassRole.UNSEEN))
    return ClassTaxonomy(tuple(classes), tuple(generators), seen_map)


@dataclass(frozen=True)
class ManifestEntry:
    """One image record of a manifest.

    Parameters
    ----------
    entry_id : str
        Caller supplied unique id.
    path : str
        Image path relative to the manifest's directory.
    class_index : int
        Index into the taxonomy.
    generator_id : str, optional
        Generator that produced the image, None for real images.
    category : str
        Free tag (faces, vehicles, ...).
    source : str
        Free origin tag (source dataset or generator run).
    fold : int, optional
        Cross-validation fold, None when unassigned.
    """

    entry_id: str
    path: str
    class_index: int
    generator_id: Optional[str] = None
    category: str = ""
    source: str = ""
    fold: Optional[int] = None

    def with_fold(self, fold: Optional[int]) -> "ManifestEntry":
        return replace(self, fold=fold)


@dataclass(frozen=True)
class Violation:
    entry_id: str
    rule: str
    detail: str = ""


def validate_manifest(entries: Iterable[ManifestEntry], taxonomy: ClassTaxonomy) -> List[Violation]:
    """Check every entry against the manifest rules.

    Violations are returned as data. The set of violations does not depend on the entry order:
    a duplicated id is reported on every occurrence.

    Parameters
    ----------
    entries : iterable of ManifestEntry
        Records to check.
    taxonomy : ClassTaxonomy
        Taxonomy the records index into.

    Returns
    -------
    list of Violation
        Empty when the manifest is valid. Rules: ``duplicate-entry-id``,
        ``class-index-out-of-range``, ``real-with-generator``, ``fake-without-generator``,
        ``unknown-generator``, ``uf-generator-seen``, ``seen-generator-mismatch``,
        ``invalid-fold``.

    """
    entries = list(entries)
    counts: Dict[str, int] = {}
    for entry in entries:
        counts[entry.entry_id] = counts.get(entry.entry_id, 0) + 1

    real_index, uf_index = taxonomy.real_index, taxonomy.uf_index
    violations = []
    for entry in entries:
        eid = entry.entry_id
        if counts[eid] > 1:
            violations.append(Violation(eid, "duplicate-entry-id", f"appears {counts[eid]} times"))
        if entry.fold is not None and entry.fold < 0:
            violations.append(Violation(eid, "invalid-fold", f"fold {entry.fold}"))
        if not 0 <= entry.class_index < taxonomy.n_classes:
            violations.append(Violation(eid, "class-index-out-of-range", f"class {entry.class_index}"))
            continue

        if entry.class_index == real_index:
            if entry.generator_id is not None:
                violations.append(Violation(eid, "real-with-generator", entry.generator_id))
            continue
        if entry.generator_id is None:
            violations.append(Violation(eid, "fake-without-generator", f"class {entry.class_index}"))
            continue
        gen = taxonomy.generator(entry.generator_id)
        if gen is None:
            violations.append(Violation(eid, "unknown-generator", entry.generator_id))
            continue
        if entry.class_index == uf_index:
            if gen.seen:
                violations.append(Violation(eid, "uf-generator-seen", gen.id))
        elif taxonomy.seen_generator_map.get(gen.id) != entry.class_index:
            violations.append(Violation(eid, "seen-generator-mismatch",
                                        f"{gen.id} is not mapped to class {entry.class_index}"))
    return violations


def write_manifest(taxonomy: ClassTaxonomy, entries: Sequence[ManifestEntry], file,
                   comments: Sequence[str] = ()) -> None:
    """Write a manifest as tab-separated UTF-8 text with LF newlines.

    Parameters
    ----------
    taxonomy : ClassTaxonomy
        Written as the header block.
    entries : sequence of ManifestEntry
        Written one per line, in the given order.
    file : str or Path
        Destination path.
    comments : sequence of str, optional
        Extra ``#`` lines (reproducibility header) placed after the taxonomy block.

    Returns
    -------
    None.

    """
    lines = [f"{FORMAT_TAG}\t{MANIFEST_FORMAT_VERSION}"]
    for index, cls in enumerate(taxonomy.classes):
        lines.append(f"@class\t{index}\t{cls.name}\t{cls.role.value}")
    for gen in taxonomy.generators:
        mapped = taxonomy.seen_generator_map.get(gen.id)
        lines.append(f"@generator\t{gen.id}\t{gen.family.value}\t{gen.manipulation.value}\t"
                     f"{'seen' if gen.seen else 'unseen'}\t{ABSENT if mapped is None else mapped}")
    for comment in comments:
        comment = comment if comment.startswith("#") else f"# {comment}"
        _check_token(comment, "comment line")
        lines.append(comment)
    lines.append("\t".join(RECORD_COLUMNS))

    for entry in entries:
        _check_token(entry.entry_id, "entry_id")
        _check_token(entry.path, "path")
        _check_token(entry.category, "category", allow_empty=True)
        _check_token(entry.source, "source", allow_empty=True)
        if not 0 <= entry.class_index < taxonomy.n_classes:
            raise SchemaError(f"entry '{entry.entry_id}': unknown class index {entry.class_index}")
        if entry.generator_id == ABSENT:
            raise SchemaError(f"entry '{entry.entry_id}': generator id '{ABSENT}' is reserved")
        if entry.category == ABSENT or entry.source == ABSENT:
            raise SchemaError(f"entry '{entry.entry_id}': '{ABSENT}' is reserved for absent values")
        lines.append("\t".join([entry.entry_id, entry.path, str(entry.class_index),
                                ABSENT if entry.generator_id is None else entry.generator_id,
                                entry.category, entry.source,
                                ABSENT if entry.fold is None else str(entry.fold)]))

    path = Path(file)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    logger.debug("wrote %d entries to %s", len(entries), path)


def _parse_int(text: str, line: int, field_name: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ManifestParseError(f"expected an integer, got {text!r}", line, field_name) from None


def read_manifest(file) -> Tuple[ClassTaxonomy, List[ManifestEntry]]:
    """Read a manifest written by :func:`write_manifest`.

    Parameters
    ----------
    file : str or Path
        Manifest path.

    Returns
    -------
    taxonomy : ClassTaxonomy
        Taxonomy from the header block.
    entries : list of ManifestEntry
        Records in file order.

    """
    with open(file, "r", encoding="utf-8", newline="") as f:
        text = f.read()
    rows = text.split("\n")
    if rows and rows[-1] == "":
        rows.pop()

    if not rows:
        raise ManifestParseError("empty file", 1, "format")
    tag = rows[0].split("\t")
    if len(tag) != 2 or tag[0] != FORMAT_TAG:
        raise ManifestParseError(f"expected '{FORMAT_TAG}<TAB>version'", 1, "format")
    version = _parse_int(tag[1], 1, "format")
    if version != MANIFEST_FORMAT_VERSION:
        raise ManifestParseError(f"unsupported format version {version}", 1, "format")

    classes: Dict[int, ClassInfo] = {}
    generators: List[GeneratorInfo] = []
    seen_map: Dict[str, int] = {}
    line_no = 1
    body_start = None
    for offset, row in enumerate(rows[1:]):
        line_no = offset + 2
        if row.startswith("#"):
            continue
        cols = row.split("\t")
        if cols[0] == "@class":
            if len(cols) != 4:
                raise ManifestParseError("@class needs index, name and role", line_no, "@class")
            index = _parse_int(cols[1], line_no, "class index")
            if index in classes:
                raise ManifestParseError(f"duplicate class index {index}", line_no, "class index")
            try:
                classes[index] = ClassInfo(cols[2], ClassRole(cols[3]))
            except ValueError as err:
                raise ManifestParseError(str(err), line_no, "class role") from None
        elif cols[0] == "@generator":
            if len(cols) != 6:
                raise ManifestParseError("@generator needs id, family, manipulation, seen flag and class",
                                         line_no, "@generator")
            if cols[4] not in ("seen", "unseen"):
                raise ManifestParseError(f"expected seen/unseen, got {cols[4]!r}", line_no, "seen")
            try:
                generators.append(GeneratorInfo(cols[1], GeneratorFamily(cols[2]), Manipulation(cols[3]),
                                                cols[4] == "seen"))
            except ValueError as err:
                raise ManifestParseError(str(err), line_no, "@generator") from None
            if cols[5] != ABSENT:
                seen_map[cols[1]] = _parse_int(cols[5], line_no, "generator class")
        elif tuple(cols) == RECORD_COLUMNS:
            body_start = offset + 1
            break
        else:
            raise ManifestParseError(f"unexpected header line {row!r}", line_no, "header")
    if body_start is None:
        raise ManifestParseError("missing record column line", line_no, "header")

    if sorted(classes) != list(range(len(classes))):
        raise SchemaError(f"class indices must be contiguous from 0, got {sorted(classes)}")
    taxonomy = ClassTaxonomy(tuple(classes[i] for i in range(len(classes))), tuple(generators), seen_map)

    entries = []
    for offset, row in enumerate(rows[body_start + 1:]):
        line_no = body_start + offset + 2
        cols = row.split("\t")
        if len(cols) != len(RECORD_COLUMNS):
            raise ManifestParseError(f"expected {len(RECORD_COLUMNS)} fields, got {len(cols)}", line_no, "record")
        class_index = _parse_int(cols[2], line_no, "class_index")
        if not 0 <= class_index < taxonomy.n_classes:
            raise SchemaError(f"line {line_no}: unknown class index {class_index}")
        entries.append(ManifestEntry(
            entry_id=cols[0], path=cols[1], class_index=class_index,
            generator_id=None if cols[3] == ABSENT else cols[3],
            category=cols[4], source=cols[5],
            fold=None if cols[6] == ABSENT else _parse_int(cols[6], line_no, "fold")))
    return taxonomy, entries


def entries_dataframe(entries: Sequence[ManifestEntry]) -> pd.DataFrame:
    return pd.DataFrame([asdict(e) for e in entries], columns=list(RECORD_COLUMNS))


def summarize_manifest(entries: Sequence[ManifestEntry], taxonomy: ClassTaxonomy) -> pd.DataFrame:
    """Composition table of a manifest.

    Counts per class, real/fake label, generator family, manipulation type, category and source.

    Returns
    -------
    pd.DataFrame
        Columns ``group``, ``key``, ``count``; groups appear in the order listed above and keys
        are sorted within a group (classes by index).

    """
    df = entries_dataframe(entries)
    if df.empty:
        return pd.DataFrame(columns=["group", "key", "count"])
    names = taxonomy.class_names
    families = {g.id: g.family.value for g in taxonomy.generators}
    manipulations = {g.id: g.manipulation.value for g in taxonomy.generators}
    df["class"] = df["class_index"].map(lambda i: names[i])
    df["label"] = df["class_index"].map(lambda i: "real" if i == taxonomy.real_index else "fake")
    df["family"] = df["generator_id"].map(lambda g: families.get(g, "none") if g is not None else "none")
    df["manipulation"] = df["generator_id"].map(
        lambda g: manipulations.get(g, "none") if g is not None else "none")

    tables = []
    class_counts = df.groupby("class_index").size()
    tables.append(pd.DataFrame({"group": "class", "key": [names[i] for i in class_counts.index],
                                "count": class_counts.values}))
    for group in ("label", "family", "manipulation", "category", "source"):
        counts = df.groupby(group).size().sort_index()
        tables.append(pd.DataFrame({"group": group, "key": counts.index.astype(str), "count": counts.values}))
    summary = pd.concat(tables, ignore_index=True)
    summary["count"] = summary["count"].astype(int)
    return summary


def taxonomy_to_dict(taxonomy: ClassTaxonomy) -> dict:
    """Plain-type form of a taxonomy, embedded in checkpoints."""
    return {
        "classes": [[c.name, c.role.value] for c in taxonomy.classes],
        "generators": [[g.id, g.family.value, g.manipulation.value, g.seen] for g in taxonomy.generators],
        "seen_generator_map": dict(taxonomy.seen_generator_map),
    }


def taxonomy_from_dict(data: dict) -> ClassTaxonomy:
    return ClassTaxonomy(
        tuple(ClassInfo(name, ClassRole(role)) for name, role in data["classes"]),
        tuple(GeneratorInfo(gid, GeneratorFamily(fam), Manipulation(man), bool(seen))
              for gid, fam, man, seen in data["generators"]),
        {k: int(v) for k, v in data["seen_generator_map"].items()})
