"""Hybrid cross-validation: KFold per real/seen-fake class, GroupKFold by generator for unseen fakes."""
# Standard import
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

# Third party imports
import numpy as np
from sklearn.model_selection import GroupKFold, KFold

# Local imports
from ._version import ASSIGNMENT_FORMAT_VERSION
from .dataset import ClassTaxonomy, ManifestEntry
from .errors import ManifestParseError, SplitError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitConfig:
    n_folds: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_folds < 2:
            raise SplitError(f"n_folds must be at least 2, got {self.n_folds}")


@dataclass(frozen=True)
class FoldAssignment:
    """Fold of every entry.

    Parameters
    ----------
    n_folds : int
        Number of folds.
    assignment : dict
        entry_id -> fold index in ``[0, n_folds)``.
    seed : int
        Seed the assignment was drawn with.
    """

    n_folds: int
    assignment: Dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def fold_of(self, entry_id: str) -> int:
        try:
            return self.assignment[entry_id]
        except KeyError:
            raise SplitError(f"entry '{entry_id}' has no fold assignment") from None

    def fold_sizes(self) -> List[int]:
        return np.bincount(list(self.assignment.values()), minlength=self.n_folds).tolist()


def assign_folds(entries: Sequence[ManifestEntry], taxonomy: ClassTaxonomy,
                 n_folds: int = 4, seed: int = 0) -> FoldAssignment:
    """Assign every entry to one of ``n_folds`` folds.

    Real and seen-fake entries are split class by class with a shuffled KFold, so every fold
    holds the same generators on both sides. Unseen-fake entries are split with GroupKFold on
    their generator id: the largest generator goes first into the currently lightest fold, and a
    generator never straddles train and test. Entries are sorted by id beforehand, so the result
    does not depend on the manifest row order.

    Parameters
    ----------
    entries : sequence of ManifestEntry
        Manifest records.
    taxonomy : ClassTaxonomy
        Gives the unseen-fake class index.
    n_folds : int, optional
        Number of folds. The default is 4.
    seed : int, optional
        KFold shuffling seed. The default is 0.

    Returns
    -------
    FoldAssignment
        The assignment.

    """
    if n_folds < 2:
        raise SplitError(f"n_folds must be at least 2, got {n_folds}")
    ordered = sorted(entries, key=lambda e: e.entry_id)
    uf_index = taxonomy.uf_index
    assignment: Dict[str, int] = {}

    by_class: Dict[int, List[ManifestEntry]] = {}
    for entry in ordered:
        by_class.setdefault(entry.class_index, []).append(entry)

    for class_index in sorted(by_class):
        if class_index == uf_index:
            continue
        members = by_class[class_index]
        if len(members) < n_folds:
            raise SplitError(f"class {class_index} has {len(members)} entries, fewer than {n_folds} folds",
                             code="class-too-small")
        kfold = KFold(n_splits=n_folds, shuffle=True, random_state=seed)
        for fold, (_, test_idx) in enumerate(kfold.split(np.zeros(len(members)))):
            for i in test_idx:
                assignment[members[i].entry_id] = fold

    uf_members = by_class.get(uf_index, [])
    groups = np.array([e.generator_id for e in uf_members], dtype=object)
    n_groups = len(set(groups.tolist()))
    if n_groups < n_folds:
        raise SplitError(f"{n_groups} unseen-fake generators cannot fill {n_folds} folds",
                         code="insufficient-groups")
    group_kfold = GroupKFold(n_splits=n_folds)
    for fold, (_, test_idx) in enumerate(group_kfold.split(np.zeros(len(uf_members)), groups=groups)):
        for i in test_idx:
            assignment[uf_members[i].entry_id] = fold

    result = FoldAssignment(n_folds, assignment, seed)
    logger.info("assigned %d entries to %d folds, sizes %s", len(assignment), n_folds, result.fold_sizes())
    return result


def fold_view(entries: Sequence[ManifestEntry], assignment: FoldAssignment,
              fold: int) -> Tuple[List[ManifestEntry], List[ManifestEntry]]:
    """Split entries into (train, test) for one fold, keeping the input order."""
    if not 0 <= fold < assignment.n_folds:
        raise SplitError(f"fold must be in [0, {assignment.n_folds}), got {fold}")
    train, test = [], []
    for entry in entries:
        (test if assignment.fold_of(entry.entry_id) == fold else train).append(entry)
    return train, test


def apply_assignment(entries: Sequence[ManifestEntry], assignment: FoldAssignment) -> List[ManifestEntry]:
    return [e.with_fold(assignment.fold_of(e.entry_id)) for e in entries]


def write_assignment(assignment: FoldAssignment, file, comments: Sequence[str] = ()) -> None:
    """Write ``entry_id TAB fold`` lines below a ``#`` header holding n_folds and seed."""
    lines = [f"#psid-assignment {ASSIGNMENT_FORMAT_VERSION}",
             f"#n_folds {assignment.n_folds}",
             f"#seed {assignment.seed}"]
    lines += [c if c.startswith("#") else f"# {c}" for c in comments]
    lines += [f"{entry_id}\t{fold}" for entry_id, fold in sorted(assignment.assignment.items())]
    with open(Path(file), "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(line + "\n" for line in lines))


def read_assignment(file) -> FoldAssignment:
    n_folds, seed = None, 0
    assignment = {}
    with open(Path(file), "r", encoding="utf-8", newline="") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(" ")
                try:
                    if key == "n_folds":
                        n_folds = int(value)
                    elif key == "seed":
                        seed = int(value)
                except ValueError:
                    raise ManifestParseError(f"expected an integer, got {value!r}", line_no, key) from None
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ManifestParseError("expected 'entry_id<TAB>fold'", line_no, "record")
            try:
                assignment[cols[0]] = int(cols[1])
            except ValueError:
                raise ManifestParseError(f"expected an integer, got {cols[1]!r}", line_no, "fold") from None
    if n_folds is None:
        raise ManifestParseError("missing '#n_folds' header", 1, "n_folds")
    bad = [eid for eid, fold in assignment.items() if not 0 <= fold < n_folds]
    if bad:
        raise SplitError(f"{len(bad)} entries have a fold outside [0, {n_folds}), e.g. '{bad[0]}'")
    return FoldAssignment(n_folds, assignment, seed)
