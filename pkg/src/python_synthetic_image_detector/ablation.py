"""Six-configuration ablation: binary vs multi-class head, with and without FSR and the UF class."""
# Standard import
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

# Third party imports
import numpy as np
import pandas as pd

# Local imports
from .dataset import read_manifest
from .errors import DetectorError
from .metrics import evaluate_fold
from .models import HeadMode, ModelConfig
from .splits import FoldAssignment, fold_view
from .training import TrainConfig, train_fold

logger = logging.getLogger(__name__)

ABLATION_CSV = "ablation.csv"
ABLATION_TEXT = "ablation.txt"


@dataclass(frozen=True)
class AblationRow:
    """One configuration of the ablation.

    Parameters
    ----------
    method : str
        Display name.
    head_mode : HeadMode
        Binary or multi-class head.
    fsr : bool
        Filter stride reduction.
    use_uf : bool
        Train the unseen-fake class.
    reference : float
        Reference balanced accuracy (%) at full scale, shown for comparison only.
    """

    method: str
    head_mode: HeadMode
    fsr: bool
    use_uf: bool
    reference: float

    @property
    def slug(self) -> str:
        return "-".join([self.head_mode.value] + (["fsr"] if self.fsr else []) + (["uf"] if self.use_uf else []))


ABLATION_ROWS = (
    AblationRow("Binary-class", HeadMode.BINARY, False, False, 78.21),
    AblationRow("Binary-class + FSR", HeadMode.BINARY, True, False, 81.30),
    AblationRow("Multi-class", HeadMode.MULTICLASS, False, False, 83.12),
    AblationRow("Multi-class + UF class", HeadMode.MULTICLASS, False, True, 84.98),
    AblationRow("Multi-class + FSR", HeadMode.MULTICLASS, True, False, 85.56),
    AblationRow("Multi-class + FSR + UF class", HeadMode.MULTICLASS, True, True, 87.62),
)


def run_ablation(manifest, assignment: FoldAssignment, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 seed: int = None, out_dir=None, folds: Optional[Iterable[int]] = None,
                 comments: Sequence[str] = (), rows: Sequence[AblationRow] = ABLATION_ROWS) -> pd.DataFrame:
    """Train and evaluate every ablation row on every fold, sequentially.

    Parameters
    ----------
    manifest : str or Path
        Manifest of the (impaired) dataset; image paths are relative to its directory.
    assignment : FoldAssignment
        Hybrid cross-validation folds.
    model_cfg : ModelConfig
        Base architecture; head and FSR are set per row.
    train_cfg : TrainConfig
        Optimization settings shared by every row.
    seed : int, optional
        Overrides ``train_cfg.seed``. The default is None.
    out_dir : str or Path, optional
        Receives ``ablation.csv``, ``ablation.txt`` and one checkpoint directory per row.
        The default is None (nothing written).
    folds : iterable of int, optional
        Folds to run. The default is every fold.
    comments : sequence of str, optional
        Reproducibility header written above every artifact.
    rows : sequence of AblationRow, optional
        Configurations. The default is the six-row table.

    Returns
    -------
    pd.DataFrame
        One line per row in order: configuration, per-fold and mean binary balanced accuracy,
        seen and unseen balanced accuracy, reference value and status (``ok`` or ``failed: ...``).

    """
    manifest = Path(manifest)
    taxonomy, entries = read_manifest(manifest)
    image_root = manifest.parent
    if seed is not None:
        train_cfg = replace(train_cfg, seed=seed)
    folds = list(range(assignment.n_folds)) if folds is None else list(folds)
    out_dir = None if out_dir is None else Path(out_dir)
    header = [c if c.startswith("#") else f"# {c}" for c in comments]

    lines = []
    for row in rows:
        cfg = model_cfg.with_head(taxonomy, row.head_mode, fsr=row.fsr)
        scores, seen, unseen = {}, [], []
        status = "ok"
        logger.info("ablation row '%s'", row.method)
        try:
            for fold in folds:
                train, test = fold_view(entries, assignment, fold)
                result = train_fold(train, taxonomy, cfg, train_cfg, fold, image_root, use_uf=row.use_uf,
                                    out_dir=None if out_dir is None else out_dir / row.slug, comments=header)
                report = evaluate_fold(result.model, test, taxonomy, image_root, fold=fold,
                                       batch_size=train_cfg.batch_size)
                scores[fold] = report.balanced_accuracy
                seen.append(report.seen_balanced_accuracy)
                unseen.append(report.unseen_balanced_accuracy)
        except (DetectorError, ValueError) as err:
            status = f"failed: {err}"
            logger.error("ablation row '%s' failed: %s", row.method, err)

        line = {'method': row.method, 'head_mode': row.head_mode.value, 'fsr': row.fsr, 'use_uf': row.use_uf}
        line.update({f'fold_{fold}': scores.get(fold, np.nan) for fold in folds})
        complete = status == "ok"
        line['balanced_accuracy'] = float(np.mean(list(scores.values()))) if complete else np.nan
        line['seen_balanced_accuracy'] = _nanmean(seen) if complete else np.nan
        line['unseen_balanced_accuracy'] = _nanmean(unseen) if complete else np.nan
        line['reference_percent'] = row.reference
        line['status'] = status
        lines.append(line)

    table = pd.DataFrame(lines)
    if out_dir is not None:
        write_ablation(table, out_dir, header)
    return table


def _nanmean(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.nanmean(values)) if np.isfinite(values).any() else np.nan


def write_ablation(table: pd.DataFrame, out_dir, comments: Sequence[str] = ()) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = "".join(c + "\n" for c in comments)
    with open(out_dir / ABLATION_CSV, "w", encoding="utf-8", newline="\n") as f:
        f.write(header)
        table.to_csv(f, index=False)
    with open(out_dir / ABLATION_TEXT, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + format_ablation_table(table))


def read_ablation(path) -> pd.DataFrame:
    return pd.read_csv(Path(path), comment="#")


def format_ablation_table(table: pd.DataFrame) -> str:
    """Fixed-width text rendering, balanced accuracies in percent."""
    def pct(value):
        return "   n/a" if pd.isna(value) else f"{100 * value:6.2f}"

    width = max(len("Method"), *(len(m) for m in table['method']))
    lines = [f"{'Method':<{width}}  Bal.Acc    Seen  Unseen  Reference  Status",
             "-" * (width + 46)]
    for r in table.itertuples(index=False):
        lines.append(f"{r.method:<{width}}  {pct(r.balanced_accuracy)}  {pct(r.seen_balanced_accuracy)}  "
                     f"{pct(r.unseen_balanced_accuracy)}  {r.reference_percent:9.2f}  {r.status}")
    return "\n".join(lines) + "\n"
