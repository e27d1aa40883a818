"""Binary conversion, balanced accuracy and per-fold evaluation reports."""
# Standard import
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

# Third party imports
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

# Local imports
from .dataset import ClassTaxonomy, ManifestEntry, taxonomy_to_dict
from .errors import EvaluationError
from .loaders import predict_proba
from .models import ConvNeXtDetector, HeadMode, load_checkpoint

logger = logging.getLogger(__name__)

FAKE_THRESHOLD = 0.5
BINARY_NAMES = ['real', 'fake']


def to_binary(probs, real_index: int) -> float:
    """Authenticity score of one probability vector.

    Parameters
    ----------
    probs : array_like
        Class probabilities, non-negative and summing to 1 within 1e-6.
    real_index : int
        Index of the real class.

    Returns
    -------
    float
        ``p_fake = 1 - probs[real_index]``. The image is called fake when ``p_fake >= 0.5``.

    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise EvaluationError(f"expected a probability vector, got shape {probs.shape}")
    return float(to_binary_batch(probs[None], real_index)[0])


def to_binary_batch(probs, real_index: int) -> np.ndarray:
    """Row-wise :func:`to_binary` of an ``N x C`` probability matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise EvaluationError(f"expected an N x C probability matrix, got shape {probs.shape}")
    if not 0 <= real_index < probs.shape[1]:
        raise EvaluationError(f"real_index {real_index} outside [0, {probs.shape[1]})")
    if not np.isfinite(probs).all() or (probs < 0).any():
        raise EvaluationError("probabilities must be finite and non-negative")
    if (np.abs(probs.sum(axis=1) - 1.0) > 1e-6).any():
        raise EvaluationError("probabilities must sum to 1 within 1e-6")
    return 1.0 - probs[:, real_index]


def is_fake(p_fake) -> np.ndarray:
    return np.asarray(p_fake) >= FAKE_THRESHOLD


def per_class_recall(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Recall of every class, NaN where the class has no support."""
    cm = _confusion(y_true, y_pred, n_classes)
    support = cm.sum(axis=1)
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(support > 0, np.diag(cm) / np.maximum(support, 1), np.nan)


def _confusion(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise EvaluationError(f"label arrays must be 1-D with equal length, got {y_true.shape} and {y_pred.shape}")
    for name, labels in (("true", y_true), ("predicted", y_pred)):
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise EvaluationError(f"{name} labels outside [0, {n_classes})")
    return confusion_matrix(y_true, y_pred, labels=list(range(n_classes)))


def balanced_accuracy(y_true, y_pred, n_classes: int, ignore_empty: bool = False) -> float:
    """Unweighted mean of per-class recalls.

    The mean is accumulated in rational arithmetic and rounded once, so it equals the exact
    recall mean up to a single float rounding.

    Parameters
    ----------
    y_true, y_pred : array_like of int
        Labels in ``[0, n_classes)``.
    n_classes : int
        Number of classes.
    ignore_empty : bool, optional
        Average only over classes with support instead of raising. The default is False.

    Returns
    -------
    float
        Balanced accuracy in [0, 1].

    """
    cm = _confusion(y_true, y_pred, n_classes)
    support = cm.sum(axis=1)
    classes = [c for c in range(n_classes) if support[c] > 0]
    if len(classes) < n_classes and not ignore_empty:
        empty = [c for c in range(n_classes) if support[c] == 0]
        raise EvaluationError(f"class(es) {empty} have no example")
    if not classes:
        raise EvaluationError("no labelled example")
    total = sum(Fraction(int(cm[c, c]), int(support[c])) for c in classes)
    return float(total / len(classes))


@dataclass
class EvalReport:
    """Evaluation of one checkpoint on one test fold.

    Attributes
    ----------
    fold : int or None
        Fold id.
    head_mode : str
        'binary' or 'multi'.
    fsr, use_uf : bool or None
        Configuration descriptor read from the checkpoint.
    class_names : list of str
        Taxonomy class names.
    confusion : np.ndarray or None
        Multi-class confusion matrix (rows = truth), None for binary heads.
    recalls : dict
        Multi-class recall per class name with support, unseen-fake included.
    multiclass_balanced_accuracy : float or None
        Mean of ``recalls``.
    binary_confusion : np.ndarray
        2 x 2 real/fake confusion matrix.
    binary_recalls : dict
        Real and fake recall.
    balanced_accuracy : float
        Binary balanced accuracy, comparable across head modes.
    seen_balanced_accuracy, unseen_balanced_accuracy : float
        Binary balanced accuracy on real + seen-generator fakes and on real + unseen-generator
        fakes. NaN when one side is missing.
    generator_recall : pd.DataFrame
        Fake recall per generator (generator_id, seen, support, recall).
    predictions : pd.DataFrame
        One row per test entry.
    """

    fold: Optional[int]
    head_mode: str
    fsr: Optional[bool]
    use_uf: Optional[bool]
    class_names: List[str]
    confusion: Optional[np.ndarray]
    recalls: Dict[str, float]
    multiclass_balanced_accuracy: Optional[float]
    binary_confusion: np.ndarray
    binary_recalls: Dict[str, float]
    balanced_accuracy: float
    seen_balanced_accuracy: float
    unseen_balanced_accuracy: float
    generator_recall: pd.DataFrame = field(repr=False)
    predictions: pd.DataFrame = field(repr=False)

    def summary_frame(self) -> pd.DataFrame:
        """Long table (section, key, value) of every scalar of the report."""
        rows = [('config', 'fold', self.fold), ('config', 'head_mode', self.head_mode),
                ('config', 'fsr', self.fsr), ('config', 'use_uf', self.use_uf),
                ('binary', 'balanced_accuracy', self.balanced_accuracy),
                ('binary', 'seen_balanced_accuracy', self.seen_balanced_accuracy),
                ('binary', 'unseen_balanced_accuracy', self.unseen_balanced_accuracy)]
        rows += [('binary_recall', name, value) for name, value in self.binary_recalls.items()]
        if self.multiclass_balanced_accuracy is not None:
            rows.append(('multiclass', 'balanced_accuracy', self.multiclass_balanced_accuracy))
            rows += [('class_recall', name, value) for name, value in self.recalls.items()]
        rows += [('generator_recall', r.generator_id, r.recall) for r in self.generator_recall.itertuples()]
        return pd.DataFrame(rows, columns=['section', 'key', 'value'])

    def to_text(self) -> str:
        lines = [f"fold {self.fold}  head {self.head_mode}  fsr {self.fsr}  uf {self.use_uf}",
                 f"binary balanced accuracy   {self.balanced_accuracy:.4f}",
                 f"  seen generators          {self.seen_balanced_accuracy:.4f}",
                 f"  unseen generators        {self.unseen_balanced_accuracy:.4f}",
                 "binary confusion (rows = truth: real, fake)"]
        lines += ["  " + " ".join(f"{v:6d}" for v in row) for row in self.binary_confusion]
        if self.confusion is not None:
            lines.append(f"multi-class balanced accuracy {self.multiclass_balanced_accuracy:.4f}")
            width = max(len(n) for n in self.class_names)
            for name, row in zip(self.class_names, self.confusion):
                recall = self.recalls.get(name, np.nan)
                lines.append(f"  {name:<{width}} " + " ".join(f"{v:6d}" for v in row) + f"   recall {recall:.4f}")
        lines.append("fake recall per generator")
        for r in self.generator_recall.itertuples():
            lines.append(f"  {r.generator_id:<16} {'seen' if r.seen else 'unseen':<7} n={r.support:<6d} {r.recall:.4f}")
        return "\n".join(lines) + "\n"

    def write(self, path, comments: Sequence[str] = ()) -> List[Path]:
        """Write the text report to ``path``, the summary to ``<stem>.csv`` and the predictions
        to ``<stem>-predictions.csv``, each below the ``#`` header lines."""
        path = Path(path)
        header = "".join((c if c.startswith("#") else f"# {c}") + "\n" for c in comments)
        summary_path = path.with_suffix('.csv')
        predictions_path = path.with_name(path.stem + '-predictions.csv')
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(header + self.to_text())
        for out, frame in ((summary_path, self.summary_frame()), (predictions_path, self.predictions)):
            with open(out, "w", encoding="utf-8", newline="\n") as f:
                f.write(header)
                frame.to_csv(f, index=False)
        return [path, summary_path, predictions_path]


def _binary_subset_accuracy(truth: np.ndarray, predicted: np.ndarray, mask: np.ndarray) -> float:
    if len(set(truth[mask].tolist())) < 2:
        return np.nan
    return balanced_accuracy(truth[mask], predicted[mask], 2)


def evaluate_fold(checkpoint: Union[str, Path, ConvNeXtDetector], test_entries: Sequence[ManifestEntry],
                  taxonomy: ClassTaxonomy, image_root, fold: int = None, batch_size: int = 32) -> EvalReport:
    """Evaluate a detector on the test side of a fold.

    Binary-converted metrics are computed for every head mode; multi-class metrics are added for
    multi-class heads.

    Parameters
    ----------
    checkpoint : str, Path or ConvNeXtDetector
        Checkpoint file, or an in-memory model whose logits follow ``taxonomy``.
    test_entries : sequence of ManifestEntry
        Test records.
    taxonomy : ClassTaxonomy
        Manifest taxonomy; must equal the checkpoint's.
    image_root : str or Path
        Directory the entry paths are relative to.
    fold : int, optional
        Fold id. The default is the one stored in the checkpoint.
    batch_size : int, optional
        Inference batch size. The default is 32.

    Returns
    -------
    EvalReport
        The report.

    """
    extra = {}
    if isinstance(checkpoint, ConvNeXtDetector):
        model = checkpoint
    else:
        model, ckpt_taxonomy, extra = load_checkpoint(checkpoint)
        if taxonomy_to_dict(ckpt_taxonomy) != taxonomy_to_dict(taxonomy):
            raise EvaluationError("checkpoint taxonomy does not match the manifest taxonomy")
    if not test_entries:
        raise EvaluationError("empty test set")
    head_mode = model.cfg.head_mode
    if head_mode is HeadMode.MULTICLASS and model.cfg.num_classes != taxonomy.n_classes:
        raise EvaluationError(f"model emits {model.cfg.num_classes} logits for {taxonomy.n_classes} classes")
    fold = extra.get("fold") if fold is None else fold

    probs = predict_proba(model, test_entries, image_root, batch_size)
    real_index = 0 if head_mode is HeadMode.BINARY else taxonomy.real_index
    p_fake = to_binary_batch(probs, real_index)
    predicted = is_fake(p_fake).astype(int)
    true_class = np.array([e.class_index for e in test_entries], dtype=int)
    truth = (true_class != taxonomy.real_index).astype(int)

    binary_cm = _confusion(truth, predicted, 2)
    binary_recall = per_class_recall(truth, predicted, 2)
    ba = balanced_accuracy(truth, predicted, 2, ignore_empty=True)
    real_mask = truth == 0
    seen_ba = _binary_subset_accuracy(truth, predicted, real_mask | ((truth == 1) & (true_class != taxonomy.uf_index)))
    unseen_ba = _binary_subset_accuracy(truth, predicted, real_mask | (true_class == taxonomy.uf_index))

    confusion, recalls, multi_ba = None, {}, None
    pred_class = np.full(len(test_entries), -1)
    if head_mode is HeadMode.MULTICLASS:
        pred_class = probs.argmax(axis=1)
        confusion = _confusion(true_class, pred_class, taxonomy.n_classes)
        class_recall = per_class_recall(true_class, pred_class, taxonomy.n_classes)
        recalls = {name: float(r) for name, r in zip(taxonomy.class_names, class_recall) if not np.isnan(r)}
        multi_ba = balanced_accuracy(true_class, pred_class, taxonomy.n_classes, ignore_empty=True)

    predictions = pd.DataFrame({
        'entry_id': [e.entry_id for e in test_entries],
        'class_index': true_class,
        'generator_id': [e.generator_id or '' for e in test_entries],
        'true_fake': truth,
        'p_fake': p_fake,
        'pred_fake': predicted,
        'pred_class': pred_class})

    rows = []
    fakes = predictions[predictions['true_fake'] == 1]
    for generator_id, group in fakes.groupby('generator_id', sort=True):
        gen = taxonomy.generator(generator_id)
        rows.append((generator_id, bool(gen.seen) if gen else False, len(group), float(group['pred_fake'].mean())))
    generator_recall = pd.DataFrame(rows, columns=['generator_id', 'seen', 'support', 'recall'])

    report = EvalReport(fold=fold, head_mode=head_mode.value, fsr=model.cfg.fsr, use_uf=extra.get("use_uf"),
                        class_names=taxonomy.class_names, confusion=confusion, recalls=recalls,
                        multiclass_balanced_accuracy=multi_ba, binary_confusion=binary_cm,
                        binary_recalls=dict(zip(BINARY_NAMES, binary_recall.tolist())),
                        balanced_accuracy=ba, seen_balanced_accuracy=seen_ba, unseen_balanced_accuracy=unseen_ba,
                        generator_recall=generator_recall, predictions=predictions)
    logger.info("fold %s: binary balanced accuracy %.4f (seen %.4f, unseen %.4f) on %d entries",
                fold, ba, seen_ba, unseen_ba, len(test_entries))
    return report


def plot_confusion_matrix(report: EvalReport, binary: bool = None):
    """Row-normalized confusion matrix as a heat map.

    Parameters
    ----------
    report : EvalReport
        Report to draw.
    binary : bool, optional
        Draw the real/fake matrix. The default is True for binary heads, False otherwise.

    Returns
    -------
    matplotlib.figure.Figure
        The figure.

    """
    if binary is None:
        binary = report.confusion is None
    cm = report.binary_confusion if binary else report.confusion
    names = BINARY_NAMES if binary else report.class_names
    rates = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * len(names), 0.8 + 0.8 * len(names)))
    image = ax.imshow(rates, vmin=0, vmax=1, cmap='Blues')
    for i in range(len(names)):
        for j in range(len(names)):
            ax.text(j, i, str(cm[i, j]), ha='center', va='center',
                    color='white' if rates[i, j] > 0.5 else 'black')
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha='right')
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names)
    ax.set_xlabel('predicted')
    ax.set_ylabel('truth')
    ax.set_title(f"fold {report.fold}, balanced accuracy {report.balanced_accuracy:.3f}")
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    return fig
