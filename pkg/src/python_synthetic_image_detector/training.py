"""Training engine: label smoothed cross-entropy, Adam with exponential decay, per-fold loop."""
# Standard import
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

# Third party imports
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

# Local imports
from .augmentations import AugmentConfig
from .dataset import ClassTaxonomy, ManifestEntry
from .errors import TrainingError
from .loaders import ManifestImageDataset, make_loader, predict_proba
from .metrics import balanced_accuracy, to_binary_batch
from .models import ConvNeXtDetector, HeadMode, ModelConfig, build_model, load_pretrained, save_checkpoint

logger = logging.getLogger(__name__)

LOG_COLUMNS = ['epoch', 'loss', 'lr', 'val_balanced_accuracy']


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings of one training run.

    Parameters
    ----------
    lr0 : float, optional
        Initial Adam learning rate. The default is 1e-4.
    decay_gamma : float, optional
        Learning rate factor applied after every epoch. The default is 0.9.
    epochs : int, optional
        Number of epochs. The default is 20.
    batch_size : int, optional
        Batch size. The default is 32.
    label_smoothing : float, optional
        Smoothing factor epsilon of the cross-entropy target. The default is 0.05.
    seed : int, optional
        Seed of the shuffling, the augmentation streams and the held-out slice. The default is 0.
    init_seed : int, optional
        Weight initialization seed. The default is None (same as ``seed``).
    val_fraction : float, optional
        Share of the train entries held out to monitor balanced accuracy. The default is 0.1.
    threads : int, optional
        Intra-op thread count, None keeps the torch default. The default is None.
    workers : int, optional
        DataLoader worker processes. The default is 0 (in-process).
    deterministic : bool, optional
        Ask torch for deterministic kernels. The default is True.
    balanced_sampling : bool, optional
        Draw every epoch with replacement, each training label with the same probability.
        The default is True.
    augment : AugmentConfig, optional
        Augmentation menu. The default is the full menu.
    """

    lr0: float = 1e-4
    decay_gamma: float = 0.9
    epochs: int = 20
    batch_size: int = 32
    label_smoothing: float = 0.05
    seed: int = 0
    init_seed: Optional[int] = None
    val_fraction: float = 0.1
    threads: Optional[int] = None
    workers: int = 0
    deterministic: bool = True
    balanced_sampling: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.decay_gamma <= 1:
            raise ValueError(f"decay_gamma must be in (0, 1], got {self.decay_gamma}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if not 0 <= self.val_fraction < 1:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.threads is not None and self.threads < 1:
            raise ValueError(f"threads must be positive, got {self.threads}")
        if self.workers < 0:
            raise ValueError(f"workers must be non-negative, got {self.workers}")

    @property
    def effective_init_seed(self) -> int:
        return self.seed if self.init_seed is None else self.init_seed


def smoothed_ce(logits, true_class, eps: float, n_classes: int = None):
    r"""Cross-entropy against a label smoothed target.

    :math:`-\sum_c q_c \log \mathrm{softmax}(z)_c` with :math:`q_c = (1-\epsilon)[c=y] + \epsilon/K`,
    averaged over the batch.

    Parameters
    ----------
    logits : torch.Tensor or array_like
        ``K`` or ``N x K`` logits.
    true_class : int or array_like
        True class index (one per row).
    eps : float
        Smoothing factor in [0, 1).
    n_classes : int, optional
        K, checked against the logit count. The default is the logit count.

    Returns
    -------
    torch.Tensor or float
        Scalar tensor (autograd enabled) for tensor logits, float64 value otherwise.

    """
    as_tensor = isinstance(logits, torch.Tensor)
    z = logits if as_tensor else torch.as_tensor(np.asarray(logits, dtype=np.float64))
    single = z.dim() == 1
    if single:
        z = z.unsqueeze(0)
    k = z.shape[-1]
    if n_classes is not None and n_classes != k:
        raise ValueError(f"expected {n_classes} logits, got {k}")
    if not 0 <= eps < 1:
        raise ValueError(f"eps must be in [0, 1), got {eps}")
    if not bool(torch.isfinite(z).all()):
        raise TrainingError("non-finite logits", code="non-finite-logits")
    target = torch.as_tensor(true_class, dtype=torch.long, device=z.device).reshape(-1)
    if target.numel() != z.shape[0]:
        raise ValueError(f"{target.numel()} labels for {z.shape[0]} logit rows")
    if bool(((target < 0) | (target >= k)).any()):
        raise ValueError(f"true class outside [0, {k})")
    loss = F.cross_entropy(z, target, label_smoothing=eps)
    return loss if as_tensor else float(loss)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate used during ``epoch`` (0-based): ``lr0 * decay_gamma ** epoch``."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return cfg.lr0 * cfg.decay_gamma ** epoch


def training_label(entry: ManifestEntry, taxonomy: ClassTaxonomy, head_mode, use_uf: bool = True) -> Optional[int]:
    """Target index of an entry, None when the entry is left out of training.

    Binary heads map real to 0 and every fake (seen or unseen) to 1. Multi-class heads use the
    taxonomy index; unseen-fake entries are left out when the UF class is disabled.
    """
    if HeadMode(head_mode) is HeadMode.BINARY:
        return 0 if entry.class_index == taxonomy.real_index else 1
    if entry.class_index == taxonomy.uf_index and not use_uf:
        return None
    return entry.class_index


def holdout_split(entries: Sequence[ManifestEntry], fraction: float, seed: int):
    """Seeded (train, held-out) split of entries, independent of their order."""
    ordered = sorted(entries, key=lambda e: e.entry_id)
    n_val = int(round(fraction * len(ordered)))
    if n_val == 0:
        return ordered, []
    perm = np.random.default_rng(seed).permutation(len(ordered))
    held = set(perm[:n_val].tolist())
    train = [e for i, e in enumerate(ordered) if i not in held]
    val = [e for i, e in enumerate(ordered) if i in held]
    return train, val


def balanced_weights(labels: Sequence[int]) -> np.ndarray:
    """Per-sample weights ``1 / count(label)``: every label carries the same total weight."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels)
    return 1.0 / counts[labels]


def _check_classes(labels: Sequence[int], taxonomy: ClassTaxonomy, head_mode: HeadMode, use_uf: bool):
    present = set(labels)
    if head_mode is HeadMode.BINARY:
        required = {0: "real", 1: "fake"}
    else:
        required = {i: taxonomy.class_names[i] for i in [taxonomy.real_index] + taxonomy.seen_indices}
        if use_uf:
            required[taxonomy.uf_index] = taxonomy.class_names[taxonomy.uf_index]
    missing = [name for index, name in sorted(required.items()) if index not in present]
    if missing:
        raise TrainingError(f"train set has no entry of class(es) {missing}", code="empty-class")


class FoldTrainer:
    """Adam + exponential decay loop over one model.

    Parameters
    ----------
    model : ConvNeXtDetector
        Model to train in place.
    cfg : TrainConfig
        Optimization settings.

    Attributes
    ----------
    optimizer : torch.optim.Adam
        Optimizer.
    scheduler : torch.optim.lr_scheduler.ExponentialLR
        Stepped once per epoch.
    dataframe : pd.DataFrame
        One row per finished epoch, columns ``epoch, loss, lr, val_balanced_accuracy``.
    """

    def __init__(self, model: ConvNeXtDetector, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0)
        self.scheduler = torch.optim.lr_scheduler.ExponentialLR(self.optimizer, gamma=cfg.decay_gamma)
        self.epoch = 0
        self.init_dataframe()

    def init_dataframe(self):
        r"""Initialize the training log."""
        self.dataframe = pd.DataFrame(columns=LOG_COLUMNS)

    def save_data(self, loss: float, lr: float, val_balanced_accuracy: float = np.nan):
        r"""Append the current epoch as a new line of self.dataframe."""
        new_line = {'epoch': [self.epoch], 'loss': [loss], 'lr': [lr],
                    'val_balanced_accuracy': [val_balanced_accuracy]}
        line = pd.DataFrame(new_line, columns=LOG_COLUMNS)
        self.dataframe = line if self.dataframe.empty else pd.concat((self.dataframe, line), ignore_index=True)

    def one_step(self, x: torch.Tensor, y: torch.Tensor) -> float:
        """One optimizer step on a batch, returns the batch loss before the update."""
        self.model.train()
        dtype = next(self.model.parameters()).dtype
        logits = self.model(x.to(dtype))
        loss = smoothed_ce(logits, y, self.cfg.label_smoothing, self.model.cfg.num_classes)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return float(loss.detach())

    def one_epoch(self, loader) -> float:
        """Run one epoch, step the scheduler and return the sample-weighted mean loss."""
        total, count = 0.0, 0
        for x, y in loader:
            total += self.one_step(x, y) * len(y)
            count += len(y)
        self.scheduler.step()
        return total / max(count, 1)


def train_fold(train_entries: Sequence[ManifestEntry], taxonomy: ClassTaxonomy, model_cfg: ModelConfig,
               train_cfg: TrainConfig, fold: int, image_root, use_uf: bool = True,
               out_dir=None, comments: Sequence[str] = (), pretrained=None, progress: bool = False):
    """Train one detector on the train side of a fold.

    Parameters
    ----------
    train_entries : sequence of ManifestEntry
        Training records (the held-out slice is taken from them).
    taxonomy : ClassTaxonomy
        Class set; multi-class heads must have ``taxonomy.n_classes`` outputs.
    model_cfg : ModelConfig
        Architecture, head mode and FSR switch.
    train_cfg : TrainConfig
        Optimization settings.
    fold : int
        Fold id, recorded in the checkpoint and file names.
    image_root : str or Path
        Directory the entry paths are relative to.
    use_uf : bool, optional
        Train the unseen-fake class (multi-class heads only). The default is True.
    out_dir : str or Path, optional
        Where ``ckpt-fold<F>.pt`` and ``train-log-fold<F>.csv`` are written. The default is None
        (nothing written).
    comments : sequence of str, optional
        Reproducibility header written above the CSV and into the checkpoint.
    pretrained : str, Path or dict, optional
        Named-tensor archive loaded into the backbone before training, head excluded.
        The default is None.
    progress : bool, optional
        Log each epoch at INFO instead of DEBUG. The default is False.

    Returns
    -------
    TrainResult
        Trained model (eval mode), per-epoch log and checkpoint path.

    """
    head_mode = model_cfg.head_mode
    labelled = [(e, training_label(e, taxonomy, head_mode, use_uf)) for e in train_entries]
    kept = [e for e, label in labelled if label is not None]
    if not kept:
        raise TrainingError("empty train set", code="empty-train-set")
    fit_entries, val_entries = holdout_split(kept, train_cfg.val_fraction, train_cfg.seed)
    fit_labels = [training_label(e, taxonomy, head_mode, use_uf) for e in fit_entries]
    _check_classes(fit_labels, taxonomy, head_mode, use_uf)

    model = build_model(model_cfg, taxonomy, train_cfg.effective_init_seed)
    if pretrained is not None:
        load_pretrained(model, pretrained, skip_prefixes=("head.",))
    dataset = ManifestImageDataset(fit_entries, image_root, fit_labels, train_cfg.augment, train_cfg.seed)
    loader = make_loader(dataset, train_cfg.batch_size, shuffle=True, seed=train_cfg.seed, workers=train_cfg.workers,
                         sample_weights=balanced_weights(fit_labels) if train_cfg.balanced_sampling else None)
    val_truth = np.array([0 if e.class_index == taxonomy.real_index else 1 for e in val_entries], dtype=int)
    real_index = 0 if head_mode is HeadMode.BINARY else taxonomy.real_index
    trainer = FoldTrainer(model, train_cfg)
    logger.info("fold %d: training %s head (fsr=%s, uf=%s) on %d entries, %d held out",
                fold, head_mode.value, model_cfg.fsr, use_uf, len(fit_entries), len(val_entries))

    previous_det = torch.are_deterministic_algorithms_enabled()
    previous_threads = torch.get_num_threads()
    try:
        if train_cfg.deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)
        if train_cfg.threads is not None:
            torch.set_num_threads(train_cfg.threads)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(train_cfg.seed)
            for epoch in range(train_cfg.epochs):
                lr = trainer.optimizer.param_groups[0]['lr']
                dataset.epoch = trainer.epoch = epoch
                loss = trainer.one_epoch(loader)
                val_ba = np.nan
                if len(val_entries) and len(set(val_truth.tolist())) == 2:
                    probs = predict_proba(model, val_entries, image_root, train_cfg.batch_size)
                    predicted = (to_binary_batch(probs, real_index) >= 0.5).astype(int)
                    val_ba = balanced_accuracy(val_truth, predicted, 2)
                trainer.save_data(loss, lr, val_ba)
                logger.log(logging.INFO if progress else logging.DEBUG,
                           "fold %d epoch %d: loss %.6f lr %.3g val_bal_acc %.4f", fold, epoch, loss, lr, val_ba)
    finally:
        torch.use_deterministic_algorithms(previous_det)
        torch.set_num_threads(previous_threads)
    model.eval()

    log = trainer.dataframe.astype({'epoch': int, 'loss': float, 'lr': float, 'val_balanced_accuracy': float})
    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        header = [c if c.startswith("#") else f"# {c}" for c in comments]
        checkpoint_path = save_checkpoint(model, taxonomy, out_dir / f"ckpt-fold{fold}.pt",
                                          extra={"fold": fold, "use_uf": use_uf, "seed": train_cfg.seed,
                                                 "header": header})
        write_training_log(log, out_dir / f"train-log-fold{fold}.csv", header)
    return TrainResult(model, log, checkpoint_path)


@dataclass
class TrainResult:
    model: ConvNeXtDetector
    log: pd.DataFrame
    checkpoint_path: Optional[Path] = None


def write_training_log(log: pd.DataFrame, path, comments: Sequence[str] = ()) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(c + "\n" for c in comments))
        log.to_csv(f, index=False)


def read_training_log(path) -> pd.DataFrame:
    return pd.read_csv(Path(path), comment="#")


def plot_training_curves(logs: List[pd.DataFrame], labels: List[str] = None):
    """Loss and held-out balanced accuracy against epoch for one or several runs."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for i, log in enumerate(logs):
        label = labels[i] if labels else f"run {i}"
        ax_loss.plot(log['epoch'], log['loss'], label=label)
        ax_acc.plot(log['epoch'], log['val_balanced_accuracy'], label=label)
    ax_loss.set_xlabel('epoch')
    ax_loss.set_ylabel('loss')
    ax_acc.set_xlabel('epoch')
    ax_acc.set_ylabel('held-out balanced accuracy')
    ax_acc.legend()
    fig.tight_layout()
    return fig
