"""Manifest-backed torch datasets and batched inference."""
# Standard import
from pathlib import Path
from typing import Optional, Sequence

# Third party imports
import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset, WeightedRandomSampler

# Local imports
from .augmentations import AugmentConfig, augment
from .dataset import ManifestEntry
from .impairments import derive_rng, load_image
from .models import to_tensor_batch


class ManifestImageDataset(Dataset):
    """Images of manifest entries as normalized ``3 x H x W`` tensors.

    Parameters
    ----------
    entries : sequence of ManifestEntry
        Records to serve, in order.
    image_root : str or Path
        Directory the entry paths are relative to.
    labels : sequence of int, optional
        Training label of every entry. The default is None (label -1).
    augment_cfg : AugmentConfig, optional
        Augmentation menu, None for none. The default is None.
    seed : int, optional
        Augmentation seed. The default is 0.

    Attributes
    ----------
    epoch : int
        Mixed into the augmentation stream; set by the trainer before each epoch.
    """

    def __init__(self, entries: Sequence[ManifestEntry], image_root, labels: Optional[Sequence[int]] = None,
                 augment_cfg: Optional[AugmentConfig] = None, seed: int = 0):
        self.entries = list(entries)
        self.image_root = Path(image_root)
        self.labels = None if labels is None else list(labels)
        if self.labels is not None and len(self.labels) != len(self.entries):
            raise ValueError("labels and entries must have the same length")
        self.augment_cfg = augment_cfg
        self.seed = seed
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int):
        entry = self.entries[index]
        image = load_image(self.image_root / entry.path)
        if self.augment_cfg is not None and self.augment_cfg.any_enabled:
            rng = derive_rng(self.seed, entry.entry_id, "augment", self.epoch)
            image = augment(image, self.augment_cfg, rng)
        label = -1 if self.labels is None else self.labels[index]
        return to_tensor_batch(image)[0], label


def make_loader(dataset: Dataset, batch_size: int, shuffle: bool = False, seed: int = 0,
                workers: int = 0, sample_weights: Optional[Sequence[float]] = None) -> DataLoader:
    """DataLoader whose order is fixed by ``seed``.

    With ``sample_weights`` an epoch draws ``len(dataset)`` items with replacement, each with a
    probability proportional to its weight; ``shuffle`` is then implied.
    """
    generator = torch.Generator()
    generator.manual_seed(seed)
    if sample_weights is not None:
        sampler = WeightedRandomSampler(torch.as_tensor(np.asarray(sample_weights), dtype=torch.double),
                                        num_samples=len(dataset), replacement=True, generator=generator)
        return DataLoader(dataset, batch_size=batch_size, sampler=sampler, num_workers=workers, drop_last=False)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, num_workers=workers,
                      generator=generator, drop_last=False)


@torch.no_grad()
def predict_proba(model: torch.nn.Module, entries: Sequence[ManifestEntry], image_root,
                  batch_size: int = 32, workers: int = 0) -> np.ndarray:
    """Softmax probabilities of every entry, ``N x num_classes`` float64."""
    model.eval()
    dtype = next(model.parameters()).dtype
    loader = make_loader(ManifestImageDataset(entries, image_root), batch_size, workers=workers)
    chunks = [torch.softmax(model(x.to(dtype)).double(), dim=1).numpy() for x, _ in loader]
    if not chunks:
        return np.zeros((0, model.cfg.num_classes))
    return np.concatenate(chunks, axis=0)
