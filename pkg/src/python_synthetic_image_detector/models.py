"""ConvNeXt-style detector with an optional filter-stride-reduced (FSR) stem."""
# Standard import
import logging
from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

# Third party imports
import numpy as np
import torch
import torch.nn as nn

# Local imports
from ._version import CHECKPOINT_FORMAT_VERSION
from .dataset import ClassTaxonomy, taxonomy_from_dict, taxonomy_to_dict
from .errors import ModelConfigError

logger = logging.getLogger(__name__)


class HeadMode(str, Enum):
    BINARY = "binary"
    MULTICLASS = "multi"


@dataclass(frozen=True)
class ModelConfig:
    r"""Backbone and head configuration.

    The stem is a valid (unpadded) ``stem_kernel`` x ``stem_kernel`` patchify convolution.
    With ``fsr`` the stride is halved (4 -> 2) while the kernel, and so every weight shape, is
    kept: a checkpoint of the baseline loads into the FSR model unchanged.

    Parameters
    ----------
    stem_kernel : int, optional
        Stem kernel side. The default is 4.
    stem_stride : int, optional
        Stem stride. The default is None: ``stem_kernel`` without FSR, ``stem_kernel / 2`` with it.
    fsr : bool, optional
        Filter stride reduction. The default is False.
    stage_depths : tuple of int, optional
        Blocks per stage. The default is (1, 1, 2, 1).
    stage_widths : tuple of int, optional
        Channels per stage. The default is (32, 64, 128, 256).
    head_mode : HeadMode, optional
        Binary (2 logits) or multi-class (taxonomy size). The default is MULTICLASS.
    num_classes : int, optional
        Logit count. The default is 7.
    input_size : int, optional
        Nominal input side. The default is 200.
    layer_scale_init : float, optional
        Initial per-channel residual scale of the blocks. The default is 1e-6.

    Attributes
    ----------
    stem_stride : int
        Resolved stride.
    """

    stem_kernel: int = 4
    stem_stride: Optional[int] = None
    fsr: bool = False
    stage_depths: Tuple[int, ...] = (1, 1, 2, 1)
    stage_widths: Tuple[int, ...] = (32, 64, 128, 256)
    head_mode: HeadMode = HeadMode.MULTICLASS
    num_classes: int = 7
    input_size: int = 200
    in_channels: int = 3
    layer_scale_init: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "head_mode", HeadMode(self.head_mode))
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        if self.stem_kernel < 1:
            raise ModelConfigError(f"stem_kernel must be positive, got {self.stem_kernel}")
        if self.fsr and self.stem_kernel % 2:
            raise ModelConfigError(f"FSR halves the stride of an even kernel, got kernel {self.stem_kernel}")
        expected = self.stem_kernel // 2 if self.fsr else self.stem_kernel
        if self.stem_stride is None:
            object.__setattr__(self, "stem_stride", expected)
        elif self.fsr and self.stem_stride != expected:
            raise ModelConfigError(f"FSR requires stem_stride = stem_kernel / 2 = {expected}, got {self.stem_stride}")
        if self.stem_stride < 1:
            raise ModelConfigError(f"stem_stride must be positive, got {self.stem_stride}")
        if len(self.stage_depths) != len(self.stage_widths) or not self.stage_depths:
            raise ModelConfigError("stage_depths and stage_widths need the same non-zero length")
        if min(self.stage_depths) < 1 or min(self.stage_widths) < 1:
            raise ModelConfigError("stage depths and widths must be positive")
        if self.head_mode is HeadMode.BINARY and self.num_classes != 2:
            raise ModelConfigError(f"binary head emits 2 logits, got num_classes={self.num_classes}")
        if self.num_classes < 2:
            raise ModelConfigError(f"num_classes must be at least 2, got {self.num_classes}")

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Desk-scale backbone (about 0.9M parameters) for 64x64 toy images."""
        values = dict(input_size=64, layer_scale_init=0.1)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Test-scale backbone, a few thousand parameters."""
        values = dict(stage_depths=(1, 1, 1, 1), stage_widths=(8, 16, 24, 32), input_size=32,
                      layer_scale_init=1.0)
        values.update(overrides)
        return cls(**values)

    def with_head(self, taxonomy: ClassTaxonomy, head_mode, fsr: bool = None) -> "ModelConfig":
        """Copy with the head sized for ``taxonomy`` and the stem set for ``fsr``."""
        head_mode = HeadMode(head_mode)
        fsr = self.fsr if fsr is None else fsr
        values = self.to_dict()
        values.update(head_mode=head_mode, fsr=fsr, stem_stride=None,
                      num_classes=2 if head_mode is HeadMode.BINARY else taxonomy.n_classes)
        return ModelConfig(**values)

    def to_dict(self) -> dict:
        values = asdict(self)
        values["head_mode"] = self.head_mode.value
        values["stage_depths"] = list(self.stage_depths)
        values["stage_widths"] = list(self.stage_widths)
        return values


def stem_output_shape(cfg: ModelConfig, input_size: int) -> int:
    """Spatial side after the stem, ``floor((input - kernel) / stride) + 1``.

    Parameters
    ----------
    cfg : ModelConfig
        Gives kernel and stride.
    input_size : int
        Input side (pixels).

    Returns
    -------
    int
        Stem output side. For a 200 pixel input and a 4x4 kernel: 50 with stride 4, 99 with FSR.

    """
    if input_size < cfg.stem_kernel:
        raise ModelConfigError(f"input {input_size} is smaller than the stem kernel {cfg.stem_kernel}")
    return (input_size - cfg.stem_kernel) // cfg.stem_stride + 1


def feature_sizes(cfg: ModelConfig, input_size: int) -> List[int]:
    """Spatial side at the input of every stage."""
    sizes = [stem_output_shape(cfg, input_size)]
    for _ in cfg.stage_widths[1:]:
        if sizes[-1] < 2:
            raise ModelConfigError(f"input {input_size} is too small: a stage is {sizes[-1]} pixel wide "
                                   "before a 2x2 downsampling")
        sizes.append(sizes[-1] // 2)
    return sizes


class LayerNorm2d(nn.LayerNorm):
    """Channel-wise LayerNorm on ``N x C x H x W`` tensors."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.permute(0, 2, 3, 1)
        x = super().forward(x)
        return x.permute(0, 3, 1, 2)


class ConvNeXtBlock(nn.Module):
    def __init__(self, dim: int, layer_scale_init: float = 1e-6):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, 7, padding=3, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pwconv1 = nn.Linear(dim, 4 * dim)
        self.act = nn.GELU()
        self.pwconv2 = nn.Linear(4 * dim, dim)
        self.gamma = nn.Parameter(layer_scale_init * torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shortcut = x
        x = self.dwconv(x)
        x = x.permute(0, 2, 3, 1)
        x = self.norm(x)
        x = self.pwconv1(x)
        x = self.act(x)
        x = self.pwconv2(x)
        x = self.gamma * x
        x = x.permute(0, 3, 1, 2)
        return shortcut + x


class ConvNeXtDetector(nn.Module):
    """Hierarchical ConvNeXt backbone with a linear classification head.

    Parameters
    ----------
    cfg : ModelConfig
        Architecture.

    Attributes
    ----------
    stem : nn.Sequential
        Patchify convolution followed by a channel LayerNorm.
    downsamples : nn.ModuleList
        LayerNorm + 2x2 stride-2 convolution between stages.
    stages : nn.ModuleList
        ConvNeXt blocks of every stage.
    head : nn.Linear
        Emits ``cfg.num_classes`` logits aligned with the taxonomy indices.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths
        self.stem = nn.Sequential(
            nn.Conv2d(cfg.in_channels, widths[0], cfg.stem_kernel, stride=cfg.stem_stride, padding=0),
            LayerNorm2d(widths[0], eps=1e-6))
        self.downsamples = nn.ModuleList(
            nn.Sequential(LayerNorm2d(widths[i - 1], eps=1e-6), nn.Conv2d(widths[i - 1], widths[i], 2, stride=2))
            for i in range(1, len(widths)))
        self.stages = nn.ModuleList(
            nn.Sequential(*[ConvNeXtBlock(width, cfg.layer_scale_init) for _ in range(depth)])
            for depth, width in zip(cfg.stage_depths, widths))
        self.norm = nn.LayerNorm(widths[-1], eps=1e-6)
        self.head = nn.Linear(widths[-1], cfg.num_classes)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module):
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            nn.init.trunc_normal_(module.weight, std=0.02)
            nn.init.zeros_(module.bias)

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.downsamples[i - 1](x)
            x = stage(x)
        return self.norm(x.mean(dim=(2, 3)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feature_sizes(self.cfg, min(x.shape[-2:]))
        return self.head(self.forward_features(x))


def build_model(cfg: ModelConfig, taxonomy: ClassTaxonomy, init_seed: int = 0) -> ConvNeXtDetector:
    """Instantiate a detector with deterministic initial weights.

    Parameters
    ----------
    cfg : ModelConfig
        Architecture; a multi-class head must match the taxonomy size.
    taxonomy : ClassTaxonomy
        Class set the logits are aligned with.
    init_seed : int, optional
        Initialization seed. The default is 0.

    Returns
    -------
    ConvNeXtDetector
        The model, in training mode.

    """
    if cfg.head_mode is HeadMode.MULTICLASS and cfg.num_classes != taxonomy.n_classes:
        raise ModelConfigError(f"multi-class head needs {taxonomy.n_classes} logits "
                               f"(K_seen + 2), got num_classes={cfg.num_classes}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init_seed)
        model = ConvNeXtDetector(cfg)
    logger.debug("built model with %d parameters, stem stride %d", count_parameters(model), cfg.stem_stride)
    return model


def to_tensor_batch(batch) -> torch.Tensor:
    """Convert ``N x H x W x 3`` uint8 rasters to normalized ``N x 3 x H x W`` float tensors."""
    if isinstance(batch, torch.Tensor) and batch.dtype.is_floating_point:
        return batch
    array = np.asarray(batch)
    if array.ndim == 3:
        array = array[None]
    tensor = torch.from_numpy(np.ascontiguousarray(array)).permute(0, 3, 1, 2).float()
    return (tensor / 255.0 - 0.5) / 0.5


@torch.no_grad()
def forward(model: ConvNeXtDetector, batch) -> np.ndarray:
    """Inference on a raster batch.

    Parameters
    ----------
    model : ConvNeXtDetector
        The detector; switched to eval mode.
    batch : np.ndarray or torch.Tensor
        ``N x H x W x 3`` uint8 rasters or an already normalized ``N x 3 x H x W`` tensor.

    Returns
    -------
    np.ndarray
        ``N x num_classes`` logits.

    """
    model.eval()
    x = to_tensor_batch(batch)
    dtype = next(model.parameters()).dtype
    return model(x.to(dtype)).cpu().numpy()


def parameter_shapes(model: nn.Module) -> List[Tuple[str, Tuple[int, ...]]]:
    return [(name, tuple(p.shape)) for name, p in model.named_parameters()]


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def load_pretrained(model: nn.Module, archive, skip_prefixes: Sequence[str] = ()) -> List[str]:
    """Shape-checked load of a flat named-tensor archive.

    Parameters
    ----------
    model : nn.Module
        Destination.
    archive : str, Path or dict
        File written with ``torch.save(state_dict)`` or a checkpoint, or the mapping itself.
    skip_prefixes : sequence of str, optional
        Tensor name prefixes left at their current value (e.g. ``('head.',)``).

    Returns
    -------
    list of str
        Names of the loaded tensors.

    """
    if not isinstance(archive, dict):
        archive = torch.load(Path(archive), map_location="cpu", weights_only=True)
    if "state_dict" in archive and isinstance(archive["state_dict"], dict):
        archive = archive["state_dict"]
    own = model.state_dict()
    wanted = {k for k in own if not k.startswith(tuple(skip_prefixes))}
    missing = sorted(wanted - set(archive))
    mismatched = sorted(k for k in wanted & set(archive) if tuple(archive[k].shape) != tuple(own[k].shape))
    if missing or mismatched:
        raise ModelConfigError(f"archive does not fit the model: missing {missing}, shape mismatch {mismatched}")
    own.update({k: archive[k] for k in wanted})
    model.load_state_dict(own)
    return sorted(wanted)


def save_checkpoint(model: ConvNeXtDetector, taxonomy: ClassTaxonomy, path, extra: dict = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"checkpoint_version": CHECKPOINT_FORMAT_VERSION,
                "state_dict": model.state_dict(),
                "model_config": model.cfg.to_dict(),
                "taxonomy": taxonomy_to_dict(taxonomy),
                "extra": dict(extra or {})}, path)
    return path


def load_checkpoint(path) -> Tuple[ConvNeXtDetector, ClassTaxonomy, dict]:
    """Rebuild a detector from :func:`save_checkpoint` output.

    Returns
    -------
    model : ConvNeXtDetector
        In eval mode.
    taxonomy : ClassTaxonomy
        Taxonomy the logits are aligned with.
    extra : dict
        Free metadata stored with the checkpoint (fold, use_uf, config header...).

    """
    data = torch.load(Path(path), map_location="cpu", weights_only=True)
    version = data.get("checkpoint_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ModelConfigError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig(**data["model_config"])
    taxonomy = taxonomy_from_dict(data["taxonomy"])
    model = ConvNeXtDetector(cfg)
    model.load_state_dict(data["state_dict"])
    model.eval()
    return model, taxonomy, data.get("extra", {})
