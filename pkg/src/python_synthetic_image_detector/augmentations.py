"""Seeded training augmentations: affine, photometric, flips and cutout."""
# Standard import
import math
from dataclasses import dataclass
from typing import Tuple

# Third party imports
import numpy as np
import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation menu with per-op switches, magnitudes and probabilities.

    Parameters
    ----------
    affine, photometric, hflip, vflip, cutout : bool
        Enable flags. The defaults are True.
    p_affine, p_photometric, p_hflip, p_vflip, p_cutout : float
        Application probabilities. The defaults are 0.5.
    rotate_deg : float
        Rotation drawn in [-rotate_deg, rotate_deg]. The default is 15.
    shift_frac : float
        Translation drawn in [-shift_frac, shift_frac] of the side. The default is 0.1.
    scale_range : tuple of float
        Zoom drawn in this range. The default is (0.9, 1.1).
    shear_deg : float
        Shear drawn in [-shear_deg, shear_deg]. The default is 10.
    brightness, contrast : float
        Factors drawn in [1 - value, 1 + value]. The defaults are 0.2.
    hue : float
        Hue shift drawn in [-hue, hue], at most 0.5. The default is 0.05.
    cutout_count : int
        Holes per image. The default is 1.
    cutout_frac : float
        Largest hole side as a fraction of the image side. The default is 0.25.
    """

    affine: bool = True
    photometric: bool = True
    hflip: bool = True
    vflip: bool = True
    cutout: bool = True
    p_affine: float = 0.5
    p_photometric: float = 0.5
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_cutout: float = 0.5
    rotate_deg: float = 15.0
    shift_frac: float = 0.1
    scale_range: Tuple[float, float] = (0.9, 1.1)
    shear_deg: float = 10.0
    brightness: float = 0.2
    contrast: float = 0.2
    hue: float = 0.05
    cutout_count: int = 1
    cutout_frac: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(s) for s in self.scale_range))
        for name in ("p_affine", "p_photometric", "p_hflip", "p_vflip", "p_cutout"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < low <= high, got {self.scale_range}")
        for name in ("rotate_deg", "shift_frac", "shear_deg", "brightness", "contrast", "hue", "cutout_frac"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.brightness >= 1 or self.contrast >= 1:
            raise ValueError("brightness and contrast magnitudes must be below 1")
        if self.hue > 0.5 or self.cutout_frac > 1 or self.cutout_count < 0:
            raise ValueError("hue must be <= 0.5, cutout_frac <= 1 and cutout_count >= 0")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(affine=False, photometric=False, hflip=False, vflip=False, cutout=False)

    @property
    def any_enabled(self) -> bool:
        return self.affine or self.photometric or self.hflip or self.vflip or self.cutout


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply the enabled operations in a fixed order.

    Order: affine, photometric, horizontal flip, vertical flip, cutout. Each enabled op draws one
    uniform number against its probability, then its magnitudes only when applied, so the draws
    (and the output) are fully determined by the stream state.

    Parameters
    ----------
    image : np.ndarray
        ``H x W x 3`` uint8 raster.
    cfg : AugmentConfig
        The menu.
    rng : np.random.Generator
        Random stream.

    Returns
    -------
    np.ndarray
        ``H x W x 3`` uint8 raster of the same size. A copy of the input when nothing is enabled.

    """
    if not cfg.any_enabled:
        return image.copy()
    height, width = image.shape[:2]
    img = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).contiguous()

    if cfg.affine and rng.random() < cfg.p_affine:
        angle = float(rng.uniform(-cfg.rotate_deg, cfg.rotate_deg))
        tx = int(round(rng.uniform(-cfg.shift_frac, cfg.shift_frac) * width))
        ty = int(round(rng.uniform(-cfg.shift_frac, cfg.shift_frac) * height))
        scale = float(rng.uniform(*cfg.scale_range))
        shear = float(rng.uniform(-cfg.shear_deg, cfg.shear_deg))
        img = TF.affine(img, angle=angle, translate=[tx, ty], scale=scale, shear=[shear, 0.0],
                        interpolation=InterpolationMode.BILINEAR, fill=[0.0])

    if cfg.photometric and rng.random() < cfg.p_photometric:
        brightness = float(rng.uniform(1 - cfg.brightness, 1 + cfg.brightness))
        contrast = float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast))
        hue = float(rng.uniform(-cfg.hue, cfg.hue))
        img = TF.adjust_brightness(img, brightness)
        img = TF.adjust_contrast(img, contrast)
        img = TF.adjust_hue(img, hue)

    if cfg.hflip and rng.random() < cfg.p_hflip:
        img = TF.hflip(img)
    if cfg.vflip and rng.random() < cfg.p_vflip:
        img = TF.vflip(img)

    if cfg.cutout and rng.random() < cfg.p_cutout:
        max_side = max(1, math.floor(cfg.cutout_frac * min(height, width)))
        img = img.clone()
        for _ in range(cfg.cutout_count):
            side = int(rng.integers(1, max_side + 1))
            y = int(rng.integers(0, height - side + 1))
            x = int(rng.integers(0, width - side + 1))
            img[:, y:y + side, x:x + side] = 0

    return img.permute(1, 2, 0).contiguous().numpy()
