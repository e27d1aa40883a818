"""Real-world impairment chain: seeded random crop, bilinear resize and JPEG compression."""
# Standard import
import hashlib
import io
import logging
import math
import multiprocessing
import os
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

# Third party imports
import numpy as np
from PIL import Image
from tqdm import tqdm

# Local imports
from .dataset import ManifestEntry, read_manifest, write_manifest
from .errors import ImpairmentError

logger = logging.getLogger(__name__)

IMAGE_DIR = "images"
MANIFEST_NAME = "manifest.tsv"
SKIP_REPORT_NAME = "skipped.tsv"
IMPAIRMENT_LOG_NAME = "impairments.tsv"


@dataclass(frozen=True)
class ImpairmentConfig:
    """Parameters of the impairment chain.

    Parameters
    ----------
    crop_ratio : Fraction
        Aspect-ratio floor r of the random crop, min(w, h) / max(w, h) >= r. The default is 5/8.
    crop_min : int
        Minimum crop side (pixels). The default is 160.
    crop_max : int
        Maximum crop side (pixels). The default is 2048.
    target_size : int
        Side of the square output (pixels). The default is 200.
    q_min : int
        Lowest JPEG quality. The default is 65.
    q_max : int
        Highest JPEG quality. The default is 100.
    master_seed : int
        Seed mixed with every entry id. The default is 0.
    subsampling : int
        Pillow chroma subsampling code, 2 is 4:2:0. The default is 2.
    progressive : bool
        Progressive JPEG. The default is False (baseline).
    """

    crop_ratio: Fraction = Fraction(5, 8)
    crop_min: int = 160
    crop_max: int = 2048
    target_size: int = 200
    q_min: int = 65
    q_max: int = 100
    master_seed: int = 0
    subsampling: int = 2
    progressive: bool = False

    def __post_init__(self):
        ratio = self.crop_ratio
        if not isinstance(ratio, Fraction):
            ratio = Fraction(str(ratio)).limit_denominator(10**6)
            object.__setattr__(self, "crop_ratio", ratio)
        if not 0 < ratio <= 1:
            raise ValueError(f"crop_ratio must be in (0, 1], got {ratio}")
        if not 0 < self.crop_min <= self.crop_max:
            raise ValueError(f"need 0 < crop_min <= crop_max, got {self.crop_min}, {self.crop_max}")
        if not 1 <= self.q_min <= self.q_max <= 100:
            raise ValueError(f"need 1 <= q_min <= q_max <= 100, got {self.q_min}, {self.q_max}")
        if self.target_size <= 0:
            raise ValueError(f"target_size must be positive, got {self.target_size}")

    @classmethod
    def from_profile(cls, profile: str = 'standard', **overrides) -> "ImpairmentConfig":
        """Return a named impairment profile.

        Parameters
        ----------
        profile : str, optional
            'standard' for the competition chain (crop 160-2048, ratio 5/8, 200x200, Q in [65, 100])
            or 'toy' for desk-scale 64x64 images (crop 48-2048, 64x64). The default is 'standard'.
        **overrides
            Field values replacing the profile's.

        Returns
        -------
        ImpairmentConfig
            The configuration.

        """
        if profile == 'standard':
            values = {}
        elif profile == 'toy':
            values = dict(crop_min=48, target_size=64)
        else:
            raise ValueError(f"unknown impairment profile '{profile}'")
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class CropBox:
    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class ImpairmentResult:
    data: bytes
    crop: CropBox
    quality: int


def derive_rng(master_seed: int, entry_id: str, *salt) -> np.random.Generator:
    """Deterministic random stream of one entry.

    The stream is seeded with the SHA-256 digest of ``"<master_seed>|<entry_id>[|salt...]"``
    read as a big-endian integer, fed to a PCG64 bit generator. The stream therefore only depends
    on the seed and the entry, never on the worker or the processing order.

    Parameters
    ----------
    master_seed : int
        Run-level seed.
    entry_id : str
        Manifest entry id.
    *salt
        Extra tokens separating independent uses of one entry (epoch, purpose...).

    Returns
    -------
    np.random.Generator
        The random stream.

    """
    key = "|".join([str(int(master_seed)), entry_id] + [str(s) for s in salt])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))


def sample_crop(width: int, height: int, cfg: ImpairmentConfig, rng) -> CropBox:
    """Draw a random crop box.

    Draw order is fixed: width, height, x offset, y offset. The width is uniform over the sides
    that leave room for a legal height, the height is uniform over the sides that keep
    min(w, h) / max(w, h) >= r, and the offsets are uniform over the valid positions.

    Parameters
    ----------
    width, height : int
        Image dimensions (pixels).
    cfg : ImpairmentConfig
        Crop bounds and ratio.
    rng : np.random.Generator
        Random stream, typically from :func:`derive_rng`.

    Returns
    -------
    CropBox
        The crop, ``crop_min <= w, h <= min(crop_max, image side)``.

    """
    if width < cfg.crop_min or height < cfg.crop_min:
        raise ImpairmentError(f"image {width}x{height} is smaller than crop_min={cfg.crop_min}",
                              code="image-too-small")
    r = cfg.crop_ratio
    h_cap = min(cfg.crop_max, height)
    # largest width that still admits a height >= r * w
    w_hi = min(cfg.crop_max, width, math.floor(h_cap / r))
    w = int(rng.integers(cfg.crop_min, w_hi + 1))
    h_lo = max(cfg.crop_min, math.ceil(r * w))
    h_hi = min(h_cap, math.floor(w / r))
    h = int(rng.integers(h_lo, h_hi + 1))
    x = int(rng.integers(0, width - w + 1))
    y = int(rng.integers(0, height - h + 1))
    return CropBox(x, y, w, h)


def as_rgb(image) -> np.ndarray:
    """Return the raster as a contiguous ``H x W x 3`` uint8 array."""
    array = np.asarray(image)
    if array.dtype != np.uint8:
        raise ValueError(f"expected a uint8 raster, got {array.dtype}")
    if array.ndim == 2:
        array = np.stack([array] * 3, axis=-1)
    if array.ndim != 3 or array.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 raster, got shape {array.shape}")
    return np.ascontiguousarray(array)


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("RGB"))


def decode_jpeg(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def impair(image, cfg: ImpairmentConfig, rng) -> ImpairmentResult:
    """Run the chain on one raster and keep the drawn parameters.

    Bilinear resize is Pillow's (separable triangle filter, support scaled on downsampling,
    results rounded half up to uint8). JPEG is baseline with the configured chroma subsampling.
    """
    array = as_rgb(image)
    height, width = array.shape[:2]
    crop = sample_crop(width, height, cfg, rng)
    quality = int(rng.integers(cfg.q_min, cfg.q_max + 1))

    patch = Image.fromarray(array[crop.y:crop.y + crop.h, crop.x:crop.x + crop.w])
    patch = patch.resize((cfg.target_size, cfg.target_size), Image.Resampling.BILINEAR)
    buffer = io.BytesIO()
    patch.save(buffer, format="JPEG", quality=quality, subsampling=cfg.subsampling,
               progressive=cfg.progressive, optimize=False)
    return ImpairmentResult(buffer.getvalue(), crop, quality)


def apply_impairment(image, cfg: ImpairmentConfig, rng) -> bytes:
    """Crop, resize to ``target_size`` squared and JPEG-encode a raster.

    Parameters
    ----------
    image : np.ndarray
        Decoded ``H x W x 3`` uint8 raster.
    cfg : ImpairmentConfig
        Chain parameters.
    rng : np.random.Generator
        Random stream; draws are w, h, x, y then quality.

    Returns
    -------
    bytes
        JPEG file content decoding to ``target_size x target_size``.

    """
    return impair(image, cfg, rng).data


def _safe_name(entry_id: str) -> str:
    if re.fullmatch(r"[A-Za-z0-9._-]+", entry_id) and entry_id not in (".", ".."):
        return entry_id
    return hashlib.sha1(entry_id.encode("utf-8")).hexdigest()


def impair_file(entry: ManifestEntry, src_root: Path, out_dir: Path,
                cfg: ImpairmentConfig) -> Tuple[Optional[ManifestEntry], Optional[str], Optional[tuple]]:
    """Impair the image of one entry and write it under ``out_dir``.

    Returns
    -------
    entry : ManifestEntry or None
        Output record, None when skipped.
    reason : str or None
        Skip reason, None on success.
    drawn : tuple or None
        ``(x, y, w, h, quality)`` actually used.

    """
    try:
        image = load_image(src_root / entry.path)
    except (OSError, ValueError) as err:
        return None, f"unreadable: {err}".replace("\t", " ").replace("\n", " "), None

    rng = derive_rng(cfg.master_seed, entry.entry_id)
    try:
        result = impair(image, cfg, rng)
    except ImpairmentError as err:
        if err.code == "image-too-small":
            return None, err.code, None
        raise ImpairmentError(str(err), err.code, entry.entry_id) from err
    except (OSError, ValueError) as err:
        raise ImpairmentError(f"encoding failed: {err}", "encode-failed", entry.entry_id) from err

    rel_path = f"{IMAGE_DIR}/{_safe_name(entry.entry_id)}.jpg"
    with open(out_dir / rel_path, "wb") as f:
        f.write(result.data)
    crop = result.crop
    out_entry = ManifestEntry(entry.entry_id, rel_path, entry.class_index, entry.generator_id,
                              entry.category, entry.source, entry.fold)
    return out_entry, None, (crop.x, crop.y, crop.w, crop.h, result.quality)


@dataclass
class BuildResult:
    manifest_path: Path
    entries: List[ManifestEntry]
    skipped: List[Tuple[str, str]]


def build_dataset(manifest_in: Union[str, Path], cfg: ImpairmentConfig, out_dir: Union[str, Path],
                  workers: int = 1, comments: Sequence[str] = (), progress: bool = False) -> BuildResult:
    """Impair every entry of a manifest in parallel.

    Each entry draws from its own stream (:func:`derive_rng`), so the output bytes do not depend
    on the worker count. Results are merged in input order.

    Parameters
    ----------
    manifest_in : str or Path
        Input manifest; image paths are relative to its directory.
    cfg : ImpairmentConfig
        Chain parameters.
    out_dir : str or Path
        Receives ``manifest.tsv``, ``images/``, ``skipped.tsv`` and ``impairments.tsv``.
    workers : int, optional
        Process count. The default is 1 (in-process).
    comments : sequence of str, optional
        Reproducibility header lines copied into every written file.
    progress : bool, optional
        Show a progress bar. The default is False.

    Returns
    -------
    BuildResult
        Output manifest path, output entries and ``(entry_id, reason)`` skip records.

    """
    manifest_in = Path(manifest_in)
    out_dir = Path(out_dir)
    taxonomy, entries = read_manifest(manifest_in)
    try:
        (out_dir / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ImpairmentError(f"output directory {out_dir} is not writable: {err}", "output-not-writable") from err
    if not os.access(out_dir / IMAGE_DIR, os.W_OK):
        raise ImpairmentError(f"output directory {out_dir} is not writable", "output-not-writable")

    worker = partial(impair_file, src_root=manifest_in.parent, out_dir=out_dir, cfg=cfg)
    logger.info("impairing %d entries with %d worker(s)", len(entries), workers)
    if workers <= 1:
        results = [worker(e) for e in tqdm(entries, disable=not progress)]
    else:
        chunksize = max(1, len(entries) // (workers * 8))
        with multiprocessing.Pool(workers) as pool:
            results = list(tqdm(pool.imap(worker, entries, chunksize=chunksize),
                                total=len(entries), disable=not progress))

    out_entries, skipped, drawn_rows = [], [], []
    for entry, (out_entry, reason, drawn) in zip(entries, results):
        if out_entry is None:
            logger.warning("skipped %s: %s", entry.entry_id, reason)
            skipped.append((entry.entry_id, reason))
            continue
        out_entries.append(out_entry)
        drawn_rows.append((entry.entry_id,) + drawn)

    header = [c if c.startswith("#") else f"# {c}" for c in comments]
    manifest_out = out_dir / MANIFEST_NAME
    write_manifest(taxonomy, out_entries, manifest_out, comments=header)
    _write_rows(out_dir / SKIP_REPORT_NAME, header, skipped)
    _write_rows(out_dir / IMPAIRMENT_LOG_NAME, header, drawn_rows)
    logger.info("wrote %d impaired entries, skipped %d", len(out_entries), len(skipped))
    return BuildResult(manifest_out, out_entries, skipped)


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    lines = list(header) + ["\t".join(str(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(line + "\n" for line in lines))


def read_skip_report(path) -> List[Tuple[str, str]]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            entry_id, reason = line.split("\t", 1)
            rows.append((entry_id, reason))
    return rows
