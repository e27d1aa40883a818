"""Procedural desk-scale dataset: filtered-noise textures, fakes carry a per-generator grating.

Every pseudo-generator adds a faint sinusoidal grating at its own spatial frequency to an
otherwise real-looking texture, a controllable stand-in for the spectral fingerprints left by
generative models. Unseen generators use frequencies absent from the seen set.
"""
# Standard import
import logging
import multiprocessing
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

# Third party imports
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter
from tqdm import tqdm

# Local imports
from .dataset import (ClassTaxonomy, GeneratorFamily, GeneratorInfo, ManifestEntry, Manipulation,
                      make_taxonomy, write_manifest)
from .impairments import IMAGE_DIR, MANIFEST_NAME, derive_rng

logger = logging.getLogger(__name__)

REAL_PREFIX = "real"
FAMILY_CYCLE = (GeneratorFamily.GAN, GeneratorFamily.DIFFUSION, GeneratorFamily.OTHER)


@dataclass(frozen=True)
class GeneratorArtifact:
    """Grating ``amplitude * sin(2 pi (kx x / W + ky y / H) + phase)`` of one generator.

    ``kx`` and ``ky`` are whole cycles per image, so on an uncropped image the grating falls on a
    single Fourier bin (and its conjugate).
    """

    generator_id: str
    kx: int
    ky: int
    phase: float
    amplitude: float

    def grating(self, height: int, width: int) -> np.ndarray:
        y, x = np.mgrid[0:height, 0:width]
        return self.amplitude * np.sin(2 * np.pi * (self.kx * x / width + self.ky * y / height) + self.phase)

    def frequency(self, size: int) -> float:
        """Radial frequency in cycles per pixel on a ``size`` x ``size`` image."""
        return float(np.hypot(self.kx, self.ky)) / size


@dataclass(frozen=True)
class ToySpec:
    """Recipe of a toy dataset.

    Parameters
    ----------
    n_generators : int, optional
        Pseudo-generators, seen and unseen. The default is 7.
    n_seen : int, optional
        Seen generators (the first ``n_seen`` ids). The default is 5.
    n_folds : int, optional
        Fold count the dataset is meant for; needs ``n_generators >= n_folds + n_seen``.
        The default is 2.
    images_per_class : int, optional
        Images of the real class and of every generator. The default is 100.
    image_size : int, optional
        Square image side. The default is 64.
    amplitude : float, optional
        Grating amplitude (grey levels), 0 for a negative-control dataset. The default is 8,
        enough for the grating to survive the toy impairment chain down to JPEG quality 65.
    freq_band : tuple of float, optional
        Radial frequency band (cycles per pixel) the gratings are drawn from, above the
        texture's energy. Crops of the toy chain are upscaled by at most 4/3, so the band
        lands between 0.15 and 0.3 cycles per pixel after impairment, where JPEG keeps
        mid-frequency DCT coefficients. The default is (0.2, 0.3).
    texture_sigma : tuple of float, optional
        Range of the Gaussian blur applied to white noise. The lower bound keeps the texture
        spectrum below the grating band. The default is (2.0, 3.5).
    texture_std : float, optional
        Standard deviation of the texture (grey levels). The default is 40.
    seed : int, optional
        Seed of the generator set and of every image. The default is 11.
    categories : tuple of str, optional
        Category tags assigned round-robin. The default is five object categories.
    """

    n_generators: int = 7
    n_seen: int = 5
    n_folds: int = 2
    images_per_class: int = 100
    image_size: int = 64
    amplitude: float = 8.0
    freq_band: Tuple[float, float] = (0.2, 0.3)
    texture_sigma: Tuple[float, float] = (2.0, 3.5)
    texture_std: float = 40.0
    seed: int = 11
    categories: Tuple[str, ...] = ("faces", "animals", "vehicles", "places", "art")

    def __post_init__(self):
        object.__setattr__(self, "freq_band", tuple(float(f) for f in self.freq_band))
        object.__setattr__(self, "texture_sigma", tuple(float(s) for s in self.texture_sigma))
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.n_seen < 1 or self.n_folds < 2:
            raise ValueError(f"n_seen must be >= 1 and n_folds >= 2, got {self.n_seen} and {self.n_folds}")
        if self.n_generators < self.n_folds + self.n_seen:
            raise ValueError(f"n_generators ({self.n_generators}) must be >= n_folds + n_seen "
                             f"({self.n_folds} + {self.n_seen}) so every fold holds an unseen generator")
        if self.images_per_class < 1 or self.image_size < 16:
            raise ValueError("images_per_class must be positive and image_size at least 16")
        if not 0 <= self.amplitude <= 0.25 * self.texture_std:
            raise ValueError(f"amplitude must be in [0, texture_std / 4], got {self.amplitude}")
        lo, hi = self.freq_band
        if not 0 < lo < hi < 0.5:
            raise ValueError(f"freq_band must satisfy 0 < low < high < 0.5, got {self.freq_band}")
        if not 0 < self.texture_sigma[0] <= self.texture_sigma[1]:
            raise ValueError(f"texture_sigma must be an ordered positive range, got {self.texture_sigma}")
        if not self.categories:
            raise ValueError("categories must not be empty")

    def generators(self) -> List[GeneratorInfo]:
        return [GeneratorInfo(f"gen{i:02d}", FAMILY_CYCLE[i % len(FAMILY_CYCLE)],
                              Manipulation.PARTIAL if i % 4 == 3 else Manipulation.FULL, i < self.n_seen)
                for i in range(self.n_generators)]

    def taxonomy(self) -> ClassTaxonomy:
        return make_taxonomy(self.generators())

    def artifacts(self) -> List[GeneratorArtifact]:
        """Distinct frequency pair and phase of every generator, drawn from ``seed``."""
        n = self.image_size
        lo, hi = self.freq_band
        candidates = [(kx, ky) for ky in range(1, n // 2) for kx in range(-(n // 2) + 1, n // 2)
                      if lo <= np.hypot(kx, ky) / n <= hi]
        if len(candidates) < self.n_generators:
            raise ValueError(f"frequency band {self.freq_band} holds only {len(candidates)} bins")
        rng = derive_rng(self.seed, "toy-generators")
        picks = rng.choice(len(candidates), size=self.n_generators, replace=False)
        phases = rng.uniform(0, 2 * np.pi, size=self.n_generators)
        return [GeneratorArtifact(gen.id, candidates[p][0], candidates[p][1], float(phase), self.amplitude)
                for gen, p, phase in zip(self.generators(), picks, phases)]


def texture(spec: ToySpec, rng: np.random.Generator) -> np.ndarray:
    """Real-image stand-in: tinted, blurred white noise as float ``H x W x 3``."""
    n = spec.image_size
    sigma = rng.uniform(*spec.texture_sigma)
    noise = gaussian_filter(rng.normal(size=(n, n, 3)), sigma=(sigma, sigma, 0), mode='wrap')
    noise *= spec.texture_std / noise.std()
    tint = rng.uniform(96, 160, size=3)
    return noise + tint


def render_image(spec: ToySpec, entry_id: str, artifact: Optional[GeneratorArtifact]) -> np.ndarray:
    """Deterministic uint8 image of one entry."""
    rng = derive_rng(spec.seed, entry_id, "toy")
    image = texture(spec, rng)
    if artifact is not None and artifact.amplitude > 0:
        image += artifact.grating(spec.image_size, spec.image_size)[..., None]
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


def _render_to_file(job, spec: ToySpec, out_dir: Path) -> str:
    entry_id, rel_path, artifact = job
    Image.fromarray(render_image(spec, entry_id, artifact)).save(out_dir / rel_path, format="PNG")
    return rel_path


def toy_entries(spec: ToySpec) -> List[Tuple[ManifestEntry, Optional[GeneratorArtifact]]]:
    """Manifest records (without files) and the artifact of each, reals first then per generator."""
    taxonomy = spec.taxonomy()
    jobs = []
    for i in range(spec.images_per_class):
        entry_id = f"{REAL_PREFIX}_{i:05d}"
        jobs.append((ManifestEntry(entry_id, f"{IMAGE_DIR}/{entry_id}.png", taxonomy.real_index, None,
                                   spec.categories[i % len(spec.categories)], "toy-real"), None))
    for artifact in spec.artifacts():
        gen = taxonomy.generator(artifact.generator_id)
        class_index = taxonomy.seen_generator_map[gen.id] if gen.seen else taxonomy.uf_index
        for i in range(spec.images_per_class):
            entry_id = f"{gen.id}_{i:05d}"
            jobs.append((ManifestEntry(entry_id, f"{IMAGE_DIR}/{entry_id}.png", class_index, gen.id,
                                       spec.categories[i % len(spec.categories)], f"toy-{gen.id}"), artifact))
    return jobs


def synth_dataset(spec: ToySpec, out_dir, workers: int = 1, comments: Sequence[str] = (),
                  progress: bool = False) -> Path:
    """Write a toy dataset: PNG images plus a manifest.

    Parameters
    ----------
    spec : ToySpec
        Recipe.
    out_dir : str or Path
        Receives ``manifest.tsv`` and ``images/``.
    workers : int, optional
        Process count. The default is 1.
    comments : sequence of str, optional
        Header lines written into the manifest.
    progress : bool, optional
        Show a progress bar. The default is False.

    Returns
    -------
    Path
        Path of the manifest.

    """
    out_dir = Path(out_dir)
    (out_dir / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    pairs = toy_entries(spec)
    jobs = [(entry.entry_id, entry.path, artifact) for entry, artifact in pairs]
    worker = partial(_render_to_file, spec=spec, out_dir=out_dir)
    logger.info("rendering %d toy images (%d generators, %d seen) with %d worker(s)",
                len(jobs), spec.n_generators, spec.n_seen, workers)
    if workers <= 1:
        for job in tqdm(jobs, disable=not progress):
            worker(job)
    else:
        with multiprocessing.Pool(workers) as pool:
            for _ in tqdm(pool.imap(worker, jobs, chunksize=16), total=len(jobs), disable=not progress):
                pass
    lines = [f"toy.{name} = {value!r}" for name, value in (("seed", spec.seed), ("amplitude", spec.amplitude))]
    lines += [f"artifact {a.generator_id} kx={a.kx} ky={a.ky} phase={a.phase:.6f}" for a in spec.artifacts()]
    manifest = out_dir / MANIFEST_NAME
    write_manifest(spec.taxonomy(), [entry for entry, _ in pairs], manifest, comments=list(comments) + lines)
    return manifest


def artifact_energy(image: np.ndarray, artifact: GeneratorArtifact) -> float:
    """Spectral magnitude at the generator's bin over the mean magnitude of the spectrum.

    The image is reduced to grey and mean-subtracted; the DC bin is left out of the mean.
    Values near 1 are background level.
    """
    grey = np.asarray(image, dtype=np.float64)
    if grey.ndim == 3:
        grey = grey.mean(axis=2)
    magnitude = np.abs(np.fft.fft2(grey - grey.mean()))
    height, width = magnitude.shape
    background = (magnitude.sum() - magnitude[0, 0]) / (magnitude.size - 1)
    if background == 0:
        return 0.0
    return float(magnitude[artifact.ky % height, artifact.kx % width] / background)


def spectral_peak_classifier(images: Sequence[np.ndarray], artifacts: Sequence[GeneratorArtifact],
                             threshold: float = 3.0) -> np.ndarray:
    """Non-learned baseline: fake (1) when any known generator bin exceeds ``threshold``."""
    return np.array([int(max(artifact_energy(img, a) for a in artifacts) > threshold) for img in images],
                    dtype=int)


def plot_spectrum(image: np.ndarray, artifacts: Sequence[GeneratorArtifact] = ()):
    """Centered log-magnitude spectrum with the given generator bins circled."""
    grey = np.asarray(image, dtype=np.float64)
    if grey.ndim == 3:
        grey = grey.mean(axis=2)
    spectrum = np.fft.fftshift(np.log1p(np.abs(np.fft.fft2(grey - grey.mean()))))
    height, width = spectrum.shape
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(spectrum, cmap='magma', extent=(-width // 2, width - width // 2, height - height // 2, -height // 2))
    for a in artifacts:
        ax.scatter([a.kx, -a.kx], [a.ky, -a.ky], s=80, facecolors='none', edgecolors='cyan')
        ax.annotate(a.generator_id, (a.kx, a.ky), color='cyan', fontsize=8)
    ax.set_xlabel('kx (cycles / image)')
    ax.set_ylabel('ky (cycles / image)')
    fig.tight_layout()
    return fig
