"""Bundled sample corpus: a handful of synthetic grayscale test images.

The images are generated procedurally (seeded, reproducible) with
natural-image-like statistics: smooth shading, region boundaries, and
fine texture with a decaying spectrum. They make every corpus-dependent
example and the acceptance suite runnable offline.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import FrameSource, write_pgm

TRAIN_IMAGES = ("train0.pgm", "train1.pgm", "train2.pgm", "train3.pgm")
VAL_IMAGES = ("val0.pgm",)


def _synth_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """One synthetic natural-ish grayscale image in [0, 255]."""
    base = gaussian_filter(rng.normal(size=(size, size)), sigma=size / 6)
    mid = gaussian_filter(rng.normal(size=(size, size)), sigma=size / 24)
    fine = gaussian_filter(rng.normal(size=(size, size)), sigma=1.5)
    # region boundaries: quantize a smooth field into flat patches
    regions = np.round(3.0 * gaussian_filter(
        rng.normal(size=(size, size)), sigma=size / 10))
    img = 2.2 * base + 1.2 * mid + 0.35 * fine + 0.8 * regions
    img = (img - img.min()) / (img.max() - img.min())
    # mild gamma for a natural brightness distribution
    img = img ** 0.9
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint16)


def generate_sample_corpus(out_dir, seed: int = 20240) -> list[Path]:
    """Write the bundled images; deterministic for a fixed seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for name in TRAIN_IMAGES:
        path = out_dir / name
        write_pgm(path, _synth_image(rng, 512), bitdepth=8)
        paths.append(path)
    for name in VAL_IMAGES:
        path = out_dir / name
        write_pgm(path, _synth_image(rng, 256), bitdepth=8)
        paths.append(path)
    return paths


def _asset_path(name: str) -> str:
    return str(resources.files("rdoqlab").joinpath("assets").joinpath(name))


def sample_corpus_sources() -> tuple[list[FrameSource], list[FrameSource]]:
    """(train sources, validation sources) for the bundled corpus."""
    train = [FrameSource(path=_asset_path(n)) for n in TRAIN_IMAGES]
    val = [FrameSource(path=_asset_path(n)) for n in VAL_IMAGES]
    return train, val
