"""Datasets: a synthetic multi-modal toy set and an image-folder loader.

The toy set is built so that colorization is genuinely multi-modal: every
image is a mid-gray background with a centered rectangle in one of four
colors chosen to have BT.601 luminance exactly zero. The grayscale
conditioning therefore carries no information about the rectangle's color,
and the conditional distribution has one mode per color.

The environment variable ``I2IDIFF_DATA_ROOT`` supplies a default root for
relative dataset paths.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

DATA_ROOT_ENV = "I2IDIFF_DATA_ROOT"

_R_G = -0.299 * 0.8 / 0.587           # green balancing R=0.8 to zero luminance
_B_G = -0.587 * 0.15 / 0.114          # blue balancing G=0.15 to zero luminance
MODE_COLORS = np.array([
    [0.8, _R_G, 0.0],
    [-0.8, -_R_G, 0.0],
    [0.0, 0.15, _B_G],
    [0.0, -0.15, -_B_G],
], dtype=np.float64)


def make_color_modes_dataset(n: int, size: int = 16, num_modes: int = 4,
                             noise_sigma: float = 0.02,
                             rng: np.random.Generator | None = None,
                             mode_probs=None):
    """Images (n, 3, size, size) in [-1, 1] plus mode labels (n,).

    ``mode_probs`` draws the rectangle color non-uniformly. An unbalanced
    prior makes the conditional median differ from the conditional mean,
    which is what separates L1-trained from L2-trained samplers; with the
    default balanced prior the mode set is symmetric and the two coincide.
    """
    if not 1 <= num_modes <= len(MODE_COLORS):
        raise ValueError(f"num_modes must be in 1..{len(MODE_COLORS)}")
    if rng is None:
        rng = np.random.default_rng(0)
    if mode_probs is None:
        labels = rng.integers(0, num_modes, size=n)
    else:
        probs = np.asarray(mode_probs, dtype=np.float64)
        if probs.shape != (num_modes,) or (probs < 0).any():
            raise ValueError("mode_probs must be %d nonnegative weights" % num_modes)
        if not np.isclose(probs.sum(), 1.0, atol=1e-9):
            raise ValueError("mode_probs must sum to 1")
        labels = rng.choice(num_modes, size=n, p=probs)
    lo, hi = size // 4, size - size // 4
    images = np.zeros((n, 3, size, size), dtype=np.float64)
    images[:, :, lo:hi, lo:hi] = MODE_COLORS[labels][:, :, None, None]
    images += rng.normal(0.0, noise_sigma, size=images.shape)
    return np.clip(images, -1.0, 1.0).astype(np.float32), labels


def resolve_data_path(path) -> Path:
    p = Path(path)
    if not p.is_absolute():
        root = os.environ.get(DATA_ROOT_ENV)
        if root:
            p = Path(root) / p
    return p


def _crop_largest_square(arr: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h, w = arr.shape[:2]
    side = min(h, w)
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    return arr[top:top + side, left:left + side]


def _crop_random(arr: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = arr.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than crop size {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return arr[top:top + size, left:left + size]


def load_image(path, crop_policy: str, size: int,
               rng: np.random.Generator) -> np.ndarray:
    """One image as (3, size, size) float32 in [-1, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    if crop_policy == "largest_square_resize":
        square = _crop_largest_square(arr, rng)
        if square.shape[0] != size:
            from PIL import Image as I
            square = np.asarray(
                I.fromarray(square).resize((size, size), I.Resampling.BILINEAR))
    elif crop_policy == "random_crop":
        square = _crop_random(arr, size, rng)
    else:
        raise ValueError(f"unknown crop policy {crop_policy!r}")
    x = square.astype(np.float32) / 127.5 - 1.0
    return x.transpose(2, 0, 1)


def load_dataset(path, crop_policy: str, size: int,
                 rng: np.random.Generator, strict: bool = True):
    """Yield (3, size, size) arrays from all decodable images under ``path``.

    Files are visited in sorted order so iteration is deterministic under a
    fixed seed. Unreadable files raise when ``strict``, otherwise they are
    reported to stderr and skipped.
    """
    import sys

    root = resolve_data_path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    exts = {".png", ".jpg", ".jpeg"}
    files = sorted(p for p in root.rglob("*") if p.suffix.lower() in exts)
    if not files:
        raise FileNotFoundError(f"no images under {root}")
    for f in files:
        try:
            yield load_image(f, crop_policy, size, rng)
        except Exception as exc:
            if strict:
                raise RuntimeError(f"failed to load {f}: {exc}") from exc
            print(f"skipping {f}: {exc}", file=sys.stderr)


def batch_iterator(images: np.ndarray, batch_size: int,
                   rng: np.random.Generator):
    """Endless uniform-with-replacement batches; deterministic per rng."""
    n = images.shape[0]
    while True:
        idx = rng.integers(0, n, size=batch_size)
        yield images[idx]
