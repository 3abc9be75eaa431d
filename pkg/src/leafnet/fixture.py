"""Synthetic blob datasets for end-to-end runs and overfitting checks.

Each class paints a bright blob in a distinct color channel combination on
top of dark pixel noise, so classes are separable by construction: a
per-channel global max is already nearly sufficient to tell them apart.
"""

import os

import numpy as np
from PIL import Image

from .data import scan_dataset
from .tensor import Rng

# class index -> (name suffix, dominant channels)
_PALETTE = (
    ("red", (0,)),
    ("green", (1,)),
    ("blue", (2,)),
    ("yellow", (0, 1)),
    ("cyan", (1, 2)),
    ("magenta", (0, 2)),
)


def _blob_image(rng: Rng, img_size: int, channels) -> np.ndarray:
    noise = rng.integers(0, 60, (img_size, img_size, 3)).astype(np.uint8)
    cy, cx = rng.integers(0, img_size, (2,))
    radius = int(rng.integers(max(2, img_size // 4), max(3, img_size // 2 + 1)))
    level = int(rng.integers(180, 256))
    yy, xx = np.ogrid[:img_size, :img_size]
    mask = (yy - int(cy)) ** 2 + (xx - int(cx)) ** 2 <= radius * radius
    out = noise
    for ch in channels:
        out[..., ch][mask] = level
    return out


def make_blob_dataset(root, num_classes=3, per_class=100, img_size=16, seed=7):
    """Write ``root/blob_<color>/img_NNNN.png`` files; returns a manifest.

    Deterministic for a given seed: each (class, index) pair draws from its
    own derived stream, so per_class can change without moving other images.
    """
    if not 1 <= num_classes <= len(_PALETTE):
        raise ValueError(f"num_classes must be in [1, {len(_PALETTE)}]")
    master = Rng(seed)
    os.makedirs(root, exist_ok=True)
    for k in range(num_classes):
        name, channels = _PALETTE[k]
        folder = os.path.join(root, f"blob_{name}")
        os.makedirs(folder, exist_ok=True)
        class_rng = master.spawn(k)
        for i in range(per_class):
            arr = _blob_image(class_rng.spawn(i), img_size, channels)
            Image.fromarray(arr, "RGB").save(os.path.join(folder, f"img_{i:04d}.png"))
    return scan_dataset(root)


def make_overfit_dataset(root, seed=7):
    """16 tiny images (2 classes x 8) for the overfit-one-batch check."""
    return make_blob_dataset(root, num_classes=2, per_class=8, img_size=8, seed=seed)


FIXTURE_KINDS = {
    "blobs": lambda root, seed: make_blob_dataset(root, seed=seed),
    "tiny": lambda root, seed: make_overfit_dataset(root, seed=seed),
}
