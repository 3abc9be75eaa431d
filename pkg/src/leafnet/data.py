"""Folder-per-class dataset ingestion, splitting, decoding, and batching.

Layout: ``<root>/<class_name>/<image files>`` with jpg/jpeg/png extensions
(case-insensitive). Class indices are a pure function of the sorted class
name list, so they are stable across machines and rescans.
"""

import csv
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import tensor as T
from .tensor import Tensor

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")


class DatasetError(Exception):
    """Raised for malformed dataset trees or unsatisfiable splits."""


class ImageDecodeError(DatasetError):
    """Raised when a file cannot be decoded as an 8-bit image."""

    def __init__(self, path, reason=""):
        self.path = str(path)
        super().__init__(f"cannot decode image {self.path}" + (f": {reason}" if reason else ""))


@dataclass
class DatasetManifest:
    """Snapshot of a dataset tree: ordered class names and (path, index) samples."""

    class_names: tuple
    samples: list  # of (path, class_index)
    source_root: str = ""
    skipped: int = 0  # non-image files ignored during the scan

    def __len__(self):
        return len(self.samples)

    @property
    def num_classes(self):
        return len(self.class_names)

    def per_class_counts(self):
        counts = [0] * len(self.class_names)
        for _, idx in self.samples:
            counts[idx] += 1
        return counts


@dataclass(frozen=True)
class SplitSpec:
    """Stratified train/holdout split parameters.

    The default fraction matches a 74,651 / 93,136 partition of the full
    corpus; per-class holdout count is round(count * (1 - train_fraction)),
    clamped to [1, count - 1].
    """

    train_fraction: float = 0.8014
    seed: int = 42

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must lie strictly between 0 and 1")


@dataclass
class Batch:
    images: Tensor  # [N, 3, S, S], values in [0, 1]
    labels: list  # ints, length N
    paths: list


def load_class_mapping(path) -> dict:
    """Read a ``directory_name,canonical_name`` CSV into a dict."""
    mapping = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise DatasetError(f"mapping file {path}: expected 2 columns, got {row!r}")
            mapping[row[0]] = row[1]
    return mapping


def scan_dataset(root, mapping=None) -> DatasetManifest:
    """Walk one level of class folders and list their image files.

    ``mapping`` optionally renames directory names to canonical class names
    (dict, or path to a two-column CSV). Classes sort lexicographically by
    final name; files sort lexicographically within each class. Non-image
    files are skipped and counted.
    """
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise DatasetError(f"dataset root {root!r} is not a directory")
    if mapping is not None and not isinstance(mapping, dict):
        mapping = load_class_mapping(mapping)

    dirs = sorted(e.name for e in os.scandir(root) if e.is_dir())
    if not dirs:
        raise DatasetError(f"dataset root {root!r} contains no class folders")

    renamed = {}
    for d in dirs:
        name = mapping.get(d, d) if mapping else d
        if name in renamed:
            raise DatasetError(f"class name {name!r} maps from both {renamed[name]!r} and {d!r}")
        renamed[name] = d
    class_names = tuple(sorted(renamed))

    samples = []
    skipped = 0
    for idx, name in enumerate(class_names):
        folder = os.path.join(root, renamed[name])
        files = sorted(e.name for e in os.scandir(folder) if e.is_file())
        kept = [f for f in files if f.lower().endswith(IMAGE_EXTENSIONS)]
        skipped += len(files) - len(kept)
        if not kept:
            raise DatasetError(f"class folder {folder!r} contains no image files")
        samples.extend((os.path.join(folder, f), idx) for f in kept)
    if skipped:
        warnings.warn(f"scan of {root!r} skipped {skipped} non-image file(s)", stacklevel=2)
    return DatasetManifest(class_names=class_names, samples=samples, source_root=root, skipped=skipped)


def holdout_count(count: int, train_fraction: float) -> int:
    """round(count * (1 - fraction)), half away from zero, clamped to [1, count-1]."""
    raw = math.floor(count * (1.0 - train_fraction) + 0.5)
    return max(1, min(count - 1, raw))


def stratified_split(manifest: DatasetManifest, spec: SplitSpec):
    """Seeded per-class shuffle, then a cut at the fraction.

    Membership comes from the shuffled order; each output lists its samples
    in original manifest order. Returns (train, holdout) manifests sharing
    the input's class_names.
    """
    by_class = [[] for _ in manifest.class_names]
    for pos, (_, idx) in enumerate(manifest.samples):
        by_class[idx].append(pos)
    for idx, positions in enumerate(by_class):
        if len(positions) < 2:
            raise DatasetError(
                f"class {manifest.class_names[idx]!r} has {len(positions)} sample(s); "
                "need at least 2 to stratify")

    rng = T.Rng(spec.seed)
    holdout_positions = set()
    for positions in by_class:
        perm = rng.permutation(len(positions))
        n_hold = holdout_count(len(positions), spec.train_fraction)
        holdout_positions.update(positions[j] for j in perm[:n_hold])

    train_samples, hold_samples = [], []
    for pos, sample in enumerate(manifest.samples):
        (hold_samples if pos in holdout_positions else train_samples).append(sample)
    mk = lambda s: DatasetManifest(manifest.class_names, s, manifest.source_root)
    return mk(train_samples), mk(hold_samples)


def _bilinear_resize(img: np.ndarray, target: int) -> np.ndarray:
    """Resize HxWxC -> target x target x C with half-pixel source centers.

    Source coordinate: s = (d + 0.5) * (src / target) - 0.5, clamped to the
    image. Interpolation uses the p0 + f*(p1 - p0) form so constant images
    pass through bit-exactly.
    """
    h, w = img.shape[:2]
    if h == target and w == target:
        return img.astype(np.float64, copy=False)

    def axis_coords(src, dst):
        s = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
        s = np.clip(s, 0.0, src - 1)
        lo = np.floor(s).astype(np.int64)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, s - lo

    y0, y1, fy = axis_coords(h, target)
    x0, x1, fx = axis_coords(w, target)
    img = img.astype(np.float64, copy=False)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    p00 = img[np.ix_(y0, x0)]
    p01 = img[np.ix_(y0, x1)]
    p10 = img[np.ix_(y1, x0)]
    p11 = img[np.ix_(y1, x1)]
    top = p00 + fx * (p01 - p00)
    bot = p10 + fx * (p11 - p10)
    return top + fy * (bot - top)


def load_image(path, target: int = 256) -> Tensor:
    """Decode to 8-bit RGB, bilinear-resize to target x target, scale by /255.

    Grayscale images are promoted by channel replication; alpha is dropped.
    Returns a [3, target, target] float32 tensor with values in [0, 1].
    """
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)  # H x W x 3
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(path, str(exc)) from None
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageDecodeError(path, f"unexpected decoded shape {arr.shape}")
    resized = _bilinear_resize(arr, target) / 255.0
    chw = np.ascontiguousarray(resized.transpose(2, 0, 1), dtype=np.float32)
    return Tensor(chw)


def batch_iter(manifest, batch_size, img_size=256, shuffle=False, seed=0,
               decode_errors=None):
    """One epoch of batches. With shuffle, the whole-epoch permutation is
    drawn once from ``seed``; batches follow it in order. Samples that fail
    to decode are skipped with a warning (and appended to ``decode_errors``
    as (path, message) when given), shrinking their batch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(manifest.samples)
    order = T.Rng(seed).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        images, labels, paths = [], [], []
        for j in order[start:start + batch_size]:
            path, label = manifest.samples[int(j)]
            try:
                images.append(load_image(path, img_size).data)
            except ImageDecodeError as exc:
                warnings.warn(f"skipping {path}: {exc}", stacklevel=2)
                if decode_errors is not None:
                    decode_errors.append((path, str(exc)))
                continue
            labels.append(int(label))
            paths.append(path)
        if not images:
            continue
        yield Batch(images=Tensor(np.stack(images)), labels=labels, paths=paths)


def save_manifest(manifest: DatasetManifest, path):
    """Write ``path,class_index,class_name`` CSV (UTF-8, LF line endings)."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "class_index", "class_name"])
        for sample_path, idx in manifest.samples:
            writer.writerow([sample_path, idx, manifest.class_names[idx]])


def load_manifest(path) -> DatasetManifest:
    names = {}
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "class_index", "class_name"]:
            raise DatasetError(f"manifest {path}: unexpected header {header!r}")
        for row in reader:
            if not row:
                continue
            sample_path, idx, name = row[0], int(row[1]), row[2]
            if names.setdefault(idx, name) != name:
                raise DatasetError(f"manifest {path}: index {idx} maps to both "
                                   f"{names[idx]!r} and {name!r}")
            samples.append((sample_path, idx))
    if not samples:
        raise DatasetError(f"manifest {path} lists no samples")
    k = max(names) + 1
    if sorted(names) != list(range(k)):
        raise DatasetError(f"manifest {path}: class indices not dense 0..{k - 1}")
    return DatasetManifest(tuple(names[i] for i in range(k)), samples)


def check_class_names(expected, found, context=""):
    """Require ``found`` class names to be covered by ``expected``.

    Raises DatasetError listing the disagreeing names otherwise.
    """
    missing = [n for n in found if n not in set(expected)]
    if missing:
        raise DatasetError(
            f"{context or 'dataset'} contains class names not in the reference list: "
            + ", ".join(repr(n) for n in missing))
