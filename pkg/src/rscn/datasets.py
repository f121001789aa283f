"""Dataset loading, synthetic union-of-subspaces data and stratified folds."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# IDX type codes -> (numpy big-endian dtype, is_byte)
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

IMAGE_EXTENSIONS = (".pgm", ".png")


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Samples with shape (N, ...) plus ground-truth labels.

    Labels are kept for stratification and scoring only; the trainer is
    handed :meth:`unlabeled` views.
    """

    samples: np.ndarray
    labels: np.ndarray | None
    k: int
    d: int = 1
    name: str = "dataset"
    files: list = field(default_factory=list)

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if len(self.labels) != len(self.samples):
                raise ValueError("labels and samples differ in length")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.k):
                raise ValueError(f"labels must lie in [0, {self.k})")
        if self.d < 1:
            raise ValueError("subspace dimension d must be >= 1")

    def __len__(self):
        return len(self.samples)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        labels = None if self.labels is None else self.labels[idx]
        files = [self.files[i] for i in idx] if self.files else []
        return Dataset(self.samples[idx], labels, self.k, self.d, self.name, files)

    def unlabeled(self):
        return Dataset(self.samples, None, self.k, self.d, self.name, list(self.files))


# -- IDX -------------------------------------------------------------------------

def parse_idx(raw, scale=True):
    raw = bytes(raw)
    if len(raw) < 4:
        raise DataFormatError(f"IDX header truncated at offset {len(raw)} (need 4 bytes)")
    zero, code, ndim = raw[0:2], raw[2], raw[3]
    if zero != b"\x00\x00" or code not in _IDX_TYPES:
        raise DataFormatError(f"bad IDX magic {raw[:4].hex()} at offset 0")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"IDX dimension table truncated at offset {len(raw)} (need {header} bytes)")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_TYPES[code]
    count = int(np.prod(dims)) if dims else 0
    expected = count * dtype.itemsize
    actual = len(raw) - header
    if actual < expected:
        raise DataFormatError(
            f"IDX payload truncated at offset {len(raw)}: expected {expected} bytes, got {actual}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header).astype(np.float64)
    data = data.reshape(dims)
    if scale and code == 0x08:
        data = data / 255.0
    return data


def load_idx(path, scale=True):
    """Read an IDX file (MNIST layout). Unsigned byte payloads are scaled to [0, 1]."""
    return parse_idx(Path(path).read_bytes(), scale=scale)


def write_idx(path, array):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("write_idx only writes unsigned byte arrays")
    header = bytes([0, 0, 0x08, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


# -- images ------------------------------------------------------------------------

def read_image(path):
    from PIL import Image

    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float64)
    except Exception as err:  # PIL raises several unrelated types
        raise DataFormatError(f"cannot read image {path}: {err}") from err
    return arr / 255.0


def write_pgm(path, image):
    """Write a [0, 1] grayscale image as binary PGM (P5)."""
    img = np.clip(np.round(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def list_images(path, extension=None):
    exts = (f".{extension.lstrip('.')}".lower(),) if extension else IMAGE_EXTENSIONS
    return sorted(p for p in Path(path).iterdir() if p.is_file() and p.suffix.lower() in exts)


def stack_images(files):
    images, shape = [], None
    for f in files:
        img = read_image(f)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DataFormatError(f"images must share one size: {f} is {img.shape}, expected {shape}")
        images.append(img)
    return np.stack(images)[:, None, :, :] if images else np.zeros((0, 1, 0, 0))


def load_image_dir(path, extension=None, d=1):
    """One subdirectory per class; classes and files sorted lexicographically."""
    root = Path(path)
    if not root.is_dir():
        raise DataFormatError(f"not a directory: {root}")
    classes = sorted(p for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DataFormatError(f"no class subdirectories in {root}")
    files, labels = [], []
    for label, cdir in enumerate(classes):
        found = list_images(cdir, extension)
        if not found:
            raise DataFormatError(f"class with zero samples: {cdir}")
        files += found
        labels += [label] * len(found)
    return Dataset(stack_images(files), np.array(labels), len(classes), d, root.name,
                   [str(f) for f in files])


# -- CSV ---------------------------------------------------------------------------

def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv_matrix(path):
    """Rows are samples; a non-numeric first row is treated as a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not all(_is_number(v) for v in rows[0]):
        rows = rows[1:]
    return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)


def save_csv_matrix(path, M, header=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for row in np.atleast_2d(M):
            w.writerow([repr(float(v)) for v in row])


def load_csv_dataset(path, labels_path=None, k=None, d=1):
    X = load_csv_matrix(path)
    labels = None
    if labels_path:
        labels = load_csv_matrix(labels_path).astype(int).ravel()
        k = k or int(labels.max()) + 1
    if k is None:
        raise ValueError("number of clusters k is required for unlabeled CSV data")
    return Dataset(X, labels, k, d, Path(path).stem)


# -- synthetic ---------------------------------------------------------------------

def synth_subspaces(k, d_sub, ambient_dim, n_per_class, noise_sigma=0.0,
                    outlier_frac=0.0, outlier_mag=0.0, seed=0):
    """Samples from k random d_sub-dimensional subspaces of R^ambient_dim.

    Returns a Dataset whose samples have shape (N, ambient_dim). Impulsive
    corruption replaces exactly round(outlier_frac * N * ambient_dim)
    entries by values uniform in [-outlier_mag, outlier_mag].
    """
    if not 1 <= d_sub < ambient_dim:
        raise ValueError("need 1 <= d_sub < ambient_dim")
    if n_per_class <= d_sub:
        raise ValueError("need n_per_class > d_sub")
    if not 0 <= outlier_frac <= 1 or noise_sigma < 0 or outlier_mag < 0:
        raise ValueError("noise_sigma, outlier_mag must be >= 0 and outlier_frac in [0, 1]")
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for c in range(k):
        B, _ = np.linalg.qr(rng.standard_normal((ambient_dim, d_sub)))
        W = rng.standard_normal((d_sub, n_per_class))
        blocks.append((B @ W).T)
        labels += [c] * n_per_class
    X = np.vstack(blocks)
    if noise_sigma > 0:
        X = X + noise_sigma * rng.standard_normal(X.shape)
    n_bad = int(round(outlier_frac * X.size))
    if n_bad:
        pos = rng.choice(X.size, size=n_bad, replace=False)
        X.flat[pos] = rng.uniform(-outlier_mag, outlier_mag, size=n_bad)
    return Dataset(X, np.array(labels), k, d_sub, "synth_subspaces")


def _pattern(rng, size, frequency):
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta, phase = rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi)
    return np.cos(2 * np.pi * frequency * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)


def synth_images(k, n_per_class, size=16, d_sub=2, noise_sigma=0.02, seed=0):
    """Tiny grayscale images; class c spans d_sub nonnegative grating patterns.

    Each image is a convex mix of its class patterns (values in [0, 1]), so
    every class lies in a d_sub-dimensional linear subspace of pixel space
    before noise. Samples have shape (N, 1, size, size).
    """
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c in range(k):
        basis = [0.5 * (1 + _pattern(rng, size, frequency=1.5 + c)) for _ in range(d_sub)]
        for _ in range(n_per_class):
            w = rng.uniform(0.2, 1.0, size=d_sub)
            img = sum(wi * b for wi, b in zip(w, basis)) / w.sum()
            img = img + noise_sigma * rng.standard_normal(img.shape)
            images.append(np.clip(img, 0, 1))
            labels.append(c)
    return Dataset(np.stack(images)[:, None], np.array(labels), k, d_sub, "synth_images")


# -- folds ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class FoldPlan:
    num_folds: int
    folds: tuple
    seed: int
    regime: str

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return len(self.folds)


def _stratified_parts(labels, num_folds, rng):
    parts = [[] for _ in range(num_folds)]
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < num_folds:
            raise ValueError(f"class {c} has {len(idx)} samples, fewer than {num_folds} folds")
        idx = rng.permutation(idx)
        # rotate the starting fold per class so fold sizes stay balanced overall
        for j, i in enumerate(idx):
            parts[(j + offset) % num_folds].append(int(i))
        offset += len(idx) % num_folds
    return [np.sort(np.array(p, dtype=int)) for p in parts]


def _stratified_split(idx, labels, train_fraction, rng):
    train, test = [], []
    for c in np.unique(labels[idx]):
        members = rng.permutation(idx[labels[idx] == c])
        n_train = int(round(train_fraction * len(members)))
        train += members[:n_train].tolist()
        test += members[n_train:].tolist()
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def stratified_folds(labels, num_folds, seed=0, regime="fold_train", train_fraction=0.7):
    """Stratified folds.

    ``regime='fold_train'``: each fold trains, the remaining folds test.
    ``regime='within_fold'``: each fold is split train/test by ``train_fraction``.
    """
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(seed)
    parts = _stratified_parts(labels, num_folds, rng)
    folds = []
    for f, part in enumerate(parts):
        if regime == "fold_train":
            test = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != f])) \
                if num_folds > 1 else np.array([], dtype=int)
            folds.append(Fold(part, test))
        elif regime == "within_fold":
            folds.append(Fold(*_stratified_split(part, labels, train_fraction, rng)))
        else:
            raise ValueError(f"unknown fold regime {regime!r}")
    return FoldPlan(num_folds, tuple(folds), seed, regime)
