"""Datasets: loading (IDX, CSV), stratified holdout splits and pixel-wiggle augmentation."""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError, TruncatedFileError, ValidationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# (row shift, col shift) of the four diagonal copies, in output block order.
WIGGLE_SHIFTS = (
    (-1, -1),  # up-left
    (-1, 1),  # up-right
    (1, -1),  # down-left
    (1, 1),  # down-right
)


def _frozen(a, dtype) -> np.ndarray:
    # Read-only arrays of the right layout are shared, everything else copied.
    a = np.asarray(a)
    if a.dtype != dtype or not a.flags.c_contiguous or a.flags.writeable:
        a = np.array(a, dtype=dtype, order="C")
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labelled design matrix.

    ``features`` is an ``(N, d)`` float64 array and ``labels`` an ``(N,)`` int64
    array of class ids in ``[0, n_classes)``. ``image_shape`` is set when each
    row is a flattened monochrome image. ``label_names`` records the raw label
    for each dense class id when labels were re-encoded on load.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    image_shape: tuple[int, int] | None = None
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = _frozen(self.features, np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1:
            raise ValidationError(f"labels must be 1-D, got shape {y.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValidationError(
                f"feature rows ({X.shape[0]}) != label count ({y.shape[0]})"
            )
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValidationError("labels must be integers")
        y = _frozen(y, np.int64)
        K = int(self.n_classes)
        if K < 2:
            raise ValidationError(f"n_classes must be >= 2, got {K}")
        if y.size and (y.min() < 0 or y.max() >= K):
            raise ValidationError(f"labels must lie in [0, {K - 1}]")
        if not np.all(np.isfinite(X)):
            raise ValidationError("features contain NaN or Inf")
        shape = self.image_shape
        if shape is not None:
            shape = (int(shape[0]), int(shape[1]))
            if shape[0] * shape[1] != X.shape[1]:
                raise ValidationError(
                    f"image_shape {shape} does not match d={X.shape[1]}"
                )
        names = self.label_names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != K:
                raise ValidationError("label_names must have n_classes entries")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", K)
        object.__setattr__(self, "image_shape", shape)
        object.__setattr__(self, "label_names", names)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            self.features[rows],
            self.labels[rows],
            self.n_classes,
            self.image_shape,
            self.label_names,
        )

    def with_features(self, features, image_shape=None) -> Dataset:
        """Same labels, new feature matrix (image shape dropped unless given)."""
        return Dataset(features, self.labels, self.n_classes, image_shape, self.label_names)

    def fingerprint(self) -> dict:
        h = hashlib.sha256()
        h.update(self.features.astype("<f8", copy=False).tobytes())
        h.update(self.labels.astype("<i8", copy=False).tobytes())
        return {
            "n_samples": self.n_samples,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "sha256": h.hexdigest(),
        }


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: Dataset
    holdout: Dataset
    seed: int
    train_rows: np.ndarray = field(repr=False)
    holdout_rows: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# IDX

def _read_exact(fh, n: int, path) -> bytes:
    offset = fh.tell()
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(path, offset + len(buf), n - len(buf))
    return buf


def _read_idx(path, expected_magic: int, n_dims: int) -> tuple[tuple[int, ...], np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, path))
        if magic != expected_magic:
            raise FormatError(
                f"{path}: bad magic number 0x{magic:08X}, expected 0x{expected_magic:08X}"
            )
        dims = struct.unpack(f">{n_dims}I", _read_exact(fh, 4 * n_dims, path))
        size = int(np.prod(dims, dtype=np.int64))
        payload = _read_exact(fh, size, path)
    return dims, np.frombuffer(payload, dtype=np.uint8)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (MNIST layout).

    Pixels are scaled to ``[0, 1]`` by dividing by 255. ``n_classes`` defaults
    to ``max(label) + 1`` (at least 2).
    """
    (n_img, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_lab,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise ConsistencyError(
            f"{images_path} holds {n_img} images but {labels_path} holds {n_lab} labels"
        )
    X = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    K = n_classes if n_classes is not None else max(int(labels.max(initial=0)) + 1, 2)
    return Dataset(X, labels.astype(np.int64), K, image_shape=(rows, cols))


def save_idx(data: Dataset, images_path, labels_path) -> None:
    """Write ``data`` as an IDX pair; features are rescaled by 255 and rounded."""
    if data.image_shape is None:
        raise ValidationError("save_idx requires image_shape")
    rows, cols = data.image_shape
    pix = np.clip(np.rint(data.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, data.n_samples, rows, cols))
        fh.write(pix.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, data.n_samples))
        fh.write(data.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# CSV

def _label_sort_key(raw: list[str]):
    try:
        return sorted(set(raw), key=float)
    except ValueError:
        return sorted(set(raw))


def load_csv(path, label_column: str) -> Dataset:
    """Read a headed CSV; every column except ``label_column`` must be numeric.

    Raw labels are re-encoded to dense ids in sorted order (numeric order when
    every label parses as a number); the raw values are kept in ``label_names``.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ValidationError(f"{path}: label column {label_column!r} not in header")
        li = header.index(label_column)
        feat_cols = [j for j in range(len(header)) if j != li]
        rows, raw_labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise FormatError(
                    f"{path}: row {lineno} has {len(rec)} fields, header has {len(header)}"
                )
            vals = []
            for j in feat_cols:
                try:
                    vals.append(float(rec[j]))
                except ValueError:
                    raise FormatError(
                        f"{path}: non-numeric value {rec[j]!r} at row {lineno}, "
                        f"column {header[j]!r}"
                    ) from None
            rows.append(vals)
            raw_labels.append(rec[li].strip())
    names = _label_sort_key(raw_labels)
    if len(names) < 2:
        raise ValidationError(f"{path}: need at least 2 distinct labels, found {len(names)}")
    code = {name: i for i, name in enumerate(names)}
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    y = np.array([code[r] for r in raw_labels], dtype=np.int64)
    return Dataset(X, y, len(names), label_names=tuple(names))


def save_csv(data: Dataset, path, label_column: str = "label", precision: int | None = None) -> None:
    """Write ``data`` as CSV.

    With ``precision=None`` floats are written in shortest round-trip form, so
    :func:`load_csv` restores them bit-equal. Otherwise ``precision``
    significant digits are used.
    """
    fmt = repr if precision is None else (lambda v: f"{v:.{precision}g}")
    names = data.label_names or tuple(str(k) for k in range(data.n_classes))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(data.n_features)] + [label_column])
        for xrow, lab in zip(data.features.tolist(), data.labels.tolist()):
            w.writerow([fmt(v) for v in xrow] + [names[lab]])


# ---------------------------------------------------------------------------
# splitting and augmentation

def _holdout_counts(counts: np.ndarray, fraction: float) -> np.ndarray:
    # Largest-remainder apportionment of round(fraction * N) over classes.
    ideal = counts * fraction
    base = np.floor(ideal).astype(np.int64)
    total = int(round(fraction * counts.sum()))
    short = total - int(base.sum())
    if short > 0:
        frac = ideal - base
        order = np.lexsort((np.arange(len(counts)), -frac))
        for k in order[:short]:
            base[k] += 1
    return np.minimum(base, np.maximum(counts - 1, 0))


def stratified_split(data: Dataset, holdout_fraction: float, seed: int) -> SplitPair:
    """Seeded per-class holdout split; both parts keep the original row order."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValidationError(f"holdout_fraction must lie in (0, 1), got {holdout_fraction}")
    counts = data.class_counts()
    lonely = [k for k, c in enumerate(counts) if c == 1]
    if lonely:
        raise ValidationError(f"classes {lonely} have a single sample; need >= 2 to split")
    want = _holdout_counts(counts, holdout_fraction)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    picked = []
    for k in range(data.n_classes):
        idx = np.flatnonzero(data.labels == k)
        if want[k]:
            picked.append(rng.permutation(idx)[: want[k]])
    hold_rows = np.sort(np.concatenate(picked)) if picked else np.empty(0, np.int64)
    mask = np.zeros(data.n_samples, dtype=bool)
    mask[hold_rows] = True
    train_rows = np.flatnonzero(~mask)
    return SplitPair(
        train=data.subset(train_rows),
        holdout=data.subset(hold_rows),
        seed=seed,
        train_rows=train_rows,
        holdout_rows=hold_rows,
    )


def shift_images(images: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Translate a stack of images by (dr, dc) pixels; vacated pixels become 0."""
    out = np.zeros_like(images)
    R, C = images.shape[1:]
    src_r = slice(max(0, -dr), R - max(0, dr))
    dst_r = slice(max(0, dr), R - max(0, -dr))
    src_c = slice(max(0, -dc), C - max(0, dc))
    dst_c = slice(max(0, dc), C - max(0, -dc))
    out[:, dst_r, dst_c] = images[:, src_r, src_c]
    return out


def wiggle_augment(data: Dataset) -> Dataset:
    """Return the originals followed by the four one-pixel diagonal shifts (5N rows)."""
    if data.image_shape is None:
        raise ValidationError("wiggle_augment requires a dataset with image_shape")
    R, C = data.image_shape
    imgs = data.features.reshape(-1, R, C)
    blocks = [data.features] + [
        shift_images(imgs, dr, dc).reshape(-1, R * C) for dr, dc in WIGGLE_SHIFTS
    ]
    return Dataset(
        np.concatenate(blocks),
        np.tile(data.labels, 1 + len(WIGGLE_SHIFTS)),
        data.n_classes,
        data.image_shape,
        data.label_names,
    )


def limit_rows(data: Dataset, n: int | None) -> Dataset:
    """First ``n`` rows of ``data`` (all rows when ``n`` is None)."""
    if n is None or n >= data.n_samples:
        return data
    if n < 1:
        raise ValidationError(f"row limit must be positive, got {n}")
    return data.subset(np.arange(n))
