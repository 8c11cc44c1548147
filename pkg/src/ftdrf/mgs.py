"""Multi-grained scanning: sliding-window forests turned into image features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import Dataset
from .errors import ValidationError
from .layer import LayerModel, LayerParams, derive_seed, fit_layer, predict_layer
from .tree import TreeParams

# Images per transform batch; bounds the window matrix held in memory.
_BATCH = 256


@dataclass(frozen=True)
class MGSConfig:
    window_sizes: tuple[int, ...] = (7, 9, 14)
    stride: int = 1
    trees_per_forest: int = 30
    seed: int = 0
    sample_fraction: float = 1.0
    tree_params_standard: TreeParams = field(default_factory=lambda: TreeParams("standard"))
    tree_params_extra: TreeParams = field(default_factory=lambda: TreeParams("extra_random"))

    def __post_init__(self):
        object.__setattr__(self, "window_sizes", tuple(int(w) for w in self.window_sizes))
        if not self.window_sizes or min(self.window_sizes) < 1:
            raise ValidationError("window sizes must be positive and non-empty")
        if self.stride < 1:
            raise ValidationError("stride must be >= 1")
        if self.trees_per_forest < 1:
            raise ValidationError("trees_per_forest must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValidationError("sample_fraction must lie in (0, 1]")

    def forest_params(self, window_index: int, kind: str) -> LayerParams:
        # type_mix_p of 0 or 1 turns the half-half layer into a pure forest.
        return LayerParams(
            n_trees=self.trees_per_forest,
            type_mix_p=1.0 if kind == "extra_random" else 0.0,
            tree_params_standard=self.tree_params_standard,
            tree_params_extra=self.tree_params_extra,
            seed=derive_seed(self.seed, window_index, 0 if kind == "standard" else 1),
        )


def n_windows(image_shape: tuple[int, int], w: int, stride: int = 1) -> int:
    rows, cols = image_shape
    if w > min(rows, cols):
        raise ValidationError(f"window {w} larger than image {rows}x{cols}")
    return ((rows - w) // stride + 1) * ((cols - w) // stride + 1)


def mgs_output_dim(image_shape, window_sizes, n_classes: int, stride: int = 1) -> int:
    return sum(2 * n_classes * n_windows(image_shape, w, stride) for w in window_sizes)


def extract_windows(image: np.ndarray, w: int, stride: int = 1) -> np.ndarray:
    """All ``w x w`` windows of one image, row-major scan, each flattened row-major."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValidationError("image must be a 2-D matrix")
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    n_windows(image.shape, w, stride)
    view = sliding_window_view(image, (w, w))[::stride, ::stride]
    return view.reshape(-1, w * w).copy()


def _batch_windows(images: np.ndarray, w: int, stride: int) -> np.ndarray:
    # (n, R, C) -> (n * n_windows, w * w), image-major then scan order.
    view = sliding_window_view(images, (w, w), axis=(1, 2))[:, ::stride, ::stride]
    return np.ascontiguousarray(view).reshape(-1, w * w)


@dataclass(frozen=True, eq=False)
class MGSModel:
    """One (standard, extra-random) forest pair per window size."""

    window_sizes: tuple[int, ...]
    stride: int
    forests: tuple[tuple[LayerModel, LayerModel], ...]
    n_classes: int
    image_shape: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "window_sizes", tuple(self.window_sizes))
        object.__setattr__(self, "forests", tuple(tuple(p) for p in self.forests))
        object.__setattr__(self, "image_shape", tuple(self.image_shape))
        problems = self.check()
        if problems:
            raise ValidationError("; ".join(problems))

    def check(self) -> list[str]:
        problems = []
        if len(self.forests) != len(self.window_sizes):
            return [f"{len(self.forests)} forest pairs for {len(self.window_sizes)} window sizes"]
        for w, pair in zip(self.window_sizes, self.forests):
            if len(pair) != 2:
                problems.append(f"window {w}: expected 2 forests, got {len(pair)}")
                continue
            try:
                n_windows(self.image_shape, w, self.stride)
            except ValidationError as exc:
                problems.append(str(exc))
            for name, forest in zip(("standard", "extra"), pair):
                if forest.input_dim != w * w:
                    problems.append(f"window {w}: {name} forest takes {forest.input_dim} inputs")
                if forest.n_classes != self.n_classes:
                    problems.append(f"window {w}: {name} forest has K={forest.n_classes}")
        return problems

    @property
    def output_dim(self) -> int:
        return mgs_output_dim(self.image_shape, self.window_sizes, self.n_classes, self.stride)


def _sample_images(data: Dataset, fraction: float, seed: int) -> Dataset:
    if fraction >= 1.0:
        return data
    n = max(1, int(round(fraction * data.n_samples)))
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, 2**31)))
    return data.subset(np.sort(rng.choice(data.n_samples, n, replace=False)))


def fit_mgs(data: Dataset, config: MGSConfig, n_jobs: int | None = None) -> MGSModel:
    """Fit a standard and an extra-random forest on every window of every image.

    Each window inherits the label of its source image.
    """
    if data.image_shape is None:
        raise ValidationError("fit_mgs requires a dataset with image_shape")
    for w in config.window_sizes:
        n_windows(data.image_shape, w, config.stride)
    data = _sample_images(data, config.sample_fraction, config.seed)
    images = data.features.reshape(-1, *data.image_shape)
    forests = []
    for i, w in enumerate(config.window_sizes):
        X = _batch_windows(images, w, config.stride)
        X.flags.writeable = False
        y = np.repeat(data.labels, n_windows(data.image_shape, w, config.stride))
        windows = Dataset(X, y, data.n_classes)
        pair = tuple(fit_layer(windows, config.forest_params(i, kind), n_jobs)
                     for kind in ("standard", "extra_random"))
        forests.append(pair)
    return MGSModel(config.window_sizes, config.stride, tuple(forests), data.n_classes,
                    data.image_shape)


def transform_mgs(model: MGSModel, images: Dataset, n_jobs: int | None = None) -> Dataset:
    """Forest-level window probabilities, concatenated per image.

    Layout per image: window sizes in model order, then windows in scan
    order, then the standard forest's K-block before the extra forest's.
    """
    if images.image_shape != model.image_shape:
        raise ValidationError(f"model expects images {model.image_shape}, got {images.image_shape}")
    K = model.n_classes
    N = images.n_samples
    out = np.empty((N, model.output_dim))
    stack = images.features.reshape(-1, *model.image_shape)
    col = 0
    for w, (std, ext) in zip(model.window_sizes, model.forests):
        nw = n_windows(model.image_shape, w, model.stride)
        width = 2 * K * nw
        for a in range(0, N, _BATCH):
            b = min(N, a + _BATCH)
            X = _batch_windows(stack[a:b], w, model.stride)
            p_std, _ = predict_layer(std, X, n_jobs)
            p_ext, _ = predict_layer(ext, X, n_jobs)
            block = np.stack([p_std, p_ext], axis=1).reshape(b - a, width)
            out[a:b, col:col + width] = block
        col += width
    out.flags.writeable = False
    return images.with_features(out)
