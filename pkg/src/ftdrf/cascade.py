"""Greedy layer-by-layer growth of the forest cascade with holdout-based stopping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset, stratified_split
from .errors import ValidationError
from .layer import LayerModel, LayerParams, derive_seed, fit_layer, predict_layer, transform_layer

log = logging.getLogger(__name__)

GAIN_MODES = ("relative", "remaining-error")


def relative_gain(prev_accuracy: float, curr_accuracy: float, mode: str = "relative") -> float:
    """Layer-over-layer improvement in holdout accuracy.

    ``relative``: ``(curr - prev) / prev``.
    ``remaining-error``: ``(curr - prev) / (1 - prev)``, the share of the
    previous error removed; with ``prev == 1`` it is 0 if nothing changed and
    ``-inf`` otherwise.
    """
    if mode == "relative":
        if prev_accuracy <= 0:
            raise ValidationError("relative gain is undefined for a previous accuracy of 0")
        return (curr_accuracy - prev_accuracy) / prev_accuracy
    if mode == "remaining-error":
        remaining = 1.0 - prev_accuracy
        if remaining <= 0:
            return 0.0 if curr_accuracy >= prev_accuracy else -math.inf
        return (curr_accuracy - prev_accuracy) / remaining
    raise ValidationError(f"unknown gain mode {mode!r}; expected one of {GAIN_MODES}")


@dataclass(frozen=True)
class CascadeConfig:
    layer_params: LayerParams = field(default_factory=LayerParams)
    holdout_fraction: float = 0.2
    gain_threshold: float = 0.01
    gain_mode: str = "relative"
    max_layers: int = 10
    min_layers: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValidationError("holdout_fraction must lie in (0, 1)")
        if self.gain_threshold < 0:
            raise ValidationError("gain_threshold must be >= 0")
        if self.gain_mode not in GAIN_MODES:
            raise ValidationError(f"gain_mode must be one of {GAIN_MODES}")
        if self.min_layers < 1 or self.max_layers < 1:
            raise ValidationError("min_layers and max_layers must be >= 1")
        if self.min_layers > self.max_layers:
            raise ValidationError("min_layers must not exceed max_layers")

    def params_for_layer(self, index: int) -> LayerParams:
        """Layer ``index`` (1-based) gets a seed hashed from the cascade seed."""
        lp = self.layer_params
        return LayerParams(lp.n_trees, lp.type_mix_p, lp.tree_params_standard,
                           lp.tree_params_extra, derive_seed(self.seed, index))


@dataclass(frozen=True)
class LayerRecord:
    layer: int
    holdout_accuracy: float
    relative_gain: float | None
    n_standard: int
    n_extra: int
    kept: bool = True


@dataclass(frozen=True, eq=False)
class CascadeModel:
    """Fitted cascade.

    ``history`` has one record per kept layer. ``rejected`` is the layer that
    failed the gain test (None when growth stopped at ``max_layers``).
    """

    layers: tuple[LayerModel, ...]
    n_classes: int
    input_dim: int
    history: tuple[LayerRecord, ...]
    config: CascadeConfig
    rejected: LayerRecord | None = None
    stop_reason: str = "max_layers"
    refit_full: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "history", tuple(self.history))
        problems = self.check()
        if problems:
            raise ValidationError("; ".join(problems))

    def check(self) -> list[str]:
        problems = []
        if not self.layers:
            problems.append("cascade has no layers")
        if len(self.history) != len(self.layers):
            problems.append(f"history has {len(self.history)} entries for {len(self.layers)} layers")
        dim = self.input_dim
        for i, layer in enumerate(self.layers, start=1):
            if layer.input_dim != dim:
                problems.append(f"layer {i} expects {layer.input_dim} inputs, receives {dim}")
            if layer.n_classes != self.n_classes:
                problems.append(f"layer {i} has K={layer.n_classes}, cascade K={self.n_classes}")
            dim = layer.output_dim
        return problems

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def _frozen(X: np.ndarray) -> np.ndarray:
    # Lets Dataset adopt the matrix without copying it.
    X.flags.writeable = False
    return X


def _accuracy(layer: LayerModel, X: np.ndarray, y: np.ndarray, n_jobs) -> float:
    _, pred = predict_layer(layer, X, n_jobs)
    return float(np.mean(pred == y))


def fit_cascade(data: Dataset, config: CascadeConfig, n_jobs: int | None = None,
                augment: Callable[[Dataset], Dataset] | None = None) -> CascadeModel:
    """Split off a stratified holdout, then grow layers until the gain stalls.

    ``augment`` is applied to the training portion only, after the split.
    """
    split = stratified_split(data, config.holdout_fraction, config.seed)
    train = augment(split.train) if augment is not None else split.train
    return fit_cascade_split(train, split.holdout, config, n_jobs)


def fit_cascade_split(train: Dataset, holdout: Dataset, config: CascadeConfig,
                      n_jobs: int | None = None) -> CascadeModel:
    """Grow the cascade on explicit train/holdout sets."""
    if train.n_samples == 0:
        raise ValidationError("training portion is empty after the holdout split")
    if holdout.n_samples == 0:
        raise ValidationError("holdout portion is empty; cannot measure layer gains")
    if train.n_features != holdout.n_features or train.n_classes != holdout.n_classes:
        raise ValidationError("train and holdout sets disagree on d or K")

    X_tr, y_tr = train.features, train.labels
    X_ho, y_ho = holdout.features, holdout.labels
    layers: list[LayerModel] = []
    history: list[LayerRecord] = []
    rejected = None
    stop_reason = "max_layers"
    for index in range(1, config.max_layers + 1):
        t0 = time.perf_counter()
        params = config.params_for_layer(index)
        layer = fit_layer(Dataset(X_tr, y_tr, train.n_classes), params, n_jobs)
        acc = _accuracy(layer, X_ho, y_ho, n_jobs)
        counts = layer.kind_counts()
        gain = None
        if history:
            prev = history[-1].holdout_accuracy
            if config.gain_mode == "relative" and prev == 0:
                gain = math.inf if acc > 0 else 0.0
            else:
                gain = relative_gain(prev, acc, config.gain_mode)
        record = LayerRecord(index, acc, gain, counts["standard"], counts["extra_random"])
        log.info("layer %d: holdout accuracy %.4f, gain %s (%.1fs)", index, acc,
                 "-" if gain is None else f"{gain:+.5f}", time.perf_counter() - t0)
        if gain is not None and gain < config.gain_threshold and len(layers) >= config.min_layers:
            rejected = LayerRecord(index, acc, gain, counts["standard"], counts["extra_random"],
                                   kept=False)
            stop_reason = "gain"
            break
        layers.append(layer)
        history.append(record)
        if index < config.max_layers:
            X_tr = _frozen(transform_layer(layer, X_tr, n_jobs))
            X_ho = transform_layer(layer, X_ho, n_jobs)
    return CascadeModel(tuple(layers), train.n_classes, train.n_features, tuple(history),
                        config, rejected, stop_reason)


def refit_full(model: CascadeModel, data: Dataset, n_jobs: int | None = None) -> CascadeModel:
    """Retrain every layer on all of ``data`` keeping the layer count and seeds."""
    if data.n_features != model.input_dim:
        raise ValidationError(f"model expects {model.input_dim} features, got {data.n_features}")
    X = data.features
    layers = []
    for index in range(1, model.n_layers + 1):
        layer = fit_layer(Dataset(X, data.labels, data.n_classes),
                          model.config.params_for_layer(index), n_jobs)
        layers.append(layer)
        if index < model.n_layers:
            X = _frozen(transform_layer(layer, X, n_jobs))
    return CascadeModel(tuple(layers), model.n_classes, model.input_dim, model.history,
                        model.config, model.rejected, model.stop_reason, refit_full=True)


def _check_input(model: CascadeModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValidationError(f"model expects {model.input_dim} columns, got shape {X.shape}")
    return X


def transform_through(model: CascadeModel, X, n_layers: int | None = None,
                      n_jobs: int | None = None) -> np.ndarray:
    """Map ``X`` through the first ``n_layers`` layers (default: all but the last)."""
    X = _check_input(model, X)
    if n_layers is None:
        n_layers = model.n_layers - 1
    if not 0 <= n_layers <= model.n_layers:
        raise ValidationError(f"n_layers must lie in [0, {model.n_layers}]")
    for layer in model.layers[:n_layers]:
        X = transform_layer(layer, X, n_jobs)
    return X


def predict_cascade(model: CascadeModel, X, n_jobs: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    Z = transform_through(model, X, model.n_layers - 1, n_jobs)
    return predict_layer(model.layers[-1], Z, n_jobs)


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray  # confusion[true, predicted]

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())


def evaluate_predictions(y_true, y_pred, n_classes: int) -> EvaluationReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValidationError("label and prediction vectors differ in length")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
    accuracy = float(np.trace(confusion) / max(len(y_true), 1))
    return EvaluationReport(accuracy, per_class, confusion)


def evaluate(model: CascadeModel, data: Dataset, n_jobs: int | None = None) -> EvaluationReport:
    if data.n_features != model.input_dim:
        raise ValidationError(f"model expects {model.input_dim} features, got {data.n_features}")
    if data.n_classes != model.n_classes:
        raise ValidationError(f"model has K={model.n_classes}, data has K={data.n_classes}")
    _, pred = predict_cascade(model, data.features, n_jobs)
    return evaluate_predictions(data.labels, pred, model.n_classes)
