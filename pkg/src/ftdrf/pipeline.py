"""End-to-end training: split, optional wiggle / MGS preprocessing, cascade, refit."""

from __future__ import annotations

import logging

import numpy as np

from .cascade import CascadeConfig, evaluate_predictions, fit_cascade_split, predict_cascade, refit_full
from .dataset import Dataset, stratified_split, wiggle_augment
from .errors import ValidationError
from .mgs import MGSConfig, fit_mgs, transform_mgs
from .persist import ModelFile

log = logging.getLogger(__name__)


def _concat(a: Dataset, b: Dataset) -> Dataset:
    return Dataset(np.concatenate([a.features, b.features]),
                   np.concatenate([a.labels, b.labels]),
                   a.n_classes, a.image_shape, a.label_names)


def train(data: Dataset, config: CascadeConfig, *, wiggle: bool = False,
          mgs: MGSConfig | None = None, augment_before_split: bool = False,
          refit: bool = False, n_jobs: int | None = None) -> ModelFile:
    """Fit the full model.

    The holdout is split off first and never augmented (unless
    ``augment_before_split``); MGS forests are fitted on the training
    portion only, and the holdout is mapped through them.
    """
    fingerprint = data.fingerprint()
    if wiggle and augment_before_split:
        data = wiggle_augment(data)
    split = stratified_split(data, config.holdout_fraction, config.seed)
    train_part, holdout = split.train, split.holdout
    if wiggle and not augment_before_split:
        train_part = wiggle_augment(train_part)
    log.info("train rows %d, holdout rows %d", train_part.n_samples, holdout.n_samples)
    mgs_model = None
    if mgs is not None:
        mgs_model = fit_mgs(train_part, mgs, n_jobs)
        train_part = transform_mgs(mgs_model, train_part, n_jobs)
        holdout = transform_mgs(mgs_model, holdout, n_jobs)
        log.info("MGS features: %d", mgs_model.output_dim)
    cascade = fit_cascade_split(train_part, holdout, config, n_jobs)
    if refit:
        cascade = refit_full(cascade, _concat(train_part, holdout), n_jobs)
    options = {
        "wiggle": wiggle,
        "mgs": mgs is not None,
        "augment_before_split": augment_before_split,
        "refit_full": refit,
    }
    return ModelFile(cascade, mgs_model, mgs, options, fingerprint)


def predict(model: ModelFile, data: Dataset, n_jobs: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and labels for raw inputs (MGS applied when present)."""
    if data.n_features != model.input_dim:
        raise ValidationError(f"model expects {model.input_dim} features, got {data.n_features}")
    if model.mgs is not None:
        if data.image_shape is None:
            data = data.with_features(data.features, model.mgs.image_shape)
        data = transform_mgs(model.mgs, data, n_jobs)
    return predict_cascade(model.cascade, data.features, n_jobs)


def evaluate_model(model: ModelFile, data: Dataset, n_jobs: int | None = None):
    if data.n_classes != model.cascade.n_classes:
        raise ValidationError(f"model has K={model.cascade.n_classes}, data has K={data.n_classes}")
    _, pred = predict(model, data, n_jobs)
    return evaluate_predictions(data.labels, pred, model.cascade.n_classes)
