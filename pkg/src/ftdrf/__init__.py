"""Forward-thinking deep random forests.

A cascade of forest layers trained greedily one layer at a time. Each layer
mixes bootstrapped CART trees with extra-random trees and maps every sample to
the concatenation of its trees' leaf class-probability vectors; that matrix is
the next layer's training input. Layers are added while holdout accuracy keeps
improving by a relative margin.

>>> from ftdrf import load_idx, CascadeConfig, LayerParams, fit_cascade, evaluate
>>> train = load_idx("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
>>> test = load_idx("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
>>> model = fit_cascade(train, CascadeConfig(LayerParams(n_trees=200)))
>>> evaluate(model, test).accuracy
"""

from .cascade import (
    CascadeConfig,
    CascadeModel,
    EvaluationReport,
    LayerRecord,
    evaluate,
    fit_cascade,
    fit_cascade_split,
    predict_cascade,
    refit_full,
    relative_gain,
    transform_through,
)
from .dataset import (
    Dataset,
    SplitPair,
    load_csv,
    load_idx,
    save_csv,
    stratified_split,
    wiggle_augment,
)
from .errors import (
    ConsistencyError,
    FormatError,
    FTDRFError,
    IntegrityError,
    PersistError,
    TruncatedFileError,
    ValidationError,
    VersionError,
)
from .layer import LayerModel, LayerParams, fit_layer, predict_layer, transform_layer
from .mgs import MGSConfig, MGSModel, extract_windows, fit_mgs, transform_mgs
from .persist import ModelFile, load_model, save_model
from .tree import (
    SplitCandidate,
    TreeModel,
    TreeParams,
    best_split_extra,
    best_split_standard,
    fit_tree,
    impurity,
    predict_proba_tree,
)

__version__ = "0.1.0"

__all__ = [
    "CascadeConfig", "CascadeModel", "EvaluationReport", "LayerRecord", "evaluate",
    "fit_cascade", "fit_cascade_split", "predict_cascade", "refit_full", "relative_gain",
    "transform_through",
    "Dataset", "SplitPair", "load_csv", "load_idx", "save_csv", "stratified_split",
    "wiggle_augment",
    "ConsistencyError", "FormatError", "FTDRFError", "IntegrityError", "PersistError",
    "TruncatedFileError", "ValidationError", "VersionError",
    "LayerModel", "LayerParams", "fit_layer", "predict_layer", "transform_layer",
    "MGSConfig", "MGSModel", "extract_windows", "fit_mgs", "transform_mgs",
    "ModelFile", "load_model", "save_model",
    "SplitCandidate", "TreeModel", "TreeParams", "best_split_extra", "best_split_standard",
    "fit_tree", "impurity", "predict_proba_tree",
]
