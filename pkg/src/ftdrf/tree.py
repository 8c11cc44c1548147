"""Single decision trees: standard (bootstrap, best midpoint) and extra-random."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K_
from .dataset import Dataset
from .errors import ValidationError

KINDS = ("standard", "extra_random")
CRITERIA = ("entropy", "gini")
LEAF_SUM_TOL = 1e-9


def _kind_code(kind: str) -> int:
    return KINDS.index(kind)


def _criterion_code(criterion: str) -> int:
    if criterion not in CRITERIA:
        raise ValidationError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    return CRITERIA.index(criterion)


def default_mtry(d: int) -> int:
    return max(1, int(round(math.sqrt(d))))


@dataclass(frozen=True)
class TreeParams:
    """Growth settings for one tree.

    ``mtry=None`` resolves to ``round(sqrt(d))`` at fit time and
    ``bootstrap=None`` to the per-kind default (on for standard trees, off for
    extra-random ones).
    """

    kind: str = "standard"
    criterion: str = "entropy"
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    mtry: int | None = None
    bootstrap: bool | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown tree kind {self.kind!r}; expected one of {KINDS}")
        _criterion_code(self.criterion)
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0 or None")
        if self.min_samples_split < 2:
            raise ValidationError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValidationError("min_samples_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValidationError("mtry must be >= 1")

    @property
    def uses_bootstrap(self) -> bool:
        return self.kind == "standard" if self.bootstrap is None else bool(self.bootstrap)

    def resolve_mtry(self, d: int) -> int:
        m = default_mtry(d) if self.mtry is None else self.mtry
        if not 1 <= m <= d:
            raise ValidationError(f"mtry={m} outside [1, {d}]")
        return m

    def as_kind(self, kind: str) -> TreeParams:
        return replace(self, kind=kind)


@dataclass(frozen=True)
class SplitCandidate:
    feature_index: int
    threshold: float
    impurity_decrease: float


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Binary tree stored as flat preorder node arrays.

    ``feature[i] == -1`` marks node ``i`` as a leaf whose class-probability
    vector is ``value[i]``; internal nodes route ``x[feature] <= threshold`` to
    ``left[i]`` and everything else to ``right[i]``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    kind: str
    n_classes: int
    n_features_in: int

    def __post_init__(self):
        for name, dtype in (("feature", np.int32), ("threshold", np.float64),
                            ("left", np.int32), ("right", np.int32), ("value", np.float64)):
            a = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max(initial=0))

    def check(self) -> list[str]:
        """Return every violated invariant as a message (empty when valid)."""
        problems = []
        n = self.n_nodes
        if self.kind not in KINDS:
            problems.append(f"unknown kind {self.kind!r}")
        if n == 0:
            return problems + ["tree has no nodes"]
        if any(a.shape != (n,) for a in (self.threshold, self.left, self.right)):
            return problems + ["node arrays differ in length"]
        if self.value.shape != (n, self.n_classes):
            return problems + [f"value matrix has shape {self.value.shape}"]
        seen = np.zeros(n, dtype=np.int64)
        seen[0] = 1
        for i in range(n):
            f = self.feature[i]
            if f < 0:
                if f != -1:
                    problems.append(f"node {i}: bad feature marker {f}")
                    continue
                p = self.value[i]
                if not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > LEAF_SUM_TOL:
                    problems.append(f"leaf {i}: probability vector {p.tolist()} not normalized")
                continue
            if f >= self.n_features_in:
                problems.append(f"node {i}: feature {f} >= n_features_in {self.n_features_in}")
            if not np.isfinite(self.threshold[i]):
                problems.append(f"node {i}: non-finite threshold")
            for c in (self.left[i], self.right[i]):
                # Preorder numbering: children always follow their parent.
                if not i < c < n:
                    problems.append(f"node {i}: child index {c} out of order or range")
                else:
                    seen[c] += 1
        if np.any(seen != 1):
            problems.append("node graph is not a single-rooted tree")
        return problems

    def validate(self) -> TreeModel:
        problems = self.check()
        if problems:
            raise ValidationError("; ".join(problems))
        return self

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X, self.n_features_in)
        out = np.empty(X.shape[0], np.int64)
        K_.apply_tree(self.feature, self.threshold, self.left, self.right, X, out)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X, self.n_features_in)
        out = np.empty((X.shape[0], self.n_classes))
        K_.write_tree_proba(self.feature, self.threshold, self.left, self.right,
                            self.value, X, out, 0)
        return out


def _as_matrix(X, d: int) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != d:
        raise ValidationError(f"expected input with {d} columns, got shape {X.shape}")
    return X


def impurity(class_counts, criterion: str = "entropy") -> float:
    """Entropy (base 2) or gini impurity of a vector of class counts."""
    counts = np.asarray(class_counts, dtype=np.int64)
    if counts.ndim != 1 or np.any(counts < 0):
        raise ValidationError("class_counts must be a 1-D vector of nonnegative integers")
    n = int(counts.sum())
    if n < 1:
        raise ValidationError("class_counts must not be all zero")
    return float(K_.impurity_of(counts, n, _criterion_code(criterion)))


def _split_inputs(sample_rows, features, labels, feature_subset):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("features must be a 2-D matrix")
    subset = np.asarray(feature_subset, dtype=np.int64).ravel()
    if subset.size == 0:
        raise ValidationError("feature_subset is empty")
    if subset.min() < 0 or subset.max() >= X.shape[1]:
        raise ValidationError("feature_subset index out of range")
    rows = np.ascontiguousarray(sample_rows, dtype=np.int64).copy()
    if rows.size < 2:
        raise ValidationError("a split needs at least 2 rows")
    y = np.ascontiguousarray(labels, dtype=np.int64)
    Xt = np.ascontiguousarray(X.T)
    return Xt, y, rows, subset, int(y.max()) + 1


def best_split_standard(sample_rows, features, labels, feature_subset,
                        criterion: str = "entropy", min_samples_leaf: int = 1) -> SplitCandidate | None:
    """Exhaustive midpoint search over ``feature_subset`` for the given rows.

    Ties on impurity decrease go to the lowest feature index, then the lowest
    threshold. Returns None when no split strictly decreases impurity.
    """
    Xt, y, rows, subset, k = _split_inputs(sample_rows, features, labels, feature_subset)
    out = np.empty(3)
    K_.split_standard(Xt, y, rows, 0, rows.size, subset, k, _criterion_code(criterion),
                      min_samples_leaf, out)
    if out[0] < 0:
        return None
    return SplitCandidate(int(out[0]), float(out[1]), float(out[2]))


def best_split_extra(sample_rows, features, labels, feature_subset, criterion: str = "entropy",
                     rng: np.random.Generator | None = None,
                     min_samples_leaf: int = 1) -> SplitCandidate | None:
    """One uniform random threshold per non-constant feature, best one kept.

    Returns None when every feature in the subset is constant on the rows.
    """
    Xt, y, rows, subset, k = _split_inputs(sample_rows, features, labels, feature_subset)
    rng = np.random.default_rng(rng)
    u = rng.random(subset.size)
    # Generator.random is [0, 1); the kernel expects (0, 1).
    u[u == 0.0] = 0.5
    out = np.empty(3)
    K_.split_extra(Xt, y, rows, 0, rows.size, subset, u, k, _criterion_code(criterion),
                   min_samples_leaf, out)
    if out[0] < 0:
        return None
    return SplitCandidate(int(out[0]), float(out[1]), float(out[2]))


def seed_from(rng) -> int:
    """Turn an int seed or a numpy Generator into a 64-bit kernel seed."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**64, dtype=np.uint64))
    if rng is None:
        raise ValidationError("fit_tree needs a seed or a numpy Generator")
    seed = int(rng)
    if not 0 <= seed < 2**64:
        raise ValidationError("seed must be an unsigned 64-bit integer")
    return seed


def grow_from_transposed(Xt: np.ndarray, y: np.ndarray, n_classes: int, params: TreeParams,
                         seed: int) -> TreeModel:
    """Fit on a pre-transposed ``(d, N)`` matrix; lets a layer share one transpose."""
    d, n = Xt.shape
    if n == 0:
        raise ValidationError("cannot fit a tree on 0 samples")
    mtry = params.resolve_mtry(d)
    max_depth = -1 if params.max_depth is None else params.max_depth
    feature, threshold, left, right, value = K_.grow_tree(
        Xt, y, n_classes, _kind_code(params.kind), _criterion_code(params.criterion),
        max_depth, params.min_samples_split, params.min_samples_leaf, mtry,
        params.uses_bootstrap, np.uint64(seed),
    )
    return TreeModel(feature, threshold, left, right, value, params.kind, n_classes, d)


def fit_tree(data: Dataset, params: TreeParams, rng) -> TreeModel:
    """Grow one tree on ``data``; ``rng`` is an int seed or a numpy Generator."""
    if data.n_samples == 0:
        raise ValidationError("cannot fit a tree on 0 samples")
    Xt = np.ascontiguousarray(data.features.T)
    return grow_from_transposed(Xt, data.labels, data.n_classes, params, seed_from(rng))


def predict_proba_tree(tree: TreeModel, x) -> np.ndarray:
    """Leaf probability vector for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != tree.n_features_in:
        raise ValidationError(f"expected a vector of length {tree.n_features_in}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains NaN or Inf")
    return tree.predict_proba(x[None, :])[0]
