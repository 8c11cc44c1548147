"""Half-half forest layers and the forward map to concatenated tree outputs."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K_
from .dataset import Dataset
from .errors import ValidationError
from .tree import TreeModel, TreeParams, grow_from_transposed


def resolve_threads(n_jobs: int | None) -> int:
    if n_jobs is None:
        return os.cpu_count() or 1
    if n_jobs < 1:
        raise ValidationError(f"thread count must be >= 1, got {n_jobs}")
    return int(n_jobs)


def derive_seed(seed: int, *path: int) -> int:
    """64-bit seed hashed from ``seed`` and an index path; siblings never chain."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class LayerParams:
    n_trees: int = 2000
    type_mix_p: float = 0.5
    tree_params_standard: TreeParams = field(default_factory=lambda: TreeParams("standard"))
    tree_params_extra: TreeParams = field(default_factory=lambda: TreeParams("extra_random"))
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1")
        if not 0.0 <= self.type_mix_p <= 1.0:
            raise ValidationError("type_mix_p must lie in [0, 1]")
        if self.tree_params_standard.kind != "standard":
            raise ValidationError("tree_params_standard must have kind 'standard'")
        if self.tree_params_extra.kind != "extra_random":
            raise ValidationError("tree_params_extra must have kind 'extra_random'")

    def kinds(self) -> list[str]:
        """Per-tree kinds from independent Bernoulli(type_mix_p) draws (success = extra)."""
        rng = np.random.default_rng(np.random.SeedSequence(int(self.seed)))
        draws = rng.random(self.n_trees) < self.type_mix_p
        return ["extra_random" if d else "standard" for d in draws]

    def tree_params(self, kind: str) -> TreeParams:
        return self.tree_params_extra if kind == "extra_random" else self.tree_params_standard

    def tree_seed(self, j: int) -> int:
        return derive_seed(self.seed, j)


@dataclass(frozen=True, eq=False)
class LayerModel:
    trees: tuple[TreeModel, ...]
    n_classes: int
    input_dim: int

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if not self.trees:
            raise ValidationError("a layer needs at least one tree")
        for j, t in enumerate(self.trees):
            if t.n_classes != self.n_classes or t.n_features_in != self.input_dim:
                raise ValidationError(
                    f"tree {j} has (K={t.n_classes}, d={t.n_features_in}), "
                    f"layer expects (K={self.n_classes}, d={self.input_dim})"
                )

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def output_dim(self) -> int:
        return self.n_classes * len(self.trees)

    def kind_counts(self) -> dict[str, int]:
        n_extra = sum(t.kind == "extra_random" for t in self.trees)
        return {"standard": self.n_trees - n_extra, "extra_random": n_extra}


def fit_layer_tree(Xt: np.ndarray, y: np.ndarray, n_classes: int, params: LayerParams,
                   j: int, kind: str) -> TreeModel:
    try:
        return grow_from_transposed(Xt, y, n_classes, params.tree_params(kind), params.tree_seed(j))
    except ValueError as exc:
        raise ValidationError(f"tree {j}: {exc}") from exc


def fit_layer(data: Dataset, params: LayerParams, n_jobs: int | None = None) -> LayerModel:
    """Fit ``params.n_trees`` independently seeded trees on the whole of ``data``.

    Trees run on up to ``n_jobs`` threads; the result depends only on
    ``(data, params)``, never on the thread count.
    """
    if data.n_samples == 0:
        raise ValidationError("cannot fit a layer on 0 samples")
    Xt = np.ascontiguousarray(data.features.T)
    y = data.labels
    kinds = params.kinds()

    def one(j):
        return fit_layer_tree(Xt, y, data.n_classes, params, j, kinds[j])

    workers = resolve_threads(n_jobs)
    if workers == 1:
        trees = [one(j) for j in range(params.n_trees)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            trees = list(pool.map(one, range(params.n_trees)))
    return LayerModel(tuple(trees), data.n_classes, data.n_features)


def _check_input(layer: LayerModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != layer.input_dim:
        raise ValidationError(f"layer expects {layer.input_dim} columns, got shape {X.shape}")
    return X


def _row_chunks(n: int, workers: int) -> list[slice]:
    if workers == 1 or n < 2 * workers:
        return [slice(0, n)]
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run_chunks(fn, n: int, n_jobs):
    chunks = _row_chunks(n, resolve_threads(n_jobs))
    if len(chunks) == 1:
        fn(chunks[0])
        return
    with ThreadPoolExecutor(len(chunks)) as pool:
        list(pool.map(fn, chunks))


def transform_layer(layer: LayerModel, X, n_jobs: int | None = None) -> np.ndarray:
    """Concatenate every tree's probability vector, tree-major: ``(N, K * m)``."""
    X = _check_input(layer, X)
    K = layer.n_classes
    out = np.empty((X.shape[0], layer.output_dim))

    def work(rows):
        Xc, oc = X[rows], out[rows]
        for j, t in enumerate(layer.trees):
            K_.write_tree_proba(t.feature, t.threshold, t.left, t.right, t.value, Xc, oc, j * K)

    _run_chunks(work, X.shape[0], n_jobs)
    return out


def predict_layer(layer: LayerModel, X, n_jobs: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Average the trees' vectors (summed in tree order, divided once) and argmax.

    Ties in the argmax go to the lowest class index.
    """
    X = _check_input(layer, X)
    acc = np.zeros((X.shape[0], layer.n_classes))

    def work(rows):
        Xc, ac = X[rows], acc[rows]
        for t in layer.trees:
            K_.add_tree_proba(t.feature, t.threshold, t.left, t.right, t.value, Xc, ac)

    _run_chunks(work, X.shape[0], n_jobs)
    proba = acc / layer.n_trees
    return proba, np.argmax(proba, axis=1)
