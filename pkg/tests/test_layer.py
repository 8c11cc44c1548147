from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftdrf.errors import ValidationError
from ftdrf.layer import LayerModel, LayerParams, derive_seed, fit_layer, predict_layer, transform_layer
from ftdrf.tree import TreeModel, TreeParams

from conftest import blobs


def const_tree(p, d=2):
    return TreeModel([-1], [0.0], [-1], [-1], [p], "standard", len(p), d)


def same_trees(a: LayerModel, b: LayerModel) -> bool:
    names = ("feature", "threshold", "left", "right", "value")
    return a.n_trees == b.n_trees and all(
        ta.kind == tb.kind and all(getattr(ta, n).tobytes() == getattr(tb, n).tobytes() for n in names)
        for ta, tb in zip(a.trees, b.trees)
    )


class TestKinds:
    def test_all_standard(self):
        p = LayerParams(n_trees=50, type_mix_p=0.0)
        assert set(p.kinds()) == {"standard"}

    def test_all_extra(self):
        p = LayerParams(n_trees=50, type_mix_p=1.0)
        assert set(p.kinds()) == {"extra_random"}

    def test_half_mix_is_roughly_balanced(self):
        kinds = LayerParams(n_trees=2000, type_mix_p=0.5, seed=3).kinds()
        n_extra = kinds.count("extra_random")
        # 4 standard deviations of Binomial(2000, 0.5)
        assert abs(n_extra - 1000) < 4 * np.sqrt(500)

    def test_same_seed_same_kinds(self):
        assert LayerParams(n_trees=30, seed=9).kinds() == LayerParams(n_trees=30, seed=9).kinds()

    def test_fitted_kinds_follow_draws(self):
        p = LayerParams(n_trees=12, seed=4)
        layer = fit_layer(blobs(n=60), p, 1)
        assert [t.kind for t in layer.trees] == p.kinds()
        counts = layer.kind_counts()
        assert counts["standard"] + counts["extra_random"] == 12


class TestParams:
    @pytest.mark.parametrize("kw", [{"n_trees": 0}, {"type_mix_p": 1.5}, {"type_mix_p": -0.1},
                                    {"tree_params_standard": TreeParams("extra_random")}])
    def test_rejected(self, kw):
        with pytest.raises(ValidationError):
            LayerParams(**kw)

    def test_tree_seeds_distinct(self):
        p = LayerParams(n_trees=100, seed=1)
        assert len({p.tree_seed(j) for j in range(100)}) == 100

    def test_derive_seed_stable(self):
        assert derive_seed(5, 1) == derive_seed(5, 1)
        assert derive_seed(5, 1) != derive_seed(5, 2)
        assert derive_seed(5, 1) != derive_seed(6, 1)


class TestFitLayer:
    def test_single_standard_tree(self):
        d = blobs(n=80, spread=2.0)
        layer = fit_layer(d, LayerParams(n_trees=1, type_mix_p=0.0), 1)
        assert layer.n_trees == 1 and layer.trees[0].kind == "standard"
        proba, pred = predict_layer(layer, d.features)
        np.testing.assert_array_equal(proba, layer.trees[0].predict_proba(d.features))

    def test_deterministic(self):
        d = blobs(n=100, d=5)
        p = LayerParams(n_trees=10, seed=2)
        assert same_trees(fit_layer(d, p, 1), fit_layer(d, p, 1))
        assert not same_trees(fit_layer(d, p, 1), fit_layer(d, LayerParams(n_trees=10, seed=3), 1))

    def test_thread_count_does_not_matter(self):
        d = blobs(n=150, d=6, spread=2.0)
        p = LayerParams(n_trees=16, seed=7)
        one, four = fit_layer(d, p, 1), fit_layer(d, p, 4)
        assert same_trees(one, four)
        X = np.random.default_rng(0).normal(scale=4, size=(300, 6))
        assert transform_layer(one, X, 1).tobytes() == transform_layer(four, X, 4).tobytes()
        assert predict_layer(one, X, 1)[0].tobytes() == predict_layer(four, X, 3)[0].tobytes()

    def test_tree_j_independent_of_layer_size(self):
        # a tree's seed depends only on (layer seed, j): a larger layer shares its prefix
        d = blobs(n=80)
        small = fit_layer(d, LayerParams(n_trees=5, type_mix_p=0.0, seed=1), 1)
        big = fit_layer(d, LayerParams(n_trees=9, type_mix_p=0.0, seed=1), 1)
        assert same_trees(small, LayerModel(big.trees[:5], big.n_classes, big.input_dim))

    def test_empty(self):
        from ftdrf.dataset import Dataset
        with pytest.raises(ValidationError):
            fit_layer(Dataset(np.zeros((0, 2)), np.zeros(0, int), 2), LayerParams(n_trees=2))

    def test_mismatched_trees_rejected(self):
        with pytest.raises(ValidationError):
            LayerModel([const_tree([0.5, 0.5], d=2), const_tree([0.5, 0.5], d=3)], 2, 2)


class TestTransform:
    def test_width_and_block_sums(self):
        d = blobs(n=90, d=4, k=3)
        layer = fit_layer(d, LayerParams(n_trees=7, seed=1), 1)
        Z = transform_layer(layer, d.features)
        assert Z.shape == (90, 3 * 7) == (90, layer.output_dim)
        blocks = Z.reshape(90, 7, 3).sum(axis=2)
        assert np.all(np.abs(blocks - 1) <= 1e-9)
        assert np.all(Z >= 0)

    def test_tree_major_layout(self):
        d = blobs(n=60, d=3, k=3)
        layer = fit_layer(d, LayerParams(n_trees=4, seed=5), 1)
        X = np.random.default_rng(1).normal(scale=4, size=(20, 3))
        Z = transform_layer(layer, X)
        for j, t in enumerate(layer.trees):
            np.testing.assert_array_equal(Z[:, 3 * j:3 * j + 3], t.predict_proba(X))

    def test_predict_is_block_mean(self):
        d = blobs(n=120, d=4, k=3, spread=3.0)
        layer = fit_layer(d, LayerParams(n_trees=9, seed=2), 1)
        X = np.random.default_rng(2).normal(scale=4, size=(200, 4))
        Z = transform_layer(layer, X)
        acc = np.zeros((200, 3))
        for j in range(9):
            acc += Z[:, 3 * j:3 * j + 3]
        proba, pred = predict_layer(layer, X)
        assert proba.tobytes() == (acc / 9).tobytes()
        np.testing.assert_array_equal(pred, np.argmax(acc / 9, axis=1))

    def test_tie_goes_to_lowest_class(self):
        layer = LayerModel([const_tree([1.0, 0.0, 0.0]), const_tree([0.0, 0.0, 1.0])], 3, 2)
        proba, pred = predict_layer(layer, np.zeros((3, 2)))
        np.testing.assert_array_equal(proba[0], [0.5, 0.0, 0.5])
        assert np.all(pred == 0)

    def test_wrong_width(self):
        layer = LayerModel([const_tree([0.5, 0.5])], 2, 2)
        with pytest.raises(ValidationError):
            transform_layer(layer, np.zeros((3, 5)))

    @given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.integers(1, 40))
    @settings(max_examples=20, deadline=None)
    def test_block_sums_property(self, m, seed, n_rows):
        d = blobs(n=30, d=3, k=2, seed=seed % 1000)
        layer = fit_layer(d, LayerParams(n_trees=m, seed=seed), 1)
        X = np.random.default_rng(seed).normal(scale=10, size=(n_rows, 3))
        Z = transform_layer(layer, X, 2)
        assert Z.shape == (n_rows, 2 * m)
        assert np.all(np.abs(Z.reshape(n_rows, m, 2).sum(2) - 1) <= 1e-9)
