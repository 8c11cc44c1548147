from __future__ import annotations

import math

import numpy as np
import pytest

from ftdrf.cascade import (
    CascadeConfig,
    evaluate,
    evaluate_predictions,
    fit_cascade,
    fit_cascade_split,
    predict_cascade,
    refit_full,
    relative_gain,
    transform_through,
)
from ftdrf.dataset import Dataset, stratified_split
from ftdrf.errors import ValidationError
from ftdrf.layer import LayerParams, predict_layer, transform_layer

from conftest import blobs


def small_config(**kw) -> CascadeConfig:
    lp = kw.pop("layer_params", LayerParams(n_trees=kw.pop("n_trees", 8)))
    return CascadeConfig(layer_params=lp, **kw)


def noisy(n=300, seed=0) -> Dataset:
    """Overlapping classes so holdout accuracy stays well below 1."""
    return blobs(n=n, d=5, k=3, seed=seed, spread=6.0)


class TestRelativeGain:
    def test_examples(self):
        assert relative_gain(0.9, 0.9) == 0.0
        assert relative_gain(0.8, 0.88) == pytest.approx(0.1)
        assert relative_gain(0.9, 0.8) < 0

    def test_remaining_error(self):
        assert relative_gain(0.9, 0.95, "remaining-error") == pytest.approx(0.5)
        assert relative_gain(1.0, 1.0, "remaining-error") == 0.0
        assert relative_gain(1.0, 0.9, "remaining-error") == -math.inf

    def test_bad_inputs(self):
        with pytest.raises(ValidationError):
            relative_gain(0.0, 0.5)
        with pytest.raises(ValidationError):
            relative_gain(0.5, 0.6, "absolute")


class TestConfig:
    @pytest.mark.parametrize("kw", [{"holdout_fraction": 0.0}, {"holdout_fraction": 1.0},
                                    {"gain_threshold": -0.1}, {"max_layers": 0},
                                    {"min_layers": 3, "max_layers": 2}, {"gain_mode": "x"}])
    def test_rejected(self, kw):
        with pytest.raises(ValidationError):
            CascadeConfig(**kw)

    def test_layer_seeds_differ(self):
        cfg = CascadeConfig(seed=3)
        assert cfg.params_for_layer(1).seed != cfg.params_for_layer(2).seed


class TestStopping:
    def test_zero_threshold_respects_max_layers(self):
        # a gain of exactly 0 passes a threshold of 0, so only a drop can stop growth
        m = fit_cascade(noisy(), small_config(gain_threshold=0.0, max_layers=3), 1)
        assert 1 <= m.n_layers <= 3
        if m.n_layers < 3:
            assert m.stop_reason == "gain" and m.rejected.relative_gain < 0

    def test_saturated_data_stops_after_one_layer(self):
        d = blobs(n=200, d=4, k=2, spread=0.1)
        m = fit_cascade(d, small_config(max_layers=5), 1)
        assert m.history[0].holdout_accuracy == 1.0
        assert m.n_layers == 1
        assert m.stop_reason == "gain"
        assert m.rejected.layer == 2 and not m.rejected.kept

    def test_stopping_rule_on_history(self):
        for seed in range(3):
            cfg = small_config(max_layers=4, seed=seed, gain_threshold=0.01)
            m = fit_cascade(noisy(seed=seed), cfg, 1)
            for rec in m.history[1:]:
                assert rec.relative_gain >= cfg.gain_threshold
            if m.stop_reason == "gain":
                prev = m.history[-1].holdout_accuracy
                assert m.rejected.relative_gain == relative_gain(prev, m.rejected.holdout_accuracy)
                assert m.rejected.relative_gain < cfg.gain_threshold
            else:
                assert m.n_layers == 4

    def test_min_layers_forces_growth(self):
        d = blobs(n=200, d=4, k=2, spread=0.1)
        m = fit_cascade(d, small_config(min_layers=2, max_layers=2), 1)
        assert m.n_layers == 2 and m.stop_reason == "max_layers"

    def test_holdout_labels_do_not_change_layers(self):
        # with growth forced to 2 layers, holdout content only affects the reported accuracy
        d = noisy()
        sp = stratified_split(d, 0.2, 0)
        flipped = Dataset(sp.holdout.features, (sp.holdout.labels + 1) % 3, 3)
        cfg = small_config(min_layers=2, max_layers=2)
        a = fit_cascade_split(sp.train, sp.holdout, cfg, 1)
        b = fit_cascade_split(sp.train, flipped, cfg, 1)
        X = d.features
        assert predict_cascade(a, X)[0].tobytes() == predict_cascade(b, X)[0].tobytes()

    def test_deterministic_and_thread_independent(self):
        cfg = small_config(max_layers=2, min_layers=2, seed=4)
        a = fit_cascade(noisy(), cfg, 1)
        b = fit_cascade(noisy(), cfg, 3)
        X = noisy(seed=9).features
        assert predict_cascade(a, X, 1)[0].tobytes() == predict_cascade(b, X, 2)[0].tobytes()
        assert [r.holdout_accuracy for r in a.history] == [r.holdout_accuracy for r in b.history]

    def test_record_counts(self):
        m = fit_cascade(noisy(), small_config(n_trees=10, max_layers=1), 1)
        rec = m.history[0]
        assert rec.n_standard + rec.n_extra == 10 and rec.relative_gain is None

    def test_augment_only_touches_train(self):
        seen = []

        def aug(train):
            seen.append(train.n_samples)
            return train

        fit_cascade(noisy(n=200), small_config(max_layers=1), 1, augment=aug)
        assert seen == [160]


class TestForwardMap:
    def test_layer_widths(self):
        d = noisy()
        m = fit_cascade(d, small_config(n_trees=6, min_layers=3, max_layers=3), 1)
        assert m.n_layers == 3
        assert m.layers[1].input_dim == 3 * 6
        assert transform_through(m, d.features, 2).shape == (d.n_samples, 18)
        assert transform_through(m, d.features, 0).shape == d.features.shape

    def test_predict_uses_last_layer(self):
        d = noisy()
        m = fit_cascade(d, small_config(min_layers=2, max_layers=2), 1)
        Z = transform_layer(m.layers[0], d.features)
        np.testing.assert_array_equal(predict_cascade(m, d.features)[0], predict_layer(m.layers[1], Z)[0])

    def test_single_layer_is_plain_forest(self):
        d = blobs(n=200, d=4, k=2, spread=0.1)
        m = fit_cascade(d, small_config(max_layers=1), 1)
        np.testing.assert_array_equal(predict_cascade(m, d.features)[0],
                                      predict_layer(m.layers[0], d.features)[0])

    def test_wrong_width(self):
        m = fit_cascade(noisy(), small_config(max_layers=1), 1)
        with pytest.raises(ValidationError):
            predict_cascade(m, np.zeros((2, 3)))


class TestRefit:
    def test_refit_keeps_structure(self):
        d = noisy()
        m = fit_cascade(d, small_config(min_layers=2, max_layers=2), 1)
        r = refit_full(m, d, 1)
        assert r.refit_full and r.n_layers == m.n_layers
        assert r.history == m.history
        assert [l.n_trees for l in r.layers] == [l.n_trees for l in m.layers]
        assert r.layers[0].trees[0].threshold.tobytes() != m.layers[0].trees[0].threshold.tobytes()


class TestEvaluate:
    def test_confusion(self):
        rep = evaluate_predictions([0, 0, 1, 2], [0, 1, 1, 2], 3)
        assert rep.accuracy == 0.75
        np.testing.assert_array_equal(rep.confusion, [[1, 1, 0], [0, 1, 0], [0, 0, 1]])
        np.testing.assert_array_equal(rep.per_class_accuracy, [0.5, 1.0, 1.0])
        assert rep.n_samples == 4

    def test_absent_class_is_nan(self):
        rep = evaluate_predictions([0, 0], [0, 1], 3)
        assert math.isnan(rep.per_class_accuracy[2])

    def test_evaluate_matches_predictions(self):
        d = noisy()
        m = fit_cascade(d, small_config(max_layers=2), 1)
        rep = evaluate(m, d)
        assert rep.accuracy == float(np.mean(predict_cascade(m, d.features)[1] == d.labels))

    def test_class_count_mismatch(self):
        m = fit_cascade(noisy(), small_config(max_layers=1), 1)
        with pytest.raises(ValidationError):
            evaluate(m, blobs(n=30, d=5, k=2))
