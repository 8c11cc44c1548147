from __future__ import annotations

import struct

import numpy as np
import pytest

from ftdrf.cascade import CascadeConfig, fit_cascade, predict_cascade
from ftdrf.errors import IntegrityError, PersistError, VersionError
from ftdrf.layer import LayerParams
from ftdrf.mgs import MGSConfig
from ftdrf.persist import MAGIC, ModelFile, decode, encode, load_model, save_model
from ftdrf.pipeline import predict, train

from conftest import blobs, toy_images


@pytest.fixture(scope="module")
def cascade():
    cfg = CascadeConfig(LayerParams(n_trees=6), min_layers=2, max_layers=2, seed=1)
    return fit_cascade(blobs(n=150, d=5, k=3, spread=5.0), cfg, 1)


@pytest.fixture(scope="module")
def mgs_model():
    cfg = CascadeConfig(LayerParams(n_trees=4), max_layers=2)
    return train(toy_images(n=40, shape=(6, 6)), cfg,
                 mgs=MGSConfig(window_sizes=(3, 5), trees_per_forest=2), n_jobs=1)


def tree_bytes(tree) -> int:
    return 9 + tree.n_nodes * 20 + tree.n_leaves * tree.n_classes * 8


def leaf_offset(data: bytes, cascade, layer: int, tree: int, leaf: int) -> int:
    """Byte offset of a stored leaf row, walked from the documented layout."""
    (meta_len,) = struct.unpack("<Q", data[13:21])
    pos = 21 + meta_len
    assert data[pos:pos + 4] == b"CASC"
    pos += 12 + 12
    for i, lay in enumerate(cascade.layers):
        pos += 8
        for j, t in enumerate(lay.trees):
            if (i, j) == (layer - 1, tree):
                return pos + 9 + t.n_nodes * 20 + leaf * t.n_classes * 8
            pos += tree_bytes(t)
    raise AssertionError("tree not found")


class TestRoundTrip:
    def test_predictions_bit_equal(self, cascade, tmp_path):
        p = tmp_path / "m.ftdrf"
        save_model(cascade, p)
        back = load_model(p)
        X = np.random.default_rng(0).normal(scale=5, size=(500, 5))
        assert predict_cascade(back.cascade, X)[0].tobytes() == predict_cascade(cascade, X)[0].tobytes()
        assert back.cascade.history == cascade.history
        assert back.cascade.config == cascade.config
        assert back.cascade.stop_reason == cascade.stop_reason

    def test_trees_identical(self, cascade):
        back = decode(encode(ModelFile(cascade)))
        for la, lb in zip(cascade.layers, back.cascade.layers):
            for ta, tb in zip(la.trees, lb.trees):
                assert ta.kind == tb.kind
                for name in ("feature", "threshold", "left", "right", "value"):
                    assert getattr(ta, name).tobytes() == getattr(tb, name).tobytes()

    def test_bytes_stable(self, cascade, tmp_path):
        save_model(cascade, tmp_path / "a")
        save_model(load_model(tmp_path / "a"), tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_header(self, cascade):
        data = encode(ModelFile(cascade))
        assert data[:5] == MAGIC
        assert struct.unpack("<I", data[5:9]) == (1,)

    def test_mgs_roundtrip(self, mgs_model, tmp_path):
        save_model(mgs_model, tmp_path / "m")
        back = load_model(tmp_path / "m")
        assert back.mgs is not None and back.mgs_config == mgs_model.mgs_config
        assert back.options == mgs_model.options
        d = toy_images(n=12, shape=(6, 6), seed=3)
        assert predict(back, d)[0].tobytes() == predict(mgs_model, d)[0].tobytes()

    def test_no_temp_files_left(self, cascade, tmp_path):
        save_model(cascade, tmp_path / "m")
        save_model(cascade, tmp_path / "m")
        assert [p.name for p in tmp_path.iterdir()] == ["m"]


class TestCorruption:
    def test_unknown_version(self, cascade, tmp_path):
        data = bytearray(encode(ModelFile(cascade)))
        data[5:9] = struct.pack("<I", 9999)
        (tmp_path / "m").write_bytes(bytes(data))
        with pytest.raises(VersionError, match="9999"):
            load_model(tmp_path / "m")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m").write_bytes(b"NOTAMODEL" * 4)
        with pytest.raises(IntegrityError, match="magic"):
            load_model(tmp_path / "m")

    @pytest.mark.parametrize("cut", [3, 20, 200, -9])
    def test_truncated(self, cascade, tmp_path, cut):
        data = encode(ModelFile(cascade))
        (tmp_path / "m").write_bytes(data[:cut] if cut > 0 else data[:len(data) + cut])
        with pytest.raises(IntegrityError, match=r"truncated at byte \d+"):
            load_model(tmp_path / "m")

    def test_trailing_garbage(self, cascade):
        with pytest.raises(IntegrityError, match="trailing"):
            decode(encode(ModelFile(cascade)) + b"x")

    def test_corrupted_leaf_names_location(self, cascade):
        data = bytearray(encode(ModelFile(cascade)))
        tree = cascade.layers[1].trees[2]
        k = tree.n_leaves - 1
        node = int(np.flatnonzero(tree.is_leaf)[k])
        offset = leaf_offset(bytes(data), cascade, 2, 2, k)
        data[offset:offset + 8] = struct.pack("<d", 7.0)
        # the message names the leaf by its node index
        with pytest.raises(IntegrityError, match=rf"layer 2, tree 2: leaf {node}:.*not normalized"):
            decode(bytes(data))

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_model(tmp_path / "nope")

    def test_unwritable_path(self, cascade, tmp_path):
        with pytest.raises(PersistError):
            save_model(cascade, tmp_path / "no" / "such" / "dir" / "m")
        assert isinstance(PersistError("x"), OSError)
