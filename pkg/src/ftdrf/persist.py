"""Binary model files: exact, portable save/load of a fitted cascade (+ MGS stage).

Layout (all integers little-endian, reals IEEE-754 float64 little-endian)::

    "FTDRF"  u32 format_version
    section*             tag: 4 ASCII bytes, u64 payload length, payload
      META               UTF-8 JSON: configs, history, run options, data fingerprint
      MGS_  (optional)   u32 K, u32 rows, u32 cols, u32 stride, u32 n_sizes,
                         then per size: u32 w, forest(standard), forest(extra)
      CASC               u32 K, u32 input_dim, u32 n_layers, then forest per layer
      END_               empty; must be last

    forest := u32 input_dim, u32 n_trees, tree*
    tree   := u8 kind (0 standard, 1 extra_random), u32 n_nodes, u32 n_leaves,
              i32 feature[n_nodes]   (-1 marks a leaf)
              f64 threshold[n_nodes]
              i32 left[n_nodes], i32 right[n_nodes]   (-1 at leaves)
              f64 leaf_values[n_leaves * K]   (leaves in preorder)

Nodes are stored in preorder; a node's children always follow it.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cascade import CascadeConfig, CascadeModel, LayerRecord
from .errors import IntegrityError, PersistError, VersionError
from .layer import LayerModel, LayerParams
from .mgs import MGSConfig, MGSModel
from .tree import KINDS, TreeModel, TreeParams

MAGIC = b"FTDRF"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class ModelFile:
    """Everything a model file carries: the cascade, an optional MGS stage and run metadata."""

    cascade: CascadeModel
    mgs: MGSModel | None = None
    mgs_config: MGSConfig | None = None
    options: dict = field(default_factory=dict)
    fingerprint: dict | None = None
    format_version: int = FORMAT_VERSION

    @property
    def input_dim(self) -> int:
        if self.mgs is not None:
            return self.mgs.image_shape[0] * self.mgs.image_shape[1]
        return self.cascade.input_dim


# ---------------------------------------------------------------------------
# config <-> JSON

def _tree_params(d: dict) -> TreeParams:
    return TreeParams(**d)


def cascade_config_to_dict(cfg: CascadeConfig) -> dict:
    return asdict(cfg)


def cascade_config_from_dict(d: dict) -> CascadeConfig:
    lp = dict(d["layer_params"])
    lp["tree_params_standard"] = _tree_params(lp["tree_params_standard"])
    lp["tree_params_extra"] = _tree_params(lp["tree_params_extra"])
    return CascadeConfig(**{**d, "layer_params": LayerParams(**lp)})


def mgs_config_from_dict(d: dict) -> MGSConfig:
    d = dict(d)
    d["window_sizes"] = tuple(d["window_sizes"])
    d["tree_params_standard"] = _tree_params(d["tree_params_standard"])
    d["tree_params_extra"] = _tree_params(d["tree_params_extra"])
    return MGSConfig(**d)


def _record(d: dict | None) -> LayerRecord | None:
    return None if d is None else LayerRecord(**d)


# ---------------------------------------------------------------------------
# encoding

def _pack_tree(buf: io.BytesIO, tree: TreeModel) -> None:
    leaves = tree.feature < 0
    buf.write(struct.pack("<BII", KINDS.index(tree.kind), tree.n_nodes, int(leaves.sum())))
    buf.write(tree.feature.astype("<i4").tobytes())
    buf.write(tree.threshold.astype("<f8").tobytes())
    buf.write(tree.left.astype("<i4").tobytes())
    buf.write(tree.right.astype("<i4").tobytes())
    buf.write(tree.value[leaves].astype("<f8").tobytes())


def _pack_forest(buf: io.BytesIO, layer: LayerModel) -> None:
    buf.write(struct.pack("<II", layer.input_dim, layer.n_trees))
    for tree in layer.trees:
        _pack_tree(buf, tree)


def _section(out: io.BytesIO, tag: bytes, payload: bytes) -> None:
    out.write(tag)
    out.write(struct.pack("<Q", len(payload)))
    out.write(payload)


def encode(model: ModelFile) -> bytes:
    casc = model.cascade
    meta = {
        "cascade_config": cascade_config_to_dict(casc.config),
        "history": [asdict(r) for r in casc.history],
        "rejected": None if casc.rejected is None else asdict(casc.rejected),
        "stop_reason": casc.stop_reason,
        "refit_full": casc.refit_full,
        "mgs_config": None if model.mgs_config is None else asdict(model.mgs_config),
        "options": model.options,
        "fingerprint": model.fingerprint,
    }
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", model.format_version))
    _section(out, b"META", json.dumps(meta, sort_keys=True, separators=(",", ":")).encode())
    if model.mgs is not None:
        m = model.mgs
        buf = io.BytesIO()
        buf.write(struct.pack("<IIIII", m.n_classes, m.image_shape[0], m.image_shape[1],
                              m.stride, len(m.window_sizes)))
        for w, (std, ext) in zip(m.window_sizes, m.forests):
            buf.write(struct.pack("<I", w))
            _pack_forest(buf, std)
            _pack_forest(buf, ext)
        _section(out, b"MGS_", buf.getvalue())
    buf = io.BytesIO()
    buf.write(struct.pack("<III", casc.n_classes, casc.input_dim, casc.n_layers))
    for layer in casc.layers:
        _pack_forest(buf, layer)
    _section(out, b"CASC", buf.getvalue())
    _section(out, b"END_", b"")
    return out.getvalue()


def save_model(model: ModelFile | CascadeModel, path) -> None:
    """Atomically write ``model`` to ``path`` (temp file in the same directory, then rename)."""
    if isinstance(model, CascadeModel):
        model = ModelFile(model)
    data = encode(model)
    path = Path(path)
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        tmp = None
    except OSError as exc:
        raise PersistError(f"cannot write model file {path}: {exc}") from exc
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)


# ---------------------------------------------------------------------------
# decoding

class _Reader:
    def __init__(self, data: bytes, where: str):
        self.data = memoryview(data)
        self.pos = 0
        self.where = where

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.data):
            raise IntegrityError(
                f"{self.where}: truncated at byte {self.pos} (needed {n}, "
                f"have {len(self.data) - self.pos})"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt)

    def done(self) -> bool:
        return self.pos == len(self.data)


def _read_tree(r: _Reader, n_classes: int, input_dim: int, where: str) -> TreeModel:
    kind_code, n_nodes, n_leaves = r.unpack("<BII")
    if kind_code >= len(KINDS):
        raise IntegrityError(f"{where}: unknown tree kind code {kind_code}")
    if n_nodes == 0:
        raise IntegrityError(f"{where}: tree has no nodes")
    feature = r.array("<i4", n_nodes).astype(np.int32)
    threshold = r.array("<f8", n_nodes).astype(np.float64)
    left = r.array("<i4", n_nodes).astype(np.int32)
    right = r.array("<i4", n_nodes).astype(np.int32)
    leaf_values = r.array("<f8", n_leaves * n_classes).reshape(n_leaves, n_classes)
    leaves = feature < 0
    if int(leaves.sum()) != n_leaves:
        raise IntegrityError(f"{where}: header declares {n_leaves} leaves, node array has {int(leaves.sum())}")
    value = np.zeros((n_nodes, n_classes))
    value[leaves] = leaf_values
    tree = TreeModel(feature, threshold, left, right, value, KINDS[kind_code], n_classes, input_dim)
    problems = tree.check()
    if problems:
        raise IntegrityError(f"{where}: " + "; ".join(problems))
    return tree


def _read_forest(r: _Reader, n_classes: int, where: str) -> LayerModel:
    input_dim, n_trees = r.unpack("<II")
    if n_trees == 0:
        raise IntegrityError(f"{where}: forest has no trees")
    trees = tuple(_read_tree(r, n_classes, input_dim, f"{where}, tree {j}") for j in range(n_trees))
    return LayerModel(trees, n_classes, input_dim)


def decode(data: bytes, where: str = "model") -> ModelFile:
    r = _Reader(data, where)
    if bytes(r.take(len(MAGIC))) != MAGIC:
        raise IntegrityError(f"{where}: not a model file (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionError(f"{where}: format version {version} not supported (this build reads {FORMAT_VERSION})")
    sections: dict[bytes, memoryview] = {}
    order = []
    while True:
        tag = bytes(r.take(4))
        (length,) = r.unpack("<Q")
        payload = r.take(length)
        if tag in sections:
            raise IntegrityError(f"{where}: duplicate section {tag!r}")
        if tag not in (b"META", b"MGS_", b"CASC", b"END_"):
            raise IntegrityError(f"{where}: unknown section {tag!r}")
        sections[tag] = payload
        order.append(tag)
        if tag == b"END_":
            break
    if not r.done():
        raise IntegrityError(f"{where}: trailing bytes after END_ section")
    for tag in (b"META", b"CASC"):
        if tag not in sections:
            raise IntegrityError(f"{where}: missing section {tag!r}")
    try:
        meta = json.loads(bytes(sections[b"META"]).decode("utf-8"))
        config = cascade_config_from_dict(meta["cascade_config"])
        history = tuple(LayerRecord(**h) for h in meta["history"])
        mgs_config = None if meta["mgs_config"] is None else mgs_config_from_dict(meta["mgs_config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise IntegrityError(f"{where}: bad metadata section: {exc}") from exc

    mgs = None
    if b"MGS_" in sections:
        mr = _Reader(sections[b"MGS_"].tobytes(), f"{where}, MGS section")
        K, rows, cols, stride, n_sizes = mr.unpack("<IIIII")
        sizes, forests = [], []
        for i in range(n_sizes):
            (w,) = mr.unpack("<I")
            sizes.append(w)
            forests.append((_read_forest(mr, K, f"{where}, MGS window {w} standard forest"),
                            _read_forest(mr, K, f"{where}, MGS window {w} extra forest")))
        if not mr.done():
            raise IntegrityError(f"{where}: trailing bytes in MGS section")
        mgs = _build(MGSModel, f"{where}, MGS", tuple(sizes), stride, tuple(forests), K, (rows, cols))

    cr = _Reader(sections[b"CASC"].tobytes(), f"{where}, cascade section")
    K, input_dim, n_layers = cr.unpack("<III")
    layers = tuple(_read_forest(cr, K, f"{where}, layer {i + 1}") for i in range(n_layers))
    if not cr.done():
        raise IntegrityError(f"{where}: trailing bytes in cascade section")
    cascade = _build(CascadeModel, f"{where}, cascade", layers, K, input_dim, history, config,
                     _record(meta.get("rejected")), meta.get("stop_reason", "max_layers"),
                     bool(meta.get("refit_full", False)))
    if mgs is not None and mgs.output_dim != cascade.input_dim:
        raise IntegrityError(f"{where}: MGS emits {mgs.output_dim} features, cascade expects {cascade.input_dim}")
    return ModelFile(cascade, mgs, mgs_config, meta.get("options") or {}, meta.get("fingerprint"), version)


def _build(cls, where, *args):
    try:
        return cls(*args)
    except ValueError as exc:
        raise IntegrityError(f"{where}: {exc}") from exc


def load_model(path) -> ModelFile:
    """Read and fully validate a model file."""
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    return decode(data, str(path))
