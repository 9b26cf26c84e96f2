"""Binary model checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"CTRNCKPT"
    u32       format version (currently 1)
    u64       header length H
    H bytes   UTF-8 JSON header: train/model config, vocabulary, idf table,
              stopwords, blob count
    blobs     repeated blob-count times:
                u32 name length, name bytes (UTF-8)
                u32 ndim, ndim x u64 extents
                prod(extents) x float64 values, row-major

The frozen embedding table travels as the blob named ``embedding``; every other
blob is a trainable parameter.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .data import Vocabulary
from .encoder import EmbeddingTable
from .errors import CheckpointError
from .model import ModelConfig, Ranker

MAGIC = b"CTRNCKPT"
VERSION = 1
EMBEDDING_BLOB = "embedding"


def _write_blob(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def _read_blob(fh) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, n).decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").astype(np.float64)
    return name, data.reshape(shape)


def dumps(model: Ranker, train_config: dict | None = None) -> bytes:
    header = {
        "model_config": model.config.to_dict(),
        "train_config": train_config or {},
        "vocab": model.vocab.itos if model.vocab is not None else None,
        "idf": model.idf,
        "n_docs": model.n_docs,
        "stopwords": sorted(model.stopwords),
        "blobs": len(model.params) + 1,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<IQ", VERSION, len(raw)))
    fh.write(raw)
    _write_blob(fh, EMBEDDING_BLOB, model.table.vectors)
    for name, arr in model.params.items():
        _write_blob(fh, name, arr)
    return fh.getvalue()


def save(path, model: Ranker, train_config: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model, train_config))


def loads(buf: bytes) -> tuple[Ranker, dict]:
    """Returns ``(model, train_config_echo)``."""
    fh = io.BytesIO(buf)
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", _read_exact(fh, 12))
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {VERSION}")
    header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
    blobs = dict(_read_blob(fh) for _ in range(header["blobs"]))
    if fh.read(1):
        raise CheckpointError("trailing bytes after last blob")

    table = EmbeddingTable(blobs.pop(EMBEDDING_BLOB))
    vocab = Vocabulary(header["vocab"][2:]) if header["vocab"] is not None else None
    model = Ranker(ModelConfig(**header["model_config"]), table, vocab=vocab)
    if set(blobs) != set(model.params):
        raise CheckpointError(f"parameter names do not match the model: {sorted(set(blobs) ^ set(model.params))}")
    for name, arr in blobs.items():
        if arr.shape != model.params[name].shape:
            raise CheckpointError(f"{name}: shape {arr.shape} != {model.params[name].shape}")
        model.params[name] = arr
    model.idf = header["idf"]
    model.n_docs = header["n_docs"]
    model.stopwords = frozenset(header["stopwords"])
    return model, header["train_config"]


def load(path) -> tuple[Ranker, dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())
