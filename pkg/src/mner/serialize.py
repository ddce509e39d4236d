"""Versioned binary model files.

Layout (little-endian throughout)::

    b"MNER"  u32 version
    u32 n, config text (key=value lines, UTF-8)
    3 vocab blocks (words, chars, labels): u32 count, then per entry
        u32 index, u32 n, UTF-8 bytes
    u32 tensor count, then per tensor:
        u32 n, name; u32 rank; u32 dims...; float64 values, row-major

Word vectors travel as the tensor ``words.vectors``.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import ParameterStore
from .encoders import EmbeddingTable
from .model import MnerModel, TrainConfig

MAGIC = b"MNER"
VERSION = 1
WORD_TENSOR = "words.vectors"


class ModelFormatError(ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class ShapeMismatchError(ModelFormatError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _string(s: str) -> bytes:
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def _vocab_block(items) -> bytes:
    out = [_u32(len(items))]
    for idx, s in items:
        out.append(_u32(idx) + _string(s))
    return b"".join(out)


def _tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = _string(name) + _u32(arr.ndim) + b"".join(_u32(d) for d in arr.shape)
    return head + arr.tobytes()


def model_to_bytes(model: MnerModel) -> bytes:
    parts = [MAGIC, _u32(VERSION), _string(model.config.to_text())]
    words = [] if model.table is None else list(enumerate(model.table.tokens))
    chars = [] if not model.char_vocab else sorted(((i, c) for c, i in model.char_vocab.items()))
    parts += [_vocab_block(words), _vocab_block(chars), _vocab_block(list(enumerate(model.labels)))]
    tensors = [(k, v) for k, v in model.store.items()]
    if model.table is not None:
        tensors.append((WORD_TENSOR, model.table.vectors))
    parts.append(_u32(len(tensors)))
    parts += [_tensor(k, v) for k, v in tensors]
    return b"".join(parts)


def save_model(model: MnerModel, path) -> None:
    data = model_to_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"truncated file: wanted {n} bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError(f"invalid UTF-8 at offset {self.pos}") from exc

    def vocab(self) -> list:
        items = []
        for k in range(self.u32()):
            idx = self.u32()
            if idx != k:
                raise ModelFormatError(f"vocabulary index {idx} out of order (expected {k})")
            items.append(self.string())
        return items


def model_from_bytes(data: bytes) -> MnerModel:
    r = _Reader(data)
    if len(data) < 4 or r.take(4) != MAGIC:
        raise BadMagicError("bad magic: not an MNER model file")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version} (this build reads {VERSION})")
    config = TrainConfig.from_text(r.string())
    words, chars, labels = r.vocab(), r.vocab(), r.vocab()
    tensors = {}
    for _ in range(r.u32()):
        name = r.string()
        shape = tuple(r.u32() for _ in range(r.u32()))
        n = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after the last tensor")
    table = None
    if words:
        vec = tensors.pop(WORD_TENSOR, None)
        if vec is None or vec.ndim != 2 or vec.shape[0] != len(words):
            got = None if vec is None else vec.shape
            raise ShapeMismatchError(f"shape mismatch: {WORD_TENSOR} is {got}, vocabulary has {len(words)} words")
        table = EmbeddingTable(words, vec, config.unk_policy, config.seed)
    char_vocab = {c: i for i, c in enumerate(chars)} or None
    expected = MnerModel.param_shapes(config, table.dim if table is not None else None,
                                      len(chars) if chars else None, len(labels))
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ShapeMismatchError(f"shape mismatch: missing tensors {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if tensors[name].shape != tuple(shape):
            raise ShapeMismatchError(f"shape mismatch: {name} is {tensors[name].shape}, expected {tuple(shape)}")
    store = ParameterStore({k: tensors[k] for k in expected}, seed=config.seed)
    return MnerModel(config, table, char_vocab, store, labels)


def load_model(path) -> MnerModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
