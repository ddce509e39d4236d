"""Word, character and visual channels, and their projections to width p."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import DTYPE, Tape, register_op
from .sequence import LstmParams, _grads_by_name, _kernel_args, tape_lstm

log = logging.getLogger(__name__)

MODALITIES = ("w", "c", "v")
UNK_CHAR = "\x00unk"


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    """Pre-trained word vectors with a total lookup.

    Lookup order: exact token, then its lowercase form, then the UNK
    vector (all-zero, or a seeded U(-unk_scale, unk_scale) draw per token).
    """

    tokens: list
    vectors: np.ndarray
    unk_policy: str = "zero"
    unk_seed: int = 0
    unk_scale: float = 0.1
    duplicates: int = 0
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=DTYPE)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise ValueError("vectors must be (len(tokens), d_w)")
        if self.unk_policy not in ("zero", "uniform"):
            raise ValueError(f"unknown unk_policy {self.unk_policy!r}")
        self.index = {}
        for k, tok in enumerate(self.tokens):
            self.index.setdefault(tok, k)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def row_of(self, token: str) -> int | None:
        k = self.index.get(token)
        if k is None:
            k = self.index.get(token.lower())
        return k

    def __contains__(self, token: str) -> bool:
        return self.row_of(token) is not None

    def unk_vector(self, token: str) -> np.ndarray:
        if self.unk_policy == "zero":
            return np.zeros(self.dim)
        rng = np.random.default_rng([self.unk_seed, zlib.crc32(token.encode("utf-8"))])
        return rng.uniform(-self.unk_scale, self.unk_scale, size=self.dim)

    def subset(self, keep_rows) -> "EmbeddingTable":
        keep_rows = sorted(int(k) for k in keep_rows)
        return EmbeddingTable([self.tokens[k] for k in keep_rows], self.vectors[keep_rows],
                              self.unk_policy, self.unk_seed, self.unk_scale)

    def oov_count(self, sentences) -> int:
        return sum(tok not in self for s in sentences for tok in s.tokens)


def load_word_vectors(path, unk_policy: str = "zero", unk_seed: int = 0) -> EmbeddingTable:
    """Read a whitespace-delimited ``token v1 ... vd`` file.

    Duplicate tokens keep their first row; the number dropped is stored on
    the table as ``duplicates``.
    """
    tokens, rows, seen = [], [], set()
    width = None
    dups = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            tok, vals = parts[0], parts[1:]
            if width is None:
                width = len(vals)
                if width == 0:
                    raise EmbeddingFormatError(f"line {lineno}: no vector values")
            elif len(vals) != width:
                raise EmbeddingFormatError(
                    f"line {lineno}: expected {width} values, found {len(vals)}")
            try:
                vec = [float(v) for v in vals]
            except ValueError:
                raise EmbeddingFormatError(f"line {lineno}: unparseable real") from None
            if tok in seen:
                dups += 1
                continue
            seen.add(tok)
            tokens.append(tok)
            rows.append(vec)
    if not tokens:
        raise EmbeddingFormatError("no rows")
    if dups:
        log.warning("%s: %d duplicate tokens ignored", path, dups)
    table = EmbeddingTable(tokens, np.array(rows), unk_policy, unk_seed)
    table.duplicates = dups
    return table


def write_word_vectors(table: EmbeddingTable, path, fmt: str = "%.6f") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, row in zip(table.tokens, table.vectors):
            fh.write(tok + " " + " ".join(fmt % v for v in row) + "\n")


def embed_word(table: EmbeddingTable, token: str) -> np.ndarray:
    k = table.row_of(token)
    if k is None:
        return table.unk_vector(token)
    return table.vectors[k].copy()


# --------------------------------------------------------------------------
# characters
# --------------------------------------------------------------------------

def build_char_vocab(sentences) -> dict:
    """UNK at index 0, then training characters in order of first appearance."""
    vocab = {UNK_CHAR: 0}
    for s in sentences:
        for tok in s.tokens:
            for ch in tok:
                if ch not in vocab:
                    vocab[ch] = len(vocab)
    return vocab


def char_ids(vocab: dict, token: str) -> np.ndarray:
    if not token:
        raise ValueError("empty token")
    return np.array([vocab.get(ch, 0) for ch in token], dtype=np.int64)


@dataclass
class CharEncoderParams:
    vocab: dict
    embed: np.ndarray  # (|vocab|, d_ce)
    fw: LstmParams
    bw: LstmParams

    @classmethod
    def from_store(cls, store, vocab, prefix="char", gate="literal"):
        return cls(vocab, store[f"{prefix}.embed"],
                   LstmParams.from_store(store, f"{prefix}.fw", gate),
                   LstmParams.from_store(store, f"{prefix}.bw", gate))

    @property
    def width(self) -> int:
        return self.fw.hidden + self.bw.hidden


def encode_chars(params: CharEncoderParams, token: str) -> np.ndarray:
    """[final forward state; final backward state] over the token's characters."""
    ids = char_ids(params.vocab, token)
    x = np.ascontiguousarray(params.embed[ids])
    hf = kernels.lstm_forward(x, *params.fw.kernel_args())[0][-1]
    hb = kernels.lstm_forward(np.ascontiguousarray(x[::-1]), *params.bw.kernel_args())[0][-1]
    return np.concatenate([hf, hb])


def _char_bilstm_fwd(vals, attrs):
    gate, n = attrs["gate"], attrs["n_w"]
    embed = vals[0]
    fw = _kernel_args([np.ascontiguousarray(v) for v in vals[1:1 + n]], gate)
    bw = _kernel_args([np.ascontiguousarray(v) for v in vals[1 + n:]], gate)
    out, caches = [], []
    for ids in attrs["ids"]:
        x = np.ascontiguousarray(embed[ids])
        xr = np.ascontiguousarray(x[::-1])
        f = kernels.lstm_forward(x, *fw)
        b = kernels.lstm_forward(xr, *bw)
        out.append(np.concatenate([f[0][-1], b[0][-1]]))
        caches.append((x, xr, f, b))
    return np.stack(out), (fw, bw, caches)


def _char_bilstm_bwd(g, vals, out, cache, attrs):
    gate, n = attrs["gate"], attrs["n_w"]
    fw, bw, caches = cache
    H = fw[1].shape[0]
    d_embed = np.zeros_like(vals[0])
    d_fw = d_bw = None
    for t, (ids, (x, xr, f, b)) in enumerate(zip(attrs["ids"], caches)):
        dh = np.zeros((len(ids), H))
        dh[-1] = g[t, :H]
        gf = kernels.lstm_backward(dh, x, *f, *fw[:8], fw[11])
        dh = np.zeros((len(ids), b[0].shape[1]))
        dh[-1] = g[t, H:]
        gb = kernels.lstm_backward(dh, xr, *b, *bw[:8], bw[11])
        np.add.at(d_embed, ids, gf[0])
        np.add.at(d_embed, ids[::-1], gb[0])
        d_fw = list(gf[1:]) if d_fw is None else [a + c for a, c in zip(d_fw, gf[1:])]
        d_bw = list(gb[1:]) if d_bw is None else [a + c for a, c in zip(d_bw, gb[1:])]
    return [d_embed] + _grads_by_name(d_fw, gate) + _grads_by_name(d_bw, gate)


register_op("char_bilstm", _char_bilstm_fwd, _char_bilstm_bwd)


def tape_char_encode(tape: Tape, embed: int, fw_ids, bw_ids, token_ids, gate: str,
                     fused: bool = True) -> int:
    """(T, 2 * hidden) node of character encodings for a list of id arrays."""
    if fused:
        return tape.apply("char_bilstm", embed, *fw_ids, *bw_ids,
                          ids=[np.asarray(i) for i in token_ids], gate=gate, n_w=len(fw_ids))
    rows = []
    for ids in token_ids:
        x = tape.gather(embed, ids)
        xr = tape.gather(embed, np.asarray(ids)[::-1])
        hf = tape.pick(tape_lstm(tape, x, fw_ids, gate, fused=False), -1)
        hb = tape.pick(tape_lstm(tape, xr, bw_ids, gate, fused=False), -1)
        both = tape.concat(hf, hb)
        rows.append(tape.reshape(both, (1, tape.value(both).shape[0])))
    return tape.concat(*rows, axis=0)


# --------------------------------------------------------------------------
# visual channel and projections
# --------------------------------------------------------------------------

def embed_visual(visual, d_v: int):
    """Validate a sentence-level visual vector; ``None`` passes through."""
    if visual is None:
        return None
    v = np.asarray(visual, dtype=DTYPE)
    if v.shape != (d_v,):
        raise ValueError(f"visual vector has width {v.shape[-1] if v.ndim else 0}, expected {d_v}")
    return v


@dataclass
class ModalityVector:
    modality: str
    value: np.ndarray


@dataclass
class ModalityTransforms:
    """Per-modality (W, b) for x -> tanh(W x + b)."""

    weights: dict  # modality -> (W (p, d_m), b (p,))

    @classmethod
    def from_store(cls, store, modalities, prefix="proj"):
        return cls({m: (store[f"{prefix}.{m}.W"], store[f"{prefix}.{m}.b"]) for m in modalities})

    @property
    def width(self) -> int:
        widths = {w.shape[0] for w, _ in self.weights.values()}
        if len(widths) != 1:
            raise ValueError(f"transforms disagree on output width: {sorted(widths)}")
        return widths.pop()


def project_modality(transforms: ModalityTransforms, m: str, raw) -> ModalityVector:
    if m not in transforms.weights:
        raise ValueError(f"no transform for modality {m!r}")
    w, b = transforms.weights[m]
    raw = np.asarray(raw, dtype=DTYPE)
    if raw.shape != (w.shape[1],):
        raise ValueError(f"modality {m}: raw width {raw.shape} does not match {w.shape[1]}")
    return ModalityVector(m, np.tanh(w @ raw + b))
