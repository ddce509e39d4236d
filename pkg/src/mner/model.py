"""The multimodal Bi-LSTM-CRF tagger.

embed -> project (tanh affine per modality) -> fuse (attention or concat)
-> entity Bi-LSTM -> affine emissions -> linear-chain CRF
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .core import ParameterStore, Tape, init_parameters
from .encoders import (
    EmbeddingTable,
    build_char_vocab,
    char_ids,
    embed_word,
    embed_visual,
    tape_char_encode,
)
from .fusion import canonical_order, fusion_param_shapes, tape_fuse
from .sequence import (
    LABELS,
    bio_constraint_mask,
    crf_param_shapes,
    lstm_param_names,
    lstm_param_shapes,
    tape_crf_nll,
    tape_lstm,
    viterbi_decode,
)


@dataclass
class TrainConfig:
    p: int = 150
    hidden: int = 100
    char_embed: int = 25
    char_hidden: int = 75
    batch_size: int = 10
    lr: float = 0.02
    epsilon: float = 1e-8
    decay: float = 0.0
    max_epochs: int = 50
    patience: int = 5
    clip: float = 5.0
    seed: int = 1
    modalities: str = "wcv"
    fusion: str = "attention"
    lstm_gate: str = "literal"
    unk_policy: str = "zero"
    bio_constrain: bool = False
    d_v: int = 1024
    init_radius: float = 0.1

    def __post_init__(self):
        self.modalities = canonical_order(self.modalities)

    def validate(self) -> "TrainConfig":
        if not self.modalities:
            raise ValueError("modality set is empty")
        if self.fusion not in ("attention", "concat"):
            raise ValueError(f"fusion must be attention or concat, got {self.fusion!r}")
        if self.fusion == "attention" and len(self.modalities) < 2:
            raise ValueError("attention fusion needs at least two modalities")
        if self.lstm_gate not in ("literal", "standard"):
            raise ValueError(f"lstm_gate must be literal or standard, got {self.lstm_gate!r}")
        if self.unk_policy not in ("zero", "uniform"):
            raise ValueError(f"unk_policy must be zero or uniform, got {self.unk_policy!r}")
        for name in ("p", "hidden", "char_embed", "char_hidden", "batch_size", "d_v"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_epochs < 1 or self.patience < 0:
            raise ValueError("max_epochs must be >= 1 and patience >= 0")
        if not (self.lr > 0 and self.epsilon > 0 and self.clip >= 0 and self.decay >= 0):
            raise ValueError("lr and epsilon must be positive; clip and decay non-negative")
        return self

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={repr(v) if isinstance(v, float) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition("=")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            typ = types[key]
            if typ in ("bool", bool):
                kw[key] = val == "True"
            elif typ in ("int", int):
                kw[key] = int(val)
            elif typ in ("float", float):
                kw[key] = float(val)
            else:
                kw[key] = val
        return cls(**kw)


@dataclass
class Features:
    """Per-sentence inputs that do not depend on trainable parameters."""

    words: np.ndarray | None
    chars: list | None
    visual: np.ndarray | None
    y: np.ndarray | None
    oov: np.ndarray = field(default=None)


@dataclass
class Forward:
    tape: Tape
    emissions: int
    alpha: int | None
    loss: int | None = None


def _is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b")


class MnerModel:
    def __init__(self, config: TrainConfig, table: EmbeddingTable | None, char_vocab: dict | None,
                 store: ParameterStore, labels=LABELS):
        self.config = config.validate()
        self.table = table
        self.char_vocab = char_vocab
        self.store = store
        self.labels = tuple(labels)
        if "w" in config.modalities and table is None:
            raise ValueError("word modality requires an embedding table")
        if "c" in config.modalities and not char_vocab:
            raise ValueError("char modality requires a character vocabulary")
        self._constraint = bio_constraint_mask(self.labels) if config.bio_constrain else None

    # ---- construction -------------------------------------------------

    @staticmethod
    def param_shapes(config: TrainConfig, d_w: int | None, n_chars: int | None,
                     n_labels: int = len(LABELS)) -> dict:
        c = config
        gate = c.lstm_gate
        shapes = {}
        if "w" in c.modalities:
            shapes.update({"proj.w.W": (c.p, d_w), "proj.w.b": (c.p,)})
        if "c" in c.modalities:
            shapes["char.embed"] = (n_chars, c.char_embed)
            shapes.update(lstm_param_shapes("char.fw", c.char_embed, c.char_hidden, gate))
            shapes.update(lstm_param_shapes("char.bw", c.char_embed, c.char_hidden, gate))
            shapes.update({"proj.c.W": (c.p, 2 * c.char_hidden), "proj.c.b": (c.p,)})
        if "v" in c.modalities:
            shapes.update({"proj.v.W": (c.p, c.d_v), "proj.v.b": (c.p,)})
        K = len(c.modalities)
        if c.fusion == "attention":
            shapes.update(fusion_param_shapes(c.modalities, c.p))
            n_in = c.p
        else:
            n_in = K * c.p
        shapes.update(lstm_param_shapes("ent.fw", n_in, c.hidden, gate))
        shapes.update(lstm_param_shapes("ent.bw", n_in, c.hidden, gate))
        shapes.update(crf_param_shapes("crf", n_labels, 2 * c.hidden))
        return shapes

    @classmethod
    def initialize(cls, config: TrainConfig, table: EmbeddingTable | None, train_sentences,
                   char_vocab: dict | None = None) -> "MnerModel":
        config.validate()
        if table is not None and (table.unk_policy, table.unk_seed) != (config.unk_policy, config.seed):
            # the UNK draw is tied to the model seed so saved models rebuild it
            table = dataclasses.replace(table, unk_policy=config.unk_policy, unk_seed=config.seed)
        if "c" in config.modalities and char_vocab is None:
            char_vocab = build_char_vocab(train_sentences)
        shapes = cls.param_shapes(config, table.dim if table is not None else None,
                                  len(char_vocab) if char_vocab else None)
        weights = [(k, s) for k, s in shapes.items() if not _is_bias(k)]
        biases = [(k, s) for k, s in shapes.items() if _is_bias(k)]
        store = init_parameters(weights, "uniform", config.seed, radius=config.init_radius)
        if biases:
            store = store.merge(init_parameters(biases, "zeros", config.seed))
        # restore declaration order so files and iteration are canonical
        store = ParameterStore({k: store[k] for k in shapes}, seed=config.seed)
        return cls(config, table, char_vocab, store)

    # ---- forward --------------------------------------------------------

    def featurize(self, sentence) -> Features:
        mods = self.config.modalities
        words = chars = visual = y = oov = None
        if "w" in mods:
            words = np.stack([embed_word(self.table, tok) for tok in sentence.tokens])
            oov = np.array([tok not in self.table for tok in sentence.tokens])
        if "c" in mods:
            chars = [char_ids(self.char_vocab, tok) for tok in sentence.tokens]
        if "v" in mods:
            if sentence.visual is None:
                raise ValueError("visual modality configured but the sentence has no visual vector")
            visual = embed_visual(sentence.visual, self.config.d_v)
        if sentence.labels is not None:
            y = sentence.label_ids()
        return Features(words, chars, visual, y, oov)

    def build(self, feats: Features, tape: Tape | None = None, fused: bool = True) -> Forward:
        tape = tape or Tape()
        c = self.config
        gate = c.lstm_gate
        P = lambda name: tape.param(name, self.store[name])  # noqa: E731
        xs = []
        T = None
        if "w" in c.modalities:
            raw = tape.const(feats.words)
            T = feats.words.shape[0]
            xs.append(tape.tanh(tape.affine(raw, P("proj.w.W"), P("proj.w.b"))))
        if "c" in c.modalities:
            names = lstm_param_names(gate)
            enc = tape_char_encode(tape, P("char.embed"),
                                   [P(f"char.fw.{k}") for k in names],
                                   [P(f"char.bw.{k}") for k in names],
                                   feats.chars, gate, fused)
            T = len(feats.chars)
            xs.append(tape.tanh(tape.affine(enc, P("proj.c.W"), P("proj.c.b"))))
        if "v" in c.modalities:
            if T is None:
                raise ValueError("visual-only models are not supported")
            pv = tape.tanh(tape.affine(tape.const(feats.visual), P("proj.v.W"), P("proj.v.b")))
            xs.append(tape.mul(tape.const(np.ones((T, 1))), pv))
        if c.fusion == "attention":
            key = c.modalities
            xbar, alpha = tape_fuse(tape, xs, "attention", P(f"att.{key}.W"), P(f"att.{key}.b"))
        else:
            xbar, alpha = tape_fuse(tape, xs, "concat")
        names = lstm_param_names(gate)
        hf = tape_lstm(tape, xbar, [P(f"ent.fw.{k}") for k in names], gate, fused)
        rev = np.arange(T)[::-1].copy()
        hb = tape_lstm(tape, tape.gather(xbar, rev), [P(f"ent.bw.{k}") for k in names], gate, fused)
        hcat = tape.concat(hf, tape.gather(hb, rev), axis=1)
        emit = tape.affine(hcat, P("crf.W_emit"), P("crf.b_emit"))
        return Forward(tape, emit, alpha)

    def loss_forward(self, feats: Features, fused: bool = True) -> Forward:
        if feats.y is None:
            raise ValueError("sentence has no gold labels")
        fwd = self.build(feats, fused=fused)
        trans = fwd.tape.param("crf.trans", self.store["crf.trans"])
        fwd.loss = tape_crf_nll(fwd.tape, fwd.emissions, trans, feats.y, fused)
        return fwd

    def sentence_loss(self, sentence, fused: bool = True):
        """(loss value, tape, forward record) for one labelled sentence."""
        fwd = self.loss_forward(self.featurize(sentence), fused)
        return float(fwd.tape.value(fwd.loss)), fwd.tape, fwd

    def loss_and_grad(self, feats: Features, fused: bool = True):
        fwd = self.loss_forward(feats, fused)
        return float(fwd.tape.value(fwd.loss)), fwd.tape.backward(fwd.loss)

    def loss_value(self, feats: Features, fused: bool = True) -> float:
        fwd = self.loss_forward(feats, fused)
        return float(fwd.tape.value(fwd.loss))

    # ---- inference ------------------------------------------------------

    def decode(self, feats: Features):
        """(label strings, alpha (T, K) or None)."""
        fwd = self.build(feats)
        emissions = fwd.tape.value(fwd.emissions)
        path, _ = viterbi_decode(self.store["crf.trans"], emissions, self._constraint)
        alpha = None if fwd.alpha is None else fwd.tape.value(fwd.alpha).copy()
        return [self.labels[k] for k in path], alpha

    def predict(self, sentence):
        return self.decode(self.featurize(sentence))

    def tag(self, sentences) -> list:
        return [self.predict(s)[0] for s in sentences]
