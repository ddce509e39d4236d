"""Finite-difference check of the full sentence loss on a tiny random model."""

from __future__ import annotations

import numpy as np

from .core import GradCheckReport, finite_difference_check
from .corpus import Sentence
from .encoders import EmbeddingTable
from .model import MnerModel, TrainConfig
from .sequence import LABELS


def tiny_model(seed: int, gate: str = "literal", modalities: str = "wcv",
               fusion: str = "attention", T: int = 4):
    """A p=8, H=6, char 4/4 model and one random labeled sentence of length T.

    Weights are drawn from U(-1, 1): at the usual +-0.1 many gradients of
    the character encoder are ~1e-9, below the roundoff floor of central
    differences at h=1e-5, and the relative error stops meaning anything.
    """
    rng = np.random.default_rng(seed)
    vocab = ["the", "apple", "pie", "ny", "city"]
    table = EmbeddingTable(vocab, rng.normal(size=(len(vocab), 5)))
    pool = vocab + ["Apple", "PIE", "xq", "Zork"]
    tokens = [pool[k] for k in rng.integers(len(pool), size=T)]
    labels = [LABELS[k] for k in rng.integers(len(LABELS), size=T)]
    sentence = Sentence(tokens, labels, rng.normal(size=6))
    cfg = TrainConfig(p=8, hidden=6, char_embed=4, char_hidden=4, d_v=6, seed=seed,
                      init_radius=1.0, modalities=modalities, fusion=fusion, lstm_gate=gate)
    model = MnerModel.initialize(cfg, table, [sentence])
    return model, sentence


def check_sentence_loss(seed: int = 7, tol: float = 1e-4, h: float = 1e-5, **kw) -> GradCheckReport:
    model, sentence = tiny_model(seed, **kw)
    feats = model.featurize(sentence)
    return finite_difference_check(lambda st: model.loss_and_grad(feats), model.store, h, tol,
                                   value_fn=lambda st: model.loss_value(feats))
