"""Modality attention and concatenation fusion.

Attention over K modality vectors of width p (per token):

    a     = sigmoid(W_m [x_1; ...; x_K] + b_m)     W_m: (K, K*p)
    alpha = softmax(a)
    xbar  = sum_k alpha_k x_k

Because each a_k lies in (0, 1), every alpha_k is confined to
[1 / (1 + (K-1) e), e / (e + K - 1)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DTYPE, Tape, sigmoid, softmax
from .encoders import MODALITIES, ModalityVector


def canonical_order(modalities) -> str:
    """Restrict (w, c, v) to the given set, keeping that order."""
    mods = set(modalities)
    bad = mods - set(MODALITIES)
    if bad:
        raise ValueError(f"unknown modalities {sorted(bad)}")
    return "".join(m for m in MODALITIES if m in mods)


def alpha_bounds(K: int) -> tuple[float, float]:
    e = math.e
    return 1.0 / (1.0 + (K - 1) * e), e / (e + K - 1)


@dataclass
class FusionParams:
    """One (W_m, b_m) pair per modality set, keyed by e.g. ``"wc"``."""

    pairs: dict

    @classmethod
    def from_store(cls, store, prefix="att"):
        pairs = {}
        for name in store.names():
            if name.startswith(prefix + ".") and name.endswith(".W"):
                key = name[len(prefix) + 1:-2]
                pairs[key] = (store[name], store[f"{prefix}.{key}.b"])
        return cls(pairs)


def fusion_param_shapes(modalities: str, p: int, prefix="att") -> dict:
    K = len(modalities)
    return {f"{prefix}.{modalities}.W": (K, K * p), f"{prefix}.{modalities}.b": (K,)}


@dataclass
class AttentionWeights:
    modalities: str
    alpha: np.ndarray


@dataclass
class FusedContext:
    value: np.ndarray
    mode: str  # "attention" or "concat"


def _sorted_inputs(inputs):
    if not inputs:
        raise ValueError("no modality inputs")
    tags = [v.modality for v in inputs]
    if len(set(tags)) != len(tags):
        raise ValueError(f"repeated modality in {tags}")
    order = canonical_order(tags)
    by_tag = {v.modality: v for v in inputs}
    return order, [np.asarray(by_tag[m].value, dtype=DTYPE) for m in order]


def attend_modalities(params: FusionParams, inputs, K: int | None = None):
    """Returns (FusedContext, AttentionWeights) for one token."""
    order, vals = _sorted_inputs(inputs)
    if K is None:
        K = len(vals)
    if K not in (2, 3) or K != len(vals):
        raise ValueError(f"attention needs K in (2, 3) matching {len(vals)} inputs, got K={K}")
    p = vals[0].shape[0]
    if any(v.shape != (p,) for v in vals):
        raise ValueError(f"modality widths differ: {[v.shape for v in vals]}")
    if order not in params.pairs:
        raise ValueError(f"no attention parameters for modality set {order!r}")
    w, b = params.pairs[order]
    if w.shape != (K, K * p):
        raise ValueError(f"attention weight shape {w.shape} does not match K={K}, p={p}")
    alpha = softmax(sigmoid(w @ np.concatenate(vals) + b))
    xbar = sum(a * v for a, v in zip(alpha, vals))
    return FusedContext(xbar, "attention"), AttentionWeights(order, alpha)


def concat_fuse(inputs) -> FusedContext:
    order, vals = _sorted_inputs(inputs)
    p = vals[0].shape[0]
    if any(v.shape != (p,) for v in vals):
        raise ValueError(f"modality widths differ: {[v.shape for v in vals]}")
    return FusedContext(np.concatenate(vals), "concat")


def tape_fuse(tape: Tape, xs: list[int], mode: str, att_w: int | None = None,
              att_b: int | None = None):
    """Fuse per-modality (T, p) nodes.  Returns (xbar node, alpha node or None)."""
    if mode == "concat" or len(xs) == 1:
        return (xs[0] if len(xs) == 1 else tape.concat(*xs, axis=1)), None
    T, p = tape.value(xs[0]).shape
    K = len(xs)
    cat = tape.concat(*xs, axis=1)
    alpha = tape.softmax(tape.sigmoid(tape.affine(cat, att_w, att_b)), axis=1)
    stacked = tape.reshape(cat, (T, K, p))
    mixed = tape.mul(tape.reshape(alpha, (T, K, 1)), stacked)
    return tape.sum(mixed, axis=1), alpha


def attention_header(modalities: str) -> str:
    return "\t".join(["token"] + [f"alpha_{m}" for m in modalities] + ["pred", "gold"])


def emit_attention_report(tokens, alphas, predictions, gold, modalities: str = "wcv") -> str:
    """TSV block: header, then one row per token with alpha to 4 decimals."""
    T = len(tokens)
    if gold is None:
        gold = ["-"] * T
    alphas = [np.asarray(a.alpha if isinstance(a, AttentionWeights) else a) for a in alphas]
    if not (len(alphas) == len(predictions) == len(gold) == T):
        raise ValueError(f"length mismatch: {T} tokens, {len(alphas)} alphas, "
                         f"{len(predictions)} predictions, {len(gold)} gold labels")
    lines = [attention_header(modalities)]
    for tok, a, pr, gd in zip(tokens, alphas, predictions, gold):
        if a.shape != (len(modalities),):
            raise ValueError(f"alpha {a} does not match modalities {modalities!r}")
        lines.append("\t".join([tok] + [f"{x:.4f}" for x in a] + [pr, gd]))
    return "\n".join(lines) + "\n"
