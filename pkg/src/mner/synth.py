"""Seeded synthetic caption corpus with a visual channel.

Each sentence has one visual topic and one "slot": either an entity
mention whose type is aligned with the topic, or a decoy (a polysemous
surface form of some *other* type used as a common noun, label O).  All
other tokens are topic-independent fillers, so the text carries no topic
information and polysemous forms are disambiguated only by the image.
With probability ``oov_noise`` the slot is character-perturbed (trailing
letter repeated, or case flipped) so it falls outside the word vectors.

Entity forms within a type follow a Zipf law, so a long tail of names is
rare or unseen in training.  Only a ``cue_rate`` share of the
non-polysemous names carries a type-specific spelling (suffix, acronym,
second word); the rest are plain capitalised pseudo-words whose type is
known only from their word vectors or from having been seen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Sentence
from .encoders import EmbeddingTable
from .sequence import ENTITY_TYPES

_CONS = "bcdfghjklmnprstvz"
_VOW = "aeiou"
_SUFFIX = {
    "PER": ("son", "ez", "ova", "ski", "ani"),
    "LOC": ("ville", "burg", "ford", "haven", "stad"),
    "ORG": ("corp", "tek", "works", "soft", "co"),
    "MISC": ("fest", "con", "cup", "mania", "expo"),
}
_SECOND = {
    "LOC": ("Bay", "Falls", "Heights", "Park", "Point"),
    "ORG": ("Labs", "Group", "Inc", "Media", "Systems"),
    "MISC": ("2017", "Live", "Tour", "Awards", "Series"),
}


@dataclass
class SyntheticConfig:
    n_sentences: int = 10000
    mean_tokens: float = 6.0
    lexicon_size: int | dict = 1000
    n_visual_topics: int = 8
    d_v: int = 1024
    polysemy: float = 0.3
    oov_noise: float = 0.15
    seed: int = 7
    d_w: int = 50
    entity_rate: float = 0.7  # P(slot is an entity mention) vs decoy
    zipf: float = 1.0  # exponent of the within-type form distribution, 0 is uniform
    cue_rate: float = 0.5  # share of non-polysemous forms spelled with a type cue
    n_fillers: int = 300
    visual_scale: float = 1.0
    visual_decimals: int = 4
    split: tuple = (0.70, 0.15, 0.15)

    def sizes(self) -> dict:
        if isinstance(self.lexicon_size, dict):
            return {t: int(self.lexicon_size[t]) for t in ENTITY_TYPES}
        return {t: int(self.lexicon_size) for t in ENTITY_TYPES}

    def validate(self):
        for name in ("polysemy", "oov_noise", "entity_rate", "cue_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("n_sentences", "n_visual_topics", "d_v", "d_w", "n_fillers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.zipf < 0:
            raise ValueError("zipf exponent must be >= 0")
        if self.mean_tokens < 1:
            raise ValueError("mean_tokens must be >= 1")
        for t, n in self.sizes().items():
            if n <= 0:
                raise ValueError(f"lexicon size for {t} must be positive")
            if self.polysemy > 0 and round(self.polysemy * n) == 0:
                raise ValueError(f"lexicon for {t} ({n} forms) is too small for polysemy {self.polysemy}")
        return self


@dataclass
class Lexicon:
    fillers: list
    forms: dict  # type -> list of tuple-of-tokens
    polysemous: dict  # type -> list of single-token forms (subset of forms)
    topic_type: list  # topic index -> entity type
    topic_means: np.ndarray  # (n_topics, d_v)
    weights: dict = field(default_factory=dict)  # type -> probabilities aligned with forms[type]
    vocabulary: list = field(default_factory=list)


@dataclass
class SyntheticCorpus:
    train: list
    dev: list
    test: list
    embeddings: EmbeddingTable
    lexicon: Lexicon
    perturbed: set  # surface forms produced by perturbation


def _word(rng, n_syl, alphabet_c=_CONS, alphabet_v=_VOW):
    return "".join(rng.choice(list(alphabet_c)) + rng.choice(list(alphabet_v)) for _ in range(n_syl))


def _build_lexicon(cfg: SyntheticConfig, rng) -> Lexicon:
    used = set()

    def fresh(make):
        for _ in range(10000):
            w = make()
            if w not in used and w.lower() not in used:
                used.add(w)
                used.add(w.lower())
                return w
        raise ValueError("could not generate enough distinct surface forms")

    fillers = [fresh(lambda: _word(rng, int(rng.integers(1, 4)))) for _ in range(cfg.n_fillers)]

    def plain():
        return fresh(lambda: _word(rng, int(rng.integers(2, 4))).capitalize())

    def cued(typ):
        if typ == "PER":
            last = fresh(lambda: (_word(rng, int(rng.integers(1, 3)))
                                  + str(rng.choice(_SUFFIX["PER"]))).capitalize())
            return (fresh(lambda: _word(rng, 2).capitalize()), last) if rng.random() < 0.7 else (last,)
        if typ == "ORG" and rng.random() < 0.3:
            return (fresh(lambda: "".join(rng.choice(list(_CONS.upper()), size=int(rng.integers(3, 5))))),)
        head = fresh(lambda: (_word(rng, int(rng.integers(1, 3))) + str(rng.choice(_SUFFIX[typ]))).capitalize())
        return (head, str(rng.choice(_SECOND[typ]))) if rng.random() < 0.4 else (head,)

    forms, poly, weights = {}, {}, {}
    for typ, n in cfg.sizes().items():
        n_poly = round(cfg.polysemy * n)
        p_forms = [fresh(lambda: _word(rng, int(rng.integers(2, 4)))) for _ in range(n_poly)]
        names = []
        for _ in range(n - n_poly):
            if rng.random() < cfg.cue_rate:
                names.append(cued(typ))
            else:
                names.append((plain(), plain()) if rng.random() < 0.4 else (plain(),))
        forms[typ] = [(w,) for w in p_forms] + names
        poly[typ] = p_forms
        ranks = rng.permutation(n) + 1
        w = ranks.astype(float) ** -cfg.zipf
        weights[typ] = w / w.sum()
    topic_type = [ENTITY_TYPES[k % len(ENTITY_TYPES)] for k in range(cfg.n_visual_topics)]
    means = rng.normal(0.0, cfg.visual_scale, size=(cfg.n_visual_topics, cfg.d_v))
    vocab, seen = list(fillers), set(fillers)
    for typ in ENTITY_TYPES:
        for f in forms[typ]:
            for tok in f:
                if tok not in seen:
                    seen.add(tok)
                    vocab.append(tok)
    return Lexicon(fillers, forms, poly, topic_type, means, weights, vocab)


def _embeddings(cfg: SyntheticConfig, lex: Lexicon, rng) -> EmbeddingTable:
    """Clustered vectors: fillers, each entity type, polysemous forms in between."""
    centers = {k: rng.normal(0.0, 1.0, cfg.d_w) for k in ("O",) + ENTITY_TYPES}
    kind = {w: "O" for w in lex.fillers}
    poly_of = {}
    for typ in ENTITY_TYPES:
        for f in lex.forms[typ]:
            for tok in f:
                kind.setdefault(tok, typ)
        for w in lex.polysemous[typ]:
            poly_of[w] = typ
    rows = []
    for tok in lex.vocabulary:
        if tok in poly_of:
            c = 0.5 * (centers["O"] + centers[poly_of[tok]])
        else:
            c = centers[kind[tok]]
        rows.append(np.round(c + rng.normal(0.0, 0.6, cfg.d_w), 6))
    return EmbeddingTable(list(lex.vocabulary), np.array(rows))


def perturb(token: str, rng, vocab: set) -> str:
    """Repeat the final letter 2-5 extra times, or flip the case of some letters.

    The result is never in ``vocab`` under exact or lowercase lookup.
    """
    if rng.random() < 0.5:
        flipped = "".join(ch.swapcase() if rng.random() < 0.5 else ch for ch in token)
        if flipped != token and flipped not in vocab and flipped.lower() not in vocab:
            return flipped
    out = token + token[-1] * int(rng.integers(2, 6))
    while out in vocab or out.lower() in vocab:
        out += token[-1]
    return out


def generate_synthetic_corpus(cfg: SyntheticConfig) -> SyntheticCorpus:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    lex = _build_lexicon(cfg, rng)
    table = _embeddings(cfg, lex, rng)
    vocab = set(table.tokens)
    perturbed = set()
    # a decoy picks another type with polysemous forms, then a form by its frequency
    others = {t: [u for u in ENTITY_TYPES if u != t and lex.polysemous[u]] for t in ENTITY_TYPES}
    poly_w = {u: lex.weights[u][:len(lex.polysemous[u])] / lex.weights[u][:len(lex.polysemous[u])].sum()
              for u in ENTITY_TYPES if lex.polysemous[u]}
    sentences = []
    for _ in range(cfg.n_sentences):
        z = int(rng.integers(cfg.n_visual_topics))
        typ = lex.topic_type[z]
        if rng.random() < cfg.entity_rate:
            form = lex.forms[typ][int(rng.choice(len(lex.forms[typ]), p=lex.weights[typ]))]
            slot = list(form)
            slot_labels = [f"B-{typ}"] + [f"I-{typ}"] * (len(form) - 1)
        elif others[typ]:
            u = others[typ][int(rng.integers(len(others[typ])))]
            slot = [lex.polysemous[u][int(rng.choice(len(poly_w[u]), p=poly_w[u]))]]
            slot_labels = ["O"]
        else:
            slot = [lex.fillers[int(rng.integers(len(lex.fillers)))]]
            slot_labels = ["O"]
        if slot_labels != ["O"] or slot[0] not in lex.fillers:
            if rng.random() < cfg.oov_noise:
                k = int(rng.integers(len(slot)))
                slot[k] = perturb(slot[k], rng, vocab)
                perturbed.add(slot[k])
        n_fill = int(rng.poisson(max(cfg.mean_tokens - len(slot), 0.0)))
        fill = [lex.fillers[int(j)] for j in rng.integers(len(lex.fillers), size=n_fill)]
        pos = int(rng.integers(n_fill + 1))
        tokens = fill[:pos] + slot + fill[pos:]
        labels = ["O"] * pos + slot_labels + ["O"] * (n_fill - pos)
        visual = lex.topic_means[z] + rng.normal(0.0, 1.0, cfg.d_v)
        visual = np.round(visual, cfg.visual_decimals)
        sentences.append(Sentence(tokens, labels, visual))
    order = rng.permutation(len(sentences))
    n_train = int(math.floor(cfg.split[0] * len(sentences)))
    n_dev = int(math.floor(cfg.split[1] * len(sentences)))
    shuffled = [sentences[k] for k in order]
    return SyntheticCorpus(shuffled[:n_train], shuffled[n_train:n_train + n_dev],
                           shuffled[n_train + n_dev:], table, lex, perturbed)


# --------------------------------------------------------------------------
# Bayes oracle
# --------------------------------------------------------------------------

@dataclass
class BayesGap:
    text_f1: float
    text_visual_f1: float
    topic_error_bound: float  # union bound on misidentifying the topic from the image

    @property
    def gap(self) -> float:
        return self.text_visual_f1 - self.text_f1


def bayes_gap(cfg: SyntheticConfig) -> BayesGap:
    """Expected typed F1 of the Bayes-optimal tagger with and without the image.

    Computed from the generator's mixing weights.  The text-only tagger
    knows the lexicon and form frequencies but not the topic; it labels a
    polysemous form as an entity iff P(entity, form) > P(decoy, form).
    Perturbations are invertible given the lexicon, so they do not change
    either optimum.  Given the topic, every label is determined, so
    text+visual is 100 (up to ``topic_error_bound``).
    """
    cfg.validate()
    lex = _build_lexicon(cfg, np.random.default_rng(cfg.seed))
    n_poly = {t: len(lex.polysemous[t]) for t in ENTITY_TYPES}
    p_type = {t: lex.topic_type.count(t) / cfg.n_visual_topics for t in ENTITY_TYPES}
    pe = cfg.entity_rate
    # a type-y sentence draws its decoy type uniformly from the other types with polysemous forms
    n_other = {y: sum(1 for z in ENTITY_TYPES if z != y and n_poly[z]) for y in ENTITY_TYPES}
    tp = fp = fn = 0.0
    for x in ENTITY_TYPES:
        w = lex.weights[x]
        k = n_poly[x]  # polysemous forms come first in forms[x]
        tp += p_type[x] * pe * float(w[k:].sum())
        if not k:
            continue
        p_decoy_type = sum(p_type[y] * (1 - pe) / n_other[y] for y in ENTITY_TYPES if y != x)
        for j in range(k):
            p_ent = p_type[x] * pe * float(w[j])
            p_dec = p_decoy_type * float(w[j]) / float(w[:k].sum())
            if p_ent > p_dec:
                tp += p_ent
                fp += p_dec
            else:
                fn += p_ent
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    text_f1 = 100 * 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    # topic identifiability from the drawn means (unit-variance noise)
    err = 0.0
    means = lex.topic_means
    for i in range(len(means)):
        for j in range(len(means)):
            if i != j and lex.topic_type[i] != lex.topic_type[j]:
                d = float(np.linalg.norm(means[i] - means[j]))
                err += 0.5 * math.erfc(d / (2 * math.sqrt(2))) / len(means)
    return BayesGap(text_f1, 100.0, min(err, 1.0))
