"""Exact-match span scoring (conlleval convention), typed and untyped."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .sequence import ENTITY_TYPES, LABEL_INDEX


class Span(NamedTuple):
    start: int
    end: int  # inclusive
    type: str


def extract_spans(labels) -> list[Span]:
    """BIO labels to spans.

    A stray I-X (after O, or after a span of another type) opens a new span.
    """
    spans = []
    cur_start, cur_type = None, None
    for k, lab in enumerate(labels):
        if lab not in LABEL_INDEX:
            raise ValueError(f"unknown label {lab!r} at position {k}")
        if lab == "O":
            if cur_type is not None:
                spans.append(Span(cur_start, k - 1, cur_type))
            cur_start, cur_type = None, None
            continue
        prefix, typ = lab.split("-", 1)
        if prefix == "I" and cur_type == typ:
            continue
        if cur_type is not None:
            spans.append(Span(cur_start, k - 1, cur_type))
        cur_start, cur_type = k, typ
    if cur_type is not None:
        spans.append(Span(cur_start, len(labels) - 1, cur_type))
    return spans


def spans_to_bio(spans, length: int) -> list[str]:
    labels = ["O"] * length
    for s in sorted(spans):
        if not 0 <= s.start <= s.end < length:
            raise ValueError(f"span {s} outside a sequence of length {length}")
        labels[s.start] = f"B-{s.type}"
        for k in range(s.start + 1, s.end + 1):
            labels[k] = f"I-{s.type}"
    return labels


def prf(correct: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = 100.0 * correct / n_pred if n_pred else 0.0
    r = 100.0 * correct / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    correct: int = 0
    n_pred: int = 0
    n_gold: int = 0

    @classmethod
    def from_counts(cls, correct, n_pred, n_gold):
        return cls(*prf(correct, n_pred, n_gold), correct, n_pred, n_gold)


@dataclass
class Metrics:
    typed: PRF
    segmentation: PRF
    per_type: dict = field(default_factory=dict)

    def to_tsv(self) -> str:
        rows = ["task\tprecision\trecall\tf1"]
        rows.append(self._row("typed", self.typed))
        rows.append(self._row("segmentation", self.segmentation))
        for typ, m in self.per_type.items():
            rows.append(self._row(typ, m))
        return "\n".join(rows) + "\n"

    @staticmethod
    def _row(name, m):
        return f"{name}\t{m.precision:.2f}\t{m.recall:.2f}\t{m.f1:.2f}"


def score_predictions(gold, predicted) -> Metrics:
    """Micro-averaged P/R/F1 over a corpus of label sequences."""
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold sentences but {len(predicted)} predicted")
    typed_c = seg_c = n_gold = n_pred = 0
    per = {t: [0, 0, 0] for t in ENTITY_TYPES}  # correct, pred, gold
    for k, (g, p) in enumerate(zip(gold, predicted)):
        if len(g) != len(p):
            raise ValueError(f"sentence {k}: {len(g)} gold labels but {len(p)} predicted")
        gs, ps = set(extract_spans(g)), set(extract_spans(p))
        n_gold += len(gs)
        n_pred += len(ps)
        typed_c += len(gs & ps)
        seg_c += len({(s.start, s.end) for s in gs} & {(s.start, s.end) for s in ps})
        for s in gs:
            per[s.type][2] += 1
        for s in ps:
            per[s.type][1] += 1
        for s in gs & ps:
            per[s.type][0] += 1
    return Metrics(
        PRF.from_counts(typed_c, n_pred, n_gold),
        PRF.from_counts(seg_c, n_pred, n_gold),
        {t: PRF.from_counts(*c) for t, c in per.items()},
    )
