"""Tab-separated corpus files.

Sentences are separated by blank lines.  A sentence may start with a
``#visual<TAB>f1 f2 ... fd`` directive; each following line is
``token<TAB>label`` or a bare ``token``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequence import LABEL_INDEX

VISUAL_DIRECTIVE = "#visual"


class CorpusError(ValueError):
    pass


@dataclass(eq=False)
class Sentence:
    tokens: list
    labels: list | None = None
    visual: np.ndarray | None = None

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError("sentence has no tokens")
        if self.labels is not None and len(self.labels) != len(self.tokens):
            raise CorpusError(f"{len(self.tokens)} tokens but {len(self.labels)} labels")
        if self.visual is not None:
            self.visual = np.asarray(self.visual, dtype=np.float64)

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        if not isinstance(other, Sentence):
            return NotImplemented
        if self.tokens != other.tokens or self.labels != other.labels:
            return False
        if (self.visual is None) != (other.visual is None):
            return False
        return self.visual is None or (
            self.visual.shape == other.visual.shape
            and self.visual.tobytes() == other.visual.tobytes())

    def label_ids(self) -> np.ndarray:
        return np.array([LABEL_INDEX[lab] for lab in self.labels], dtype=np.int64)


def _parse_visual(text, lineno, d_v):
    try:
        vec = np.array([float(v) for v in text.split()], dtype=np.float64)
    except ValueError:
        raise CorpusError(f"unparseable visual value at line {lineno}") from None
    if d_v is not None and vec.shape[0] != d_v:
        raise CorpusError(f"visual vector at line {lineno} has width {vec.shape[0]}, expected {d_v}")
    if vec.shape[0] == 0:
        raise CorpusError(f"empty visual vector at line {lineno}")
    return vec


def parse_corpus_text(text: str, expect_visual: bool = False, d_v: int | None = None) -> list:
    sentences = []
    tokens, labels, visual = [], [], None
    labeled = None
    start_line = 1

    def flush():
        nonlocal tokens, labels, visual, labeled
        if tokens:
            sentences.append(Sentence(tokens, labels if labeled else None, visual))
        elif visual is not None:
            raise CorpusError(f"visual directive without tokens at line {start_line}")
        tokens, labels, visual, labeled = [], [], None, None

    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith(VISUAL_DIRECTIVE + "\t") or line == VISUAL_DIRECTIVE:
            if tokens or visual is not None:
                raise CorpusError(f"visual directive must precede the first token (line {lineno})")
            start_line = lineno
            visual = _parse_visual(line[len(VISUAL_DIRECTIVE) + 1:], lineno, d_v)
            continue
        if not tokens and visual is None:
            start_line = lineno
        parts = line.split("\t")
        if len(parts) > 2 or not parts[0]:
            raise CorpusError(f"malformed token line at line {lineno}")
        has_label = len(parts) == 2
        if labeled is None:
            labeled = has_label
        elif labeled != has_label:
            raise CorpusError(f"mixed labeled and unlabeled tokens at line {lineno}")
        if has_label and parts[1] not in LABEL_INDEX:
            raise CorpusError(f"unknown label {parts[1]} at line {lineno}")
        tokens.append(parts[0])
        if has_label:
            labels.append(parts[1])
    flush()
    if expect_visual:
        for k, s in enumerate(sentences):
            if s.visual is None:
                raise CorpusError(f"sentence {k} has no visual directive")
    return sentences


def parse_corpus(path, expect_visual: bool = False, d_v: int | None = None) -> list:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus_text(fh.read(), expect_visual, d_v)


def format_corpus(sentences) -> str:
    out = []
    for k, s in enumerate(sentences):
        block = []
        if s.visual is not None:
            # repr is the shortest string that round-trips a float64 exactly
            block.append(VISUAL_DIRECTIVE + "\t" + " ".join(repr(float(v)) for v in s.visual))
        for j, tok in enumerate(s.tokens):
            if not tok.strip() or any(ch in tok for ch in "\t\n\r"):
                raise CorpusError(f"sentence {k}: token {tok!r} contains a tab or newline")
            if tok == VISUAL_DIRECTIVE:
                raise CorpusError(f"sentence {k}: token collides with the visual directive")
            block.append(tok if s.labels is None else f"{tok}\t{s.labels[j]}")
        out.append("\n".join(block) + "\n")
    return "\n".join(out)


def write_corpus(sentences, path) -> None:
    text = format_corpus(sentences)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write corpus to {path}: {exc}") from exc
