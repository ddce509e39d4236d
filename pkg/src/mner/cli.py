"""Command-line entry point: ``mner <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 when input data
fails validation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .corpus import CorpusError, Sentence, parse_corpus, write_corpus
from .encoders import EmbeddingFormatError, load_word_vectors, write_word_vectors
from .fusion import emit_attention_report
from .model import TrainConfig
from .serialize import ModelFormatError, load_model, save_model

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _add_train_flags(p, with_fusion=True):
    p.add_argument("--modalities", default="wcv", choices=["w", "c", "wc", "wcv"])
    if with_fusion:
        p.add_argument("--fusion", default="attention", choices=["attention", "concat"])
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--lstm-gate", default="literal", choices=["literal", "standard"])
    p.add_argument("--bio-constrain", action="store_true")
    p.add_argument("--unk-policy", default="zero", choices=["zero", "uniform"])
    p.add_argument("--p", type=int, default=150, help="shared modality width")
    p.add_argument("--hidden", type=int, default=100)
    p.add_argument("--char-embed", type=int, default=25)
    p.add_argument("--char-hidden", type=int, default=75)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mner", description="Multimodal named-entity tagger")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic corpus and word vectors")
    p.add_argument("--out", required=True)
    p.add_argument("--sentences", type=int, default=10000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--dv", type=int, default=1024)
    p.add_argument("--topics", type=int, default=8)
    p.add_argument("--polysemy", type=float, default=0.3)
    p.add_argument("--oov-noise", type=float, default=0.15)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="write the per-epoch log TSV here")
    _add_train_flags(p)

    p = sub.add_parser("tag", help="label a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-attention")

    p = sub.add_parser("eval", help="score a model on a labeled corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("ablate-vocab", help="vocabulary-size ablation table")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--fractions", type=_csv(float), default=[1.0, 0.75, 0.5, 0.25])
    p.add_argument("--fusions", type=_csv(str), default=["attention", "concat"])
    p.add_argument("--seeds", type=_csv(int), default=[1, 2, 3])
    p.add_argument("--out", required=True)
    _add_train_flags(p, with_fusion=False)
    p.set_defaults(modalities="wc")

    p = sub.add_parser("matrix", help="train and score a grid of configurations")
    p.add_argument("--config-grid", required=True, help="JSON grid file")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--tol", type=float, default=1e-4)
    return ap


def _config(args, d_v) -> TrainConfig:
    return TrainConfig(
        p=args.p, hidden=args.hidden, char_embed=args.char_embed, char_hidden=args.char_hidden,
        batch_size=args.batch, lr=args.lr, max_epochs=args.epochs, patience=args.patience,
        clip=args.clip, seed=args.seed, modalities=args.modalities,
        fusion=getattr(args, "fusion", "attention"), lstm_gate=args.lstm_gate,
        unk_policy=args.unk_policy, bio_constrain=args.bio_constrain, d_v=d_v or 1024,
    ).validate()


def _visual_width(sentences) -> int | None:
    for s in sentences:
        if s.visual is not None:
            return s.visual.shape[0]
    return None


def _load_triple(paths, needs_visual):
    out = []
    d_v = None
    for path in paths:
        sents = parse_corpus(path, expect_visual=needs_visual, d_v=d_v)
        if not sents:
            raise CorpusError(f"{path}: no sentences")
        d_v = d_v or _visual_width(sents)
        out.append(sents)
    return out, d_v


def cmd_synth(args):
    from .synth import SyntheticConfig, generate_synthetic_corpus

    cfg = SyntheticConfig(n_sentences=args.sentences, seed=args.seed, d_v=args.dv,
                          n_visual_topics=args.topics, polysemy=args.polysemy,
                          oov_noise=args.oov_noise)
    corpus = generate_synthetic_corpus(cfg)
    os.makedirs(args.out, exist_ok=True)
    for name in ("train", "dev", "test"):
        write_corpus(getattr(corpus, name), os.path.join(args.out, f"{name}.txt"))
    write_word_vectors(corpus.embeddings, os.path.join(args.out, "embeddings.txt"))
    print(f"wrote {len(corpus.train)}/{len(corpus.dev)}/{len(corpus.test)} sentences to {args.out}")


def cmd_train(args):
    from .train import train_model

    needs_v = "v" in args.modalities
    if "w" in args.modalities and not args.embeddings:
        raise UsageError("--embeddings is required when the word modality is used")
    (train, dev), d_v = _load_triple([args.train, args.dev], needs_v)
    cfg = _config(args, d_v)
    table = load_word_vectors(args.embeddings, cfg.unk_policy) if "w" in cfg.modalities else None
    model, history = train_model(train, dev, cfg, table)
    save_model(model, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write(history.to_tsv())
    sys.stdout.write(history.to_tsv())


def cmd_tag(args):
    model = load_model(args.model)
    d_v = model.config.d_v if "v" in model.config.modalities else None
    sents = parse_corpus(args.input, expect_visual=d_v is not None, d_v=d_v)
    out, blocks = [], []
    for s in sents:
        pred, alpha = model.predict(s)
        out.append(Sentence(s.tokens, pred, s.visual))
        if args.emit_attention:
            if alpha is None:
                raise UsageError("--emit-attention needs a model trained with attention fusion")
            blocks.append(emit_attention_report(s.tokens, list(alpha), pred, s.labels,
                                                model.config.modalities))
    write_corpus(out, args.out)
    if args.emit_attention:
        with open(args.emit_attention, "w", encoding="utf-8") as fh:
            fh.write("\n".join(blocks))


def cmd_eval(args):
    from .train import evaluate

    model = load_model(args.model)
    d_v = model.config.d_v if "v" in model.config.modalities else None
    sents = parse_corpus(args.corpus, expect_visual=d_v is not None, d_v=d_v)
    if any(s.labels is None for s in sents):
        raise CorpusError(f"{args.corpus}: evaluation needs labeled sentences")
    sys.stdout.write(evaluate(model, sents).to_tsv())


def cmd_ablate(args):
    from .train import Cell, run_experiment_matrix

    (train, dev, test), d_v = _load_triple([args.train, args.dev, args.test], "v" in args.modalities)
    base = _config(args, d_v)
    table = load_word_vectors(args.embeddings, base.unk_policy)
    cells = [Cell(f"vocab={f:g}/{fu}", base.modalities, fu, f) for f in args.fractions for fu in args.fusions]
    result = run_experiment_matrix((train, dev, test), cells, args.seeds, table, base)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(result.to_tsv())
    sys.stdout.write(result.to_tsv())


def cmd_matrix(args):
    """Grid file: {"train", "dev", "test", "embeddings", "seeds", "base": {...},
    "cells": [{"name", "modalities", "fusion", "vocab_fraction"}, ...]}."""
    from .train import Cell, run_experiment_matrix

    try:
        with open(args.config_grid, encoding="utf-8") as fh:
            grid = json.load(fh)
        cells = [Cell(**c) for c in grid["cells"]]
        base = TrainConfig().replace(**grid.get("base", {}))
        paths = [grid["train"], grid["dev"], grid["test"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CorpusError(f"{args.config_grid}: malformed grid ({exc})") from None
    needs_v = any("v" in c.modalities for c in cells)
    (train, dev, test), d_v = _load_triple(paths, needs_v)
    if d_v is not None:
        base = base.replace(d_v=d_v)
    table = load_word_vectors(grid["embeddings"], base.unk_policy) if grid.get("embeddings") else None
    result = run_experiment_matrix((train, dev, test), cells, grid.get("seeds", [1, 2, 3]), table, base)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(result.to_tsv())
    sys.stdout.write(result.to_tsv())


def cmd_gradcheck(args):
    from .gradcheck import check_sentence_loss

    report = check_sentence_loss(seed=args.seed, tol=args.tol)
    print(report)
    return EXIT_OK if report.passed else EXIT_DATA


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "tag": cmd_tag, "eval": cmd_eval,
    "ablate-vocab": cmd_ablate, "matrix": cmd_matrix, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        code = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mner {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, EmbeddingFormatError, ModelFormatError, ValueError, KeyError, OSError) as exc:
        print(f"mner {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
