"""Adagrad training, early stopping, vocabulary ablation and experiment grids."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .encoders import EmbeddingTable
from .metrics import Metrics, score_predictions
from .model import MnerModel, TrainConfig

log = logging.getLogger(__name__)


@dataclass
class AdagradState:
    accum: dict = field(default_factory=dict)
    steps: int = 0


def clip_gradients(grads: dict, max_norm: float) -> tuple[dict, float]:
    """Scale the whole map so its global L2 norm is at most ``max_norm`` (0 disables)."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


def adagrad_step(store, grads: dict, state: AdagradState, config: TrainConfig):
    for name, g in grads.items():
        if name not in store:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {store[name].shape}")
    grads, _ = clip_gradients(grads, config.clip)
    lr = config.lr / (1.0 + config.decay * state.steps)
    for name, g in grads.items():
        acc = state.accum.get(name)
        if acc is None:
            acc = state.accum[name] = np.zeros_like(g)
        acc += g * g
        param = store[name]
        param -= lr * g / (np.sqrt(acc) + config.epsilon)
    state.steps += 1
    return store, state


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (epoch, train_nll, dev_typed_f1)
    best_epoch: int = 0
    best_f1: float = -1.0

    def to_tsv(self) -> str:
        lines = ["epoch\ttrain_nll\tdev_typed_f1"]
        lines += [f"{e}\t{nll:.6f}\t{f1:.2f}" for e, nll, f1 in self.rows]
        return "\n".join(lines) + "\n"


def evaluate(model: MnerModel, sentences) -> Metrics:
    gold = [s.labels for s in sentences]
    return score_predictions(gold, model.tag(sentences))


def batch_gradients(model: MnerModel, feats_batch) -> tuple[float, dict]:
    """Mean loss and mean gradient over a batch, summed in a fixed order."""
    total = 0.0
    acc = {}
    for feats in feats_batch:
        loss, grads = model.loss_and_grad(feats)
        total += loss
        for k, g in grads.items():
            if k in acc:
                acc[k] += g
            else:
                acc[k] = g.copy()
    n = len(feats_batch)
    return total / n, {k: acc[k] / n for k in model.store.names() if k in acc}


def train_model(train, dev, config: TrainConfig, table: EmbeddingTable | None,
                char_vocab: dict | None = None, on_epoch=None):
    """Returns (best-dev model, TrainLog)."""
    if not train:
        raise ValueError("training corpus is empty")
    if not dev:
        raise ValueError("dev corpus is empty")
    model = MnerModel.initialize(config, table, train, char_vocab)
    feats = [model.featurize(s) for s in train]
    if any(f.y is None for f in feats):
        raise ValueError("training sentences must be labeled")
    dev_feats = [model.featurize(s) for s in dev]
    dev_gold = [s.labels for s in dev]
    state = AdagradState()
    history = TrainLog()
    best = model.store.copy()
    bad = 0
    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(feats))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [feats[k] for k in order[start:start + config.batch_size]]
            loss, grads = batch_gradients(model, batch)
            total += loss * len(batch)
            adagrad_step(model.store, grads, state, config)
        pred = [model.decode(f)[0] for f in dev_feats]
        f1 = score_predictions(dev_gold, pred).typed.f1
        history.rows.append((epoch, total / len(feats), f1))
        log.info("epoch %d nll %.4f dev f1 %.2f", epoch, total / len(feats), f1)
        if on_epoch is not None:
            on_epoch(epoch, total / len(feats), f1)
        if f1 > history.best_f1:
            history.best_f1, history.best_epoch = f1, epoch
            best = model.store.copy()
            bad = 0
        else:
            bad += 1
            if bad > config.patience:
                break
    model.store = best
    return model, history


def ablate_vocabulary(table: EmbeddingTable, fraction: float, seed: int) -> EmbeddingTable:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"keep fraction must lie in (0, 1], got {fraction}")
    n = len(table.tokens)
    if fraction == 1.0:
        return table
    keep = int(math.ceil(fraction * n))
    rows = np.sort(np.random.default_rng(seed).choice(n, size=keep, replace=False))
    return table.subset(rows)


# --------------------------------------------------------------------------
# experiment grids
# --------------------------------------------------------------------------

RESULT_HEADER = "cell\tseed\ttyped_p\ttyped_r\ttyped_f1\tseg_p\tseg_r\tseg_f1"


@dataclass
class Cell:
    name: str
    modalities: str = "wcv"
    fusion: str = "attention"
    vocab_fraction: float = 1.0


@dataclass
class ResultRow:
    cell: str
    seed: str
    metrics: tuple  # typed p, r, f1, seg p, r, f1

    def line(self) -> str:
        return "\t".join([self.cell, self.seed] + [f"{v:.2f}" for v in self.metrics])


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def mean(self, cell: str, column: int = 2) -> float:
        vals = [r.metrics[column] for r in self.rows if r.cell == cell and r.seed != "mean"]
        return float(np.mean(vals))

    def to_tsv(self) -> str:
        return "\n".join([RESULT_HEADER] + [r.line() for r in self.rows]) + "\n"


def run_experiment_matrix(corpus, cells, seeds, table: EmbeddingTable | None,
                          base: TrainConfig, models: dict | None = None) -> ResultTable:
    """Train one model per (cell, seed); test-set metrics per seed plus a mean row.

    ``corpus`` is (train, dev, test).  When ``models`` is a dict, trained
    models are stored into it keyed by (cell name, seed).
    """
    train, dev, test = corpus
    configs = []
    for cell in cells:
        if not 0.0 < cell.vocab_fraction <= 1.0:
            raise ValueError(f"cell {cell.name}: vocab fraction {cell.vocab_fraction} outside (0, 1]")
        for seed in seeds:
            cfg = base.replace(modalities=cell.modalities, fusion=cell.fusion, seed=seed)
            try:
                cfg.validate()
            except ValueError as exc:
                raise ValueError(f"cell {cell.name}: {exc}") from None
            if "w" in cfg.modalities and table is None:
                raise ValueError(f"cell {cell.name}: word modality needs an embedding table")
            configs.append((cell, seed, cfg))
    out = ResultTable()
    per_cell = {}
    for cell, seed, cfg in configs:
        tab = table
        if table is not None and cell.vocab_fraction < 1.0:
            tab = ablate_vocabulary(table, cell.vocab_fraction, seed)
        model, _ = train_model(train, dev, cfg, tab)
        m = evaluate(model, test)
        vals = (m.typed.precision, m.typed.recall, m.typed.f1,
                m.segmentation.precision, m.segmentation.recall, m.segmentation.f1)
        out.rows.append(ResultRow(cell.name, str(seed), vals))
        per_cell.setdefault(cell.name, []).append(vals)
        if models is not None:
            models[(cell.name, seed)] = model
        log.info("cell %s seed %d typed f1 %.2f", cell.name, seed, m.typed.f1)
    for cell in cells:
        vals = np.mean(np.array(per_cell[cell.name]), axis=0)
        out.rows.append(ResultRow(cell.name, "mean", tuple(float(v) for v in vals)))
    return out
