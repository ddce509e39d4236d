"""Multimodal named-entity recognition: Bi-LSTM-CRF with modality attention."""

from .corpus import Sentence, parse_corpus, write_corpus
from .metrics import Metrics, Span, extract_spans, score_predictions
from .model import MnerModel, TrainConfig
from .serialize import load_model, save_model
from .train import ablate_vocabulary, adagrad_step, run_experiment_matrix, train_model

__all__ = [
    "Sentence", "parse_corpus", "write_corpus", "Metrics", "Span", "extract_spans",
    "score_predictions", "MnerModel", "TrainConfig", "load_model", "save_model",
    "ablate_vocabulary", "adagrad_step", "run_experiment_matrix", "train_model",
]
__version__ = "0.1.0"
