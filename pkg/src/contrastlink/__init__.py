"""Entity linkage by contrasting the shared and unique tokens of record pairs."""

__version__ = "0.1.0"

from .data_model import Dataset, LabeledPair, RecordPair, Schema, load_benchmark_dataset, load_pairs_csv
from .embeddings import EmbeddingStore, load_word_embeddings
from .lim import contrast_pair, tokenize
from .models import Model, ModelConfig, load_checkpoint, save_checkpoint
from .train_eval import TrainConfig, evaluate_scores, explain_pair, predict_scores, train

__all__ = [
    "Dataset", "LabeledPair", "RecordPair", "Schema", "load_benchmark_dataset", "load_pairs_csv",
    "EmbeddingStore", "load_word_embeddings", "contrast_pair", "tokenize",
    "Model", "ModelConfig", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "evaluate_scores", "explain_pair", "predict_scores", "train",
]
