"""Train and evaluate the sum model on a benchmark directory.

    python3 demos/04_benchmark.py DATA_DIR VECTORS.vec [--variant attention]

DATA_DIR holds tableA.csv, tableB.csv and train/valid/test.csv. VECTORS is
a 300-d text-format word-vector file; shrink it first with

    contrastlink vocab-extract --data DATA_DIR --out vocab.txt
    grep -wFf vocab.txt full.vec > reduced.vec
"""

import argparse
import time

import numpy as np

from contrastlink.data_model import load_benchmark_dataset
from contrastlink.embeddings import load_word_embeddings
from contrastlink.models import VARIANTS, Model, ModelConfig
from contrastlink.train_eval import TrainConfig, calibrate_threshold, evaluate_scores, predict_scores, train

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("data")
parser.add_argument("vectors")
parser.add_argument("--variant", choices=VARIANTS, default="sum")
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

dataset = load_benchmark_dataset(args.data)
store = load_word_embeddings(args.vectors, 300)
print(f"{dataset.name}: attributes {dataset.schema.attributes}, "
      f"{len(dataset.train)}/{len(dataset.valid)}/{len(dataset.test)} pairs, {len(store)} vectors")

t0 = time.perf_counter()
model = Model(ModelConfig(args.variant, m=len(dataset.schema), d=300, seed=args.seed))
best, history = train(model, dataset, store, TrainConfig(seed=args.seed))
for row in history:
    print(f"epoch {row['epoch']:>2}  loss {row['train_loss']:.4f}  valid F1 {row.get('valid_f1', float('nan')):.1f}")

labels = np.array([p.label for p in dataset.test])
scores = predict_scores(best, dataset.test, store)
print("test at 0.5:", evaluate_scores(scores, labels).summary())

# a threshold tuned on validation, for comparison with the fixed 0.5
valid_scores = predict_scores(best, dataset.valid, store)
t, _ = calibrate_threshold(valid_scores, np.array([p.label for p in dataset.valid]))
print(f"test at {t:.3f}:", evaluate_scores(scores, labels, t).summary())
print(f"{time.perf_counter() - t0:.0f}s")
