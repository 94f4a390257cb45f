"""Where attention goes inside the unique-token groups.

Train the attention variants on the synthetic corpus and print the token
weights for a few test pairs. Each non-empty group's weights sum to one.
"""

import numpy as np

from contrastlink.models import Model, ModelConfig
from contrastlink.synthetic import numeric_difference_corpus
from contrastlink.train_eval import TrainConfig, evaluate_scores, explain_pair, format_explanation, predict_scores, train

dataset, store = numeric_difference_corpus(n_pairs=2000, dim=64, seed=1)
labels = np.array([p.label for p in dataset.test])

for variant in ("attention", "context-attention"):
    model = Model(ModelConfig(variant, m=len(dataset.schema), d=store.dim, seed=1))
    best, _ = train(model, dataset, store, TrainConfig(seed=1))
    print(f"== {variant}: {evaluate_scores(predict_scores(best, dataset.test, store), labels).summary()}")
    for pair in dataset.test[:2]:
        print(f"label {pair.label}")
        print(format_explanation(explain_pair(best, pair, store, dataset.schema)))
    print()
