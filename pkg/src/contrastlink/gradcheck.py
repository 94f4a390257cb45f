"""End-to-end finite-difference check of a model variant on a random toy pair."""

from __future__ import annotations

import numpy as np

from . import nn
from .data_model import LabeledPair
from .embeddings import EmbeddingStore
from .models import Model, ModelConfig

TOY_WORDS = ("ink", "tank", "black", "cyan", "canon", "8", "6", "pack", "oz", "ale", "amber", "red")


def toy_model(variant: str, seed: int = 0, m: int = 2, d: int = 8) -> Model:
    """Small model with every parameter, biases included, drawn at random.

    Random biases keep ReLU inputs off their kink, where finite differences
    are meaningless.
    """
    cfg = ModelConfig(variant, m=m, d=d, sim_dif_dim=5, hidden_dim=7,
                      d1_trainable_q=3, d1_context=4, d2=4, seed=seed)
    model = Model(cfg)
    rng = np.random.default_rng([seed, 1])
    for name, p in model.params.items():
        if name.endswith("bias"):
            p[...] = rng.normal(0.0, 0.5, p.shape)
    return model


def toy_pair(rng: np.random.Generator, m: int = 2) -> LabeledPair:
    def value():
        return " ".join(rng.choice(TOY_WORDS, size=rng.integers(1, 6)))
    return LabeledPair(tuple(value() for _ in range(m)), tuple(value() for _ in range(m)),
                       int(rng.integers(2)))


def toy_gradient_check(variant: str, seed: int = 0, eps: float = 3e-5, fault: float = 0.0,
                       m: int = 2, d: int = 8) -> float:
    """Max relative gradient error of the cross-entropy loss on one random pair.

    ``fault`` scales the analytic gradient by ``1 + fault`` to confirm the
    check can fail.
    """
    model = toy_model(variant, seed, m, d)
    rng = np.random.default_rng([seed, 2])
    pair = toy_pair(rng, m)
    store = EmbeddingStore(d, oov_seed=seed)
    groups = model.embed_pair(pair, store).groups()
    labels = np.array([pair.label])
    _, grads = model.loss_and_grads(groups, labels)
    if fault:
        grads = {k: g * (1.0 + fault) for k, g in grads.items()}

    def loss():
        return nn.cross_entropy(model.forward(groups)[0], labels)[0]

    return nn.grad_check(loss, model.params, grads, eps)
