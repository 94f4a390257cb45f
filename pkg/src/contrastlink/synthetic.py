"""Synthetic product-pair corpus where non-matches differ by a single number.

Every pair differs by exactly one token. A non-match swaps the pack size
("8" for "6"); a match swaps a word for a spelling variant of it. All
numbers sit close together in embedding space, and each variant pair sits
close together around its own centre, so both kinds of edit move a summed
record embedding by the same small amount in a random direction. Telling
them apart needs the identity of the differing tokens, not their meaning.
The edit pools are large enough that most test edits are unseen in
training.
"""

from __future__ import annotations

import numpy as np

from .data_model import Dataset, LabeledPair, Schema, split_pairs
from .embeddings import EmbeddingStore

_SYLLABLES = ("ka", "lo", "mi", "ra", "ten", "su", "vor", "bel", "dri", "pan", "zu", "qua", "nor", "fi",
              "gal", "te", "mo", "sh", "ux", "pi")


def _words(rng: np.random.Generator, n: int) -> list[str]:
    words: set[str] = set()
    while len(words) < n:
        words.add("".join(rng.choice(_SYLLABLES, size=rng.integers(2, 5))))
    return sorted(words)


def numeric_difference_corpus(n_pairs: int = 2000, dim: int = 64, seed: int = 0,
                              spread: float = 0.1, match_rate: float = 0.5,
                              n_numbers: int = 500, n_variants: int = 500):
    """Build the corpus and the embedding store that goes with it.

    ``spread`` is the noise scale around each cluster centre (all numbers
    share one centre; each variant pair has its own), relative to
    unit-variance word vectors. Returns ``(dataset, store)`` with a 3:1:1
    split.
    """
    rng = np.random.default_rng(seed)
    vocab = _words(rng, 300 + 2 * n_variants)
    rng.shuffle(vocab)
    brands, nouns = vocab[:40], vocab[40:300]
    variants = [(vocab[300 + 2 * i], vocab[301 + 2 * i]) for i in range(n_variants)]
    numbers = [str(n) for n in range(1, n_numbers + 1)]
    table: dict[str, np.ndarray] = {w: rng.standard_normal(dim) for w in brands + nouns + ["pack"]}
    number_centre = rng.standard_normal(dim)
    for n in numbers:
        table[n] = number_centre + spread * rng.standard_normal(dim)
    for a, b in variants:
        centre = rng.standard_normal(dim)
        table[a] = centre + spread * rng.standard_normal(dim)
        table[b] = centre + spread * rng.standard_normal(dim)
    store = EmbeddingStore(dim, table, "hashed-gaussian", seed)

    pairs = []
    for _ in range(n_pairs):
        brand = str(rng.choice(brands))
        body = [str(w) for w in rng.choice(nouns, size=rng.integers(2, 5), replace=False)]
        variant = variants[rng.integers(n_variants)]
        flip = int(rng.integers(2))
        count = numbers[rng.integers(n_numbers)]
        left = [brand, *body, variant[flip], count, "pack"]
        right = list(left)
        if rng.random() < match_rate:
            right[len(body) + 1] = variant[1 - flip]
            label = 1
        else:
            other = numbers[rng.integers(n_numbers - 1)]
            right[len(body) + 2] = other if other != count else numbers[-1]
            label = 0
        pairs.append(LabeledPair((" ".join(left), brand), (" ".join(right), brand), label))
    train, valid, test = split_pairs(pairs, (3, 1, 1), seed)
    schema = Schema(("title", "brand"))
    return Dataset(schema, train, valid, test, name="numeric-difference"), store
