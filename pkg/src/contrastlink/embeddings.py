"""Frozen token embeddings: text-format loader, OOV fallback, batch encoding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .lim import ContrastedPair, tokenize

OOV_POLICIES = ("hashed-gaussian", "zero")


class EmbeddingFileError(ValueError):
    pass


def _token_key(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def hashed_gaussian(token: str, dim: int, seed: int = 0) -> np.ndarray:
    """Unit-variance vector drawn from a generator keyed by ``(seed, token)``."""
    return np.random.default_rng([seed, _token_key(token)]).standard_normal(dim)


@dataclass
class EmbeddingStore:
    """Token to vector lookup. Never trained.

    Tokens missing from ``table`` fall back to ``oov_policy``: a hashed
    Gaussian vector (stable across processes) or the zero vector.
    """

    dim: int = 300
    table: Mapping[str, np.ndarray] = field(default_factory=dict)
    oov_policy: str = "hashed-gaussian"
    oov_seed: int = 0

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.oov_policy not in OOV_POLICIES:
            raise ValueError(f"oov_policy must be one of {OOV_POLICIES}")
        frozen = {}
        for tok, vec in self.table.items():
            vec = np.array(vec, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise ValueError(f"vector for {tok!r} has shape {vec.shape}, expected ({self.dim},)")
            vec.setflags(write=False)
            frozen[tok] = vec
        self.table = frozen
        self._oov_cache: dict[str, np.ndarray] = {}

    def __contains__(self, token: str) -> bool:
        return token in self.table

    def __len__(self) -> int:
        return len(self.table)

    def embed_token(self, token: str) -> np.ndarray:
        vec = self.table.get(token)
        if vec is not None:
            return vec
        vec = self._oov_cache.get(token)
        if vec is None:
            if self.oov_policy == "zero":
                vec = np.zeros(self.dim)
            else:
                vec = hashed_gaussian(token, self.dim, self.oov_seed)
            vec.setflags(write=False)
            self._oov_cache[token] = vec
        return vec

    def embed_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.embed_token(t) for t in tokens])

    def describe(self) -> dict:
        """JSON-friendly description used in checkpoints and manifests."""
        return {"dim": self.dim, "vocab_size": len(self.table),
                "oov_policy": self.oov_policy, "oov_seed": self.oov_seed}


def embed_token(store: EmbeddingStore, token: str) -> np.ndarray:
    return store.embed_token(token)


def load_word_embeddings(path, expected_dim: int = 300, oov_policy: str = "hashed-gaussian",
                         oov_seed: int = 0) -> EmbeddingStore:
    """Read whitespace-separated ``token v1 ... vd`` lines.

    An optional leading ``count dim`` header line is skipped. Later
    duplicates of a token are ignored, as fastText's ``.vec`` readers do.
    """
    path = Path(path)
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8", errors="strict") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                if int(parts[1]) != expected_dim:
                    raise EmbeddingFileError(
                        f"{path}:1: header declares dim {parts[1]}, expected {expected_dim}"
                    )
                continue
            if len(parts) != expected_dim + 1:
                raise EmbeddingFileError(
                    f"{path}:{lineno}: expected {expected_dim} values, got {len(parts) - 1}"
                )
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise EmbeddingFileError(f"{path}:{lineno}: {exc}") from None
            table.setdefault(parts[0], vec)
    if not table:
        raise EmbeddingFileError(f"{path}: no embedding vectors found")
    return EmbeddingStore(expected_dim, table, oov_policy, oov_seed)


@dataclass(frozen=True)
class EmbeddedPair:
    """Per attribute: (shared, unique_left, unique_right) arrays of shape (n, d)."""

    per_attribute: tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]

    def groups(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Padded single-example batch in the layout models consume."""
        return pad_groups([self.per_attribute])


def embed_contrasted_pair(store: EmbeddingStore, cp: ContrastedPair) -> EmbeddedPair:
    return EmbeddedPair(tuple(
        (store.embed_tokens(t.shared), store.embed_tokens(t.unique_left), store.embed_tokens(t.unique_right))
        for t in cp.per_attribute
    ))


def embed_records(store: EmbeddingStore, pair) -> EmbeddedPair:
    """Per attribute (left tokens, right tokens) without any contrast, for the twin baseline."""
    return EmbeddedPair(tuple(
        (store.embed_tokens(tokenize(a)), store.embed_tokens(tokenize(b)))
        for a, b in zip(pair.left, pair.right)
    ))


def pad_groups(examples) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stack examples of per-attribute vector groups into padded arrays.

    ``examples[b][j][g]`` is an ``(n, d)`` array. Returns, for every group
    ``g``, ``X`` of shape ``(B, m, L, d)`` and a boolean ``mask`` of shape
    ``(B, m, L)``.
    """
    n_groups = len(examples[0][0])
    d = examples[0][0][0].shape[1]
    B, m = len(examples), len(examples[0])
    out = []
    for g in range(n_groups):
        L = max(1, max(len(attr[g]) for ex in examples for attr in ex))
        X = np.zeros((B, m, L, d))
        mask = np.zeros((B, m, L), dtype=bool)
        for b, ex in enumerate(examples):
            for j, attr in enumerate(ex):
                n = len(attr[g])
                if n:
                    X[b, j, :n] = attr[g]
                    mask[b, j, :n] = True
        out.append((X, mask))
    return out


@dataclass
class EncodedPairs:
    """Token-id view of many pairs over a shared vector table.

    ``vectors[0]`` is the zero padding row. ``ids[g]`` has shape
    ``(N, m, L_g)`` with 0 marking padding.
    """

    vectors: np.ndarray
    ids: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return self.ids[0].shape[0]

    def batch(self, index=None) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for ids in self.ids:
            sub = ids if index is None else ids[index]
            mask = sub > 0
            L = max(1, int(mask.sum(axis=-1).max())) if sub.size else 1
            sub, mask = sub[..., :L], mask[..., :L]
            out.append((self.vectors[sub], mask))
        return out


def _encode(store: EmbeddingStore, examples) -> EncodedPairs:
    vocab: dict[str, int] = {}
    n_groups = len(examples[0][0]) if examples else 1
    m = len(examples[0]) if examples else 1
    lengths = [1] * n_groups
    for ex in examples:
        for attr in ex:
            for g, toks in enumerate(attr):
                lengths[g] = max(lengths[g], len(toks))
                for t in toks:
                    if t not in vocab:
                        vocab[t] = len(vocab) + 1
    ids = tuple(np.zeros((len(examples), m, L), dtype=np.int64) for L in lengths)
    for b, ex in enumerate(examples):
        for j, attr in enumerate(ex):
            for g, toks in enumerate(attr):
                ids[g][b, j, :len(toks)] = [vocab[t] for t in toks]
    vectors = np.zeros((len(vocab) + 1, store.dim))
    for t, i in vocab.items():
        vectors[i] = store.embed_token(t)
    return EncodedPairs(vectors, ids)


def encode_contrasted(store: EmbeddingStore, contrasted: Sequence[ContrastedPair]) -> EncodedPairs:
    return _encode(store, [
        [(t.shared, t.unique_left, t.unique_right) for t in cp.per_attribute] for cp in contrasted
    ])


def encode_records(store: EmbeddingStore, pairs) -> EncodedPairs:
    return _encode(store, [
        [(tokenize(a), tokenize(b)) for a, b in zip(p.left, p.right)] for p in pairs
    ])
