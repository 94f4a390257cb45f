"""Tokenization and token-set contrast of attribute values.

Each attribute pair is regrouped into the tokens both sides share and the
tokens unique to either side. Comparison is exact and uses set semantics,
so repeated tokens collapse to one occurrence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .data_model import RecordPair, Schema

# an alphanumeric run, optionally joined to further runs by inner punctuation
_TOKEN = re.compile(r"[^\W_]+(?:(?:[^\w\s]|_)+[^\W_]+)*")


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it into word tokens.

    Punctuation is dropped unless it sits between alphanumerics:

    >>> tokenize("Ink tank [black]")
    ['ink', 'tank', 'black']
    >>> tokenize("Coca-Cola 12 fl oz")
    ['coca-cola', '12', 'fl', 'oz']
    """
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class TokenGroupTriple:
    shared: tuple[str, ...]
    unique_left: tuple[str, ...]
    unique_right: tuple[str, ...]

    def swapped(self) -> "TokenGroupTriple":
        return TokenGroupTriple(self.shared, self.unique_right, self.unique_left)


@dataclass(frozen=True)
class ContrastedPair:
    per_attribute: tuple[TokenGroupTriple, ...]

    def __len__(self) -> int:
        return len(self.per_attribute)


def _dedup(tokens: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(tokens))


def contrast_attribute(tokens_left: Sequence[str], tokens_right: Sequence[str]) -> TokenGroupTriple:
    left = _dedup(tokens_left)
    right = _dedup(tokens_right)
    right_set = set(right)
    shared = [t for t in left if t in right_set]
    shared_set = set(shared)
    return TokenGroupTriple(
        tuple(shared),
        tuple(t for t in left if t not in shared_set),
        tuple(t for t in right if t not in shared_set),
    )


def contrast_pair(pair: RecordPair, schema: Schema | None = None) -> ContrastedPair:
    if schema is not None:
        schema.check_record(pair.left)
        schema.check_record(pair.right)
    return ContrastedPair(tuple(
        contrast_attribute(tokenize(a), tokenize(b)) for a, b in zip(pair.left, pair.right)
    ))
