"""Why contrast tokens before embedding them.

Two product titles that differ only in pack size. A model that sums each
record's word vectors sees two nearly identical points; splitting tokens
into shared and unique groups hands the model the one thing that differs.
"""

import numpy as np

from contrastlink.data_model import RecordPair
from contrastlink.embeddings import EmbeddingStore, embed_records
from contrastlink.lim import contrast_pair, tokenize

pair = RecordPair(("Coca-Cola 12 fl oz 8 pack", "Coca-Cola"),
                  ("Coca-Cola 12 fl oz 6 pack", "Coca-Cola"))

print("tokens:", tokenize(pair.left[0]))

for name, triple in zip(("title", "brand"), contrast_pair(pair).per_attribute):
    print(f"{name:>6}: shared={list(triple.shared)} "
          f"left-only={list(triple.unique_left)} right-only={list(triple.unique_right)}")

# How far apart are the two titles as summed word vectors?
store = EmbeddingStore(dim=64)
left, right = embed_records(store, pair).per_attribute[0]
a, b = left.sum(axis=0), right.sum(axis=0)
cosine = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
print(f"\ncosine of summed title vectors: {cosine:.3f}")
print("one token in six changed, so the sums still point the same way;")
print("the contrast above isolates exactly that token.")
