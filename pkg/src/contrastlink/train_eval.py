"""Mini-batch Adam training, scoring, and evaluation metrics."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .data_model import Dataset, LabeledPair, Schema
from .embeddings import EmbeddingStore
from .lim import contrast_pair, tokenize
from .models import Model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_train: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("batch_size and epochs must be positive")


# -- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    """Confusion-matrix metrics at one threshold.

    ``precision`` and ``recall`` are fractions; ``f1`` is in percent.
    """

    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    prauc: float | None = None
    recall_at_p95: float | None = None
    runtime: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        line = f"F1={self.f1:.1f} P={100 * self.precision:.1f} R={100 * self.recall:.1f}"
        if self.prauc is not None:
            line += f" PRAUC={100 * self.prauc:.1f} R@P95={100 * self.recall_at_p95:.1f}"
        return line


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    # 2TP/(2TP+FP+FN) equals 2PR/(P+R) and rounds identically for equal ratios
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom and tp else 0.0


def _check_lengths(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    return scores, labels


def f1_at_threshold(scores, labels, threshold: float = 0.5) -> MetricsReport:
    scores, labels = _check_lengths(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return MetricsReport(threshold, tp, fp, fn, tn, precision, recall,
                         100.0 * _f1_from_counts(tp, fp, fn))


@dataclass(frozen=True)
class PRCurve:
    """Operating points at every distinct score, thresholds strictly decreasing."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def __len__(self) -> int:
        return len(self.thresholds)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("recall,precision\n")
            for r, p in zip(self.recall, self.precision):
                fh.write(f"{float(r)!r},{float(p)!r}\n")


def pr_curve(scores, labels) -> PRCurve:
    scores, labels = _check_lengths(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("precision-recall curve needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of every block of tied scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    return PRCurve(s[ends], tp / predicted, tp / n_pos)


def prauc(curve: PRCurve) -> float:
    """Average precision: recall increments weighted by precision, no interpolation."""
    recall_steps = np.diff(np.r_[0.0, curve.recall])
    return float(np.sum(recall_steps * curve.precision))


def recall_at_precision(curve: PRCurve, target: float = 0.95) -> float:
    ok = curve.precision >= target
    return float(curve.recall[ok].max()) if ok.any() else 0.0


def calibrate_threshold(scores, labels) -> tuple[float, float]:
    """Threshold among the distinct scores that maximizes F1 (percent).

    Ties go to the lower threshold.
    """
    scores, labels = _check_lengths(scores, labels)
    if scores.size == 0:
        raise ValueError("cannot calibrate on empty input")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    n_pos = int(y.sum())
    best_t, best_f1 = None, -1.0
    for end, tp in zip(ends, np.cumsum(y)[ends]):
        tp = int(tp)
        f1 = _f1_from_counts(tp, int(end + 1) - tp, n_pos - tp)
        # candidates arrive in decreasing threshold order, so >= keeps the lower one
        if f1 >= best_f1:
            best_t, best_f1 = float(s[end]), f1
    return best_t, 100.0 * best_f1


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Full report: F1 at ``threshold`` plus PRAUC and recall at 95% precision."""
    report = f1_at_threshold(scores, labels, threshold)
    if int(np.sum(labels)) == 0:
        return report
    curve = pr_curve(scores, labels)
    return MetricsReport(**{**report.as_dict(), "prauc": prauc(curve),
                            "recall_at_p95": recall_at_precision(curve, 0.95)})


# -- scoring and training ---------------------------------------------------

def predict_scores(model: Model, pairs: Sequence, store: EmbeddingStore,
                   batch_size: int = 256, schema: Schema | None = None) -> np.ndarray:
    """Matching score of every pair, in input order."""
    pairs = list(pairs)
    if schema is not None:
        for p in pairs:
            schema.check_record(p.left)
            schema.check_record(p.right)
    for p in pairs:
        if len(p.left) != model.config.m:
            raise ValueError(f"pair has {len(p.left)} attributes, model expects {model.config.m}")
    if not pairs:
        return np.zeros(0)
    enc = model.encode_pairs(pairs, store)
    out = np.empty(len(pairs))
    for start in range(0, len(pairs), batch_size):
        idx = np.arange(start, min(start + batch_size, len(pairs)))
        out[idx] = model.scores(enc.batch(idx))
    return out


def _labels(pairs) -> np.ndarray:
    return np.array([p.label for p in pairs], dtype=np.int64)


def train(model: Model, dataset: Dataset, store: EmbeddingStore, config: TrainConfig = TrainConfig()):
    """Train ``model`` in place; return a copy holding the best-validation-F1 parameters.

    History is one dict per epoch. With an empty validation split the last
    epoch is kept.
    """
    if not dataset.train:
        raise ValueError("training split is empty")
    if model.config.d != store.dim:
        raise ValueError(f"model expects {model.config.d}-d embeddings, store has {store.dim}")
    enc = model.encode_pairs(dataset.train, store)
    y = _labels(dataset.train)
    valid_enc = model.encode_pairs(dataset.valid, store) if dataset.valid else None
    y_valid = _labels(dataset.valid)
    state = nn.AdamState(config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    best, best_f1, history = None, -1.0, []

    def score_encoded(e):
        return np.concatenate([
            model.scores(e.batch(np.arange(s, min(s + 256, len(e)))))
            for s in range(0, len(e), 256)
        ])

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = model.loss_and_grads(enc.batch(idx), y[idx])
            model.apply_gradients(grads, state)
            losses.append(loss * len(idx))
        row = {"epoch": epoch, "train_loss": float(np.sum(losses) / len(y))}
        if config.eval_train:
            row["train_f1"] = f1_at_threshold(score_encoded(enc), y, config.threshold).f1
        if valid_enc is not None:
            row["valid_f1"] = f1_at_threshold(score_encoded(valid_enc), y_valid, config.threshold).f1
        row["seconds"] = time.perf_counter() - t0
        history.append(row)
        log.info("epoch %d loss %.4f valid F1 %s", epoch, row["train_loss"], row.get("valid_f1"))
        selected = row.get("valid_f1", 0.0)
        if valid_enc is None or selected > best_f1:
            best_f1 = selected
            best = model.copy()
            best.metadata.update({"epoch": epoch, "valid_f1": row.get("valid_f1"), "seed": config.seed})
    best.metadata["threshold"] = config.threshold
    return best, history


# -- explanation ------------------------------------------------------------

def explain_pair(model: Model, pair, store: EmbeddingStore, schema: Schema | None = None) -> dict:
    """Per-attribute token groups with per-token weights, sim/dif norms and the score.

    Attention variants report the attention weight of every token (each
    non-empty side sums to one). The sum and twin variants report the norm
    of every token's embedding, which is its share of the summed input.
    """
    if len(pair.left) != model.config.m:
        raise ValueError(f"pair has {len(pair.left)} attributes, model expects {model.config.m}")
    names = schema.attributes if schema is not None else tuple(f"attr{j}" for j in range(model.config.m))
    cp = contrast_pair(pair, schema)
    ep = model.embed_pair(pair, store)
    groups = ep.groups()
    inner = model.inspect(groups)
    score = float(model.scores(groups)[0])
    attrs = []
    for j, (triple, info) in enumerate(zip(cp.per_attribute, inner)):
        toks = (triple.shared, triple.unique_left, triple.unique_right)
        if "weights" in info:
            weights = [w[:len(t)].tolist() for w, t in zip(info["weights"], toks)]
        else:
            weights = [[float(np.linalg.norm(store.embed_token(x))) for x in t] for t in toks]
        attrs.append({
            "attribute": names[j],
            "shared": list(triple.shared),
            "unique_left": list(triple.unique_left),
            "unique_right": list(triple.unique_right),
            "weights": {"shared": weights[0], "unique_left": weights[1], "unique_right": weights[2]},
            "sim_norm": None if info["sim"] is None else float(np.linalg.norm(info["sim"])),
            "dif_norm": float(np.linalg.norm(info["dif"])),
        })
    return {"variant": model.variant, "score": score, "attributes": attrs}


def format_explanation(expl: dict) -> str:
    """Aligned text rendering of :func:`explain_pair` output."""
    lines = [f"variant: {expl['variant']}  score: {expl['score']:.4f}"]
    width = max((len(a["attribute"]) for a in expl["attributes"]), default=0)
    for a in expl["attributes"]:
        sim = "-" if a["sim_norm"] is None else f"{a['sim_norm']:.3f}"
        lines.append(f"{a['attribute']:<{width}}  |sim|={sim} |dif|={a['dif_norm']:.3f}")
        for group in ("shared", "unique_left", "unique_right"):
            cells = " ".join(f"{t}({w:.2f})" for t, w in zip(a[group], a["weights"][group]))
            lines.append(f"{'':<{width}}  {group:<12} | {cells}")
    return "\n".join(lines)


def vocabulary(pairs) -> list[str]:
    """Sorted set of all tokens appearing in ``pairs``."""
    vocab = set()
    for p in pairs:
        for value in (*p.left, *p.right):
            vocab.update(tokenize(value))
    return sorted(vocab)
