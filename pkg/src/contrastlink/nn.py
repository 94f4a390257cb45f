"""Small differentiable toolkit with hand-written backward passes.

Every forward function returns ``(output, cache)`` and has a matching
``*_backward(cache, grad_output)``. Arrays are float64. Leading batch
dimensions are allowed; nothing else broadcasts except bias addition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class ShapeError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# -- affine -----------------------------------------------------------------

@dataclass
class AffineLayer:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @classmethod
    def init(cls, rng, n_in: int, n_out: int) -> "AffineLayer":
        return cls(glorot_uniform(rng, n_out, n_in), np.zeros(n_out))


def affine_forward(weight: np.ndarray, bias: np.ndarray, x: np.ndarray):
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} != weight columns {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias {bias.shape} does not match weight {weight.shape}")
    return x @ weight.T + bias, (x, weight)


def affine_backward(cache, grad_out: np.ndarray):
    x, weight = cache
    grad_x = grad_out @ weight
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    return grad_x, g2.T @ x2, g2.sum(axis=0)


# -- activations ------------------------------------------------------------

def relu(x: np.ndarray):
    return np.maximum(x, 0.0), x


def relu_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (cache > 0)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``mask``; all-masked rows give zeros."""
    z = np.where(mask, scores, -np.inf)
    top = np.max(z, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(z - top), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    return e / np.where(total > 0, total, 1.0)


def softmax_backward(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return probs * (grad_out - np.sum(probs * grad_out, axis=-1, keepdims=True))


# -- attention ----------------------------------------------------------------

def attend_forward(x, mask, w_key, w_value, query):
    """Single-query scaled dot-product attention over a padded batch.

    ``x`` is ``(B, L, d)``, ``mask`` ``(B, L)``, ``query`` either ``(d1,)``
    shared by the batch or ``(B, d1)``. Returns ``(B, d2)``; a row with no
    unmasked keys yields the zero vector.
    """
    B, L, d = x.shape
    d1 = w_key.shape[0]
    if w_key.shape[1] != d or w_value.shape[1] != d:
        raise ShapeError(f"projection widths {w_key.shape}, {w_value.shape} do not match d={d}")
    if query.shape[-1] != d1 or query.ndim not in (1, 2):
        raise ShapeError(f"query shape {query.shape} does not match d1={d1}")
    scale = 1.0 / math.sqrt(d1)
    q = np.broadcast_to(query, (B, d1))
    keys = x @ w_key.T
    values = x @ w_value.T
    scores = np.einsum("blk,bk->bl", keys, q) * scale
    alpha = masked_softmax(scores, mask)
    out = np.einsum("bl,blv->bv", alpha, values)
    return out, (x, w_key, w_value, query, q, keys, values, alpha, scale)


def attend_backward(cache, grad_out, need_x: bool = True):
    x, w_key, w_value, query, q, keys, values, alpha, scale = cache
    grad_values = alpha[..., None] * grad_out[:, None, :]
    grad_alpha = np.einsum("blv,bv->bl", values, grad_out)
    grad_scores = softmax_backward(alpha, grad_alpha) * scale
    grad_keys = grad_scores[..., None] * q[:, None, :]
    grad_q = np.einsum("bl,blk->bk", grad_scores, keys)
    if query.ndim == 1:
        grad_q = grad_q.sum(axis=0)
    grads = {
        "w_key": np.einsum("blk,bld->kd", grad_keys, x),
        "w_value": np.einsum("blv,bld->vd", grad_values, x),
        "query": grad_q,
    }
    if need_x:
        grads["x"] = grad_keys @ w_key + grad_values @ w_value
    return grads


@dataclass
class AttentionUnit:
    """Keys/values projected from the inputs; the query is either a trained
    vector or supplied per call (contextual mode)."""

    w_key: np.ndarray
    w_value: np.ndarray
    query: np.ndarray | None = None

    @property
    def contextual(self) -> bool:
        return self.query is None

    def forward(self, X: np.ndarray, q_external: np.ndarray | None = None):
        """``X`` holds one token per column, shape ``(d, n)``. Returns ``(o, cache)``."""
        if self.contextual != (q_external is not None):
            raise ValueError("query must be passed iff the unit is contextual")
        q = self.query if q_external is None else q_external
        if X.ndim != 2 or X.shape[0] != self.w_key.shape[1]:
            raise ShapeError(f"X must be (d, n) with d={self.w_key.shape[1]}, got {X.shape}")
        n = X.shape[1]
        x = X.T[None] if n else np.zeros((1, 1, X.shape[0]))
        mask = np.ones((1, max(n, 1)), dtype=bool) if n else np.zeros((1, 1), dtype=bool)
        out, cache = attend_forward(x, mask, self.w_key, self.w_value, q)
        return out[0], (cache, n)

    def backward(self, cache, grad_out):
        inner, n = cache
        g = attend_backward(inner, grad_out[None])
        g["X"] = g.pop("x")[0].T[:, :n]
        return g


def self_attention_forward(R, w_query, w_key, w_value):
    """Self-attention across the middle axis of ``R`` ``(B, m, din)``.

    Returns ``(B, m, d2)``; row ``j`` is the attention output for query ``j``.
    """
    d1 = w_query.shape[0]
    if w_key.shape[0] != d1:
        raise ShapeError("query and key projections must share d1")
    scale = 1.0 / math.sqrt(d1)
    Q = R @ w_query.T
    K = R @ w_key.T
    V = R @ w_value.T
    A = softmax(np.einsum("bik,bjk->bij", Q, K) * scale)
    out = np.einsum("bij,bjv->biv", A, V)
    return out, (R, w_query, w_key, w_value, Q, K, V, A, scale)


def self_attention_backward(cache, grad_out):
    R, w_query, w_key, w_value, Q, K, V, A, scale = cache
    grad_A = np.einsum("biv,bjv->bij", grad_out, V)
    grad_V = np.einsum("bij,biv->bjv", A, grad_out)
    grad_S = softmax_backward(A, grad_A) * scale
    grad_Q = np.einsum("bij,bjk->bik", grad_S, K)
    grad_K = np.einsum("bij,bik->bjk", grad_S, Q)
    flat = R.reshape(-1, R.shape[-1])
    return {
        "R": grad_Q @ w_query + grad_K @ w_key + grad_V @ w_value,
        "w_query": grad_Q.reshape(-1, Q.shape[-1]).T @ flat,
        "w_key": grad_K.reshape(-1, K.shape[-1]).T @ flat,
        "w_value": grad_V.reshape(-1, V.shape[-1]).T @ flat,
    }


# -- loss -------------------------------------------------------------------

def cross_entropy(logits: np.ndarray, label):
    """Softmax cross-entropy.

    For ``logits`` of shape ``(2,)`` returns the loss and its gradient. For
    a batch ``(B, 2)`` the loss is the batch mean and the gradient is
    scaled accordingly.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if y.shape[0] != z.shape[0]:
        raise ShapeError("one label per row of logits")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    losses = log_norm - shifted[rows, y]
    grad = softmax(z)
    grad[rows, y] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / z.shape[0]


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """Update ``params`` in place with bias-corrected Adam."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# -- verification -----------------------------------------------------------

def grad_check(f: Callable[[], float], params: Mapping[str, np.ndarray],
               analytic: Mapping[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    ``f`` is re-evaluated after each in-place perturbation of ``params``;
    every parameter is restored afterwards.
    """
    worst = 0.0
    for name, p in params.items():
        a = analytic[name]
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = f()
            flat[i] = old - eps
            down = f()
            flat[i] = old
            num = (up - down) / (2 * eps)
            ana = float(a.reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
