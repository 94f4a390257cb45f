"""Contrastive matching models and the twin-sum baseline.

Variants:

``sum``
    Per attribute, the shared group and the pooled unique groups are each
    summed and passed through their own affine + ReLU. The ``2m`` outputs
    are concatenated into a two-layer MLP.
``attention``
    Sums are replaced by single-query attention with a trained query. The
    two unique groups go through one attention unit (shared weights) and
    the results are added. Attribute vectors then pass through
    self-attention before the MLP.
``context-attention``
    As ``attention``, but the unique-group attention uses the attribute's
    similarity vector as its query.
``twin-sum``
    Ablation baseline with no contrast: each record's tokens are summed and
    projected with weights shared by both records, then compared by
    absolute difference. An affine bias would cancel in the difference, so
    the projection is linear.

All models consume padded groups ``[(X, mask), ...]`` with ``X`` of shape
``(B, m, L, d)``; see :func:`contrastlink.embeddings.pad_groups`.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .embeddings import (EmbeddedPair, EmbeddingStore, EncodedPairs, embed_contrasted_pair,
                         embed_records, encode_contrasted, encode_records)
from .lim import contrast_pair

VARIANTS = ("sum", "attention", "context-attention", "twin-sum")
ATTENTION_VARIANTS = ("attention", "context-attention")


class StaleCacheError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    m: int
    d: int = 300
    sim_dif_dim: int = 64
    hidden_dim: int = 256
    d1_trainable_q: int = 4
    d1_context: int = 64
    d2: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("m", "d", "sim_dif_dim", "hidden_dim", "d1_trainable_q", "d1_context", "d2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.variant == "context-attention" and self.d1_context != self.d2:
            raise ValueError("context-attention queries with the similarity vector, so d1_context must equal d2")


def parameter_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Registry of trainable arrays in initialization order."""
    m, d, k, h = cfg.m, cfg.d, cfg.sim_dif_dim, cfg.hidden_dim
    shapes: list[tuple[str, tuple[int, ...]]] = []
    if cfg.variant == "sum":
        for j in range(m):
            shapes += [(f"psi.{j}.weight", (k, d)), (f"psi.{j}.bias", (k,)),
                       (f"phi.{j}.weight", (k, d)), (f"phi.{j}.bias", (k,))]
        mlp_in = 2 * k * m
    elif cfg.variant == "twin-sum":
        for j in range(m):
            shapes.append((f"twin.{j}.weight", (k, d)))
        mlp_in = k * m
    else:
        dq, dc, d2 = cfg.d1_trainable_q, cfg.d1_context, cfg.d2
        for j in range(m):
            shapes += [(f"psi.{j}.w_key", (dq, d)), (f"psi.{j}.w_value", (d2, d)),
                       (f"psi.{j}.query", (dq,))]
            if cfg.variant == "attention":
                shapes += [(f"phi.{j}.w_key", (dq, d)), (f"phi.{j}.w_value", (d2, d)),
                           (f"phi.{j}.query", (dq,))]
            else:
                shapes += [(f"phi.{j}.w_key", (dc, d)), (f"phi.{j}.w_value", (d2, d))]
        shapes += [("omega.w_query", (dc, 2 * d2)), ("omega.w_key", (dc, 2 * d2)),
                   ("omega.w_value", (d2, 2 * d2))]
        mlp_in = d2 * m
    shapes += [("mlp.0.weight", (h, mlp_in)), ("mlp.0.bias", (h,)),
               ("mlp.1.weight", (2, h)), ("mlp.1.bias", (2,))]
    return shapes


def closed_form_param_count(cfg: ModelConfig) -> int:
    m, d, k, h = cfg.m, cfg.d, cfg.sim_dif_dim, cfg.hidden_dim
    head = 2 * h + 2
    if cfg.variant == "sum":
        return 2 * m * (d * k + k) + (2 * k * m * h + h) + head
    if cfg.variant == "twin-sum":
        return m * d * k + (k * m * h + h) + head
    dq, dc, d2 = cfg.d1_trainable_q, cfg.d1_context, cfg.d2
    psi = dq * d + d2 * d + dq
    phi = psi if cfg.variant == "attention" else dc * d + d2 * d
    omega = 2 * dc * 2 * d2 + d2 * 2 * d2
    return m * (psi + phi) + omega + (d2 * m * h + h) + head


class Model:
    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 metadata: dict | None = None):
        self.config = config
        shapes = parameter_shapes(config)
        if params is None:
            params = _init_params(config, shapes)
        else:
            expected = dict(shapes)
            if set(params) != set(expected):
                raise ValueError("parameter names do not match the config")
            for name, shape in expected.items():
                if params[name].shape != shape:
                    raise ValueError(f"{name} has shape {params[name].shape}, expected {shape}")
            params = {name: np.array(params[name], dtype=np.float64) for name, _ in shapes}
        self.params = params
        self.metadata = dict(metadata or {})
        self.version = 0

    @property
    def variant(self) -> str:
        return self.config.variant

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.metadata)

    def load_params(self, params) -> None:
        for name, p in self.params.items():
            p[...] = params[name]
        self.version += 1

    def apply_gradients(self, grads, state: nn.AdamState) -> None:
        nn.adam_step(self.params, grads, state)
        self.version += 1

    # -- inputs ---------------------------------------------------------

    @property
    def contrastive(self) -> bool:
        return self.variant != "twin-sum"

    def embed_pair(self, pair, store: EmbeddingStore) -> EmbeddedPair:
        if self.contrastive:
            return embed_contrasted_pair(store, contrast_pair(pair))
        return embed_records(store, pair)

    def encode_pairs(self, pairs, store: EmbeddingStore) -> EncodedPairs:
        if self.contrastive:
            return encode_contrasted(store, [contrast_pair(p) for p in pairs])
        return encode_records(store, pairs)

    def _check_groups(self, groups):
        want = 3 if self.contrastive else 2
        if len(groups) != want:
            raise ValueError(f"{self.variant} expects {want} token groups, got {len(groups)}")
        for X, mask in groups:
            if X.ndim != 4 or X.shape[1] != self.config.m or X.shape[3] != self.config.d:
                raise nn.ShapeError(
                    f"group array {X.shape} does not match m={self.config.m}, d={self.config.d}")
            if mask.shape != X.shape[:3]:
                raise nn.ShapeError("mask shape does not match group array")

    # -- forward / backward --------------------------------------------------

    def forward(self, groups):
        """Logits ``(B, 2)`` and a cache for :meth:`backward`."""
        self._check_groups(groups)
        if self.variant == "sum":
            z, inner = self._features_sum(groups)
        elif self.variant == "twin-sum":
            z, inner = self._features_twin(groups)
        else:
            z, inner = self._features_attention(groups)
        p = self.params
        hpre, c0 = nn.affine_forward(p["mlp.0.weight"], p["mlp.0.bias"], z)
        hid, r0 = nn.relu(hpre)
        logits, c1 = nn.affine_forward(p["mlp.1.weight"], p["mlp.1.bias"], hid)
        cache = {"version": self.version, "inner": inner, "mlp": (c0, r0, c1), "logits": logits}
        return logits, cache

    def backward(self, cache, grad_logits):
        """Gradients of every registered parameter given ``dLoss/dlogits``."""
        if cache["version"] != self.version:
            raise StaleCacheError("cache was produced before the parameters last changed")
        c0, r0, c1 = cache["mlp"]
        grads: dict[str, np.ndarray] = {}
        g_hid, grads["mlp.1.weight"], grads["mlp.1.bias"] = nn.affine_backward(c1, grad_logits)
        g_hpre = nn.relu_backward(r0, g_hid)
        g_z, grads["mlp.0.weight"], grads["mlp.0.bias"] = nn.affine_backward(c0, g_hpre)
        if self.variant == "sum":
            self._backward_sum(cache["inner"], g_z, grads)
        elif self.variant == "twin-sum":
            self._backward_twin(cache["inner"], g_z, grads)
        else:
            self._backward_attention(cache["inner"], g_z, grads)
        return {name: grads[name] for name in self.params}

    def loss_and_grads(self, groups, labels):
        logits, cache = self.forward(groups)
        loss, g = nn.cross_entropy(logits, labels)
        return loss, self.backward(cache, g)

    def scores(self, groups) -> np.ndarray:
        logits, _ = self.forward(groups)
        return nn.softmax(logits)[:, 1]

    # sum ------------------------------------------------------------------

    def _features_sum(self, groups):
        (Xs, Ms), (Xl, Ml), (Xr, Mr) = groups
        S = _masked_sum(Xs, Ms)
        U = _masked_sum(Xl, Ml) + _masked_sum(Xr, Mr)
        p, parts, caches = self.params, [], []
        for j in range(self.config.m):
            pre_s, cs = nn.affine_forward(p[f"psi.{j}.weight"], p[f"psi.{j}.bias"], S[:, j])
            sim, rs = nn.relu(pre_s)
            pre_d, cd = nn.affine_forward(p[f"phi.{j}.weight"], p[f"phi.{j}.bias"], U[:, j])
            dif, rd = nn.relu(pre_d)
            parts += [sim, dif]
            caches.append((cs, rs, cd, rd, sim, dif))
        return np.concatenate(parts, axis=1), caches

    def _backward_sum(self, caches, g_z, grads):
        k = self.config.sim_dif_dim
        for j, (cs, rs, cd, rd, _, _) in enumerate(caches):
            g_sim = g_z[:, 2 * k * j: 2 * k * j + k]
            g_dif = g_z[:, 2 * k * j + k: 2 * k * (j + 1)]
            _, grads[f"psi.{j}.weight"], grads[f"psi.{j}.bias"] = nn.affine_backward(cs, nn.relu_backward(rs, g_sim))
            _, grads[f"phi.{j}.weight"], grads[f"phi.{j}.bias"] = nn.affine_backward(cd, nn.relu_backward(rd, g_dif))

    # twin -----------------------------------------------------------------

    def _features_twin(self, groups):
        (Xa, Ma), (Xb, Mb) = groups
        Sa, Sb = _masked_sum(Xa, Ma), _masked_sum(Xb, Mb)
        delta = Sa - Sb
        parts, caches = [], []
        for j in range(self.config.m):
            W = self.params[f"twin.{j}.weight"]
            diff = delta[:, j] @ W.T
            parts.append(np.abs(diff))
            caches.append((delta[:, j], diff))
        return np.concatenate(parts, axis=1), caches

    def _backward_twin(self, caches, g_z, grads):
        k = self.config.sim_dif_dim
        for j, (delta, diff) in enumerate(caches):
            g_diff = g_z[:, k * j: k * (j + 1)] * np.sign(diff)
            grads[f"twin.{j}.weight"] = g_diff.T @ delta

    # attention ------------------------------------------------------------

    def _features_attention(self, groups):
        (Xs, Ms), (Xl, Ml), (Xr, Mr) = groups
        p, cfg = self.params, self.config
        rows, caches = [], []
        for j in range(cfg.m):
            sim, cs = nn.attend_forward(Xs[:, j], Ms[:, j], p[f"psi.{j}.w_key"],
                                        p[f"psi.{j}.w_value"], p[f"psi.{j}.query"])
            q = sim if cfg.variant == "context-attention" else p[f"phi.{j}.query"]
            wk, wv = p[f"phi.{j}.w_key"], p[f"phi.{j}.w_value"]
            o_left, cl = nn.attend_forward(Xl[:, j], Ml[:, j], wk, wv, q)
            o_right, cr = nn.attend_forward(Xr[:, j], Mr[:, j], wk, wv, q)
            dif = o_left + o_right
            rows.append(np.concatenate([sim, dif], axis=1))
            caches.append((cs, cl, cr, sim, dif))
        R = np.stack(rows, axis=1)
        O, csa = nn.self_attention_forward(R, p["omega.w_query"], p["omega.w_key"], p["omega.w_value"])
        return O.reshape(O.shape[0], -1), (caches, csa, O.shape)

    def _backward_attention(self, inner, g_z, grads):
        caches, csa, o_shape = inner
        d2 = self.config.d2
        ga = nn.self_attention_backward(csa, g_z.reshape(o_shape))
        grads["omega.w_query"], grads["omega.w_key"], grads["omega.w_value"] = (
            ga["w_query"], ga["w_key"], ga["w_value"])
        g_R = ga["R"]
        context = self.variant == "context-attention"
        for j, (cs, cl, cr, _, _) in enumerate(caches):
            g_sim = g_R[:, j, :d2].copy()
            g_dif = g_R[:, j, d2:]
            gl = nn.attend_backward(cl, g_dif, need_x=False)
            gr = nn.attend_backward(cr, g_dif, need_x=False)
            grads[f"phi.{j}.w_key"] = gl["w_key"] + gr["w_key"]
            grads[f"phi.{j}.w_value"] = gl["w_value"] + gr["w_value"]
            if context:
                g_sim += gl["query"] + gr["query"]
            else:
                grads[f"phi.{j}.query"] = gl["query"] + gr["query"]
            gs = nn.attend_backward(cs, g_sim, need_x=False)
            grads[f"psi.{j}.w_key"] = gs["w_key"]
            grads[f"psi.{j}.w_value"] = gs["w_value"]
            grads[f"psi.{j}.query"] = gs["query"]

    # inspection -----------------------------------------------------------

    def inspect(self, groups) -> list[dict]:
        """Per-attribute intermediates for the first example of ``groups``.

        Keys: ``sim``, ``dif`` and, for attention variants, ``weights``
        (one array of attention weights per token group).
        """
        logits, cache = self.forward(groups)
        out = []
        if self.variant == "sum":
            for cs, rs, cd, rd, sim, dif in cache["inner"]:
                out.append({"sim": sim[0], "dif": dif[0]})
        elif self.variant == "twin-sum":
            for _, diff in cache["inner"]:
                out.append({"sim": None, "dif": np.abs(diff[0])})
        else:
            for cs, cl, cr, sim, dif in cache["inner"][0]:
                # attend_forward caches the weights at index 7
                alpha = [c[7][0] for c in (cs, cl, cr)]
                out.append({"sim": sim[0], "dif": dif[0], "weights": alpha})
        return out


def _masked_sum(X, mask):
    return np.einsum("bmld,bml->bmd", X, mask.astype(X.dtype))


def _init_params(cfg: ModelConfig, shapes) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in shapes:
        kind = name.rsplit(".", 1)[1]
        if kind == "bias":
            params[name] = np.zeros(shape)
        elif kind == "query":
            params[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
        else:
            params[name] = nn.glorot_uniform(rng, *shape)
    return params


def init_model(config: ModelConfig) -> Model:
    return Model(config)


# -- single-example building blocks ----------------------------------------
#
# These mirror the batched code paths for one attribute of one example and
# exist for inspection and tests.

def _stack(vecs, d) -> np.ndarray:
    vecs = [np.asarray(v, dtype=np.float64) for v in vecs]
    for v in vecs:
        if v.shape != (d,):
            raise nn.ShapeError(f"expected vectors of length {d}, got {v.shape}")
    return np.stack(vecs) if vecs else np.zeros((0, d))


def _require(model: Model, variants):
    if model.variant not in variants:
        raise ValueError(f"not defined for variant {model.variant!r}")


def psi_sum(model: Model, j: int, shared_vecs) -> np.ndarray:
    _require(model, ("sum",))
    s = _stack(shared_vecs, model.config.d).sum(axis=0)
    p = model.params
    return np.maximum(p[f"psi.{j}.weight"] @ s + p[f"psi.{j}.bias"], 0.0)


def phi_sum(model: Model, j: int, unique_left_vecs, unique_right_vecs) -> np.ndarray:
    _require(model, ("sum",))
    d = model.config.d
    u = _stack(unique_left_vecs, d).sum(axis=0) + _stack(unique_right_vecs, d).sum(axis=0)
    p = model.params
    return np.maximum(p[f"phi.{j}.weight"] @ u + p[f"phi.{j}.bias"], 0.0)


def _unit(model: Model, prefix: str) -> nn.AttentionUnit:
    p = model.params
    return nn.AttentionUnit(p[f"{prefix}.w_key"], p[f"{prefix}.w_value"], p.get(f"{prefix}.query"))


def psi_attention(model: Model, j: int, shared_vecs) -> np.ndarray:
    _require(model, ATTENTION_VARIANTS)
    X = _stack(shared_vecs, model.config.d).T
    return _unit(model, f"psi.{j}").forward(X)[0]


def phi_attention(model: Model, j: int, unique_left_vecs, unique_right_vecs, context=None) -> np.ndarray:
    _require(model, ATTENTION_VARIANTS)
    if (context is not None) != (model.variant == "context-attention"):
        raise ValueError("context must be given iff the variant is context-attention")
    unit = _unit(model, f"phi.{j}")
    d = model.config.d
    out = np.zeros(model.config.d2)
    for vecs in (unique_left_vecs, unique_right_vecs):
        out = out + unit.forward(_stack(vecs, d).T, context)[0]
    return out


def omega_concat_mlp(model: Model, r_vectors) -> np.ndarray:
    if len(r_vectors) != model.config.m:
        raise ValueError(f"expected {model.config.m} attribute vectors, got {len(r_vectors)}")
    return _mlp(model, np.concatenate([np.asarray(r, dtype=np.float64) for r in r_vectors]))


def omega_self_attention(model: Model, r_vectors, return_outputs: bool = False):
    _require(model, ATTENTION_VARIANTS)
    if len(r_vectors) != model.config.m:
        raise ValueError(f"expected {model.config.m} attribute vectors, got {len(r_vectors)}")
    p = model.params
    R = np.stack([np.asarray(r, dtype=np.float64) for r in r_vectors])[None]
    O, _ = nn.self_attention_forward(R, p["omega.w_query"], p["omega.w_key"], p["omega.w_value"])
    logits = _mlp(model, O[0].reshape(-1))
    return (logits, O[0]) if return_outputs else logits


def _mlp(model: Model, z: np.ndarray) -> np.ndarray:
    p = model.params
    h = np.maximum(p["mlp.0.weight"] @ z + p["mlp.0.bias"], 0.0)
    return p["mlp.1.weight"] @ h + p["mlp.1.bias"]


def forward_score(model: Model, ep: EmbeddedPair):
    logits, cache = model.forward(ep.groups())
    return float(nn.softmax(logits[0])[1]), cache


def backward(model: Model, cache, label: int):
    """Parameter gradients of the cross-entropy loss of a single cached example."""
    _, g = nn.cross_entropy(cache["logits"], [label])
    return model.backward(cache, g)


def twin_sum_baseline_forward(model: Model, ep: EmbeddedPair) -> float:
    _require(model, ("twin-sum",))
    return forward_score(model, ep)[0]


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"CONTRASTLINK-CKPT\n"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: Model, path, metadata: dict | None = None) -> None:
    """Write config, metadata and parameters as a versioned binary file.

    Layout: magic, uint32 version, uint64 header length, UTF-8 JSON header,
    little-endian float64 parameter data in header order, SHA-256 of all
    preceding bytes.
    """
    meta = dict(model.metadata)
    if metadata:
        meta.update(metadata)
    header = {
        "config": asdict(model.config),
        "metadata": meta,
        "params": [{"name": n, "shape": list(p.shape)} for n, p in model.params.items()],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = [CHECKPOINT_MAGIC, struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)), hbytes]
    body += [np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params.values()]
    blob = b"".join(body)
    Path(path).write_bytes(blob + hashlib.sha256(blob).digest())


def load_checkpoint(path, variant: str | None = None) -> Model:
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(blob) < len(CHECKPOINT_MAGIC) + 12 + 32:
        raise CheckpointError(f"{path}: corrupt checkpoint (truncated)")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: corrupt checkpoint (checksum mismatch)")
    pos = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<IQ", payload, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    pos += 12
    header = json.loads(payload[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    config = ModelConfig(**header["config"])
    if variant is not None and config.variant != variant:
        raise CheckpointError(f"{path}: checkpoint holds variant {config.variant!r}, expected {variant!r}")
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 8
        if pos + n > len(payload):
            raise CheckpointError(f"{path}: corrupt checkpoint (parameter data short)")
        params[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += n
    if pos != len(payload):
        raise CheckpointError(f"{path}: corrupt checkpoint (trailing bytes)")
    try:
        return Model(config, params, header["metadata"])
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
