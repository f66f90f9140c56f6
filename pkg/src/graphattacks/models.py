"""Differentiable GNN architectures over a weighted adjacency: GCN, GAT,
APPNP, and GPRGNN.

Every forward pass takes the undirected pair list plus one relaxed weight per
pair (a tape tensor), so gradients reach both the model parameters and the
edge weights.  A pair weight of 0 is exactly equivalent to removing the pair.

Architecture defaults (hidden 64, two layers, 8 attention heads, K=10,
alpha=0.1, leaky slope 0.2, dropout 0.5 during victim training) follow the
standard settings of the respective model papers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import DirectedEdges, Graph, normalize_adjacency, symmetric_expand

ARCHITECTURES = ("gcn", "gat", "appnp", "gprgnn")


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    gat_heads: int = 8
    gat_head_dim: int = 8
    prop_steps: int = 10  # K for APPNP / GPRGNN
    teleport: float = 0.1  # alpha
    leaky_slope: float = 0.2
    dropout: float = 0.5


@dataclass
class ModelParams:
    """Per-architecture weight arrays plus the hyperparameters to rebuild
    the forward pass."""

    arch: str
    feature_dim: int
    num_classes: int
    config: ModelConfig
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            self.feature_dim,
            self.num_classes,
            self.config,
            {k: v.copy() for k, v in self.weights.items()},
        )

    def as_tensors(self, requires_grad: bool = False) -> dict[str, ad.Tensor]:
        return {
            k: ad.Tensor(v, requires_grad=requires_grad)
            for k, v in self.weights.items()
        }


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_model(
    arch: str,
    feature_dim: int,
    num_classes: int,
    seed: int = 0,
    config: ModelConfig = ModelConfig(),
) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}")
    rng = np.random.default_rng(seed)
    cfg = config
    w: dict[str, np.ndarray] = {}
    if arch in ("gcn", "appnp", "gprgnn"):
        w["W1"] = _glorot(rng, feature_dim, cfg.hidden)
        w["b1"] = np.zeros(cfg.hidden)
        w["W2"] = _glorot(rng, cfg.hidden, num_classes)
        w["b2"] = np.zeros(num_classes)
        if arch == "gprgnn":
            k = np.arange(cfg.prop_steps + 1)
            w["gamma"] = cfg.teleport * (1 - cfg.teleport) ** k
    else:  # gat
        h1 = cfg.gat_heads * cfg.gat_head_dim
        w["W1"] = _glorot(rng, feature_dim, h1)
        w["b1"] = np.zeros(h1)
        w["a_src1"] = _glorot(rng, cfg.gat_head_dim, 1, (cfg.gat_heads, cfg.gat_head_dim))
        w["a_dst1"] = _glorot(rng, cfg.gat_head_dim, 1, (cfg.gat_heads, cfg.gat_head_dim))
        w["W2"] = _glorot(rng, h1, num_classes)
        w["b2"] = np.zeros(num_classes)
        w["a_src2"] = _glorot(rng, num_classes, 1, (1, num_classes))
        w["a_dst2"] = _glorot(rng, num_classes, 1, (1, num_classes))
    return ModelParams(arch, feature_dim, num_classes, cfg, w)


# ---------------------------------------------------------------------------
# constant feature matrices (sparse fast path)
# ---------------------------------------------------------------------------

_FEATURE_CACHE: dict[int, tuple[np.ndarray, sp.csr_matrix]] = {}


def _feature_operator(features: np.ndarray):
    """Return the features as a csr matrix when sparse enough to pay off."""
    if features.shape[1] < 64:
        return features
    key = id(features)
    hit = _FEATURE_CACHE.get(key)
    if hit is not None and hit[0] is features:
        return hit[1]
    density = np.count_nonzero(features) / max(1, features.size)
    if density > 0.2:
        return features
    csr = sp.csr_matrix(features)
    _FEATURE_CACHE[key] = (features, csr)
    return csr


def _input_matmul(features: np.ndarray, w: ad.Tensor, drop: float, seed: int) -> ad.Tensor:
    """features @ w with optional elementwise input dropout.

    Dropout on a constant sparse matrix is applied to its nonzero entries,
    which is exact for binary features and keeps the product sparse-fast.
    """
    op = _feature_operator(features)
    if drop > 0:
        rng = np.random.default_rng(seed)
        if sp.issparse(op):
            op = op.copy()
            mask = rng.random(op.nnz) >= drop
            op.data = op.data * mask / (1.0 - drop)
        else:
            mask = rng.random(op.shape) >= drop
            op = op * mask / (1.0 - drop)
    return ad.const_matmul(op, w)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def forward(
    params: ModelParams,
    pairs: np.ndarray,
    pair_weights,
    features: np.ndarray,
    mode: str = "eval",
    seed: int = 0,
    weight_tensors: dict[str, ad.Tensor] | None = None,
) -> ad.Tensor:
    """Logits (n x C) for the given relaxed undirected adjacency.

    `pair_weights` is one relaxed weight in [0, 1] per undirected pair;
    gradients flow to it and, when `weight_tensors` (tape tensors for the
    model weights) is supplied, to the parameters as well.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    w = weight_tensors if weight_tensors is not None else params.as_tensors()
    pair_weights = ad.as_tensor(pair_weights)
    n = features.shape[0]
    drop = params.config.dropout if mode == "train" else 0.0
    cfg = params.config

    if params.arch == "gcn":
        return _forward_gcn(w, pairs, pair_weights, features, n, drop, seed)
    if params.arch == "appnp":
        h = _mlp(w, features, drop, seed)
        adj = normalize_adjacency(pairs, pair_weights, n)
        z = h
        for _ in range(cfg.prop_steps):
            z = ad.add(
                ad.scale(_adj_mm(adj, z), 1.0 - cfg.teleport),
                ad.scale(h, cfg.teleport),
            )
        return z
    if params.arch == "gprgnn":
        h = _mlp(w, features, drop, seed)
        adj = normalize_adjacency(pairs, pair_weights, n)
        gamma = w["gamma"]
        z = ad.mul(ad.reshape(ad.narrow(gamma, 0, 0, 1), ()), h)
        p = h
        for k in range(1, cfg.prop_steps + 1):
            p = _adj_mm(adj, p)
            z = ad.add(z, ad.mul(ad.reshape(ad.narrow(gamma, 0, k, 1), ()), p))
        return z
    if params.arch == "gat":
        return _forward_gat(w, cfg, pairs, pair_weights, features, n, drop, seed)
    raise ValueError(f"unknown architecture {params.arch!r}")


def _adj_mm(adj: DirectedEdges, dense: ad.Tensor) -> ad.Tensor:
    return ad.spmm(adj.src, adj.dst, adj.weights, dense, adj.num_nodes)


def _mlp(w, features, drop, seed) -> ad.Tensor:
    h = ad.relu(ad.add(_input_matmul(features, w["W1"], drop, seed * 4 + 1), w["b1"]))
    if drop > 0:
        h = ad.dropout(h, drop, seed * 4 + 2)
    return ad.add(ad.matmul(h, w["W2"]), w["b2"])


def _forward_gcn(w, pairs, pair_weights, features, n, drop, seed) -> ad.Tensor:
    adj = normalize_adjacency(pairs, pair_weights, n)
    h = ad.relu(
        ad.add(_adj_mm(adj, _input_matmul(features, w["W1"], drop, seed * 4 + 1)), w["b1"])
    )
    if drop > 0:
        h = ad.dropout(h, drop, seed * 4 + 2)
    return ad.add(_adj_mm(adj, ad.matmul(h, w["W2"])), w["b2"])


def _gat_layer(
    h: ad.Tensor,
    a_src: ad.Tensor,
    a_dst: ad.Tensor,
    head_dim: int,
    num_heads: int,
    src: np.ndarray,
    dst: np.ndarray,
    edge_w: ad.Tensor,
    n: int,
    slope: float,
) -> ad.Tensor:
    """One multi-head attention layer over directed edges (self-loops included).

    The unnormalized attention coefficient of each edge is multiplied by the
    relaxed edge weight before segment-softmax normalization, so weight 0 is
    equivalent to edge removal.
    """
    outs = []
    for head in range(num_heads):
        hh = ad.narrow(h, 1, head * head_dim, head_dim)
        f_src = ad.reshape(
            ad.matmul(hh, ad.reshape(ad.narrow(a_src, 0, head, 1), (head_dim, 1))), (n,)
        )
        f_dst = ad.reshape(
            ad.matmul(hh, ad.reshape(ad.narrow(a_dst, 0, head, 1), (head_dim, 1))), (n,)
        )
        score = ad.leaky_relu(
            ad.add(ad.gather_rows(f_src, src), ad.gather_rows(f_dst, dst)), slope
        )
        alpha = ad.segment_softmax(score, dst, n, weights=edge_w)
        outs.append(ad.spmm(src, dst, alpha, hh, n))
    return outs[0] if len(outs) == 1 else ad.concat(outs, axis=1)


def _forward_gat(w, cfg: ModelConfig, pairs, pair_weights, features, n, drop, seed) -> ad.Tensor:
    und = symmetric_expand(pairs, pair_weights, n)
    loops = np.arange(n, dtype=np.int64)
    src = np.concatenate([und.src, loops])
    dst = np.concatenate([und.dst, loops])
    ones = ad.Tensor(np.ones(n, dtype=und.weights.data.dtype))
    edge_w = ad.concat([und.weights, ones], axis=0)

    h = ad.add(_input_matmul(features, w["W1"], drop, seed * 4 + 1), w["b1"])
    h = _gat_layer(
        h, w["a_src1"], w["a_dst1"], cfg.gat_head_dim, cfg.gat_heads,
        src, dst, edge_w, n, cfg.leaky_slope,
    )
    h = ad.relu(h)
    if drop > 0:
        h = ad.dropout(h, drop, seed * 4 + 2)
    z = ad.add(ad.matmul(h, w["W2"]), w["b2"])
    num_classes = z.shape[1]
    return _gat_layer(
        z, w["a_src2"], w["a_dst2"], num_classes, 1,
        src, dst, edge_w, n, cfg.leaky_slope,
    )


# ---------------------------------------------------------------------------
# prediction / accuracy
# ---------------------------------------------------------------------------


def logits_for(params: ModelParams, g: Graph, mode: str = "eval", seed: int = 0) -> np.ndarray:
    ones = np.ones(g.num_edges)
    with ad.no_grad():
        return forward(params, g.edges, ones, g.features, mode=mode, seed=seed).data


def predict(params: ModelParams, g: Graph, nodes: np.ndarray) -> np.ndarray:
    """Predicted class per node; ties break toward the lowest class index."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("predict: empty node set")
    return np.argmax(logits_for(params, g)[nodes], axis=1)


def accuracy(params: ModelParams, g: Graph, nodes: np.ndarray, labels=None) -> float:
    labels = g.labels if labels is None else labels
    nodes = np.asarray(nodes, dtype=np.int64)
    pred = predict(params, g, nodes)
    return float(np.mean(pred == labels[nodes]))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"GNNCKPT1"


def save_model(params: ModelParams, path) -> None:
    """Binary checkpoint: 8-byte magic, 4-byte little-endian header length,
    JSON header (arch, dims, config, tensor names/shapes), then the flat
    weight arrays concatenated as little-endian float64."""
    header = {
        "arch": params.arch,
        "feature_dim": params.feature_dim,
        "num_classes": params.num_classes,
        "config": params.config.__dict__,
        "tensors": [
            {"name": k, "shape": list(v.shape)} for k, v in sorted(params.weights.items())
        ],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k, _ in sorted(params.weights.items()):
            fh.write(params.weights[k].astype("<f8").tobytes())


def load_model(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not a model checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    offset = 12 + hlen
    weights = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        weights[spec["name"]] = arr.reshape(shape).copy()
        offset += count * 8
    return ModelParams(
        header["arch"],
        header["feature_dim"],
        header["num_classes"],
        ModelConfig(**header["config"]),
        weights,
    )
