"""Graph encoder: stacked graph-isomorphism layers with an MLP update and mean readout.

Each layer mixes every node with its undirected neighborhood, weighting the
node itself by a learnable ``1 + eps``, then applies a small MLP
(Linear -> BatchNorm -> ReLU -> Dropout -> Linear). Three execution modes:

* ``train``   - batch-norm uses batch statistics and updates running ones,
                dropout is active (needs an rng);
* ``eval``    - batch-norm uses running statistics, dropout is off;
* ``partial`` - batch-norm and dropout are bypassed entirely.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    clamped_sqrt,
    div,
    matmul,
    mean_axis0,
    mul,
    relu,
    sub,
)
from .graphs import CellGraph

__all__ = [
    "TRAIN",
    "EVAL",
    "PARTIAL",
    "MlpParams",
    "EncoderParams",
    "init_mlp",
    "init_encoder",
    "mlp_forward",
    "gin_layer",
    "encode_graph",
    "save_checkpoint",
    "load_checkpoint",
    "mlp_to_json",
    "mlp_from_json",
    "encoder_to_json",
    "encoder_from_json",
]

TRAIN = "train"
EVAL = "eval"
PARTIAL = "partial"
_MODES = (TRAIN, EVAL, PARTIAL)

BN_EPS = 1e-5
CHECKPOINT_FORMAT = "ctxnas-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Weights of one MLP: k linear layers with a BN/ReLU/Dropout block between each pair."""

    weights: list[Tensor]
    biases: list[Tensor]
    bn_scale: list[Tensor]
    bn_shift: list[Tensor]
    bn_running_mean: list[np.ndarray]
    bn_running_var: list[np.ndarray]
    dropout_rate: float = 0.1
    bn_momentum: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        dims = self.dims
        for i, w in enumerate(self.weights):
            if w.data.shape != (dims[i], dims[i + 1]):
                raise ValueError("weight shapes do not chain")
        if any((rv <= 0).any() for rv in self.bn_running_var):
            raise ValueError("running variance must stay positive")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].data.shape[0]] + [w.data.shape[1] for w in self.weights]

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}.w{i}", w))
            out.append((f"{prefix}.b{i}", b))
        for i, (s, t) in enumerate(zip(self.bn_scale, self.bn_shift)):
            out.append((f"{prefix}.bn{i}.scale", s))
            out.append((f"{prefix}.bn{i}.shift", t))
        return out

    def clone(self) -> "MlpParams":
        return MlpParams(
            weights=[Tensor(w.data.copy()) for w in self.weights],
            biases=[Tensor(b.data.copy()) for b in self.biases],
            bn_scale=[Tensor(s.data.copy()) for s in self.bn_scale],
            bn_shift=[Tensor(t.data.copy()) for t in self.bn_shift],
            bn_running_mean=[m.copy() for m in self.bn_running_mean],
            bn_running_var=[v.copy() for v in self.bn_running_var],
            dropout_rate=self.dropout_rate,
            bn_momentum=self.bn_momentum,
        )


@dataclass
class EncoderParams:
    """Parameters of the full L-layer graph encoder plus its execution mode."""

    layers: list[MlpParams]
    epsilons: list[Tensor]
    embed_dim: int
    vocab_size: int
    mode: str = TRAIN

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("encoder needs at least one layer")
        if len(self.layers) != len(self.epsilons):
            raise ValueError("one epsilon per layer required")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        if self.layers[0].dims[0] != self.vocab_size:
            raise ValueError("first layer input dim must equal vocabulary size")
        for layer in self.layers[1:]:
            if layer.dims[0] != self.embed_dim:
                raise ValueError("inner layers must consume embed_dim inputs")
        if any(layer.dims[-1] != self.embed_dim for layer in self.layers):
            raise ValueError("every layer must produce embed_dim outputs")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def named_parameters(self, prefix: str = "enc") -> list[tuple[str, Tensor]]:
        out = []
        for k, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"{prefix}.layer{k}"))
            out.append((f"{prefix}.eps{k}", self.epsilons[k]))
        return out

    def clone(self, mode: str | None = None) -> "EncoderParams":
        return EncoderParams(
            layers=[layer.clone() for layer in self.layers],
            epsilons=[Tensor(e.data.copy()) for e in self.epsilons],
            embed_dim=self.embed_dim,
            vocab_size=self.vocab_size,
            mode=self.mode if mode is None else mode,
        )


def init_mlp(dims: list[int], rng: np.random.Generator, dropout_rate: float = 0.1, bn_momentum: float = 0.1) -> MlpParams:
    """Glorot-uniform weights, zero biases, identity batch-norm."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        biases.append(Tensor(np.zeros(fan_out)))
    hidden = dims[1:-1]
    return MlpParams(
        weights=weights,
        biases=biases,
        bn_scale=[Tensor(np.ones(d)) for d in hidden],
        bn_shift=[Tensor(np.zeros(d)) for d in hidden],
        bn_running_mean=[np.zeros(d) for d in hidden],
        bn_running_var=[np.ones(d) for d in hidden],
        dropout_rate=dropout_rate,
        bn_momentum=bn_momentum,
    )


def init_encoder(
    vocab_size: int,
    embed_dim: int = 32,
    num_layers: int = 3,
    seed: int | np.random.Generator = 0,
    dropout_rate: float = 0.1,
    mode: str = TRAIN,
) -> EncoderParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for k in range(num_layers):
        in_dim = vocab_size if k == 0 else embed_dim
        layers.append(init_mlp([in_dim, embed_dim, embed_dim], rng, dropout_rate))
    epsilons = [Tensor(np.zeros(())) for _ in range(num_layers)]
    return EncoderParams(layers, epsilons, embed_dim, vocab_size, mode)


def _batchnorm(x: Tensor, scale: Tensor, shift: Tensor, running_mean: np.ndarray, running_var: np.ndarray, momentum: float, mode: str) -> Tensor:
    if mode == TRAIN:
        mu = mean_axis0(x)
        centered = sub(x, mu)
        var = mean_axis0(mul(centered, centered))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data[0]
        running_var *= 1.0 - momentum
        running_var += momentum * np.maximum(var.data[0], BN_EPS)
    else:
        centered = sub(x, Tensor(running_mean))
        var = Tensor(running_var.reshape(1, -1))
    # clamped denominator: neutral running stats (0, 1) reproduce the input exactly
    return add(mul(div(centered, clamped_sqrt(var, BN_EPS)), scale), shift)


def mlp_forward(p: MlpParams, x: Tensor, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Run the MLP; hidden blocks are Linear -> BatchNorm -> ReLU -> Dropout."""
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    if x.data.ndim != 2 or x.data.shape[1] != p.dims[0]:
        raise ValueError(f"input of shape {x.data.shape} does not match mlp input dim {p.dims[0]}")
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = add(matmul(h, w), b)
        if i == last:
            break
        if mode != PARTIAL:
            h = _batchnorm(h, p.bn_scale[i], p.bn_shift[i], p.bn_running_mean[i], p.bn_running_var[i], p.bn_momentum, mode)
        h = relu(h)
        if mode == TRAIN and p.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("train-mode dropout needs an rng")
            keep = (rng.random(h.data.shape) >= p.dropout_rate) / (1.0 - p.dropout_rate)
            h = mul(h, keep)
    return h


def _sym_neighbor_matrix(graph: CellGraph) -> np.ndarray:
    a = graph.matrix()
    return np.minimum(a + a.T, 1.0)


def gin_layer(layer: MlpParams, epsilon: Tensor, graph: CellGraph, h: Tensor, mode: str = PARTIAL, rng: np.random.Generator | None = None) -> Tensor:
    """One message-passing update: row v becomes MLP((1 + eps) * h_v + sum of neighbor rows)."""
    if h.data.shape[0] != graph.num_nodes:
        raise ValueError("feature matrix must have one row per node")
    mixed = add(mul(h, add(epsilon, 1.0)), matmul(_sym_neighbor_matrix(graph), h))
    return mlp_forward(layer, mixed, mode, rng)


def _one_hot(graph: CellGraph, size: int) -> np.ndarray:
    feats = np.zeros((graph.num_nodes, size), dtype=np.float64)
    for v, op in enumerate(graph.ops):
        if not 0 <= op < size:
            raise ValueError(f"node {v} has operation index {op} outside vocabulary of size {size}")
        feats[v, op] = 1.0
    return feats


def encode_graph(enc: EncoderParams, graph: CellGraph, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Encode a graph; returns (graph embedding of shape (1, D), node embeddings (N, D)).

    The graph embedding is the mean over node rows of the last layer, so it is
    invariant to node relabeling.
    """
    h = Tensor(_one_hot(graph, enc.vocab_size))
    for layer, eps in zip(enc.layers, enc.epsilons):
        h = gin_layer(layer, eps, graph, h, enc.mode, rng)
    return mean_axis0(h), h


# ---------------------------------------------------------------------------
# checkpoint serialization (JSON round-trips float64 bit-exactly via repr)

def mlp_to_json(p: MlpParams) -> dict:
    return {
        "dims": p.dims,
        "weights": [w.data.tolist() for w in p.weights],
        "biases": [b.data.tolist() for b in p.biases],
        "bn_scale": [s.data.tolist() for s in p.bn_scale],
        "bn_shift": [t.data.tolist() for t in p.bn_shift],
        "bn_running_mean": [m.tolist() for m in p.bn_running_mean],
        "bn_running_var": [v.tolist() for v in p.bn_running_var],
        "dropout_rate": p.dropout_rate,
        "bn_momentum": p.bn_momentum,
    }


def mlp_from_json(doc: dict) -> MlpParams:
    return MlpParams(
        weights=[Tensor(np.asarray(w)) for w in doc["weights"]],
        biases=[Tensor(np.asarray(b)) for b in doc["biases"]],
        bn_scale=[Tensor(np.asarray(s)) for s in doc["bn_scale"]],
        bn_shift=[Tensor(np.asarray(t)) for t in doc["bn_shift"]],
        bn_running_mean=[np.asarray(m, dtype=np.float64) for m in doc["bn_running_mean"]],
        bn_running_var=[np.asarray(v, dtype=np.float64) for v in doc["bn_running_var"]],
        dropout_rate=doc["dropout_rate"],
        bn_momentum=doc["bn_momentum"],
    )


def encoder_to_json(enc: EncoderParams) -> dict:
    return {
        "vocab_size": enc.vocab_size,
        "embed_dim": enc.embed_dim,
        "mode": enc.mode,
        "layers": [mlp_to_json(layer) for layer in enc.layers],
        "epsilons": [float(e.data) for e in enc.epsilons],
    }


def encoder_from_json(doc: dict) -> EncoderParams:
    return EncoderParams(
        layers=[mlp_from_json(layer) for layer in doc["layers"]],
        epsilons=[Tensor(np.asarray(e)) for e in doc["epsilons"]],
        embed_dim=doc["embed_dim"],
        vocab_size=doc["vocab_size"],
        mode=doc["mode"],
    )


def save_checkpoint(path: str, kind: str, payload: dict) -> None:
    """Write a versioned JSON checkpoint; ``payload`` must already be JSON-ready."""
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": kind}
    doc.update(payload)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str, kind: str | None = None) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a recognized checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    if kind is not None and doc.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} checkpoint, found {doc.get('kind')!r}")
    return doc
