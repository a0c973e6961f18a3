"""Self-supervised pretraining on unlabeled cells via context prediction.

For a sampled central node we embed its inner neighborhood with the main
encoder and the surrounding ring of nodes with an auxiliary encoder, then
train both to tell matching (same graph) pairs from mismatched ones. Only the
main encoder is kept for downstream prediction; the auxiliary one exists to
aggregate rings of varying size and is discarded afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AdamState,
    DivergenceError,
    Tensor,
    adam_step,
    concat_rows,
    gather_rows,
    logsigmoid,
    mean_all,
    mean_axis0,
    mul,
    sub,
    sum_axis1,
    zero_grads,
)
from .encoder import PARTIAL, EncoderParams, encode_graph, init_encoder
from .graphs import CellGraph, undirected_distances

__all__ = [
    "Subgraph",
    "ContextPair",
    "PretrainConfig",
    "EpochStats",
    "extract_k_hop",
    "extract_context_ring",
    "usable_central_nodes",
    "embed_context",
    "context_loss",
    "build_batch_pairs",
    "pretrain",
    "init_pretrain_encoders",
]


@dataclass(frozen=True)
class Subgraph:
    """An induced subgraph of a parent cell, tracked by parent node indices.

    ``anchor_nodes`` marks the nodes a ring shares with the inner neighborhood
    it surrounds; inner neighborhoods themselves carry no anchors.
    """

    parent: CellGraph
    nodes: tuple[int, ...]
    anchor_nodes: frozenset[int] = frozenset()

    def __post_init__(self):
        node_set = set(self.nodes)
        if not node_set <= set(range(self.parent.num_nodes)):
            raise ValueError("subgraph nodes must be nodes of the parent")
        if not self.anchor_nodes <= node_set:
            raise ValueError("anchor nodes must belong to the subgraph")

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    def induced(self) -> CellGraph:
        """The subgraph as a standalone graph, nodes renumbered in listed order."""
        index = {v: i for i, v in enumerate(self.nodes)}
        n = len(self.nodes)
        adj = [[0] * n for _ in range(n)]
        for v in self.nodes:
            for u in self.nodes:
                if self.parent.adj[v][u]:
                    adj[index[v]][index[u]] = 1
        return CellGraph(tuple(self.parent.ops[v] for v in self.nodes), tuple(tuple(r) for r in adj))

    def local_anchor_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.nodes) if v in self.anchor_nodes]


@dataclass
class ContextPair:
    """One training pair: inner-neighborhood embedding, ring embedding, match label."""

    central_embedding: Tensor
    context_embedding: Tensor
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass(frozen=True)
class PretrainConfig:
    """Knobs of the context task; hop radii satisfy 1 <= central < context."""

    central_radius: int = 2
    context_radius: int = 3
    negative_ratio: int = 1
    centrals_per_graph: int = 3
    batch_size: int = 32
    epochs: int = 40
    learning_rate: float = 1e-3
    seed: int = 0
    embed_dim: int = 32
    num_layers: int = 3
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.central_radius < 1:
            raise ValueError("central radius must be >= 1")
        if self.context_radius <= self.central_radius:
            raise ValueError("context radius must exceed the central radius")
        if self.negative_ratio < 1:
            raise ValueError("negative ratio must be >= 1")
        if self.centrals_per_graph < 1:
            raise ValueError("centrals_per_graph must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 to allow negative pairing")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    pos_sim_mean: float
    neg_sim_mean: float


def extract_k_hop(graph: CellGraph, v: int, k: int) -> Subgraph:
    """Induced subgraph of all nodes within k undirected hops of v."""
    if k < 1:
        raise ValueError("hop count must be >= 1")
    dist = undirected_distances(graph, v)
    nodes = tuple(u for u in range(graph.num_nodes) if 0 <= dist[u] <= k)
    return Subgraph(graph, nodes)


def extract_context_ring(graph: CellGraph, v: int, k: int, r: int) -> Subgraph:
    """Induced subgraph of nodes at hop distance in [k, r] from v.

    Nodes at distance exactly k are the anchors shared with the k-hop
    neighborhood. The ring may be empty; callers treat that as a skip signal.
    """
    if not 1 <= k < r:
        raise ValueError("radii must satisfy 1 <= k < r")
    dist = undirected_distances(graph, v)
    nodes = tuple(u for u in range(graph.num_nodes) if k <= dist[u] <= r)
    anchors = frozenset(u for u in nodes if dist[u] == k)
    return Subgraph(graph, nodes, anchors)


def usable_central_nodes(graph: CellGraph, k: int) -> list[int]:
    """Nodes whose context ring is nonempty, i.e. some node sits at distance exactly k."""
    return [v for v in range(graph.num_nodes) if k in undirected_distances(graph, v)]


def embed_context(aux: EncoderParams, ring: Subgraph, rng: np.random.Generator | None = None) -> Tensor:
    """Run the auxiliary encoder on the ring and average the anchor-node rows."""
    anchors = ring.local_anchor_indices()
    if not anchors:
        raise ValueError("context ring has no anchor nodes")
    _, nodes = encode_graph(aux, ring.induced(), rng)
    return mean_axis0(gather_rows(nodes, np.array(anchors)))


def context_loss(pairs: list[ContextPair]) -> Tensor:
    """Mean binary cross-entropy between pair labels and sigmoid(dot(central, context))."""
    if not pairs:
        raise ValueError("context loss needs at least one pair")
    h = concat_rows([p.central_embedding for p in pairs])
    c = concat_rows([p.context_embedding for p in pairs])
    if not (np.all(np.isfinite(h.data)) and np.all(np.isfinite(c.data))):
        raise DivergenceError("non-finite embeddings in context pairs")
    sims = sum_axis1(mul(h, c))
    y = np.array([[float(p.label)] for p in pairs])
    # BCE written via log-sigmoid of +/- sim for numerical stability
    per_pair = sub(mul(-y, logsigmoid(sims)), mul(1.0 - y, logsigmoid(mul(sims, -1.0))))
    return mean_all(per_pair)


def pair_similarities(pairs: list[ContextPair]) -> tuple[list[float], list[float]]:
    """Sigmoid similarity per positive and negative pair (diagnostics, no gradients)."""
    pos, neg = [], []
    for p in pairs:
        sim = float(np.sum(p.central_embedding.data * p.context_embedding.data))
        prob = 1.0 / (1.0 + np.exp(-np.clip(sim, -500, 500)))
        (pos if p.label == 1 else neg).append(prob)
    return pos, neg


def build_batch_pairs(
    main: EncoderParams,
    aux: EncoderParams,
    graphs: list[CellGraph],
    cfg: PretrainConfig,
    rng: np.random.Generator,
) -> list[ContextPair]:
    """Sample central nodes per usable graph and assemble positive/negative pairs.

    Negatives pair a central embedding with the ring embedding of a uniformly
    chosen OTHER graph in the batch. Graphs too small to host any
    (central, ring) split contribute nothing; batches with fewer than two
    usable graphs yield no pairs at all.
    """
    if len(graphs) < 2:
        return []
    k, r = cfg.central_radius, cfg.context_radius
    embedded: list[tuple[int, Tensor, Tensor]] = []
    usable_graphs = 0
    for gi, graph in enumerate(graphs):
        candidates = usable_central_nodes(graph, k)
        if not candidates:
            continue
        take = min(cfg.centrals_per_graph, len(candidates))
        picked = rng.choice(len(candidates), size=take, replace=False)
        contributed = False
        for ci in picked:
            v = candidates[int(ci)]
            hood = extract_k_hop(graph, v, k)
            ring = extract_context_ring(graph, v, k, r)
            if ring.is_empty or not ring.anchor_nodes:
                continue
            h, _ = encode_graph(main, hood.induced(), rng)
            c = embed_context(aux, ring, rng)
            embedded.append((gi, h, c))
            contributed = True
        usable_graphs += contributed
    if usable_graphs < 2:
        return []
    pairs = [ContextPair(h, c, 1) for _, h, c in embedded]
    for i, (gi, h, _) in enumerate(embedded):
        others = [j for j, (gj, _, _) in enumerate(embedded) if gj != gi]
        for _ in range(cfg.negative_ratio):
            j = others[int(rng.integers(len(others)))]
            pairs.append(ContextPair(h, embedded[j][2], 0))
    return pairs


def init_pretrain_encoders(vocab_size: int, cfg: PretrainConfig) -> tuple[EncoderParams, EncoderParams]:
    """Fresh main and auxiliary encoders, derived deterministically from cfg.seed.

    Both run with batch-norm and dropout bypassed: the context task embeds
    subgraphs of two to five nodes, where per-forward batch statistics are
    noise-dominated and wash out the structural signal.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    main = init_encoder(vocab_size, cfg.embed_dim, cfg.num_layers, rng, cfg.dropout_rate, mode=PARTIAL)
    aux = init_encoder(vocab_size, cfg.embed_dim, cfg.num_layers, rng, cfg.dropout_rate, mode=PARTIAL)
    return main, aux


def pretrain(
    graphs: list[CellGraph],
    cfg: PretrainConfig,
    vocab_size: int,
) -> tuple[EncoderParams, EncoderParams, list[EpochStats], AdamState]:
    """Jointly train main and auxiliary encoders on the context task.

    Deterministic for a fixed config: the same seed reproduces the returned
    parameters bit for bit. Raises DivergenceError if the loss leaves the
    finite range.
    """
    if not graphs:
        raise ValueError("pretraining needs a nonempty corpus")
    main, aux = init_pretrain_encoders(vocab_size, cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    params = main.named_parameters("main") + aux.named_parameters("aux")
    adam = AdamState()
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(graphs))
        losses: list[float] = []
        pos_sims: list[float] = []
        neg_sims: list[float] = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [graphs[i] for i in order[start : start + cfg.batch_size]]
            pairs = build_batch_pairs(main, aux, batch, cfg, rng)
            if not pairs:
                continue
            loss = context_loss(pairs)
            if not np.isfinite(loss.data):
                raise DivergenceError(f"pretraining diverged at epoch {epoch}: loss={loss.data}")
            zero_grads(params)
            loss.backward()
            adam_step(params, adam, cfg.learning_rate)
            losses.append(loss.item())
            pos, neg = pair_similarities(pairs)
            pos_sims.extend(pos)
            neg_sims.extend(neg)
        if losses:
            history.append(
                EpochStats(epoch, float(np.mean(losses)), float(np.mean(pos_sims)), float(np.mean(neg_sims)))
            )
    return main, aux, history, adam
