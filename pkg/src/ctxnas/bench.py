"""Search-space sampling, a deterministic synthetic accuracy oracle, and dataset files.

The oracle is an exact closed form over graph structure (operation counts plus
longest-path depth), squashed into a believable accuracy band. It is noise-free
so that experiments on it are exactly reproducible, yet structured enough that
a graph encoder can learn it from examples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graphs import (
    INPUT,
    OUTPUT,
    CellGraph,
    EdgeOpCell,
    OpVocabulary,
    edge_ops_to_node_ops,
    validate,
    wl_hash,
)
from .predictor import AnnotatedArch

__all__ = [
    "DEFAULT_VOCAB",
    "NODE_SPACE",
    "EDGE_SPACE",
    "SpaceSpec",
    "DatasetFormatError",
    "sample_space",
    "synth_accuracy",
    "longest_path_edges",
    "write_dataset",
    "read_dataset",
    "make_annotated",
]

DEFAULT_VOCAB = OpVocabulary(("input", "output", "conv3x3", "conv1x1", "maxpool3x3"))

NODE_SPACE = "node_ops_101_like"
EDGE_SPACE = "edge_ops_201_like"

# oracle constants: per-op points, path bonus, and the squashing window
_OP_POINTS = {"conv3x3": 2.0, "conv1x1": 1.0, "maxpool3x3": -1.0}
_ACC_LO = 0.80
_ACC_SPAN = 0.15
_RAW_CENTER = 6.0
_RAW_SCALE = 0.5


class DatasetFormatError(ValueError):
    """A dataset line that cannot be parsed into an annotated architecture."""


@dataclass(frozen=True)
class SpaceSpec:
    """Shape limits of a cell search space.

    ``node_ops_101_like`` caps nodes and edges of natively node-labeled cells;
    ``edge_ops_201_like`` uses ``num_positions`` fully connected positions with
    one labeled edge per ordered pair. ``num_nodes`` pins node-space samples to
    one size (benchmark spaces of fixed templates); None samples mixed sizes.
    """

    family: str = NODE_SPACE
    max_nodes: int = 7
    max_edges: int = 9
    num_positions: int = 4
    vocab: OpVocabulary = DEFAULT_VOCAB
    num_nodes: int | None = None

    def __post_init__(self):
        if self.family not in (NODE_SPACE, EDGE_SPACE):
            raise ValueError(f"unknown space family {self.family!r}")
        if self.max_nodes < 3 or self.max_edges < 2 or self.num_positions < 2:
            raise ValueError("space limits are too small to hold any valid cell")
        if self.num_nodes is not None and not 3 <= self.num_nodes <= self.max_nodes:
            raise ValueError("num_nodes must lie in [3, max_nodes]")


def _sample_node_cell(spec: SpaceSpec, rng: np.random.Generator, num_nodes: int | None = None) -> CellGraph | None:
    """Random connected cell: a spanning backbone plus sprinkled extra edges.

    Nodes are stored in topological order (node 0 input, node n-1 output).
    Every non-input node receives an in-edge from a random earlier node and
    every non-output node an out-edge to a random later node, which guarantees
    validity; extra forward edges are added within the edge budget.
    """
    n = int(rng.integers(3, spec.max_nodes + 1)) if num_nodes is None else num_nodes
    interior = spec.vocab.interior
    ops = [INPUT] + [int(rng.choice(interior)) for _ in range(n - 2)] + [OUTPUT]
    adj = [[0] * n for _ in range(n)]
    count = 0
    # per-graph depth temperament: chainy graphs have long paths, flat ones short;
    # without this bias the sampled population collapses onto near-maximal depth
    chain_bias = rng.uniform(0.0, 0.95)
    for j in range(1, n):
        i = j - 1 if rng.random() < chain_bias else int(rng.integers(j))
        adj[i][j] = 1
        count += 1
    for i in range(n - 1):
        if not any(adj[i][j] for j in range(i + 1, n)):
            j = int(rng.integers(i + 1, n))
            adj[i][j] = 1
            count += 1
    if count > spec.max_edges:
        return None
    free = [(i, j) for i in range(n) for j in range(i + 1, n) if not adj[i][j]]
    order = rng.permutation(len(free))
    for k in order:
        if count >= spec.max_edges:
            break
        if rng.random() < 0.05:
            i, j = free[int(k)]
            adj[i][j] = 1
            count += 1
    graph = CellGraph(tuple(ops), tuple(tuple(row) for row in adj))
    return graph if validate(graph).ok else None


def _sample_edge_cell(spec: SpaceSpec, rng: np.random.Generator) -> CellGraph | None:
    labels = [spec.vocab.names[i] for i in spec.vocab.interior]
    edges = []
    for tail in range(spec.num_positions):
        for head in range(tail + 1, spec.num_positions):
            edges.append((tail, head, str(rng.choice(labels))))
    cell = EdgeOpCell(spec.num_positions, tuple(edges))
    try:
        return edge_ops_to_node_ops(cell, spec.vocab)
    except ValueError:
        return None


def sample_space(spec: SpaceSpec, n: int, seed: int | np.random.Generator) -> list[CellGraph]:
    """Draw n valid cells, pairwise distinct under the isomorphism hash."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out: list[CellGraph] = []
    seen: set[str] = set()
    attempts = 0
    cap = max(200 * n, 5000)
    while len(out) < n:
        attempts += 1
        if attempts > cap:
            raise RuntimeError(f"could not sample {n} distinct cells after {cap} attempts; space too small?")
        if spec.family == NODE_SPACE:
            graph = _sample_node_cell(spec, rng, spec.num_nodes)
        else:
            graph = _sample_edge_cell(spec, rng)
        if graph is None:
            continue
        key = wl_hash(graph)
        if key in seen:
            continue
        seen.add(key)
        out.append(graph)
    return out


def longest_path_edges(graph: CellGraph) -> int:
    """Edge count of the longest directed input->output path (graph must be a valid cell)."""
    n = graph.num_nodes
    edges = graph.edges()
    indeg = [0] * n
    out: dict[int, list[int]] = {v: [] for v in range(n)}
    for i, j in edges:
        indeg[j] += 1
        out[i].append(j)
    order = [v for v in range(n) if indeg[v] == 0]
    topo = []
    queue = list(order)
    while queue:
        v = queue.pop()
        topo.append(v)
        for u in out[v]:
            indeg[u] -= 1
            if indeg[u] == 0:
                queue.append(u)
    if len(topo) != n:
        raise ValueError("longest path is undefined on cyclic graphs")
    src = graph.ops.index(INPUT)
    dst = graph.ops.index(OUTPUT)
    dist = [-(10**9)] * n
    dist[src] = 0
    for v in topo:
        if dist[v] < 0:
            continue
        for u in out[v]:
            dist[u] = max(dist[u], dist[v] + 1)
    return dist[dst]


def synth_accuracy(graph: CellGraph) -> float:
    """Deterministic benchmark accuracy in (0.80, 0.95).

    raw = 2 * #conv3x3 + #conv1x1 - #maxpool3x3 + longest-path edges, then
    accuracy = 0.80 + 0.15 * sigmoid(0.5 * (raw - 6)). Both ingredients are
    isomorphism invariants, so isomorphic cells always score equally.
    """
    points = {DEFAULT_VOCAB.index_of(name): pts for name, pts in _OP_POINTS.items()}
    raw = 0.0
    for v, op in enumerate(graph.ops):
        if op in (INPUT, OUTPUT):
            continue
        if op not in points:
            raise ValueError(f"node {v} carries operation index {op}, unknown to the oracle vocabulary")
        raw += points[op]
    raw += longest_path_edges(graph)
    z = _RAW_SCALE * (raw - _RAW_CENTER)
    return _ACC_LO + _ACC_SPAN / (1.0 + np.exp(-z))


def make_annotated(graphs: list[CellGraph], prefix: str = "g") -> list[AnnotatedArch]:
    """Annotate sampled graphs with oracle accuracy (validation == test: zero noise)."""
    out = []
    for i, graph in enumerate(graphs):
        acc = float(synth_accuracy(graph))
        out.append(AnnotatedArch(graph=graph, val_acc=acc, test_acc=acc, id=f"{prefix}{i:05d}"))
    return out


def write_dataset(path: str, records: list[AnnotatedArch]) -> None:
    """One JSON object per line: id, ops, adj, val_acc, test_acc."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "ops": list(rec.graph.ops),
                        "adj": [list(row) for row in rec.graph.adj],
                        "val_acc": rec.val_acc,
                        "test_acc": rec.test_acc,
                    }
                )
            )
            fh.write("\n")


def read_dataset(path: str) -> list[AnnotatedArch]:
    """Parse a JSON-lines dataset; malformed lines are reported with their line number."""
    out: list[AnnotatedArch] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                graph = CellGraph(tuple(doc["ops"]), tuple(tuple(r) for r in doc["adj"]))
                rec = AnnotatedArch(
                    graph=graph,
                    val_acc=float(doc["val_acc"]),
                    test_acc=float(doc["test_acc"]),
                    id=str(doc["id"]),
                )
            except KeyError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            out.append(rec)
    return out
