"""Cell graphs: the labeled-DAG data model shared by every stage of the pipeline.

A cell is stored as an operation list (one vocabulary index per node) plus a
binary adjacency matrix. Edge-labeled search spaces are converted to this
node-labeled form before anything downstream sees them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from hashlib import blake2b

import numpy as np

__all__ = [
    "OpVocabulary",
    "CellGraph",
    "EdgeOpCell",
    "ValidationReport",
    "validate",
    "edge_ops_to_node_ops",
    "undirected_neighbors",
    "undirected_distances",
    "wl_hash",
    "permute",
    "one_hot_features",
]

INPUT = 0
OUTPUT = 1


@dataclass(frozen=True)
class OpVocabulary:
    """Ordered operation label set. Index 0 is the input marker, index 1 the output marker."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 3:
            raise ValueError("vocabulary needs input, output and at least one operation")
        if len(set(self.names)) != len(self.names):
            raise ValueError("vocabulary labels must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def index_of(self, label: str) -> int:
        try:
            return self.names.index(label)
        except ValueError:
            raise KeyError(f"unknown operation label {label!r}") from None

    @property
    def interior(self) -> tuple[int, ...]:
        """Indices assignable to ordinary (non input/output) nodes."""
        return tuple(range(2, len(self.names)))


@dataclass(frozen=True)
class CellGraph:
    """A node-labeled directed graph: ``ops[i]`` labels node i, ``adj[i][j] == 1`` is edge i->j.

    Construction only checks shapes; semantic invariants (acyclicity, unique
    input/output, full input->output coverage) are checked by :func:`validate`.
    """

    ops: tuple[int, ...]
    adj: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(int(o) for o in self.ops))
        object.__setattr__(self, "adj", tuple(tuple(int(x) for x in row) for row in self.adj))
        n = len(self.ops)
        if len(self.adj) != n or any(len(row) != n for row in self.adj):
            raise ValueError("adjacency must be square and match the operation list")
        if any(x not in (0, 1) for row in self.adj for x in row):
            raise ValueError("adjacency entries must be 0 or 1")

    @property
    def num_nodes(self) -> int:
        return len(self.ops)

    def matrix(self) -> np.ndarray:
        return np.array(self.adj, dtype=np.float64)

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, row in enumerate(self.adj) for j, x in enumerate(row) if x]


@dataclass(frozen=True)
class EdgeOpCell:
    """Cell from an operation-on-edge space: ops live on edges of a positional DAG.

    Node 0 is the source and node ``num_nodes - 1`` the sink; edges are
    (tail, head, label) with tail < head.
    """

    num_nodes: int
    edge_ops: tuple[tuple[int, int, str], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "edge_ops", tuple((int(t), int(h), str(l)) for t, h, l in self.edge_ops)
        )
        if self.num_nodes < 2:
            raise ValueError("an edge-op cell needs at least a source and a sink")
        seen = set()
        for tail, head, _ in self.edge_ops:
            if not (0 <= tail < head < self.num_nodes):
                raise ValueError(f"edge ({tail}, {head}) must satisfy 0 <= tail < head < num_nodes")
            if (tail, head) in seen:
                raise ValueError(f"duplicate edge ({tail}, {head})")
            seen.add((tail, head))


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of structural validation; empty ``violations`` means the graph is valid."""

    violations: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _reachable(n: int, edges: list[tuple[int, int]], start: int, reverse: bool = False) -> set[int]:
    nbrs: dict[int, list[int]] = {v: [] for v in range(n)}
    for i, j in edges:
        if reverse:
            nbrs[j].append(i)
        else:
            nbrs[i].append(j)
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for v in frontier:
            for u in nbrs[v]:
                if u not in seen:
                    seen.add(u)
                    nxt.append(u)
        frontier = nxt
    return seen


def _has_cycle(n: int, edges: list[tuple[int, int]]) -> bool:
    indeg = [0] * n
    out: dict[int, list[int]] = {v: [] for v in range(n)}
    for i, j in edges:
        indeg[j] += 1
        out[i].append(j)
    queue = [v for v in range(n) if indeg[v] == 0]
    removed = 0
    while queue:
        v = queue.pop()
        removed += 1
        for u in out[v]:
            indeg[u] -= 1
            if indeg[u] == 0:
                queue.append(u)
    return removed != n


def validate(graph: CellGraph) -> ValidationReport:
    """Check every cell-graph invariant and report all violations found.

    Never raises: callers distinguish valid from invalid via the report.
    """
    violations: list[str] = []
    n = graph.num_nodes
    edges = graph.edges()

    for v in range(n):
        if graph.adj[v][v]:
            violations.append(f"self-loop at node {v}")

    inputs = [v for v in range(n) if graph.ops[v] == INPUT]
    outputs = [v for v in range(n) if graph.ops[v] == OUTPUT]
    if len(inputs) != 1:
        violations.append(f"expected exactly one input node, found {len(inputs)}")
    if len(outputs) != 1:
        violations.append(f"expected exactly one output node, found {len(outputs)}")

    if inputs and any(j in inputs for (_, j) in edges):
        violations.append("input node has incoming edges")
    if outputs and any(i in outputs for (i, _) in edges):
        violations.append("output node has outgoing edges")

    if _has_cycle(n, edges):
        violations.append("graph contains a directed cycle")
    elif len(inputs) == 1 and len(outputs) == 1:
        from_in = _reachable(n, edges, inputs[0])
        to_out = _reachable(n, edges, outputs[0], reverse=True)
        for v in range(n):
            if v not in from_in or v not in to_out:
                violations.append(f"node {v} is not on any input->output path")

    return ValidationReport(tuple(violations))


def edge_ops_to_node_ops(cell: EdgeOpCell, vocab: OpVocabulary) -> CellGraph:
    """Convert an edge-labeled cell to the node-labeled form.

    Each labeled edge becomes a node; two edge-nodes are connected when the
    first edge's head is the second edge's tail. Synthetic input/output nodes
    anchor edges leaving the source and entering the sink, so the result obeys
    the same contract as natively node-labeled cells.
    """
    m = len(cell.edge_ops)
    sink = cell.num_nodes - 1
    ops = [INPUT] + [vocab.index_of(label) for _, _, label in cell.edge_ops] + [OUTPUT]
    adj = [[0] * (m + 2) for _ in range(m + 2)]
    for a, (tail, head, _) in enumerate(cell.edge_ops):
        node = 1 + a
        if tail == 0:
            adj[0][node] = 1
        if head == sink:
            adj[node][m + 1] = 1
        for b, (tail2, _, _) in enumerate(cell.edge_ops):
            if head == tail2:
                adj[node][1 + b] = 1
    graph = CellGraph(tuple(ops), tuple(tuple(row) for row in adj))
    report = validate(graph)
    if not report.ok:
        raise ValueError("edge-op cell does not transform to a valid graph: " + "; ".join(report.violations))
    return graph


def undirected_neighbors(graph: CellGraph, v: int) -> set[int]:
    """Union of in- and out-neighbors of node v (message passing ignores direction)."""
    if not 0 <= v < graph.num_nodes:
        raise IndexError(f"node index {v} out of range for {graph.num_nodes} nodes")
    return {u for u in range(graph.num_nodes) if graph.adj[v][u] or graph.adj[u][v]}


def undirected_distances(graph: CellGraph, v: int) -> list[int]:
    """BFS hop distance from v to every node on the undirected view; -1 if unreachable."""
    if not 0 <= v < graph.num_nodes:
        raise IndexError(f"node index {v} out of range for {graph.num_nodes} nodes")
    dist = [-1] * graph.num_nodes
    dist[v] = 0
    frontier = [v]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for w in frontier:
            for u in undirected_neighbors(graph, w):
                if dist[u] < 0:
                    dist[u] = d
                    nxt.append(u)
        frontier = nxt
    return dist


def _h64(text: str) -> str:
    return blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


def wl_hash(graph: CellGraph, iterations: int | None = None) -> str:
    """Isomorphism-invariant graph fingerprint via Weisfeiler-Lehman color refinement.

    Colors start from operation labels and are refined over undirected
    neighborhoods; the result is a stable 64-bit hex digest, identical for any
    node relabeling of the same graph.
    """
    n = graph.num_nodes
    rounds = n if iterations is None else iterations
    if rounds < 1:
        raise ValueError("iterations must be >= 1")
    colors = [_h64(f"op:{op}") for op in graph.ops]
    nbrs = [sorted(undirected_neighbors(graph, v)) for v in range(n)]
    for _ in range(rounds):
        colors = [_h64(colors[v] + "|" + ",".join(sorted(colors[u] for u in nbrs[v]))) for v in range(n)]
    return _h64(";".join(sorted(colors)))


def permute(graph: CellGraph, perm: list[int] | tuple[int, ...]) -> CellGraph:
    """Relabel nodes: node i of the input becomes node perm[i] of the output."""
    n = graph.num_nodes
    if sorted(perm) != list(range(n)):
        raise ValueError("perm must be a bijection on node indices")
    ops = [0] * n
    adj = [[0] * n for _ in range(n)]
    for i in range(n):
        ops[perm[i]] = graph.ops[i]
        for j in range(n):
            adj[perm[i]][perm[j]] = graph.adj[i][j]
    return CellGraph(tuple(ops), tuple(tuple(row) for row in adj))


def one_hot_features(graph: CellGraph, vocab: OpVocabulary) -> np.ndarray:
    """Initial node features: row v is the indicator vector of ops[v] over the vocabulary."""
    size = len(vocab)
    feats = np.zeros((graph.num_nodes, size), dtype=np.float64)
    for v, op in enumerate(graph.ops):
        if not 0 <= op < size:
            raise ValueError(f"node {v} has operation index {op} outside vocabulary of size {size}")
        feats[v, op] = 1.0
    return feats
