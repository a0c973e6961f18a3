"""Predictor-guided architecture search.

Aging evolution: tournaments are decided by the (free) predictor score while
the query budget counts only true oracle lookups, routed through a single
ledger so nothing can bypass accounting. Re-querying an architecture already
seen (same isomorphism hash) reuses the recorded accuracy at no budget cost.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .bench import NODE_SPACE, SpaceSpec, sample_space
from .encoder import EncoderParams
from .graphs import INPUT, OUTPUT, CellGraph, validate, wl_hash
from .predictor import AnnotatedArch, FinetuneConfig, PredictorParams, finetune, predict_score, score_graphs

__all__ = [
    "MutationSpec",
    "QueryRecord",
    "SearchState",
    "mutate",
    "evolve",
    "random_search",
    "rank_then_query",
]

Oracle = Callable[[CellGraph], float]


@dataclass(frozen=True)
class MutationSpec:
    """Relative chances of the two mutation kinds and the validity-retry budget."""

    op_mutation_prob: float = 0.5
    edge_mutation_prob: float = 0.5
    max_attempts: int = 50

    def __post_init__(self):
        if not (0.0 <= self.op_mutation_prob <= 1.0 and 0.0 <= self.edge_mutation_prob <= 1.0):
            raise ValueError("mutation probabilities must lie in [0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class QueryRecord:
    step: int
    wl_hash: str
    predicted: float | None
    accuracy: float
    best_so_far: float


@dataclass
class SearchState:
    """Query ledger plus the evolving population.

    Every true-accuracy lookup goes through :meth:`query`; duplicates (by
    isomorphism hash) are served from the record without consuming budget.
    """

    oracle: Oracle
    budget: int
    population: deque = field(default_factory=deque)
    history: list[QueryRecord] = field(default_factory=list)
    queries_used: int = 0
    best: tuple[CellGraph, float] | None = None
    seen: dict[str, float] = field(default_factory=dict)
    init_truncated: bool = False

    @property
    def exhausted(self) -> bool:
        return self.queries_used >= self.budget

    def query(self, graph: CellGraph, predicted: float | None = None) -> float:
        key = wl_hash(graph)
        if key in self.seen:
            return self.seen[key]
        if self.exhausted:
            raise RuntimeError("query budget exhausted")
        acc = float(self.oracle(graph))
        self.queries_used += 1
        self.seen[key] = acc
        if self.best is None or acc > self.best[1]:
            self.best = (graph, acc)
        self.history.append(QueryRecord(len(self.history) + 1, key, predicted, acc, self.best[1]))
        return acc


def _mutate_once(graph: CellGraph, spec: MutationSpec, vocab_size: int, rng: np.random.Generator) -> CellGraph | None:
    total = spec.op_mutation_prob + spec.edge_mutation_prob
    if total == 0.0:
        return None
    pick_op = rng.random() < spec.op_mutation_prob / total
    n = graph.num_nodes
    if pick_op:
        mutable = [v for v in range(n) if graph.ops[v] not in (INPUT, OUTPUT)]
        if not mutable:
            return None
        v = mutable[int(rng.integers(len(mutable)))]
        choices = [op for op in range(2, vocab_size) if op != graph.ops[v]]
        if not choices:
            return None
        ops = list(graph.ops)
        ops[v] = choices[int(rng.integers(len(choices)))]
        return CellGraph(tuple(ops), graph.adj)
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    adj = [list(row) for row in graph.adj]
    adj[i][j] = 1 - adj[i][j]
    return CellGraph(graph.ops, tuple(tuple(row) for row in adj))


def mutate(graph: CellGraph, spec: MutationSpec, vocab_size: int, rng: np.random.Generator) -> CellGraph:
    """One random relabel-or-rewire step that keeps the cell valid.

    Retries invalid or no-op children up to ``max_attempts`` times, then falls
    back to returning the parent unchanged.
    """
    parent_key = wl_hash(graph)
    for _ in range(spec.max_attempts):
        child = _mutate_once(graph, spec, vocab_size, rng)
        if child is None:
            return graph
        if not validate(child).ok:
            continue
        if wl_hash(child) != parent_key:
            return child
    return graph


def evolve(
    oracle: Oracle,
    predictor: PredictorParams,
    space: SpaceSpec,
    budget: int = 150,
    pop_size: int = 50,
    tournament_size: int = 10,
    spec: MutationSpec = MutationSpec(),
    seed: int | np.random.Generator = 0,
    candidates_per_step: int = 8,
) -> SearchState:
    """Aging evolution guided by predictor scores under a true-query budget.

    The initial population is random-sampled at full template size and
    true-queried; afterwards each step tournament-selects a parent by predictor
    score, proposes ``candidates_per_step`` mutations, true-queries the
    best-predicted candidate, and evicts the oldest member. Predictor calls are
    free; only oracle lookups consume budget. Stops when the budget is spent.

    Candidate prescreening (rather than a single blind mutation) is what lets
    the free predictor buy anything at small budgets: mutating one child per
    step makes guidance so weak that even an oracle-scored tournament fails to
    outpace random sampling.
    """
    if not budget >= pop_size >= tournament_size >= 1:
        raise ValueError("need budget >= pop_size >= tournament_size >= 1")
    if candidates_per_step < 1:
        raise ValueError("candidates_per_step must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state = SearchState(oracle=oracle, budget=budget)

    init_n = min(pop_size, budget)
    if init_n < pop_size:
        state.init_truncated = True
    # full-size templates: mutation never changes node count, so smaller
    # starting cells would cap their whole lineage below the space optimum
    init_space = replace(space, num_nodes=space.max_nodes) if space.family == NODE_SPACE else space
    initial = sample_space(init_space, init_n, rng)
    fitness = score_graphs(predictor, initial)
    for graph, fit in zip(initial, fitness):
        state.query(graph, predicted=fit)
        state.population.append((graph, fit))

    vocab_size = len(space.vocab)
    stall_cap = max(10 * budget, 1000)
    stalled = 0
    while not state.exhausted:
        idx = rng.choice(len(state.population), size=min(tournament_size, len(state.population)), replace=False)
        parent = max((state.population[int(i)] for i in idx), key=lambda pair: pair[1])[0]
        children = [mutate(parent, spec, vocab_size, rng) for _ in range(candidates_per_step)]
        # spend budget on novelty: drop candidates whose accuracy is already known
        unseen = [c for c in children if wl_hash(c) not in state.seen]
        if not unseen:
            # whole candidate set already queried: re-draw the tournament
            # rather than churning the population with duplicates
            stalled += 1
            if stalled > stall_cap:
                raise RuntimeError("evolution stalled: mutations stopped producing unseen architectures")
            continue
        stalled = 0
        scores = score_graphs(predictor, unseen)
        pick = int(np.argmax(scores))
        child, fit = unseen[pick], scores[pick]
        state.query(child, predicted=fit)
        state.population.append((child, fit))
        state.population.popleft()
    return state


def random_search(oracle: Oracle, space: SpaceSpec, budget: int, seed: int | np.random.Generator) -> SearchState:
    """Query ``budget`` distinct random cells; the no-learning baseline."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state = SearchState(oracle=oracle, budget=budget)
    for graph in sample_space(space, budget, rng):
        state.query(graph)
    return state


def rank_then_query(
    oracle: Oracle,
    space: list[CellGraph],
    finetune_cfg: FinetuneConfig,
    vocab_size: int,
    n_train: int = 50,
    top_k: int = 50,
    seed: int | np.random.Generator = 0,
    pretrained: EncoderParams | None = None,
) -> tuple[float, SearchState]:
    """Annotate a few cells, fine-tune, score the whole space, verify the top picks.

    Returns the best true accuracy among the ``top_k`` predicted architectures
    plus the ledger of all ``n_train + top_k`` true queries.
    """
    if len(space) < n_train + top_k:
        raise ValueError("space must hold at least n_train + top_k architectures")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state = SearchState(oracle=oracle, budget=n_train + top_k)

    picks = rng.choice(len(space), size=n_train, replace=False)
    train = []
    for i in picks:
        graph = space[int(i)]
        acc = state.query(graph)
        train.append(AnnotatedArch(graph=graph, val_acc=acc, test_acc=acc, id=f"train{int(i):05d}"))

    predictor = finetune(pretrained, train, finetune_cfg, vocab_size=vocab_size)
    scores = score_graphs(predictor, space)
    ranked = sorted(range(len(space)), key=lambda i: scores[i], reverse=True)

    best = -np.inf
    queried = 0
    for i in ranked:
        if queried == top_k:
            break
        key = wl_hash(space[i])
        already = key in state.seen
        acc = state.query(space[i], predicted=scores[i])
        best = max(best, acc)
        if not already:
            queried += 1
    return float(best), state
