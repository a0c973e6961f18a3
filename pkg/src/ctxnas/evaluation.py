"""Ranking-quality measurement and the train/val/test split protocol."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .predictor import AnnotatedArch, PredictorParams, score_graphs

__all__ = [
    "AllTiedError",
    "Split",
    "RankReport",
    "kendall_tau",
    "make_split",
    "evaluate_ranking",
]


class AllTiedError(ValueError):
    """Raised when one side of a rank correlation is entirely tied (tau undefined)."""


@dataclass(frozen=True)
class Split:
    """Disjoint id subsets drawn uniformly at random for one evaluation run."""

    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int

    def __post_init__(self):
        groups = (set(self.train_ids), set(self.val_ids), set(self.test_ids))
        if groups[0] & groups[1] or groups[0] & groups[2] or groups[1] & groups[2]:
            raise ValueError("split groups must be pairwise disjoint")


@dataclass(frozen=True)
class RankReport:
    tau: float
    n: int
    seed: int


def kendall_tau(pred, truth) -> float:
    """Tie-corrected rank correlation (tau-b) between two equal-length sequences.

    tau = (concordant - discordant) / sqrt((n0 - ties_pred)(n0 - ties_truth))
    with n0 = n(n-1)/2 counted over all pairs. Raises AllTiedError when either
    sequence is constant, where the statistic is undefined.
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pred and truth must be equal-length vectors")
    n = x.size
    if n < 2:
        raise ValueError("tau needs at least two items")
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = sx[iu] * sy[iu]
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))
    n0 = n * (n - 1) // 2
    ties_x = int(np.sum(sx[iu] == 0))
    ties_y = int(np.sum(sy[iu] == 0))
    if ties_x == n0 or ties_y == n0:
        raise AllTiedError("tau is undefined when all values on one side are tied")
    return (concordant - discordant) / np.sqrt(float(n0 - ties_x) * float(n0 - ties_y))


def make_split(
    ids: list[str],
    n_train: int,
    n_val: int,
    n_test: int | None,
    seed: int,
) -> Split:
    """Seeded uniform split; ``n_test=None`` takes every remaining id."""
    total = len(ids)
    needed = n_train + n_val + (n_test or 0)
    if needed > total:
        raise ValueError(f"requested {needed} ids but only {total} are available")
    order = np.random.default_rng(seed).permutation(total)
    shuffled = [ids[i] for i in order]
    train = tuple(shuffled[:n_train])
    val = tuple(shuffled[n_train : n_train + n_val])
    rest = shuffled[n_train + n_val :]
    test = tuple(rest if n_test is None else rest[:n_test])
    return Split(train, val, test, seed)


def evaluate_ranking(p: PredictorParams, test: list[AnnotatedArch], seed: int = 0) -> RankReport:
    """Kendall's tau between predicted scores and held-out test accuracy."""
    if not test:
        raise ValueError("evaluation needs a nonempty test set")
    scores = score_graphs(p, [arch.graph for arch in test])
    truth = [arch.test_acc for arch in test]
    return RankReport(tau=float(kendall_tau(scores, truth)), n=len(test), seed=seed)
