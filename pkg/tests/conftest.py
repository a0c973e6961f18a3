import numpy as np
import pytest

from ctxnas.bench import DEFAULT_VOCAB, SpaceSpec, sample_space
from ctxnas.graphs import CellGraph


@pytest.fixture
def vocab():
    return DEFAULT_VOCAB


@pytest.fixture
def chain3():
    """input -> conv3x3 -> output"""
    return CellGraph((0, 2, 1), ((0, 1, 0), (0, 0, 1), (0, 0, 0)))


@pytest.fixture
def chain4():
    """input -> conv3x3 -> conv1x1 -> output"""
    return CellGraph((0, 2, 3, 1), ((0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1), (0, 0, 0, 0)))


@pytest.fixture
def diamond():
    """input -> {conv3x3, conv1x1} -> output"""
    return CellGraph((0, 2, 3, 1), ((0, 1, 1, 0), (0, 0, 0, 1), (0, 0, 0, 1), (0, 0, 0, 0)))


@pytest.fixture(scope="session")
def sampled_graphs():
    """A reusable pool of 200 random valid cells."""
    return sample_space(SpaceSpec(), 200, seed=1234)


def random_permutation(n, rng):
    return tuple(int(x) for x in rng.permutation(n))
