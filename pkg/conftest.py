import numpy as np
import pytest
import scipy.sparse as sp

from opinion_sampling.graph_core import SimilarityMatrix, SocialGraph


@pytest.fixture
def two_node_graph():
    """Two nodes pointing at each other: unit weights, p = 0.5, equal rates."""
    return SocialGraph.from_edges(2, [(0, 1, 1.0)], lam=1.0, inward=0.5, undirected=True)


def _random_graph(n: int, seed: int, density: float = 0.5) -> SocialGraph:
    """Directed graph with weights in [0.5, 2], lam in [0.5, 2], p in [0.1, 1]; every node has an out-edge."""
    rng = np.random.default_rng(seed)
    adj = (rng.random((n, n)) < density) * rng.uniform(0.5, 2.0, size=(n, n))
    np.fill_diagonal(adj, 0.0)
    for i in range(n):
        if not adj[i].any():
            j = (i + 1 + int(rng.integers(n - 1))) % n
            adj[i, j] = 1.0
    lam = rng.uniform(0.5, 2.0, size=n)
    inward = rng.uniform(0.1, 1.0, size=n)
    return SocialGraph(sp.csr_matrix(adj), lam, inward)


def _random_similarity(n: int, seed: int, low: float = 0.0) -> SimilarityMatrix:
    rng = np.random.default_rng(seed)
    s = rng.uniform(low, 1.0, size=(n, n))
    s = np.triu(s, 1)
    s = s + s.T
    np.fill_diagonal(s, 1.0)
    return SimilarityMatrix(s)


@pytest.fixture
def random_graph():
    return _random_graph


@pytest.fixture
def random_similarity():
    return _random_similarity
