# opinion_sampling/graph_core.py
"""
Graph substrates for opinion sampling:
- SocialGraph: weighted directed graph carrying per-node update rates and inward probabilities
- SimilarityMatrix / AssistantGraph: pairwise opinion similarities and their complement weights
- planted partition generator for synthetic experiments
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import networkx as nx
import numpy as np
import scipy.sparse as sp

from opinion_sampling.utils.rng import derive_rng

logger = logging.getLogger("GraphCore")

# tolerance for symmetry / range checks on similarity input
SIM_TOL = 1e-9


class GraphError(ValueError):
    pass


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class SocialGraph:
    """
    Weighted directed graph G = (V, A) with update rates `lam` and inward probabilities `inward`.

    Adjacency is stored as CSR so neighbour rows are contiguous slices.
    A node may have zero out-degree only when its inward probability is 1.
    """

    adjacency: sp.csr_matrix
    lam: np.ndarray
    inward: np.ndarray
    out_degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        adj = sp.csr_matrix(self.adjacency, dtype=float)
        adj.sum_duplicates()
        adj.eliminate_zeros()
        adj.sort_indices()
        n = adj.shape[0]
        if adj.shape != (n, n) or n == 0:
            raise GraphError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        if adj.nnz and adj.data.min() < 0:
            raise GraphError("edge weights must be non-negative")
        if np.any(adj.diagonal() != 0):
            raise GraphError("self-loops are not allowed (A_ii must be 0)")

        lam = np.asarray(self.lam, dtype=float).reshape(-1)
        inward = np.asarray(self.inward, dtype=float).reshape(-1)
        if lam.shape != (n,) or inward.shape != (n,):
            raise GraphError(f"lam/inward must have length {n}, got {lam.shape} and {inward.shape}")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise GraphError("update rates must be positive and finite")
        if np.any(inward <= 0) or np.any(inward > 1) or not np.all(np.isfinite(inward)):
            raise GraphError("inward probabilities must lie in (0, 1]")

        deg = np.asarray(adj.sum(axis=1)).reshape(-1)
        stuck = np.flatnonzero((deg <= 0) & (inward < 1))
        if stuck.size:
            raise GraphError(
                f"nodes {stuck[:10].tolist()} have no out-neighbours but inward probability < 1"
            )

        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "lam", _readonly(lam))
        object.__setattr__(self, "inward", _readonly(inward))
        object.__setattr__(self, "out_degree", _readonly(deg))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def m(self) -> int:
        return self.adjacency.nnz

    def neighbors(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        """(out-neighbour ids, weights) of node i."""
        lo, hi = self.adjacency.indptr[i], self.adjacency.indptr[i + 1]
        return self.adjacency.indices[lo:hi], self.adjacency.data[lo:hi]

    def transition(self) -> sp.csr_matrix:
        """(I - P) D^-1 A, the sub-stochastic step matrix of a backward walker."""
        deg = self.out_degree
        scale = np.divide(1.0 - self.inward, deg, out=np.zeros(self.n), where=deg > 0)
        return sp.csr_matrix(sp.diags(scale) @ self.adjacency)

    def connected_pairs(self) -> np.ndarray:
        """Dense boolean mask: True where an edge exists in either direction."""
        mask = (self.adjacency != 0).toarray()
        return mask | mask.T

    def scaled(self, factor: float) -> "SocialGraph":
        if factor <= 0:
            raise GraphError("scale factor must be positive")
        return SocialGraph(self.adjacency * factor, self.lam, self.inward)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for i in range(self.n):
            g.add_node(i, lam=float(self.lam[i]), p=float(self.inward[i]))
        coo = self.adjacency.tocoo()
        g.add_weighted_edges_from(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
        return g

    @classmethod
    def from_networkx(cls, g: nx.Graph, lam=1.0, inward=0.5) -> "SocialGraph":
        """Nodes must be 0..n-1. Undirected graphs become symmetric directed graphs."""
        n = g.number_of_nodes()
        if sorted(g.nodes()) != list(range(n)):
            raise GraphError("networkx graph nodes must be labelled 0..n-1")
        adj = nx.to_scipy_sparse_array(g, nodelist=range(n), weight="weight", format="csr")
        return cls(sp.csr_matrix(adj), _broadcast(lam, n), _broadcast(inward, n))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int, float]], lam=1.0, inward=0.5,
                   undirected: bool = False) -> "SocialGraph":
        rows, cols, vals = [], [], []
        for src, dst, w in edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise GraphError(f"edge ({src}, {dst}) out of range for n={n}")
            rows.append(src)
            cols.append(dst)
            vals.append(float(w))
            if undirected:
                rows.append(dst)
                cols.append(src)
                vals.append(float(w))
        adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(adj, _broadcast(lam, n), _broadcast(inward, n))


def _broadcast(value, n: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    return arr


def weighted_out_degree(g: SocialGraph, i: int) -> float:
    if not 0 <= i < g.n:
        raise IndexError(f"node {i} out of range for n={g.n}")
    return float(g.out_degree[i])


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """sigma_ij = Pr[f(v_i) = f(v_j)]; symmetric, unit diagonal, entries in [0, 1]."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigma, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] == 0:
            raise GraphError(f"similarity matrix must be square and non-empty, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise GraphError("similarity matrix contains non-finite values")
        if np.max(np.abs(s - s.T)) > SIM_TOL:
            raise GraphError("similarity matrix is not symmetric")
        if s.min() < -SIM_TOL or s.max() > 1 + SIM_TOL:
            raise GraphError("similarities must lie in [0, 1]")
        if np.max(np.abs(np.diag(s) - 1.0)) > SIM_TOL:
            raise GraphError("similarity diagonal must be 1")
        s = np.clip((s + s.T) / 2.0, 0.0, 1.0)
        np.fill_diagonal(s, 1.0)
        object.__setattr__(self, "sigma", _readonly(s))

    @property
    def n(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True, eq=False)
class AssistantGraph:
    """Complete weighted graph G_a with w_ij = 1 - sigma_ij and zero diagonal."""

    weight: np.ndarray

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError(f"assistant weights must be square, got shape {w.shape}")
        if np.max(np.abs(w - w.T), initial=0.0) > SIM_TOL or w.min(initial=0.0) < -SIM_TOL:
            raise GraphError("assistant weights must be symmetric and non-negative")
        w = np.clip((w + w.T) / 2.0, 0.0, None)
        np.fill_diagonal(w, 0.0)
        object.__setattr__(self, "weight", _readonly(w))

    @property
    def n(self) -> int:
        return self.weight.shape[0]

    def subgraph(self, nodes: Sequence[int]) -> "AssistantGraph":
        idx = np.asarray(nodes, dtype=int)
        return AssistantGraph(self.weight[np.ix_(idx, idx)])


def build_assistant_graph(sim) -> AssistantGraph:
    """w_ij = 1 - sigma_ij. Accepts a SimilarityMatrix or anything array-like (validated)."""
    if not isinstance(sim, SimilarityMatrix):
        sim = SimilarityMatrix(np.asarray(sim, dtype=float))
    w = 1.0 - sim.sigma
    np.fill_diagonal(w, 0.0)
    return AssistantGraph(w)


# ---------- Synthetic graphs ----------
@dataclass(frozen=True)
class NodeValueSpec:
    """
    Per-node value generator: `constant`, `uniform` over (low, high], or the
    `mixture` inward-probability profile (45% in (0, .2], 25% in (.8, 1], rest in (.2, .8]).
    """

    kind: str = "constant"
    low: float = 1.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "uniform", "mixture"):
            raise GraphError(f"unknown value spec kind {self.kind!r}")
        if self.kind == "uniform" and self.low > self.high:
            raise GraphError(f"uniform spec needs low <= high, got ({self.low}, {self.high})")

    @classmethod
    def constant(cls, value: float) -> "NodeValueSpec":
        return cls("constant", value, value)

    @classmethod
    def uniform(cls, low: float, high: float) -> "NodeValueSpec":
        return cls("uniform", low, high)

    @classmethod
    def parse(cls, text) -> "NodeValueSpec":
        """Accepts `0.5`, `uniform:0:0.01`, `U[0,0.01]` or `mixture`."""
        if isinstance(text, NodeValueSpec):
            return text
        if isinstance(text, (int, float)):
            return cls.constant(float(text))
        s = str(text).strip().lower().replace(" ", "")
        if s == "mixture":
            return cls("mixture", 0.0, 1.0)
        if s.startswith("uniform:"):
            parts = s.split(":")[1:]
        elif s.startswith("u[") and s.endswith("]"):
            parts = s[2:-1].split(",")
        else:
            try:
                return cls.constant(float(s))
            except ValueError:
                raise GraphError(f"cannot parse value spec {text!r}") from None
        if len(parts) != 2:
            raise GraphError(f"uniform spec needs two bounds, got {text!r}")
        try:
            return cls.uniform(float(parts[0]), float(parts[1]))
        except ValueError:
            raise GraphError(f"cannot parse value spec {text!r}") from None

    def describe(self) -> str:
        if self.kind == "constant":
            return repr(self.low)
        if self.kind == "uniform":
            return f"uniform:{self.low!r}:{self.high!r}"
        return "mixture"

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, float(self.low))
        # 1 - U is in (0, 1], so draws land in (low, high]
        u = 1.0 - rng.random(n)
        if self.kind == "uniform":
            return self.low + (self.high - self.low) * u
        band = rng.choice(3, size=n, p=[0.45, 0.25, 0.30])
        lows = np.array([0.0, 0.8, 0.2])[band]
        widths = np.array([0.2, 0.2, 0.6])[band]
        return lows + widths * u


@dataclass(frozen=True)
class PlantedPartitionConfig:
    n: int
    k: int
    p_high: float
    p_low: float
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.n < 1:
            problems.append(f"n must be >= 1 (got {self.n})")
        if not 1 <= self.k <= max(self.n, 1):
            problems.append(f"k must be in [1, n] (got k={self.k}, n={self.n})")
        for name in ("p_high", "p_low"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                problems.append(f"{name} must be in [0, 1] (got {v})")
        if self.p_high < self.p_low:
            problems.append(f"p_high must be >= p_low (got {self.p_high} < {self.p_low})")
        if not 0 <= self.seed < 2 ** 64:
            problems.append("seed must be a 64-bit non-negative integer")
        if problems:
            raise GraphError("; ".join(problems))


def block_labels(n: int, k: int) -> np.ndarray:
    """Contiguous latent groups of size floor(n/k) or ceil(n/k); the larger blocks come first."""
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    return np.repeat(np.arange(k), sizes)


def generate_planted_partition(cfg: PlantedPartitionConfig, lambda_spec="1", inward_spec="0.5",
                               ) -> Tuple[SocialGraph, np.ndarray]:
    """
    Undirected planted-partition graph realised as a symmetric directed graph with unit weights.

    Returns (graph, latent labels). Isolated nodes get one unit edge to a random member of
    their latent group (any other node when the group is a singleton).
    """
    lambda_spec = NodeValueSpec.parse(lambda_spec)
    inward_spec = NodeValueSpec.parse(inward_spec)
    n, k = cfg.n, cfg.k
    labels = block_labels(n, k)

    edge_rng = derive_rng(cfg.seed, "edges")
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], cfg.p_high, cfg.p_low)
    keep = edge_rng.random(iu.size) < prob
    adj = np.zeros((n, n), dtype=float)
    adj[iu[keep], ju[keep]] = 1.0
    adj = adj + adj.T

    repair_rng = derive_rng(cfg.seed, "repair")
    repaired: List[int] = []
    for i in range(n):
        if adj[i].any():
            continue
        mates = np.flatnonzero(labels == labels[i])
        mates = mates[mates != i]
        if mates.size == 0:
            mates = np.delete(np.arange(n), i)
        if mates.size == 0:
            break  # single-node graph; validity then depends on the inward spec
        j = int(mates[repair_rng.integers(mates.size)])
        adj[i, j] = adj[j, i] = 1.0
        repaired.append(i)
    if repaired:
        logger.warning(f"Repaired {len(repaired)} isolated node(s): {repaired[:10]}")

    lam = lambda_spec.draw(n, derive_rng(cfg.seed, "lambda"))
    inward = inward_spec.draw(n, derive_rng(cfg.seed, "inward"))
    graph = SocialGraph(sp.csr_matrix(adj), lam, inward)
    logger.info(
        f"Planted partition graph: n={n} k={k} p_high={cfg.p_high} p_low={cfg.p_low} "
        f"undirected_edges={int(keep.sum()) + len(repaired)} seed={cfg.seed}"
    )
    return graph, labels
