# opinion_sampling/vio_model.py
"""
Voter model with innate opinions.

Forward view: node i fires at the epochs of a Poisson process with rate lam_i; on firing it
resets to its innate opinion with probability p_i, otherwise copies out-neighbour j with
probability (1 - p_i) A_ij / d_i.

Backward view: one walker per node steps back in time; a step at node i absorbs at the primed
copy v_i' with probability p_i or moves to an out-neighbour; walkers meeting on a node merge.
The node whose innate opinion a walker absorbs at is that node's steady-state opinion source.
"""

import bisect
import logging
from concurrent import futures
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np

from opinion_sampling.graph_core import GraphError, SimilarityMatrix, SocialGraph
from opinion_sampling.utils.rng import SeedLike, UniformStream, as_generator, derive_rng

logger = logging.getLogger("VioModel")

# upper bound on the events drawn per batch in the forward simulation
FORWARD_CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class VioParams:
    graph: SocialGraph
    mu0: float

    def __post_init__(self):
        if not 0.0 <= self.mu0 <= 1.0:
            raise GraphError(f"mu0 must be in [0, 1], got {self.mu0}")

    @property
    def n(self) -> int:
        return self.graph.n


@dataclass(frozen=True, eq=False)
class OpinionAssignment:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values).astype(np.int8).reshape(-1)
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("opinions must be binary")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True, eq=False)
class AbsorptionTrace:
    absorber: np.ndarray


class _NeighbourTable:
    """Per-node cumulative out-weights for inverse-CDF neighbour selection."""

    def __init__(self, graph: SocialGraph):
        self.targets: List[List[int]] = []
        self.cumulative: List[List[float]] = []
        for i in range(graph.n):
            nbrs, w = graph.neighbors(i)
            self.targets.append(nbrs.tolist())
            self.cumulative.append(np.cumsum(w).tolist())
        self.degree = graph.out_degree.tolist()

    def pick(self, i: int, u: float) -> int:
        cum = self.cumulative[i]
        k = bisect.bisect_right(cum, u * self.degree[i])
        return self.targets[i][min(k, len(cum) - 1)]


def default_horizon(graph: SocialGraph, scale: float = 5.0) -> float:
    """scale * sum_i 1/(lam_i p_i): a multiple of the expected time for every node to reset once."""
    return float(scale * np.sum(1.0 / (graph.lam * graph.inward)))


def simulate_forward(params: VioParams, horizon: float, seed: SeedLike = 0,
                     innate: Optional[np.ndarray] = None) -> OpinionAssignment:
    """Expressed opinions at time `horizon`, starting from expressed = innate."""
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    g = params.graph
    rng = as_generator(seed)
    if innate is None:
        innate = (rng.random(g.n) < params.mu0).astype(np.int8)
    innate = innate.tolist()
    expressed = list(innate)

    total_rate = float(g.lam.sum())
    owner_cdf = np.cumsum(g.lam) / total_rate
    table = _NeighbourTable(g)
    inward = g.inward.tolist()

    t = 0.0
    chunk = min(FORWARD_CHUNK, max(64, int(total_rate * horizon * 1.1) + 16))
    while True:
        gaps = rng.exponential(1.0 / total_rate, size=chunk)
        times = t + np.cumsum(gaps)
        live = int(np.searchsorted(times, horizon, side="right"))
        owners = np.minimum(np.searchsorted(owner_cdf, rng.random(live), side="right"), g.n - 1)
        resets = rng.random(live)
        picks = rng.random(live)
        for i, u_reset, u_pick in zip(owners.tolist(), resets.tolist(), picks.tolist()):
            if u_reset < inward[i]:
                expressed[i] = innate[i]
            else:
                expressed[i] = expressed[table.pick(i, u_pick)]
        if live < chunk:
            break
        t = float(times[-1])
    return OpinionAssignment(np.array(expressed, dtype=np.int8))


def _coalesce(params: VioParams, stream: UniformStream, table: _NeighbourTable) -> np.ndarray:
    """Run the backward coalescing walks once; return absorber[i] for every start node."""
    g = params.graph
    lam = g.lam.tolist()
    inward = g.inward.tolist()
    # occupied node -> original walkers currently sitting there
    occupant = {i: [i] for i in range(g.n)}
    absorber = np.empty(g.n, dtype=np.int64)
    while occupant:
        nodes = list(occupant)
        total = 0.0
        for v in nodes:
            total += lam[v]
        target = stream.next() * total
        acc = 0.0
        node = nodes[-1]
        for v in nodes:
            acc += lam[v]
            if target < acc:
                node = v
                break
        walkers = occupant.pop(node)
        if stream.next() < inward[node]:
            absorber[walkers] = node
            continue
        nxt = table.pick(node, stream.next())
        if nxt in occupant:
            occupant[nxt].extend(walkers)
        else:
            occupant[nxt] = walkers
    return absorber


def sample_steady_state(params: VioParams, seed: SeedLike = 0,
                        _table: Optional[_NeighbourTable] = None) -> Tuple[OpinionAssignment, AbsorptionTrace]:
    """Exact draw from the steady-state joint distribution, with its absorption trace."""
    rng = as_generator(seed)
    table = _table or _NeighbourTable(params.graph)
    absorber = _coalesce(params, UniformStream(rng, batch=256), table)
    innate = (rng.random(params.n) < params.mu0).astype(np.int8)
    return OpinionAssignment(innate[absorber]), AbsorptionTrace(absorber)


def steady_state_draws(params: VioParams, samples: int, seed: int = 0, start: int = 0,
                       ) -> Iterator[Tuple[OpinionAssignment, AbsorptionTrace]]:
    """Draws `start .. start+samples-1`; draw s uses the stream (seed, "steady", s)."""
    table = _NeighbourTable(params.graph)
    for s in range(start, start + samples):
        yield sample_steady_state(params, derive_rng(seed, "steady", s), _table=table)


def agreement_counts(draws: Iterable[Tuple[OpinionAssignment, AbsorptionTrace]], n: int,
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """(same opinion, same absorber) pair counts over `draws`."""
    same_opinion = np.zeros((n, n), dtype=np.int64)
    same_absorber = np.zeros((n, n), dtype=np.int64)
    for f, trace in draws:
        v = f.values
        same_opinion += v[:, None] == v[None, :]
        a = trace.absorber
        same_absorber += a[:, None] == a[None, :]
    return same_opinion, same_absorber


def frequencies(counts: np.ndarray, samples: int) -> np.ndarray:
    out = counts / float(samples)
    np.fill_diagonal(out, 1.0)
    return out


def _agreement_block(params: VioParams, seed: int, start: int, count: int) -> Tuple[np.ndarray, np.ndarray]:
    return agreement_counts(steady_state_draws(params, count, seed, start), params.n)


def _agreement_counts(params: VioParams, samples: int, seed: int, workers: int = 1,
                      block: int = 2000) -> Tuple[np.ndarray, np.ndarray]:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    spans = [(s, min(block, samples - s)) for s in range(0, samples, block)]
    if workers <= 1 or len(spans) == 1:
        parts = [_agreement_block(params, seed, s, c) for s, c in spans]
    else:
        with futures.ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_agreement_block, [params] * len(spans), [seed] * len(spans),
                                  [s for s, _ in spans], [c for _, c in spans]))
    same_opinion = sum(p[0] for p in parts)
    same_absorber = sum(p[1] for p in parts)
    return same_opinion, same_absorber


def empirical_similarity(params: VioParams, samples: int, seed: int = 0, workers: int = 1) -> SimilarityMatrix:
    """Frequency of f_i == f_j over independent exact steady-state draws."""
    same_opinion, _ = _agreement_counts(params, samples, seed, workers)
    logger.info(f"Empirical similarity from {samples} steady-state draws (n={params.n})")
    return SimilarityMatrix(frequencies(same_opinion, samples))


def empirical_correlation(params: VioParams, samples: int, seed: int = 0, workers: int = 1) -> np.ndarray:
    """Frequency of two walkers absorbing at the same node; the Monte-Carlo counterpart of rho."""
    _, same_absorber = _agreement_counts(params, samples, seed, workers)
    return frequencies(same_absorber, samples)


def forward_agreement(params: VioParams, runs: int, horizon: Optional[float] = None,
                      seed: int = 0) -> np.ndarray:
    """Pairwise agreement frequencies of forward runs observed at `horizon`."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    horizon = horizon or default_horizon(params.graph)
    n = params.n
    same = np.zeros((n, n), dtype=np.int64)
    for run in range(runs):
        v = simulate_forward(params, horizon, derive_rng(seed, "forward", run)).values
        same += v[:, None] == v[None, :]
    logger.info(f"Forward agreement from {runs} runs at horizon {horizon:.3g}")
    return same / float(runs)
