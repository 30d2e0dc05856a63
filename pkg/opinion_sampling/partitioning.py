# opinion_sampling/partitioning.py
"""
Partitions for partitioned sampling and solvers for the min-cost simple partition.

The cost of a simple partition is g(P) = sum_k Vol(V_k), where the volume sums w_ij over
ordered pairs i != j inside the group, so E_M[Var_S] = g(P) / (2 n^2).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from opinion_sampling.graph_core import AssistantGraph
from opinion_sampling.utils.rng import SeedLike, as_generator, derive_rng

logger = logging.getLogger("Partitioning")

BRUTE_FORCE_MAX_N = 12
# a brute-force candidate must beat the incumbent by this much to replace it
COST_EPS = 1e-12


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    """Disjoint non-empty groups covering 0..n-1, each with a subsample size r_k >= 1."""

    groups: Tuple[Tuple[int, ...], ...]
    subsamples: Tuple[int, ...]
    n: int

    def __post_init__(self):
        if len(self.groups) != len(self.subsamples):
            raise PartitionError("one subsample size per group is required")
        if not self.groups:
            raise PartitionError("a partition needs at least one group")
        seen = np.zeros(self.n, dtype=bool)
        for k, group in enumerate(self.groups):
            if not group:
                raise PartitionError(f"group {k} is empty")
            for v in group:
                if not 0 <= v < self.n:
                    raise PartitionError(f"node {v} out of range for n={self.n}")
                if seen[v]:
                    raise PartitionError(f"node {v} appears in more than one group")
                seen[v] = True
        if not seen.all():
            raise PartitionError(f"nodes {np.flatnonzero(~seen)[:10].tolist()} are not covered")
        if any(r < 1 for r in self.subsamples):
            raise PartitionError("subsample sizes must be >= 1")
        if self.r > self.n:
            raise PartitionError(f"total sample size {self.r} exceeds n={self.n}")

    @classmethod
    def build(cls, groups: Sequence[Sequence[int]], subsamples: Sequence[int], n: int) -> "Partition":
        groups = tuple(tuple(sorted(int(v) for v in g)) for g in groups)
        subsamples = tuple(int(r) for r in subsamples)
        if all(r == 1 for r in subsamples):
            return SimplePartition(groups, subsamples, n)
        return cls(groups, subsamples, n)

    @classmethod
    def naive(cls, n: int, r: int) -> "Partition":
        """{(V, r)}: naive sampling as a one-group partition."""
        return cls.build([range(n)], [r], n)

    @property
    def r(self) -> int:
        return sum(self.subsamples)

    @property
    def is_simple(self) -> bool:
        return all(r == 1 for r in self.subsamples)

    def sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups])

    def labels(self) -> np.ndarray:
        lab = np.empty(self.n, dtype=int)
        for k, group in enumerate(self.groups):
            lab[list(group)] = k
        return lab

    def canonical(self) -> "Partition":
        """Groups ordered by smallest member (subsample sizes travel with their group)."""
        order = sorted(range(len(self.groups)), key=lambda k: self.groups[k][0])
        return type(self)(tuple(self.groups[k] for k in order), tuple(self.subsamples[k] for k in order), self.n)


class SimplePartition(Partition):
    """Partition with r_k = 1 for every group."""

    def __post_init__(self):
        super().__post_init__()
        if not self.is_simple:
            raise PartitionError("a simple partition has subsample size 1 in every group")

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]], n: int) -> "SimplePartition":
        groups = tuple(tuple(sorted(int(v) for v in g)) for g in groups)
        return cls(groups, (1,) * len(groups), n)

    @classmethod
    def from_labels(cls, labels: Sequence[int], r: Optional[int] = None) -> "SimplePartition":
        labels = np.asarray(labels, dtype=int)
        r = int(labels.max()) + 1 if r is None else r
        return cls.from_groups([np.flatnonzero(labels == k).tolist() for k in range(r)], labels.size)


def _check_over(ga: AssistantGraph, p: Partition):
    if p.n != ga.n:
        raise PartitionError(f"partition covers n={p.n} nodes, assistant graph has n={ga.n}")


def cost(ga: AssistantGraph, p: Partition) -> float:
    """g(P): within-group weight summed over ordered pairs."""
    _check_over(ga, p)
    w = ga.weight
    return float(sum(w[np.ix_(g, g)].sum() for g in p.groups))


def delta_g(ga: AssistantGraph, groups: Sequence[Sequence[int]], node: int, ell: int) -> float:
    """Cost increase when the ungrouped `node` joins group `ell` of a partition in progress."""
    if not 0 <= node < ga.n:
        raise IndexError(f"node {node} out of range for n={ga.n}")
    if not 0 <= ell < len(groups):
        raise IndexError(f"group index {ell} out of range for {len(groups)} groups")
    if any(node in g for g in groups):
        raise PartitionError(f"node {node} is already assigned to a group")
    members = list(groups[ell])
    return 2.0 * float(ga.weight[node, members].sum()) if members else 0.0


# ---------- Greedy ----------
@dataclass(frozen=True)
class GreedyConfig:
    max_rounds: int = 100

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


def _check_r(n: int, r: int):
    if not 1 <= r <= n:
        raise PartitionError(f"r must be in [1, n] (got r={r}, n={n})")


def _group_capacity(n: int, r: int) -> Tuple[int, int]:
    """(floor size, number of groups allowed to hold one extra node)."""
    return n // r, n % r


def _greedy_labels(w: np.ndarray, r: int, rng: np.random.Generator, max_rounds: int,
                   balanced: bool = False) -> Tuple[np.ndarray, List[float]]:
    """
    Round-based greedy assignment over a random node order.

    affinity[v, l] = sum of w[v, j] over members j of group l, kept incrementally, so
    delta_g for (v, l) is 2 * affinity[v, l].
    """
    n = w.shape[0]
    order = rng.permutation(n)
    labels = np.full(n, -1)
    sizes = np.zeros(r, dtype=int)
    affinity = np.zeros((n, r))
    floor_size, extra = _group_capacity(n, r)
    history: List[float] = []

    for round_no in range(1, max_rounds + 1):
        moves = 0
        for v in order:
            old = labels[v]
            if old >= 0:
                affinity[:, old] -= w[:, v]
                sizes[old] -= 1
            delta = 2.0 * affinity[v]
            if balanced:
                at_ceiling = int(np.sum(sizes > floor_size))
                open_ = sizes < floor_size
                if at_ceiling < extra:
                    open_ |= sizes == floor_size
                delta = np.where(open_, delta, np.inf)
            new = int(np.argmin(delta))
            labels[v] = new
            affinity[:, new] += w[:, v]
            sizes[new] += 1
            if new != old:
                moves += 1
        history.append(float(np.sum(w * (labels[:, None] == labels[None, :]))))
        logger.debug(f"greedy round {round_no}: moves={moves} cost={history[-1]:.6g}")
        if round_no > 1 and moves == 0:
            break
    return labels, history


def _fill_empty_groups(w: np.ndarray, labels: np.ndarray, r: int) -> np.ndarray:
    """While a group is empty, move the node of the largest group whose removal saves the most."""
    labels = labels.copy()
    while True:
        sizes = np.bincount(labels, minlength=r)
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            return labels
        donor = int(np.argmax(sizes))
        members = np.flatnonzero(labels == donor)
        gain = w[np.ix_(members, members)].sum(axis=1)
        labels[members[int(np.argmax(gain))]] = int(empty[0])


def greedy_rounds(ga: AssistantGraph, r: int, seed: SeedLike = 0, config: Optional[GreedyConfig] = None,
                  balanced: bool = False) -> Tuple[SimplePartition, List[float]]:
    """Greedy partition plus the cost after every full round."""
    config = config or GreedyConfig()
    _check_r(ga.n, r)
    labels, history = _greedy_labels(ga.weight, r, as_generator(seed), config.max_rounds, balanced)
    labels = _fill_empty_groups(ga.weight, labels, r)
    return SimplePartition.from_labels(labels, r), history


def greedy_partition(ga: AssistantGraph, r: int, seed: SeedLike = 0,
                     config: Optional[GreedyConfig] = None) -> SimplePartition:
    return greedy_rounds(ga, r, seed, config)[0]


def balanced_greedy_partition(ga: AssistantGraph, r: int, seed: SeedLike = 0,
                              config: Optional[GreedyConfig] = None) -> SimplePartition:
    """Greedy restricted to groups below capacity; group sizes end up within one of each other."""
    return greedy_rounds(ga, r, seed, config, balanced=True)[0]


# ---------- SDP relaxation ----------
@dataclass(frozen=True)
class SdpConfig:
    max_nodes: int = 500
    rounding_trials: int = 20
    rank: Optional[int] = None
    min_iter: int = 500
    max_iter: int = 5000
    penalty_start: float = 1.0
    penalty_growth: float = 2.0
    penalty_interval: int = 100
    max_penalty: float = 1e4
    grad_tol: float = 1e-6
    # local-move rounds applied to every rounded partition; 0 keeps the raw rounding
    polish_rounds: int = 100

    def __post_init__(self):
        if self.rounding_trials < 1:
            raise ValueError("rounding_trials must be >= 1")
        if self.polish_rounds < 0:
            raise ValueError("polish_rounds must be >= 0")
        if not 1 <= self.min_iter <= self.max_iter:
            raise ValueError("need 1 <= min_iter <= max_iter")


def _relaxation_objective(w: np.ndarray, V: np.ndarray, floor: float, penalty: float) -> Tuple[float, np.ndarray]:
    """
    F(V) = sum_{i<j} w_ij <v_i, v_j> + penalty/2 * sum_{i!=j} max(0, floor - <v_i, v_j>)^2
    and its gradient. Minimising F maximises the Max-r-Cut relaxation objective.
    """
    G = V @ V.T
    slack = np.maximum(0.0, floor - G)
    np.fill_diagonal(slack, 0.0)
    value = 0.5 * float(np.sum(w * G)) + 0.5 * penalty * float(np.sum(slack ** 2))
    grad = (w - 2.0 * penalty * slack) @ V
    return value, grad


def _project_rows(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    return V / np.where(norms > 0, norms, 1.0)


def solve_relaxation(ga: AssistantGraph, r: int, rng: np.random.Generator,
                     config: Optional[SdpConfig] = None) -> Tuple[np.ndarray, float]:
    """Unit vectors (rows) of a rank-d factorisation, and the final projected-gradient norm."""
    config = config or SdpConfig()
    n, w = ga.n, ga.weight
    d = config.rank or min(n, r + 4)
    floor = -1.0 / (r - 1)
    V = _project_rows(rng.standard_normal((n, d)))
    penalty = config.penalty_start
    value, grad = _relaxation_objective(w, V, floor, penalty)
    step = 1.0 / max(float(np.abs(w).sum(axis=1).max()), 1.0)
    grad_norm = float("inf")
    for it in range(1, config.max_iter + 1):
        if it % config.penalty_interval == 0 and penalty < config.max_penalty:
            penalty = min(penalty * config.penalty_growth, config.max_penalty)
            value, grad = _relaxation_objective(w, V, floor, penalty)
        # tangent component of the gradient on the product of spheres
        tangent = grad - np.sum(grad * V, axis=1, keepdims=True) * V
        grad_norm = float(np.linalg.norm(tangent))
        if it >= config.min_iter and grad_norm < config.grad_tol:
            logger.debug(f"SDP relaxation converged after {it} iterations")
            return V, grad_norm
        for _ in range(30):
            V_try = _project_rows(V - step * tangent)
            value_try, grad_try = _relaxation_objective(w, V_try, floor, penalty)
            if value_try <= value:
                V, value, grad = V_try, value_try, grad_try
                step *= 1.5
                break
            step *= 0.5
    logger.warning(f"SDP relaxation stopped at max_iter={config.max_iter} (gradient norm {grad_norm:.3e})")
    return V, grad_norm


def round_relaxation(V: np.ndarray, r: int, rng: np.random.Generator) -> np.ndarray:
    """Each node joins the nearest of r standard Gaussian directions (maximum inner product)."""
    directions = rng.standard_normal((r, V.shape[1]))
    return np.argmax(V @ directions.T, axis=1)


def _local_moves(w: np.ndarray, labels: np.ndarray, r: int, max_rounds: int) -> np.ndarray:
    """
    Single-node moves to the group of least affinity while one strictly lowers the cost.
    A move never empties a group, so r groups stay non-empty.
    """
    labels = labels.copy()
    affinity = w @ np.eye(r)[labels]
    sizes = np.bincount(labels, minlength=r)
    for _ in range(max_rounds):
        moves = 0
        for v in range(labels.size):
            old = int(labels[v])
            if sizes[old] == 1:
                continue
            new = int(np.argmin(affinity[v]))
            if affinity[v, new] >= affinity[v, old] - COST_EPS:
                continue
            labels[v] = new
            affinity[:, old] -= w[:, v]
            affinity[:, new] += w[:, v]
            sizes[old] -= 1
            sizes[new] += 1
            moves += 1
        if moves == 0:
            break
    return labels


def sdp_partition(ga: AssistantGraph, r: int, seed: SeedLike = 0,
                  config: Optional[SdpConfig] = None) -> SimplePartition:
    config = config or SdpConfig()
    n = ga.n
    _check_r(n, r)
    if n > config.max_nodes:
        raise PartitionError(f"SDP partitioning limited to n <= {config.max_nodes}, got n={n}")
    if r == 1:
        return SimplePartition.from_groups([range(n)], n)
    if r == n:
        return SimplePartition.from_groups([[v] for v in range(n)], n)
    base = int(as_generator(seed).integers(2 ** 63))
    V, _ = solve_relaxation(ga, r, derive_rng(base, "relaxation"), config)
    best, best_cost = None, float("inf")
    for trial in range(config.rounding_trials):
        labels = _fill_empty_groups(ga.weight, round_relaxation(V, r, derive_rng(base, "rounding", trial)), r)
        if config.polish_rounds:
            labels = _local_moves(ga.weight, labels, r, config.polish_rounds)
        candidate = SimplePartition.from_labels(labels, r)
        c = cost(ga, candidate)
        if c < best_cost:
            best, best_cost = candidate, c
    return best


# ---------- Exact optimum ----------
def brute_force_optimal(ga: AssistantGraph, r: int) -> SimplePartition:
    """
    Exhaustive search over restricted-growth strings (node 0 in group 0, new groups opened in
    order). Search order is lexicographic, so the first minimiser found is the smallest
    canonical encoding; partial costs only grow, which allows pruning.
    """
    n = ga.n
    if n > BRUTE_FORCE_MAX_N:
        raise PartitionError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got n={n}")
    _check_r(n, r)
    w = ga.weight.tolist()
    labels = [0] * n
    members: List[List[int]] = [[] for _ in range(r)]
    best = {"cost": float("inf"), "labels": None}

    def extend(v: int, opened: int, partial: float):
        if partial >= best["cost"] - COST_EPS:
            return
        if v == n:
            if opened == r:
                best["cost"], best["labels"] = partial, list(labels)
            return
        if n - v < r - opened:
            return
        wv = w[v]
        for k in range(min(opened + 1, r)):
            added = 2.0 * sum(wv[j] for j in members[k])
            labels[v] = k
            members[k].append(v)
            extend(v + 1, max(opened, k + 1), partial + added)
            members[k].pop()

    extend(0, 0, 0.0)
    return SimplePartition.from_labels(best["labels"], r)


# ---------- Refinement ----------
def refine_to_simple(ga: AssistantGraph, p: Partition, seed: SeedLike = 0,
                     config: Optional[GreedyConfig] = None) -> SimplePartition:
    """Split every group with r_k > 1 into r_k subgroups by greedy partitioning inside the group."""
    _check_over(ga, p)
    base = int(as_generator(seed).integers(2 ** 63))
    groups: List[Sequence[int]] = []
    for k, (group, r_k) in enumerate(zip(p.groups, p.subsamples)):
        if r_k == 1:
            groups.append(group)
            continue
        if r_k > len(group):
            raise PartitionError(f"group {k} has {len(group)} nodes but subsample size {r_k}")
        sub = greedy_partition(ga.subgraph(group), r_k, derive_rng(base, "refine", k), config)
        groups.extend([[group[i] for i in g] for g in sub.groups])
    return SimplePartition.from_groups(groups, p.n)
