# opinion_sampling/sampling_estimator.py
"""
Naive and partitioned estimators of the average opinion, their sample variance for fixed
opinions, the expected sample variance E_M[Var_S] under a similarity model, and the
similarity-perturbation protocol used to test robustness.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from opinion_sampling.graph_core import SimilarityMatrix, SocialGraph, build_assistant_graph
from opinion_sampling.partitioning import Partition, PartitionError, cost
from opinion_sampling.utils.rng import SeedLike, as_generator
from opinion_sampling.vio_model import OpinionAssignment

logger = logging.getLogger("SamplingEstimator")

# slack allowed on the Frechet bounds of E[f_i f_j]
CONSISTENCY_TOL = 1e-9


class ConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    sampled_nodes: List[Tuple[int, int]]


@dataclass(frozen=True, eq=False)
class MeanVector:
    mu: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if mu.size == 0 or mu.min() < 0.0 or mu.max() > 1.0:
            raise ValueError("marginal means must lie in [0, 1]")
        mu.flags.writeable = False
        object.__setattr__(self, "mu", mu)

    @classmethod
    def constant(cls, n: int, mu0: float) -> "MeanVector":
        return cls(np.full(n, float(mu0)))

    @property
    def n(self) -> int:
        return self.mu.size


def _check_sizes(n_data: int, p: Partition):
    if p.n != n_data:
        raise PartitionError(f"partition covers n={p.n} nodes, data has n={n_data}")


# ---------- Estimators ----------
def naive_estimate(f: OpinionAssignment, r: int, seed: SeedLike = 0) -> EstimateReport:
    """Average of r uniform draws with replacement."""
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    rng = as_generator(seed)
    picks = rng.integers(f.n, size=r)
    return EstimateReport(float(f.values[picks].mean()), [(0, int(v)) for v in picks])


def partitioned_estimate(f: OpinionAssignment, p: Partition, seed: SeedLike = 0) -> EstimateReport:
    """Per-group naive estimates combined with weights n_k / n."""
    _check_sizes(f.n, p)
    rng = as_generator(seed)
    estimate = 0.0
    sampled: List[Tuple[int, int]] = []
    for k, (group, r_k) in enumerate(zip(p.groups, p.subsamples)):
        members = np.asarray(group)
        picks = members[rng.integers(members.size, size=r_k)]
        estimate += members.size / p.n * float(f.values[picks].mean())
        sampled.extend((k, int(v)) for v in picks)
    return EstimateReport(estimate, sampled)


# ---------- Variances ----------
def fixed_f_variance(f: OpinionAssignment, p: Partition) -> float:
    """Var_S of the partitioned estimator for fixed binary opinions."""
    _check_sizes(f.n, p)
    total = 0.0
    for group, r_k in zip(p.groups, p.subsamples):
        m_k = float(f.values[list(group)].mean())
        total += (len(group) / p.n) ** 2 / r_k * (m_k - m_k * m_k)
    return total


def expected_variance_simple(sim: SimilarityMatrix, p: Partition) -> float:
    """E_M[Var_S] = g(P) / (2 n^2) for a simple partition."""
    if not p.is_simple:
        raise PartitionError("expected_variance_simple needs a simple partition")
    _check_sizes(sim.n, p)
    return cost(build_assistant_graph(sim), p) / (2.0 * p.n ** 2)


def expected_variance_general(sim: SimilarityMatrix, mu: MeanVector, p: Partition) -> float:
    """
    E_M[Var_S] = sum_k (n_k/n)^2 / r_k * E_M[v_k], with
    E_M[v_k] = mean_k(mu) - (1/n_k^2) [sum_i mu_i + sum_{i != j} E[f_i f_j]],
    E[f_i f_j] = (sigma_ij + mu_i + mu_j - 1) / 2 for binary opinions.
    """
    _check_sizes(sim.n, p)
    if mu.n != sim.n:
        raise ValueError(f"mean vector has n={mu.n}, similarity matrix has n={sim.n}")
    m = mu.mu
    joint = (sim.sigma + m[:, None] + m[None, :] - 1.0) / 2.0
    lower = np.maximum(0.0, m[:, None] + m[None, :] - 1.0)
    upper = np.minimum(m[:, None], m[None, :])
    off = ~np.eye(sim.n, dtype=bool)
    bad = off & ((joint < lower - CONSISTENCY_TOL) | (joint > upper + CONSISTENCY_TOL))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ConsistencyError(
            f"similarity {sim.sigma[i, j]:.6g} is inconsistent with means {m[i]:.6g}, {m[j]:.6g} "
            f"for pair ({i}, {j})"
        )
    total = 0.0
    for group, r_k in zip(p.groups, p.subsamples):
        idx = list(group)
        n_k = len(idx)
        block = joint[np.ix_(idx, idx)]
        second = m[idx].sum() + block.sum() - np.trace(block)
        ev_k = m[idx].sum() / n_k - second / n_k ** 2
        total += (n_k / p.n) ** 2 / r_k * ev_k
    # ev_k equals sum_{i != j in group} (1 - sigma_ij) / (2 n_k^2) >= 0; only roundoff goes below 0
    return max(total, 0.0)


def expected_variance_naive(sim: SimilarityMatrix, r: int) -> float:
    """E_M[Var_S] of naive sampling with r draws: g({V}) / (2 n^2 r)."""
    n = sim.n
    return float((1.0 - sim.sigma).sum()) / (2.0 * n ** 2 * r)


# ---------- Perturbation ----------
def perturb_similarities(sim: SimilarityMatrix, g: SocialGraph, seed: SeedLike = 0,
                         base_noise: float = 0.1, relative_noise: float = 0.3,
                         disconnected_value: float = 0.5, mask_disconnected: bool = True) -> SimilarityMatrix:
    """
    Disconnected pairs lose their information (set to `disconnected_value`); every connected pair
    gets noise uniform in +-(base_noise + relative_noise * sigma_ij), clamped to [0, 1].
    """
    if sim.n != g.n:
        raise ValueError(f"similarity matrix has n={sim.n}, graph has n={g.n}")
    rng = as_generator(seed)
    n = sim.n
    iu, ju = np.triu_indices(n, k=1)
    s = sim.sigma[iu, ju]
    half_width = base_noise + relative_noise * s
    noise = (2.0 * rng.random(s.size) - 1.0) * half_width
    # median{0, x, 1} is a clamp to [0, 1]
    perturbed = np.clip(s + noise, 0.0, 1.0)
    if mask_disconnected:
        connected = g.connected_pairs()[iu, ju]
        perturbed = np.where(connected, perturbed, disconnected_value)
    out = np.eye(n)
    out[iu, ju] = perturbed
    out[ju, iu] = perturbed
    return SimilarityMatrix(out)


# ---------- Sample-size saving ----------
def samples_needed(sim: SimilarityMatrix, target: float, partitioner: Callable[[int], Partition],
                   r_max: Optional[int] = None) -> Optional[int]:
    """Smallest r whose partition (from `partitioner(r)`) reaches E_M[Var_S] <= target."""
    r_max = r_max or sim.n
    for r in range(1, r_max + 1):
        p = partitioner(r)
        if expected_variance_simple(sim, p) <= target:
            return r
    logger.debug(f"target variance {target:.3e} not reached with r <= {r_max}")
    return None


def sample_saving(r_method: Optional[int], r_naive: int) -> float:
    """1 - r_method / r_naive; NaN when the method never reaches the target."""
    if r_method is None:
        return float("nan")
    return 1.0 - r_method / float(r_naive)
