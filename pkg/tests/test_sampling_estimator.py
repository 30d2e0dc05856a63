"""
Variance formulas of the naive and partitioned estimators.

Fixed opinions: Var_S = sum_k (n_k/n)^2 m_k (1 - m_k) / r_k.
Expected over the opinion model: E[Var_S] = g(P) / (2 n^2) for simple partitions, and the
general per-group formula for any partition.
"""

import itertools
from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose

from opinion_sampling.graph_core import SimilarityMatrix, SocialGraph, build_assistant_graph
from opinion_sampling.partitioning import (
    Partition,
    PartitionError,
    SimplePartition,
    balanced_greedy_partition,
    greedy_partition,
)
from opinion_sampling.sampling_estimator import (
    ConsistencyError,
    MeanVector,
    expected_variance_general,
    expected_variance_naive,
    expected_variance_simple,
    fixed_f_variance,
    naive_estimate,
    partitioned_estimate,
    perturb_similarities,
    sample_saving,
    samples_needed,
)
from opinion_sampling.similarity_exact import opinion_similarities
from opinion_sampling.utils.rng import derive_rng
from opinion_sampling.vio_model import OpinionAssignment, VioParams, steady_state_draws

# =============================================================================
# Estimators for fixed opinions
# =============================================================================


@pytest.fixture
def opinions():
    return OpinionAssignment(np.array([1, 1, 0, 1, 0, 0, 0, 1, 1, 0]))


def test_partitioned_estimate_samples_each_group(opinions):
    p = Partition.build([[0, 1, 2, 3], [4, 5, 6, 7, 8, 9]], [2, 3], 10)
    report = partitioned_estimate(opinions, p, seed=4)
    assert len(report.sampled_nodes) == 5
    for k, node in report.sampled_nodes:
        assert node in p.groups[k]


def test_estimators_are_unbiased(opinions):
    p = SimplePartition.from_groups([[0, 1, 2], [3, 4, 5, 6], [7, 8, 9]], 10)
    reps = 4000
    naive = [naive_estimate(opinions, 3, derive_rng(1, i)).estimate for i in range(reps)]
    part = [partitioned_estimate(opinions, p, derive_rng(2, i)).estimate for i in range(reps)]
    truth = opinions.mean()
    assert np.mean(naive) == pytest.approx(truth, abs=4 * np.sqrt(0.25 / 3 / reps))
    assert np.mean(part) == pytest.approx(truth, abs=4 * np.sqrt(fixed_f_variance(opinions, p) / reps))


def test_fixed_f_variance_matches_repeated_sampling(opinions):
    p = SimplePartition.from_groups([[0, 2, 4, 6, 8], [1, 3, 5, 7, 9]], 10)
    est = [partitioned_estimate(opinions, p, derive_rng(3, i)).estimate for i in range(6000)]
    assert np.var(est) == pytest.approx(fixed_f_variance(opinions, p), rel=0.1)


def test_naive_fixed_f_variance(opinions):
    m = opinions.mean()
    assert fixed_f_variance(opinions, Partition.naive(10, 4)) == pytest.approx(m * (1 - m) / 4)


def test_estimate_rejects_wrong_size(opinions):
    with pytest.raises(PartitionError):
        partitioned_estimate(opinions, Partition.naive(9, 2))
    with pytest.raises(ValueError):
        naive_estimate(opinions, 0)


@pytest.mark.parametrize("n", [4, 6, 8])
def test_balanced_partitions_never_worse_than_naive(n):
    """Every balanced simple partition is at least as good as naive, for every opinion vector."""
    rng = np.random.default_rng(n)
    for r in [d for d in range(1, n + 1) if n % d == 0]:
        for _ in range(20):
            order = rng.permutation(n)
            groups = [order[k::r].tolist() for k in range(r)]
            for bits in itertools.product((0, 1), repeat=n):
                m = Fraction(sum(bits), n)
                naive = m * (1 - m) / r
                part = Fraction(0)
                for g in groups:
                    m_k = Fraction(sum(bits[i] for i in g), len(g))
                    part += Fraction(len(g), n) ** 2 * m_k * (1 - m_k)
                assert part <= naive


def test_balanced_check_agrees_with_float_formula():
    f = OpinionAssignment(np.array([1, 0, 1, 1, 0, 0]))
    p = SimplePartition.from_groups([[0, 1, 2], [3, 4, 5]], 6)
    # (1/2)^2 * (2/3)(1/3) * 2
    assert fixed_f_variance(f, p) == pytest.approx(1 / 9)


# =============================================================================
# Expected variance under the opinion model
# =============================================================================


@pytest.mark.parametrize("seed", range(100))
@pytest.mark.parametrize("mu0", [0.5, 0.3])
def test_simple_formula_matches_general(random_similarity, seed, mu0):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 11))
    # similarities consistent with both marginal means
    sim = random_similarity(n, seed=seed, low=0.4)
    r = int(rng.integers(1, n + 1))
    labels = np.concatenate([np.arange(r), rng.integers(r, size=n - r)])
    rng.shuffle(labels)
    p = SimplePartition.from_labels(labels, r)
    general = expected_variance_general(sim, MeanVector.constant(n, mu0), p)
    assert expected_variance_simple(sim, p) == pytest.approx(general, abs=1e-12)


def test_naive_expected_variance_is_one_group_partition(random_similarity):
    sim = random_similarity(8, seed=5)
    for r in (1, 3, 8):
        general = expected_variance_general(sim, MeanVector.constant(8, 0.5), Partition.naive(8, r))
        assert expected_variance_naive(sim, r) == pytest.approx(general, abs=1e-14)


def test_expected_variance_matches_monte_carlo(random_graph):
    g = random_graph(6, seed=41)
    sim, _ = opinion_similarities(g, 0.5)
    p = SimplePartition.from_groups([[0, 3], [1, 4], [2, 5]], 6)
    draws = 10_000
    values = np.array([fixed_f_variance(f, p) for f, _ in steady_state_draws(VioParams(g, 0.5), draws, seed=2)])
    sd = values.std() / np.sqrt(draws)
    assert abs(values.mean() - expected_variance_simple(sim, p)) < 4 * sd + 1e-12


def test_inconsistent_similarity_rejected():
    sim = np.eye(2)
    with pytest.raises(ConsistencyError, match="inconsistent"):
        expected_variance_general(SimilarityMatrix(sim), MeanVector.constant(2, 0.9), Partition.naive(2, 1))


def test_mean_vector_validation():
    with pytest.raises(ValueError):
        MeanVector(np.array([0.2, 1.3]))
    assert MeanVector.constant(3, 0.4).mu.tolist() == [0.4, 0.4, 0.4]


def test_simple_formula_requires_simple_partition(random_similarity):
    with pytest.raises(PartitionError):
        expected_variance_simple(random_similarity(4, seed=1), Partition.naive(4, 2))


# =============================================================================
# Perturbation and sample-size saving
# =============================================================================


def _path_graph(n):
    return SocialGraph.from_edges(n, [(i, i + 1, 1.0) for i in range(n - 1)], inward=0.5, undirected=True)


def test_zero_noise_perturbation_is_identity(random_similarity):
    sim = random_similarity(5, seed=2)
    out = perturb_similarities(sim, _path_graph(5), seed=1, base_noise=0.0, relative_noise=0.0,
                               mask_disconnected=False)
    assert_allclose(out.sigma, sim.sigma)


def test_perturbation_masks_disconnected_pairs(random_similarity):
    sim = random_similarity(5, seed=3)
    g = _path_graph(5)
    out = perturb_similarities(sim, g, seed=1)
    connected = g.connected_pairs()
    off = ~np.eye(5, dtype=bool)
    assert_allclose(out.sigma[off & ~connected], 0.5)
    width = 0.1 + 0.3 * sim.sigma
    assert (np.abs(out.sigma - sim.sigma)[off & connected] <= width[off & connected] + 1e-12).all()
    assert out.sigma.min() >= 0.0 and out.sigma.max() <= 1.0


def test_perturbation_is_seeded(random_similarity):
    sim = random_similarity(6, seed=4)
    g = _path_graph(6)
    assert_allclose(perturb_similarities(sim, g, seed=7).sigma, perturb_similarities(sim, g, seed=7).sigma)


def test_samples_needed_and_saving(random_similarity):
    sim = random_similarity(20, seed=6)
    ga = build_assistant_graph(sim)
    target = expected_variance_naive(sim, 8)
    r = samples_needed(sim, target, lambda rr: greedy_partition(ga, rr, seed=1), r_max=8)
    assert r is not None and r <= 8
    assert sample_saving(r, 8) == pytest.approx(1 - r / 8)
    assert np.isnan(sample_saving(None, 8))


def test_samples_needed_unreachable_target(random_similarity):
    sim = random_similarity(6, seed=7)
    ga = build_assistant_graph(sim)
    assert samples_needed(sim, 0.0, lambda rr: balanced_greedy_partition(ga, rr), r_max=3) is None
