import itertools

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from opinion_sampling.graph_core import AssistantGraph, build_assistant_graph
from opinion_sampling.partitioning import (
    GreedyConfig,
    Partition,
    PartitionError,
    SdpConfig,
    SimplePartition,
    balanced_greedy_partition,
    brute_force_optimal,
    cost,
    delta_g,
    greedy_partition,
    greedy_rounds,
    refine_to_simple,
    _local_moves,
    sdp_partition,
)
from opinion_sampling.sampling_estimator import MeanVector, expected_variance_general
from opinion_sampling.similarity_exact import opinion_similarities


def _two_cliques(size: int) -> AssistantGraph:
    """Zero weight inside each clique, unit weight across."""
    labels = np.repeat([0, 1], size)
    return AssistantGraph((labels[:, None] != labels[None, :]).astype(float))


def _random_partition(n: int, rng: np.random.Generator) -> Partition:
    groups = max(1, int(rng.integers(1, n // 2 + 1)))
    labels = np.concatenate([np.arange(groups), rng.integers(groups, size=n - groups)])
    rng.shuffle(labels)
    members = [np.flatnonzero(labels == k).tolist() for k in range(groups)]
    subsamples = [int(rng.integers(1, len(m) + 1)) for m in members]
    return Partition.build(members, subsamples, n)


def _graph_assistant(random_graph, seed: int, n: int = 8) -> AssistantGraph:
    sim, _ = opinion_similarities(random_graph(n, seed=seed), 0.5)
    return build_assistant_graph(sim)


# ---------------------------------------------------------------------------
# Partition types
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "groups, subsamples, message",
    [
        ([[0, 1], [1, 2]], [1, 1], "more than one group"),
        ([[0, 1]], [1], "not covered"),
        ([[0, 1, 2], []], [1, 1], "empty"),
        ([[0, 1, 2]], [0], ">= 1"),
        ([[0], [1, 2]], [1, 3], "exceeds n"),
        ([[0, 1, 5]], [1], "out of range"),
    ],
)
def test_partition_validation(groups, subsamples, message):
    with pytest.raises(PartitionError, match=message):
        Partition(tuple(map(tuple, groups)), tuple(subsamples), 3)


def test_build_returns_simple_partition_when_possible():
    assert isinstance(Partition.build([[2, 0], [1]], [1, 1], 3), SimplePartition)
    assert not isinstance(Partition.build([[2, 0], [1]], [2, 1], 3), SimplePartition)
    with pytest.raises(PartitionError):
        SimplePartition(((0, 1), (2,)), (2, 1), 3)


def test_labels_and_canonical_order():
    p = Partition.build([[3, 4], [0, 2], [1]], [1, 2, 1], 5)
    assert p.labels().tolist() == [1, 2, 1, 0, 0]
    c = p.canonical()
    assert c.groups == ((0, 2), (1,), (3, 4)) and c.subsamples == (2, 1, 1)


def test_cost_uses_ordered_pairs():
    ga = AssistantGraph(np.array([[0.0, 0.5, 0.2], [0.5, 0.0, 0.1], [0.2, 0.1, 0.0]]))
    p = SimplePartition.from_groups([[0, 1], [2]], 3)
    assert cost(ga, p) == pytest.approx(1.0)


def test_delta_g():
    ga = AssistantGraph(np.array([[0.0, 0.5, 0.2], [0.5, 0.0, 0.1], [0.2, 0.1, 0.0]]))
    groups = [[0], [1]]
    assert delta_g(ga, groups, 2, 0) == pytest.approx(0.4)
    assert delta_g(ga, groups, 2, 1) == pytest.approx(0.2)
    assert delta_g(ga, [[0], []], 2, 1) == 0.0
    with pytest.raises(IndexError):
        delta_g(ga, groups, 3, 0)
    with pytest.raises(IndexError):
        delta_g(ga, groups, 2, 2)
    with pytest.raises(PartitionError):
        delta_g(ga, groups, 1, 0)


# ---------------------------------------------------------------------------
# Greedy
# ---------------------------------------------------------------------------


def test_greedy_recovers_cliques():
    p = greedy_partition(_two_cliques(4), 2, seed=3)
    assert p.canonical().groups == ((0, 1, 2, 3), (4, 5, 6, 7))
    assert cost(_two_cliques(4), p) == 0.0


@pytest.mark.parametrize("seed", range(100))
def test_greedy_never_worse_than_naive(random_similarity, seed):
    n = 4 + seed % 9
    r = 1 + seed % n
    ga = build_assistant_graph(random_similarity(n, seed=seed))
    p = greedy_partition(ga, r, seed=seed)
    assert len(p.groups) == r
    naive_cost = ga.weight.sum() / r
    assert cost(ga, p) <= naive_cost + 1e-12


def test_greedy_round_costs_do_not_increase(random_similarity):
    ga = build_assistant_graph(random_similarity(30, seed=1))
    p, history = greedy_rounds(ga, 5, seed=2)
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
    assert history[-1] == pytest.approx(cost(ga, p))


def test_greedy_is_deterministic_per_seed(random_similarity):
    ga = build_assistant_graph(random_similarity(25, seed=4))
    assert greedy_partition(ga, 4, seed=9) == greedy_partition(ga, 4, seed=9)


def test_greedy_round_cap(random_similarity):
    ga = build_assistant_graph(random_similarity(20, seed=5))
    _, history = greedy_rounds(ga, 3, seed=1, config=GreedyConfig(max_rounds=1))
    assert len(history) == 1


def test_greedy_r_bounds(random_similarity):
    ga = build_assistant_graph(random_similarity(5, seed=6))
    for r in (0, 6):
        with pytest.raises(PartitionError):
            greedy_partition(ga, r)
    assert greedy_partition(ga, 5).sizes().tolist() == [1] * 5
    assert greedy_partition(ga, 1).groups == ((0, 1, 2, 3, 4),)


def test_greedy_fills_empty_groups():
    # all-zero weights send every node to group 0 in the first pass
    ga = AssistantGraph(np.zeros((6, 6)))
    p = greedy_partition(ga, 3, seed=0)
    assert len(p.groups) == 3 and all(len(g) >= 1 for g in p.groups)


@pytest.mark.parametrize("n, r", [(10, 3), (12, 4), (17, 5), (9, 9)])
def test_balanced_group_sizes(random_similarity, n, r):
    p = balanced_greedy_partition(build_assistant_graph(random_similarity(n, seed=n)), r, seed=1)
    sizes = p.sizes()
    assert len(sizes) == r and sizes.max() - sizes.min() <= 1


def test_greedy_beats_random_balanced_partition(random_graph):
    rng = np.random.default_rng(0)
    wins = 0
    for trial in range(200):
        ga = _graph_assistant(random_graph, 1000 + trial)
        p = greedy_partition(ga, 3, seed=trial)
        assert cost(ga, brute_force_optimal(ga, 3)) <= cost(ga, p) + 1e-12
        baseline = SimplePartition.from_labels(rng.permutation(np.arange(8) % 3), 3)
        wins += cost(ga, p) <= cost(ga, baseline) + 1e-12
    assert wins >= 190


# ---------------------------------------------------------------------------
# SDP and exhaustive search
# ---------------------------------------------------------------------------


def test_sdp_recovers_cliques():
    ga = _two_cliques(3)
    p = sdp_partition(ga, 2, seed=4)
    assert p.canonical().groups == ((0, 1, 2), (3, 4, 5))


def test_sdp_edge_cases(random_similarity):
    ga = build_assistant_graph(random_similarity(6, seed=7))
    assert sdp_partition(ga, 1).groups == ((0, 1, 2, 3, 4, 5),)
    assert len(sdp_partition(ga, 6).groups) == 6
    with pytest.raises(PartitionError, match="n <= 3"):
        sdp_partition(ga, 2, config=SdpConfig(max_nodes=3))


def test_sdp_is_deterministic_per_seed(random_similarity):
    ga = build_assistant_graph(random_similarity(12, seed=8))
    cfg = SdpConfig(max_iter=600)
    assert sdp_partition(ga, 3, seed=5, config=cfg) == sdp_partition(ga, 3, seed=5, config=cfg)


def test_sdp_best_rounding_close_to_optimum(random_graph):
    within = 0
    for trial in range(100):
        ga = _graph_assistant(random_graph, 2000 + trial)
        r = 2 + trial % 2
        p = sdp_partition(ga, r, seed=trial, config=SdpConfig(max_iter=1000))
        within += cost(ga, p) <= 1.25 * cost(ga, brute_force_optimal(ga, r))
    assert within >= 90


def test_local_moves_reach_single_move_optimum(random_similarity):
    ga = build_assistant_graph(random_similarity(20, seed=11))
    start = np.arange(20) % 4
    labels = _local_moves(ga.weight, start, 4, max_rounds=100)
    assert np.bincount(labels, minlength=4).min() >= 1
    p = SimplePartition.from_labels(labels, 4)
    assert cost(ga, p) <= cost(ga, SimplePartition.from_labels(start, 4)) + 1e-12
    affinity = ga.weight @ np.eye(4)[labels]
    sizes = np.bincount(labels, minlength=4)
    for v in range(20):
        if sizes[labels[v]] > 1:
            assert affinity[v].min() >= affinity[v, labels[v]] - 1e-12


def test_sdp_polish_never_hurts(random_similarity):
    ga = build_assistant_graph(random_similarity(24, seed=12))
    raw = sdp_partition(ga, 4, seed=3, config=SdpConfig(max_iter=600, polish_rounds=0))
    polished = sdp_partition(ga, 4, seed=3, config=SdpConfig(max_iter=600))
    assert cost(ga, polished) <= cost(ga, raw) + 1e-12
    with pytest.raises(ValueError):
        SdpConfig(polish_rounds=-1)


def test_brute_force_matches_enumeration(random_similarity):
    ga = build_assistant_graph(random_similarity(6, seed=9))
    best = min(
        cost(ga, SimplePartition.from_labels(labels, 3))
        for labels in itertools.product(range(3), repeat=6)
        if len(set(labels)) == 3
    )
    assert cost(ga, brute_force_optimal(ga, 3)) == pytest.approx(best, abs=1e-12)


def test_brute_force_tie_break_is_lexicographic():
    ga = AssistantGraph(np.zeros((4, 4)))
    assert brute_force_optimal(ga, 2).labels().tolist() == [0, 0, 0, 1]


@pytest.mark.parametrize("seed", range(12))
def test_brute_force_dominates_heuristics(random_similarity, seed):
    n = 4 + seed % 6
    r = 2 + seed % 3
    ga = build_assistant_graph(random_similarity(n, seed=200 + seed))
    best = cost(ga, brute_force_optimal(ga, r))
    for p in (
        greedy_partition(ga, r, seed=seed),
        balanced_greedy_partition(ga, r, seed=seed),
        sdp_partition(ga, r, seed=seed, config=SdpConfig(max_iter=800)),
    ):
        assert best <= cost(ga, p) + 1e-12


def test_brute_force_size_cap():
    with pytest.raises(PartitionError, match="n <= 12"):
        brute_force_optimal(AssistantGraph(np.zeros((13, 13))), 2)


# ---------------------------------------------------------------------------
# Refinement of general partitions
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(100))
def test_refinement_never_increases_expected_variance(random_similarity, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 13))
    sim = random_similarity(n, seed=300 + seed)
    ga = build_assistant_graph(sim)
    p = _random_partition(n, rng)
    refined = refine_to_simple(ga, p, seed=seed)
    assert refined.is_simple and refined.r == p.r
    mu = MeanVector.constant(n, 0.5)
    assert expected_variance_general(sim, mu, refined) <= expected_variance_general(sim, mu, p) + 1e-12


def test_refinement_keeps_simple_groups(random_similarity):
    ga = build_assistant_graph(random_similarity(5, seed=3))
    p = Partition.build([[0, 1], [2, 3, 4]], [1, 2], 5)
    refined = refine_to_simple(ga, p, seed=1)
    assert (0, 1) in refined.groups
    assert_array_equal(np.sort(refined.sizes()), [1, 2, 2])
