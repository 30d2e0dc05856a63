# opinion_sampling/agents/method_agents.py
from typing import Dict, Type

from opinion_sampling.agents.agent_base import MethodAgent
from opinion_sampling.graph_core import AssistantGraph
from opinion_sampling.partitioning import (
    Partition,
    balanced_greedy_partition,
    brute_force_optimal,
    greedy_partition,
    sdp_partition,
)

class NaiveAgent(MethodAgent):
    method = "naive"
    seed_label = "naive"

    def partition(self, ga: AssistantGraph, r: int, seed: int) -> Partition:
        return Partition.naive(ga.n, r)


class GreedyAgent(MethodAgent):
    method = "greedy"
    seed_label = "greedy"

    def partition(self, ga: AssistantGraph, r: int, seed: int) -> Partition:
        return greedy_partition(ga, r, seed, self.greedy)


class PerturbedGreedyAgent(GreedyAgent):
    method = "greedy_p"
    seed_label = "greedy"
    uses_perturbed = True


class BalancedGreedyAgent(MethodAgent):
    method = "balanced"
    seed_label = "balanced"

    def partition(self, ga: AssistantGraph, r: int, seed: int) -> Partition:
        return balanced_greedy_partition(ga, r, seed, self.greedy)


class SdpAgent(MethodAgent):
    method = "sdp"
    seed_label = "sdp"

    def partition(self, ga: AssistantGraph, r: int, seed: int) -> Partition:
        return sdp_partition(ga, r, seed, self.sdp)


class BruteForceAgent(MethodAgent):
    method = "bruteforce"
    seed_label = "bruteforce"

    def partition(self, ga: AssistantGraph, r: int, seed: int) -> Partition:
        return brute_force_optimal(ga, r)


AGENT_TYPES: Dict[str, Type[MethodAgent]] = {
    cls.method: cls
    for cls in (NaiveAgent, GreedyAgent, PerturbedGreedyAgent, BalancedGreedyAgent, SdpAgent, BruteForceAgent)
}


def create_agent(method: str, **kwargs) -> MethodAgent:
    try:
        agent_cls = AGENT_TYPES[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(AGENT_TYPES)}") from None
    return agent_cls(**kwargs)
