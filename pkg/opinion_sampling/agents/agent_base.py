# opinion_sampling/agents/agent_base.py
import logging
from dataclasses import dataclass
from typing import Optional

from opinion_sampling.graph_core import AssistantGraph, SimilarityMatrix, build_assistant_graph
from opinion_sampling.partitioning import GreedyConfig, Partition, SdpConfig
from opinion_sampling.sampling_estimator import (
    MeanVector,
    expected_variance_general,
    expected_variance_simple,
)
from opinion_sampling.utils.rng import derive_seed

logger = logging.getLogger("AgentBase")


@dataclass(frozen=True)
class CellResult:
    method: str
    r: int
    seed: int
    expected_variance: float
    partition: Partition


class MethodAgent:
    """
    One partitioning method. `partition` builds the candidate from an assistant graph;
    `run_cell` evaluates it under the true similarities.
    """

    method = "base"
    # seed stream name; agents sharing a label see identical node orders
    seed_label = "base"
    # partition from perturbed similarities instead of the true ones
    uses_perturbed = False

    def __init__(self, greedy: Optional[GreedyConfig] = None, sdp: Optional[SdpConfig] = None,
                 mu0: float = 0.5):
        self.greedy = greedy or GreedyConfig()
        self.sdp = sdp or SdpConfig()
        self.mu0 = mu0

    def partition(self, ga: AssistantGraph, r: int, seed: int) -> Partition:
        raise NotImplementedError

    def run_cell(self, sim_true: SimilarityMatrix, r: int, master_seed: int, *coords,
                 sim_input: Optional[SimilarityMatrix] = None) -> CellResult:
        seed = derive_seed(master_seed, self.seed_label, r, *coords)
        ga = build_assistant_graph(sim_input if sim_input is not None else sim_true)
        p = self.partition(ga, r, seed)
        if p.is_simple:
            variance = expected_variance_simple(sim_true, p)
        else:
            variance = expected_variance_general(sim_true, MeanVector.constant(sim_true.n, self.mu0), p)
        logger.debug(f"[{self.method}] r={r} coords={coords} E[Var]={variance:.6g}")
        return CellResult(self.method, r, seed, variance, p)
