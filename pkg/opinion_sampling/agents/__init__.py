from opinion_sampling.agents.agent_base import CellResult, MethodAgent
from opinion_sampling.agents.method_agents import AGENT_TYPES, create_agent

__all__ = ["AGENT_TYPES", "CellResult", "MethodAgent", "create_agent"]
