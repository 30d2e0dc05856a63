# opinion_sampling/experiment.py
"""
Config-driven desk-scale experiments.

A job is one graph: (sweep parameter, replicate). Every job computes exact similarities once
and evaluates every (method, r) cell on them. Seeds are derived from the master seed and
cell coordinates (method, r, replicate), so a job produces the same rows whichever worker runs
it, and every value of a sweep sees the same graph draw and node orders.
"""

import dataclasses
import logging
import math
import time
from concurrent import futures
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import yaml
from humanfriendly import format_timespan
from tqdm import tqdm

from opinion_sampling.agents import AGENT_TYPES, create_agent
from opinion_sampling.graph_core import (
    GraphError,
    NodeValueSpec,
    PlantedPartitionConfig,
    SocialGraph,
    build_assistant_graph,
    generate_planted_partition,
)
from opinion_sampling.graph_io import read_graph
from opinion_sampling.partitioning import GreedyConfig, SdpConfig
from opinion_sampling.sampling_estimator import (
    expected_variance_naive,
    perturb_similarities,
    sample_saving,
    samples_needed,
)
from opinion_sampling.similarity_exact import SolverConfig, opinion_similarities
from opinion_sampling.utils.rng import derive_rng, derive_seed
from opinion_sampling.utils.serialization import write_csv

logger = logging.getLogger("ExperimentRunner")

KINDS = ("small-graph", "ph-pl-sweep", "inward-sweep", "perturb", "sample-saving")
DEFAULT_SWEEPS = {
    "ph-pl-sweep": (1e2, 1e3, 1e4, 1e5),
    "inward-sweep": (0.05, 0.1, 0.2, 0.4, 0.8),
}
RESULT_HEADER = ["experiment", "method", "r", "replicate", "seed", "param",
                 "expected_variance", "improvement_vs_naive"]
SAVING_HEADER = ["experiment", "method", "r_naive", "replicate", "seed", "param",
                 "target_variance", "r_method", "sample_saving"]
_LIST_FIELDS = {"methods": str, "r_values": int, "param_values": float}

TASK_QUEUED, TASK_RUNNING, TASK_SUCCEEDED, TASK_FAILED = "queued", "running", "succeeded", "failed"


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid experiment config:\n  - " + "\n  - ".join(self.problems))


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "small-graph"
    # graph
    n: int = 100
    k: int = 20
    p_high: float = 0.9
    p_low: float = 0.01
    graph_path: Optional[str] = None
    meta_path: Optional[str] = None
    # model
    mu0: float = 0.5
    lambda_spec: str = "1"
    inward_spec: str = "uniform:0:0.01"
    # methods and cells
    methods: Tuple[str, ...] = ("naive", "greedy")
    r_values: Tuple[int, ...] = (10,)
    param_values: Tuple[float, ...] = ()
    replicates: int = 20
    seed: int = 0
    out: str = "results.csv"
    workers: int = 1
    # solvers
    tol: float = 1e-10
    max_sweeps: int = 10_000
    q_method: str = "iterative"
    schedule: str = "auto"
    greedy_max_rounds: int = 100
    sdp_rounding_trials: int = 20
    sdp_max_iter: int = 5000
    # perturbation protocol
    base_noise: float = 0.1
    relative_noise: float = 0.3
    mask_disconnected: bool = True

    def sweep_values(self) -> Tuple[Optional[float], ...]:
        if self.kind in DEFAULT_SWEEPS:
            return tuple(self.param_values) or DEFAULT_SWEEPS[self.kind]
        return (None,)

    def problems(self) -> List[str]:
        found = []
        if self.kind not in KINDS:
            found.append(f"kind must be one of {', '.join(KINDS)} (got {self.kind!r})")
        if not self.methods:
            found.append("methods must not be empty")
        for m in self.methods:
            if m not in AGENT_TYPES:
                found.append(f"unknown method {m!r}; choose from {', '.join(sorted(AGENT_TYPES))}")
        if "greedy_p" in self.methods and self.kind != "perturb":
            found.append("method greedy_p is only available in the perturb experiment")
        if self.kind == "sample-saving" and all(m == "naive" for m in self.methods):
            found.append("sample-saving needs at least one method other than naive")
        if not self.r_values:
            found.append("r_values must not be empty")
        if any(r < 1 for r in self.r_values):
            found.append("r values must be >= 1")
        if self.graph_path is None:
            if any(r > self.n for r in self.r_values):
                found.append(f"r values must not exceed n={self.n}")
            if "bruteforce" in self.methods and self.n > 12:
                found.append(f"bruteforce requires n <= 12 (got n={self.n})")
            try:
                PlantedPartitionConfig(self.n, self.k, self.p_high, self.p_low, 0)
            except GraphError as e:
                found.append(f"graph parameters: {e}")
        elif self.kind == "ph-pl-sweep":
            found.append("ph-pl-sweep generates its graphs; graph_path must be unset")
        elif not Path(self.graph_path).exists():
            found.append(f"graph_path {self.graph_path} does not exist")
        if self.kind == "ph-pl-sweep" and any(v < 1 for v in self.sweep_values()):
            found.append("p_high/p_low ratios must be >= 1")
        if self.kind == "inward-sweep" and any(not 0 < v <= 1 for v in self.sweep_values()):
            found.append("swept inward probabilities must be in (0, 1]")
        for name in ("lambda_spec", "inward_spec"):
            try:
                NodeValueSpec.parse(getattr(self, name))
            except GraphError as e:
                found.append(f"{name}: {e}")
        if not 0.0 <= self.mu0 <= 1.0:
            found.append(f"mu0 must be in [0, 1] (got {self.mu0})")
        if self.replicates < 1:
            found.append("replicates must be >= 1")
        if self.workers < 1:
            found.append("workers must be >= 1")
        try:
            self.solver()
        except ValueError as e:
            found.append(f"solver: {e}")
        if self.seed < 0:
            found.append("seed must be non-negative")
        if self.greedy_max_rounds < 1 or self.sdp_rounding_trials < 1 or self.sdp_max_iter < 1:
            found.append("greedy_max_rounds, sdp_rounding_trials and sdp_max_iter must be >= 1")
        if self.base_noise < 0 or self.relative_noise < 0:
            found.append("noise widths must be non-negative")
        return found

    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, max_sweeps=self.max_sweeps, method=self.q_method, schedule=self.schedule)

    def agent_kwargs(self) -> Dict:
        return {
            "greedy": GreedyConfig(max_rounds=self.greedy_max_rounds),
            "sdp": SdpConfig(rounding_trials=self.sdp_rounding_trials,
                             max_iter=self.sdp_max_iter, min_iter=min(500, self.sdp_max_iter)),
            "mu0": self.mu0,
        }


# ---------- Loading ----------
_STRING_FIELDS = ("kind", "lambda_spec", "inward_spec", "graph_path", "meta_path", "out", "q_method", "schedule")


def _scalar(cast, raw):
    if cast is str:
        return str(raw).strip()
    value = yaml.safe_load(raw) if isinstance(raw, str) else raw
    if cast is bool:
        if not isinstance(value, bool):
            raise ValueError(f"expected true/false, got {raw!r}")
        return value
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {raw!r}")
    if cast is int:
        if isinstance(value, float):
            if not value.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}")
            return int(value)
        try:
            return int(value)
        except ValueError:
            as_float = float(value)
            if not as_float.is_integer():
                raise
            return int(as_float)
    # PyYAML reads exponents without a dot ("1e-10") as strings
    return float(value)


def _coerce(key: str, raw):
    if key in _LIST_FIELDS:
        items = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
        return tuple(_scalar(_LIST_FIELDS[key], str(item).strip()) for item in items if str(item).strip())
    if key in _STRING_FIELDS:
        return None if raw is None else _scalar(str, raw)
    default = next(f.default for f in dataclasses.fields(ExperimentConfig) if f.name == key)
    return _scalar(type(default), raw)


def parse_config_text(text: str) -> Dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected key=value, got {raw.strip()!r}"])
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, object]] = None,
                **forced) -> ExperimentConfig:
    """File values, then `overrides` (e.g. from --key value flags), then `forced`."""
    raw: Dict[str, object] = {}
    if path:
        try:
            raw.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
        except OSError as e:
            raise ConfigError([f"cannot read config {path}: {e}"]) from e
    for key, value in (overrides or {}).items():
        raw[key.replace("-", "_")] = value
    raw.update(forced)

    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    problems = [f"unknown config key {key!r}" for key in raw if key not in known]
    values = {}
    for key, value in raw.items():
        if key not in known:
            continue
        try:
            values[key] = _coerce(key, value)
        except (ValueError, TypeError, yaml.YAMLError):
            problems.append(f"cannot parse {key}={value!r}")
    if problems:
        raise ConfigError(problems)
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as e:
        raise ConfigError([str(e)]) from e
    problems = cfg.problems()
    if problems:
        raise ConfigError(problems)
    return cfg


# ---------- Jobs ----------
def _job_graph(cfg: ExperimentConfig, param: Optional[float], replicate: int) -> SocialGraph:
    # one graph seed per replicate, shared across the sweep, so sweeps compare like with like
    graph_seed = derive_seed(cfg.seed, "graph", replicate)
    inward_spec = cfg.inward_spec
    if cfg.kind == "inward-sweep":
        inward_spec = NodeValueSpec.constant(param)
    if cfg.graph_path:
        g = read_graph(cfg.graph_path, cfg.meta_path)
        if cfg.kind == "inward-sweep":
            g = SocialGraph(g.adjacency, g.lam, inward_spec.draw(g.n, derive_rng(graph_seed, "inward")))
        return g
    p_low = cfg.p_high / param if cfg.kind == "ph-pl-sweep" else cfg.p_low
    pp = PlantedPartitionConfig(cfg.n, cfg.k, cfg.p_high, p_low, graph_seed)
    g, _ = generate_planted_partition(pp, cfg.lambda_spec, inward_spec)
    return g


def _param_text(param: Optional[float]) -> str:
    return "" if param is None else repr(float(param))


def run_job(cfg: ExperimentConfig, param_index: int, replicate: int) -> List[tuple]:
    """All rows for one (param, replicate) graph."""
    param = cfg.sweep_values()[param_index]
    g = _job_graph(cfg, param, replicate)
    for r in cfg.r_values:
        if r > g.n:
            raise ValueError(f"r={r} exceeds n={g.n}")
    sim, _ = opinion_similarities(g, cfg.mu0, cfg.solver())
    perturbed = None
    if cfg.kind == "perturb":
        perturbed = perturb_similarities(
            sim, g, derive_rng(cfg.seed, "perturb", param_index, replicate),
            base_noise=cfg.base_noise, relative_noise=cfg.relative_noise,
            mask_disconnected=cfg.mask_disconnected,
        )
    agents = [create_agent(m, **cfg.agent_kwargs()) for m in cfg.methods]
    if cfg.kind == "sample-saving":
        return _saving_rows(cfg, agents, sim, param_index, param, replicate)

    rows = []
    for m_index, agent in enumerate(agents):
        for r_index, r in enumerate(cfg.r_values):
            naive = expected_variance_naive(sim, r)
            result = agent.run_cell(sim, r, cfg.seed, replicate,
                                    sim_input=perturbed if agent.uses_perturbed else None)
            improvement = 1.0 - result.expected_variance / naive if naive > 0 else 0.0
            rows.append(((param_index, replicate, m_index, r_index),
                         (cfg.kind, agent.method, r, replicate, result.seed, _param_text(param),
                          result.expected_variance, improvement)))
    return rows


def _saving_rows(cfg, agents, sim, param_index, param, replicate) -> List[tuple]:
    ga = build_assistant_graph(sim)
    rows = []
    for m_index, agent in enumerate(agents):
        if agent.method == "naive":
            continue
        for r_index, r_naive in enumerate(cfg.r_values):
            target = expected_variance_naive(sim, r_naive)
            seed = derive_seed(cfg.seed, agent.seed_label, r_naive, replicate)
            r_method = samples_needed(sim, target, lambda r: agent.partition(ga, r, seed), r_max=r_naive)
            rows.append(((param_index, replicate, m_index, r_index),
                         (cfg.kind, agent.method, r_naive, replicate, seed, _param_text(param),
                          target, "" if r_method is None else r_method, sample_saving(r_method, r_naive))))
    return rows


# ---------- Runner ----------
@dataclass
class RunReport:
    rows: List[tuple] = field(default_factory=list)
    failures: Dict[Tuple[int, int], str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


class ExperimentRunner:
    def __init__(self, cfg: ExperimentConfig, progress: bool = True):
        self.cfg = cfg
        self.progress = progress
        # (param_index, replicate) -> dict(status, message)
        self.tasks: Dict[Tuple[int, int], Dict[str, str]] = {}

    def jobs(self) -> List[Tuple[int, int]]:
        return [(p, rep) for p in range(len(self.cfg.sweep_values())) for rep in range(self.cfg.replicates)]

    def _complete(self, job, rows=None, error: Optional[BaseException] = None, report: RunReport = None):
        if error is None:
            self.tasks[job] = {"status": TASK_SUCCEEDED, "message": f"{len(rows)} rows"}
            report.rows.extend(rows)
        else:
            self.tasks[job] = {"status": TASK_FAILED, "message": str(error)}
            report.failures[job] = str(error)
            logger.error(f"Job param={job[0]} replicate={job[1]} failed: {error}")

    def run(self) -> RunReport:
        cfg = self.cfg
        jobs = self.jobs()
        for job in jobs:
            self.tasks[job] = {"status": TASK_QUEUED, "message": "Queued"}
        report = RunReport()
        started = time.monotonic()
        bar = tqdm(total=len(jobs), desc=cfg.kind, unit="graph", disable=not self.progress)
        if cfg.workers <= 1:
            for job in jobs:
                self.tasks[job]["status"] = TASK_RUNNING
                try:
                    self._complete(job, run_job(cfg, *job), report=report)
                except Exception as e:
                    self._complete(job, error=e, report=report)
                bar.update(1)
        else:
            with futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                pending = {pool.submit(run_job, cfg, *job): job for job in jobs}
                for job in pending.values():
                    self.tasks[job]["status"] = TASK_RUNNING
                for fut in futures.as_completed(pending):
                    job = pending[fut]
                    try:
                        self._complete(job, fut.result(), report=report)
                    except Exception as e:
                        self._complete(job, error=e, report=report)
                    bar.update(1)
        bar.close()
        report.rows = [row for _, row in sorted(report.rows, key=lambda item: item[0])]
        logger.info(f"{cfg.kind}: {len(jobs) - len(report.failures)}/{len(jobs)} jobs succeeded, "
                    f"{len(report.rows)} rows in {format_timespan(time.monotonic() - started)}")
        return report

    def write(self, report: RunReport, path: Optional[str] = None) -> str:
        header = SAVING_HEADER if self.cfg.kind == "sample-saving" else RESULT_HEADER
        return write_csv(path or self.cfg.out, header, report.rows)


def run_experiment(cfg: ExperimentConfig, progress: bool = False) -> RunReport:
    return ExperimentRunner(cfg, progress=progress).run()


def improvement_means(rows: Sequence[tuple], method: str) -> Dict[Tuple[str, int], float]:
    """Replicate-mean improvement per (param, r) for one method; NaN-free rows only."""
    acc: Dict[Tuple[str, int], List[float]] = {}
    for row in rows:
        if row[1] != method:
            continue
        value = float(row[7])
        if not math.isnan(value):
            acc.setdefault((row[5], int(row[2])), []).append(value)
    return {key: sum(v) / len(v) for key, v in acc.items()}
