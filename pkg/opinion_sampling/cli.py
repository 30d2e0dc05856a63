# opinion_sampling/cli.py
import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import coloredlogs
from humanfriendly import format_timespan

from opinion_sampling.agents import AGENT_TYPES, create_agent
from opinion_sampling.experiment import ConfigError, ExperimentRunner, load_config
from opinion_sampling.graph_core import (
    GraphError,
    PlantedPartitionConfig,
    build_assistant_graph,
    generate_planted_partition,
)
from opinion_sampling.graph_io import (
    read_graph,
    read_partition,
    read_similarity_csv,
    write_graph,
    write_labels,
    write_partition,
    write_samples_csv,
    write_similarity_csv,
)
from opinion_sampling.partitioning import GreedyConfig, PartitionError, refine_to_simple
from opinion_sampling.sampling_estimator import (
    ConsistencyError,
    MeanVector,
    expected_variance_general,
)
from opinion_sampling.similarity_exact import SolverConfig, SolverError, opinion_similarities
from opinion_sampling.utils.serialization import write_csv
from opinion_sampling.vio_model import (
    VioParams,
    agreement_counts,
    empirical_correlation,
    empirical_similarity,
    frequencies,
    steady_state_draws,
)

logger = logging.getLogger("OpinionSamplingCLI")

LOG_FORMAT = "%(asctime)s %(name)s[%(process)d] %(levelname)s %(message)s"
DOMAIN_ERRORS = (ConfigError, GraphError, SolverError, PartitionError, ConsistencyError, OSError, ValueError)
PARTITION_METHODS = sorted(m for m, cls in AGENT_TYPES.items() if not cls.uses_perturbed)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--tol", type=float, default=None, help="solver convergence tolerance")
    common.add_argument("--max-sweeps", type=int, default=None, help="solver sweep cap")
    common.add_argument("--methods", default=None, help="comma-separated method list")
    common.add_argument("--r", default=None, help="comma-separated sample sizes")
    common.add_argument("--replicates", type=int, default=None, help="graphs per sweep value")
    common.add_argument("--workers", type=int, default=None, help="process-pool size")
    common.add_argument("--out", default=None, help="output path")
    common.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING or ERROR")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="opinion_sampling", allow_abbrev=False,
                                     description="Partitioned sampling of public opinions on social graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-graph", parents=[common], allow_abbrev=False,
                         help="generate a planted-partition graph")
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--k", type=int, default=20)
    gen.add_argument("--p-high", type=float, default=0.9)
    gen.add_argument("--p-low", type=float, default=0.01)
    gen.add_argument("--lambda", dest="lambda_spec", default="1", help="e.g. 1, uniform:0.5:2")
    gen.add_argument("--inward", dest="inward_spec", default="uniform:0:0.01",
                     help="e.g. 0.3, uniform:0:0.01, mixture")
    gen.add_argument("--meta", default=None, help="node metadata output (node lambda p)")
    gen.add_argument("--labels", default=None, help="planted block labels CSV output")

    sims = sub.add_parser("similarities", parents=[common], allow_abbrev=False,
                          help="exact pairwise opinion similarities")
    sims.add_argument("graph", help="graph file (n m header + src dst weight lines, or .graphml)")
    sims.add_argument("--meta", default=None, help="node metadata file")
    sims.add_argument("--mu0", type=float, default=0.5)
    sims.add_argument("--schedule", default="auto", choices=["auto", "gauss_seidel", "jacobi", "direct"])
    sims.add_argument("--q-method", default="iterative", choices=["iterative", "direct"])
    sims.add_argument("--correlation", action="store_true", help="write rho instead of sigma")
    sims.add_argument("--monte-carlo", type=int, default=0, metavar="N",
                      help="add an empirical column from N exact steady-state draws")
    sims.add_argument("--samples-out", default=None, help="also dump the Monte-Carlo draws as CSV")

    part = sub.add_parser("partition", parents=[common], allow_abbrev=False,
                          help="partition a population from its similarities")
    part.add_argument("similarity", help="similarity CSV (i,j,value)")
    part.add_argument("--method", default="greedy", choices=PARTITION_METHODS)
    part.add_argument("--refine", default=None, metavar="PARTITION",
                      help="refine this (possibly non-simple) partition file into a simple one")
    part.add_argument("--max-rounds", type=int, default=100)

    ev = sub.add_parser("evaluate", parents=[common], allow_abbrev=False,
                        help="expected sample variance of partitions")
    ev.add_argument("similarity", help="similarity CSV (i,j,value)")
    ev.add_argument("partitions", nargs="*", help="partition files; without them --methods x --r are run")
    ev.add_argument("--mu0", type=float, default=0.5)
    ev.add_argument("--label", default=None, help="method column for partition files (default: file stem)")

    for name, text in (("experiment", "run a config-driven experiment"),
                       ("perturb", "greedy vs greedy on perturbed similarities vs naive")):
        exp = sub.add_parser(name, parents=[common], allow_abbrev=False, help=text,
                             description=text + "; any other --key value pair overrides the config file")
        exp.add_argument("--config", default=None, help="key=value config file")
        exp.add_argument("--no-progress", action="store_true")
    return parser


def _int_list(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _method_list(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _solver(args) -> SolverConfig:
    return SolverConfig(
        tol=args.tol if args.tol is not None else 1e-10,
        max_sweeps=args.max_sweeps if args.max_sweeps is not None else 10_000,
        method=getattr(args, "q_method", "iterative"),
        schedule=getattr(args, "schedule", "auto"),
    )


def parse_overrides(tokens: Sequence[str]) -> Dict[str, str]:
    """`--key value` and `--key=value` pairs into a config override dict."""
    overrides: Dict[str, str] = {}
    problems = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            problems.append(f"unexpected argument {tok!r}")
            i += 1
            continue
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
            i += 1
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            key, value = tok[2:], tokens[i + 1]
            i += 2
        else:
            problems.append(f"override {tok} needs a value")
            i += 1
            continue
        overrides[key.replace("-", "_")] = value
    if problems:
        raise ConfigError(problems)
    return overrides


# ---------- Commands ----------
def cmd_gen_graph(args) -> int:
    seed = args.seed or 0
    cfg = PlantedPartitionConfig(args.n, args.k, args.p_high, args.p_low, seed)
    g, labels = generate_planted_partition(cfg, args.lambda_spec, args.inward_spec)
    out = args.out or "graph.txt"
    write_graph(g, out, args.meta)
    if args.labels:
        write_labels(labels, args.labels)
    logger.info(f"Wrote graph n={g.n} m={g.m} to {out}")
    return 0


def cmd_similarities(args) -> int:
    g = read_graph(args.graph, args.meta)
    sim, rho = opinion_similarities(g, args.mu0, _solver(args))
    values = rho.rho if args.correlation else sim.sigma
    empirical = None
    seed = args.seed or 0
    if args.monte_carlo > 0:
        params = VioParams(g, args.mu0)
        if args.samples_out:
            # the dump and the empirical column come from the same draws
            draws = list(steady_state_draws(params, args.monte_carlo, seed))
            same_opinion, same_absorber = agreement_counts(draws, g.n)
            empirical = frequencies(same_absorber if args.correlation else same_opinion, args.monte_carlo)
            rows = ((s, i, int(f.values[i]), int(trace.absorber[i]))
                    for s, (f, trace) in enumerate(draws) for i in range(g.n))
            write_samples_csv(rows, args.samples_out)
        elif args.correlation:
            empirical = empirical_correlation(params, args.monte_carlo, seed, args.workers or 1)
        else:
            empirical = empirical_similarity(params, args.monte_carlo, seed, args.workers or 1).sigma
    out = args.out or "similarities.csv"
    write_similarity_csv(values, out, empirical)
    logger.info(f"Wrote {'correlations' if args.correlation else 'similarities'} for n={g.n} to {out}")
    return 0


def cmd_partition(args) -> int:
    sim = read_similarity_csv(args.similarity)
    ga = build_assistant_graph(sim)
    seed = args.seed or 0
    greedy = GreedyConfig(max_rounds=args.max_rounds)
    if args.refine:
        p = refine_to_simple(ga, read_partition(args.refine, sim.n), seed, greedy)
    else:
        r_values = _int_list(args.r) or [2]
        if len(r_values) != 1:
            raise ValueError("partition takes a single --r value")
        p = create_agent(args.method, greedy=greedy).partition(ga, r_values[0], seed)
    out = args.out or "partition.txt"
    write_partition(p, out)
    logger.info(f"Wrote partition with {len(p.groups)} groups (r={p.r}) to {out}")
    return 0


def cmd_evaluate(args) -> int:
    sim = read_similarity_csv(args.similarity)
    mu = MeanVector.constant(sim.n, args.mu0)
    seed = args.seed or 0
    rows = []
    if args.partitions:
        for path in args.partitions:
            p = read_partition(path, sim.n)
            rows.append((args.label or Path(path).stem, p.r, expected_variance_general(sim, mu, p), seed))
    else:
        methods = _method_list(args.methods) or ["naive", "greedy"]
        for method in methods:
            if method not in PARTITION_METHODS:
                raise ValueError(f"unknown method {method!r}; choose from {', '.join(PARTITION_METHODS)}")
        for method in methods:
            agent = create_agent(method, mu0=args.mu0)
            for r in _int_list(args.r) or [2]:
                result = agent.run_cell(sim, r, seed)
                rows.append((method, r, result.expected_variance, result.seed))
    out = args.out or "variance.csv"
    write_csv(out, ["method", "r", "expected_variance", "seed"], rows)
    logger.info(f"Wrote {len(rows)} variance rows to {out}")
    return 0


def cmd_experiment(args, extra: Sequence[str], forced: Optional[Dict[str, object]] = None) -> int:
    overrides: Dict[str, object] = parse_overrides(extra)
    flags = {"methods": args.methods, "r_values": args.r, "replicates": args.replicates, "seed": args.seed,
             "tol": args.tol, "max_sweeps": args.max_sweeps, "out": args.out, "workers": args.workers}
    overrides.update({k: v for k, v in flags.items() if v is not None})
    if forced and forced.get("kind") == "perturb":
        overrides.setdefault("methods", "naive,greedy,greedy_p")
    cfg = load_config(args.config, overrides, **(forced or {}))
    runner = ExperimentRunner(cfg, progress=not args.no_progress)
    report = runner.run()
    if not report.ok:
        logger.error(f"{len(report.failures)} job(s) failed; no results written")
        return 1
    path = runner.write(report)
    logger.info(f"Wrote {len(report.rows)} rows to {path}")
    return 0


def cmd_perturb_experiment(args, extra: Sequence[str]) -> int:
    """Greedy on exact similarities vs greedy on perturbed ones vs naive."""
    return cmd_experiment(args, extra, forced={"kind": "perturb"})


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command not in ("experiment", "perturb"):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    coloredlogs.install(level=args.log_level.upper(), fmt=LOG_FORMAT)
    started = time.monotonic()
    try:
        if args.command == "gen-graph":
            code = cmd_gen_graph(args)
        elif args.command == "similarities":
            code = cmd_similarities(args)
        elif args.command == "partition":
            code = cmd_partition(args)
        elif args.command == "evaluate":
            code = cmd_evaluate(args)
        elif args.command == "perturb":
            code = cmd_perturb_experiment(args, extra)
        else:
            code = cmd_experiment(args, extra)
    except DOMAIN_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    logger.debug(f"{args.command} finished in {format_timespan(time.monotonic() - started)}")
    return code


if __name__ == "__main__":
    sys.exit(main())
