"""
Desk-scale trend reproductions. Each runs 20 replicates of a shipped config and checks the
replicate-mean improvement over naive sampling. Run with `pytest -m slow`.
"""

from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from opinion_sampling.experiment import improvement_means, load_config, run_experiment

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _by_param(means, r):
    return [value for (param, rr), value in sorted(means.items(), key=lambda kv: float(kv[0][0])) if rr == r]


def _mean_variance(rows, method, r):
    return float(np.mean([row[6] for row in rows if row[1] == method and row[2] == r]))


def test_small_graph_improvement():
    cfg = load_config(str(CONFIGS / "small_graph.cfg"), {"methods": "naive,greedy,sdp", "r_values": "10,20,40,60"})
    report = run_experiment(cfg)
    assert report.ok
    greedy = improvement_means(report.rows, "greedy")
    values = [greedy[("", r)] for r in (10, 20, 40, 60)]
    assert all(v > 0 for v in values)
    assert values[-1] > values[0]
    sdp = improvement_means(report.rows, "sdp")
    assert sdp[("", 10)] > 0 and sdp[("", 20)] > 0
    for r in (10, 20):
        assert _mean_variance(report.rows, "sdp", r) <= 1.10 * _mean_variance(report.rows, "greedy", r)


def test_ph_pl_sweep_saturates():
    report = run_experiment(load_config(str(CONFIGS / "ph_pl_sweep.cfg"), {"n": "100"}))
    assert report.ok
    values = _by_param(improvement_means(report.rows, "greedy"), 20)
    assert len(values) == 4
    assert all(b >= a - 1e-3 for a, b in zip(values, values[1:]))
    assert values[3] - values[2] < values[1] - values[0]


def test_inward_sweep_decreases():
    report = run_experiment(load_config(str(CONFIGS / "inward_sweep.cfg"), {"n": "100"}))
    assert report.ok
    values = _by_param(improvement_means(report.rows, "greedy"), 20)
    assert len(values) == 5
    assert all(b <= a + 1e-3 for a, b in zip(values, values[1:]))


def test_perturbed_greedy_ordering():
    report = run_experiment(load_config(str(CONFIGS / "perturb.cfg"), {"r_values": "10"}))
    assert report.ok
    cells = defaultdict(dict)
    for row in report.rows:
        cells[row[3]][row[1]] = (row[6], row[7])
    ordered = [
        c["naive"][0] >= c["greedy_p"][0] >= 0.95 * c["greedy"][0]
        for c in cells.values()
    ]
    assert np.mean(ordered) >= 0.95
    assert all(c["greedy_p"][1] > 0 for c in cells.values())
