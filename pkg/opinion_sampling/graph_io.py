# opinion_sampling/graph_io.py
"""
File formats:
  graph file      `n m` header, then m lines `src dst weight`
  GraphML         any `.graphml` path; node attributes `lam` and `p`
  node metadata   lines `node lambda p`
  partition file  one group per line, whitespace-separated node ids, optional `#r_k=<int>` suffix
  CSV dumps       similarity `i,j,value[,empirical]`, samples `sample_id,node,opinion,absorber`,
                  labels `node,group`
Whitespace-delimited files accept commas too; blank lines and `#` comment lines are skipped.
"""

import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple
from xml.etree import ElementTree

import networkx as nx
import numpy as np

from opinion_sampling.graph_core import GraphError, SimilarityMatrix, SocialGraph
from opinion_sampling.partitioning import Partition
from opinion_sampling.utils.serialization import atomic_write_text, write_csv

logger = logging.getLogger("GraphIO")

_RK_SUFFIX = re.compile(r"#\s*r_k\s*=\s*(\d+)\s*$")


class GraphFormatError(GraphError):
    pass


def _data_lines(path: str) -> List[Tuple[int, List[str]]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise GraphFormatError(f"cannot read {path}: {e}") from e
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        out.append((lineno, line.replace(",", " ").split()))
    return out


def read_node_metadata(path: str, n: int) -> Tuple[np.ndarray, np.ndarray]:
    lam = np.full(n, np.nan)
    inward = np.full(n, np.nan)
    for lineno, parts in _data_lines(path):
        if len(parts) != 3:
            raise GraphFormatError(f"{path}:{lineno}: expected `node lambda p`, got {len(parts)} fields")
        try:
            node, lv, pv = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: malformed metadata line") from None
        if not 0 <= node < n:
            raise GraphFormatError(f"{path}:{lineno}: node {node} out of range for n={n}")
        lam[node], inward[node] = lv, pv
    missing = np.flatnonzero(np.isnan(lam))
    if missing.size:
        raise GraphFormatError(f"{path}: no metadata for nodes {missing[:10].tolist()}")
    return lam, inward


def _is_graphml(path) -> bool:
    return Path(path).suffix.lower() == ".graphml"


def _read_graphml(graph_path: str, meta_path: Optional[str], default_lambda: float,
                  default_inward: float) -> SocialGraph:
    """GraphML through networkx; node attributes `lam` and `p` fill in missing metadata."""
    try:
        nxg = nx.read_graphml(graph_path)
    except (OSError, nx.NetworkXError, ElementTree.ParseError) as e:
        raise GraphFormatError(f"cannot read {graph_path}: {e}") from e
    try:
        nxg = nx.relabel_nodes(nxg, {v: int(v) for v in nxg.nodes})
    except ValueError:
        raise GraphFormatError(f"{graph_path}: node ids must be integers") from None
    n = nxg.number_of_nodes()
    if meta_path:
        lam, inward = read_node_metadata(meta_path, n)
    else:
        lam = [float(nxg.nodes[i].get("lam", default_lambda)) if i in nxg else default_lambda for i in range(n)]
        inward = [float(nxg.nodes[i].get("p", default_inward)) if i in nxg else default_inward for i in range(n)]
    try:
        g = SocialGraph.from_networkx(nxg, lam=lam, inward=inward)
    except GraphError as e:
        raise GraphFormatError(f"{graph_path}: {e}") from e
    logger.info(f"Loaded graph {graph_path}: n={g.n} m={g.m}")
    return g


def read_graph(graph_path: str, meta_path: Optional[str] = None, default_lambda: float = 1.0,
               default_inward: float = 0.5) -> SocialGraph:
    if _is_graphml(graph_path):
        return _read_graphml(graph_path, meta_path, default_lambda, default_inward)
    lines = _data_lines(graph_path)
    if not lines:
        raise GraphFormatError(f"{graph_path}: empty graph file")
    lineno, header = lines[0]
    try:
        if len(header) != 2:
            raise ValueError
        n, m = int(header[0]), int(header[1])
    except ValueError:
        raise GraphFormatError(f"{graph_path}:{lineno}: header must be `n m`") from None
    body = lines[1:]
    if len(body) != m:
        raise GraphFormatError(f"{graph_path}: header announces {m} edges, found {len(body)}")
    edges = []
    for lineno, parts in body:
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"{graph_path}:{lineno}: expected `src dst weight`")
        try:
            src, dst = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise GraphFormatError(f"{graph_path}:{lineno}: malformed edge line") from None
        if src == dst:
            raise GraphFormatError(f"{graph_path}:{lineno}: self-loop on node {src}")
        edges.append((src, dst, w))
    if meta_path:
        lam, inward = read_node_metadata(meta_path, n)
    else:
        lam, inward = default_lambda, default_inward
    try:
        g = SocialGraph.from_edges(n, edges, lam=lam, inward=inward)
    except GraphError as e:
        raise GraphFormatError(f"{graph_path}: {e}") from e
    logger.info(f"Loaded graph {graph_path}: n={g.n} m={g.m}")
    return g


def write_graph(g: SocialGraph, graph_path: str, meta_path: Optional[str] = None):
    if _is_graphml(graph_path):
        atomic_write_text(graph_path, "\n".join(nx.generate_graphml(g.to_networkx())) + "\n")
    else:
        coo = g.adjacency.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"{g.n} {coo.nnz}"]
        lines += [f"{coo.row[e]} {coo.col[e]} {float(coo.data[e])!r}" for e in order]
        atomic_write_text(graph_path, "\n".join(lines) + "\n")
    if meta_path:
        meta = [f"{i} {float(g.lam[i])!r} {float(g.inward[i])!r}" for i in range(g.n)]
        atomic_write_text(meta_path, "\n".join(meta) + "\n")


def write_labels(labels: np.ndarray, path: str):
    write_csv(path, ["node", "group"], ((i, int(lab)) for i, lab in enumerate(labels)))


# ---------- Partitions ----------
def read_partition(path: str, n: Optional[int] = None) -> Partition:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise GraphFormatError(f"cannot read {path}: {e}") from e
    groups, subsamples = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        r_k = 1
        m = _RK_SUFFIX.search(line)
        if m:
            r_k = int(m.group(1))
            line = line[: m.start()].strip()
        try:
            groups.append([int(tok) for tok in line.split()])
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: node ids must be integers") from None
        subsamples.append(r_k)
    if n is None:
        n = 1 + max((max(g) for g in groups if g), default=-1)
    return Partition.build(groups, subsamples, n)


def write_partition(p: Partition, path: str):
    lines = []
    for group, r_k in zip(p.groups, p.subsamples):
        line = " ".join(str(v) for v in group)
        if r_k != 1:
            line += f" #r_k={r_k}"
        lines.append(line)
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------- Similarities ----------
def similarity_rows(values: np.ndarray, extra: Optional[np.ndarray] = None) -> Iterable[tuple]:
    n = values.shape[0]
    for i in range(n):
        for j in range(i, n):
            row = (i, j, float(values[i, j]))
            if extra is not None:
                row += (float(extra[i, j]),)
            yield row


def write_similarity_csv(values: np.ndarray, path: str, empirical: Optional[np.ndarray] = None):
    header = ["i", "j", "value"] + (["empirical"] if empirical is not None else [])
    return write_csv(path, header, similarity_rows(values, empirical))


def read_similarity_csv(path: str) -> SimilarityMatrix:
    entries: Dict[Tuple[int, int], float] = {}
    lines = _data_lines(path)
    if not lines or lines[0][1][:3] != ["i", "j", "value"]:
        raise GraphFormatError(f"{path}: expected header `i,j,value`")
    for lineno, parts in lines[1:]:
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except (ValueError, IndexError):
            raise GraphFormatError(f"{path}:{lineno}: malformed similarity row") from None
        entries[(min(i, j), max(i, j))] = v
    n = 1 + max(max(k) for k in entries) if entries else 0
    sigma = np.full((n, n), np.nan)
    for (i, j), v in entries.items():
        sigma[i, j] = sigma[j, i] = v
    if np.isnan(sigma).any():
        raise GraphFormatError(f"{path}: similarity table is incomplete for n={n}")
    try:
        return SimilarityMatrix(sigma)
    except GraphError as e:
        raise GraphFormatError(f"{path}: {e}") from e


def write_samples_csv(rows: Iterable[tuple], path: str):
    """rows of (sample_id, node, opinion, absorber)."""
    return write_csv(path, ["sample_id", "node", "opinion", "absorber"], rows)
