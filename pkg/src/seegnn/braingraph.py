"""Correlation graphs over channels and the network metrics computed on them.

Every channel is a node; edge weights are pairwise Pearson correlations of
the processed traces (signed, zero diagonal). A thresholded |r| view yields
the binary graph used for edge counting, density, and centrality summaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import ChannelInfo
from .errors import (
    IndexOutOfRange,
    InvalidThreshold,
    LengthMismatch,
    NoThalamicNodes,
    TooFewChannels,
    TooFewNodes,
    TooShort,
)
from .preprocess import CONSTANT_SD, ProcessedSample

POWER_ITER_TOL = 1e-10
POWER_ITER_MAX = 10_000


@dataclass(eq=False)
class BrainGraph:
    """Fully connected weighted graph: symmetric Pearson r, zero diagonal."""

    nodes: list[ChannelInfo]
    weights: np.ndarray  # (n, n) float64, signed
    flags: np.ndarray  # bool per node, True = constant channel

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass(eq=False)
class BinaryGraph:
    nodes: list[ChannelInfo]
    adjacency: np.ndarray  # (n, n) 0/1 int, zero diagonal
    threshold_used: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation coefficient; 0.0 when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise LengthMismatch(f"length {x.size} vs {y.size}")
    if x.ndim != 1 or x.size < 2:
        raise TooShort("pearson needs 1-D vectors of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(xc @ xc / x.size)
    sy = np.sqrt(yc @ yc / y.size)
    if sx < CONSTANT_SD or sy < CONSTANT_SD:
        return 0.0
    r = (xc @ yc) / (x.size * sx * sy)
    return float(min(1.0, max(-1.0, r)))


def correlation_weights(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs Pearson matrix for the rows of ``features``.

    Returns (weights, constant_flags); rows with sd below the constant
    threshold get zero weights everywhere. The result is exactly symmetric
    with a zero diagonal and entries clipped to [-1, 1].
    """
    features = np.asarray(features, dtype=np.float64)
    n, m = features.shape
    centered = features - features.mean(axis=1, keepdims=True)
    sd = np.sqrt((centered * centered).sum(axis=1) / m)
    flags = sd < CONSTANT_SD
    scale = np.where(flags, 1.0, sd * np.sqrt(m))
    z = centered / scale[:, None]
    w = z @ z.T
    w[flags, :] = 0.0
    w[:, flags] = 0.0
    w = np.clip(np.triu(w, 1), -1.0, 1.0)
    return w + w.T, flags


def correlation_matrix(sample: ProcessedSample) -> BrainGraph:
    """Build the weighted correlation graph of one processed sample."""
    if sample.n_channels < 2:
        raise TooFewChannels(
            f"seizure {sample.seizure_id!r} has {sample.n_channels} channel(s); need >= 2"
        )
    weights, flags = correlation_weights(sample.features)
    return BrainGraph(nodes=list(sample.channels), weights=weights, flags=flags)


def binarize(graph: BrainGraph, threshold: float) -> BinaryGraph:
    """Edge present iff |r| >= threshold; threshold must lie in (0, 1]."""
    if not 0.0 < threshold <= 1.0:
        raise InvalidThreshold(f"threshold must lie in (0, 1], got {threshold}")
    adjacency = (np.abs(graph.weights) >= threshold).astype(np.int64)
    np.fill_diagonal(adjacency, 0)
    return BinaryGraph(
        nodes=list(graph.nodes), adjacency=adjacency, threshold_used=threshold
    )


def density(graph: BinaryGraph) -> float:
    """Edge density 2E / (n (n - 1))."""
    n = graph.n_nodes
    if n < 2:
        raise TooFewNodes(f"density needs >= 2 nodes, got {n}")
    return 2.0 * graph.n_edges / (n * (n - 1))


def _nonnegative_adjacency(graph: BrainGraph | BinaryGraph) -> np.ndarray:
    if isinstance(graph, BinaryGraph):
        return graph.adjacency.astype(np.float64)
    return np.abs(graph.weights)


def eigenvector_centrality(graph: BrainGraph | BinaryGraph) -> np.ndarray:
    """Principal eigenvector of the nonnegative adjacency, by power iteration.

    Normalized to unit Euclidean norm with nonnegative entries. An all-zero
    adjacency (empty or fully disconnected graph) yields the zero vector.
    """
    a = _nonnegative_adjacency(graph)
    n = a.shape[0]
    if not a.any():
        return np.zeros(n)
    x = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(POWER_ITER_MAX):
        y = a @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return np.zeros(n)
        y /= norm
        if np.linalg.norm(y - x) <= POWER_ITER_TOL:
            x = y
            break
        x = y
    return np.maximum(x, 0.0)


def node_strength(graph: BrainGraph, node: int) -> float:
    """Weighted degree: sum of |r| over all incident edges."""
    if not 0 <= node < graph.n_nodes:
        raise IndexOutOfRange(f"node {node} out of range [0, {graph.n_nodes})")
    return float(np.abs(graph.weights[node]).sum())


@dataclass(frozen=True)
class ThalamicSummary:
    avg_thalamic_strength: float
    thalamic_centrality: float
    density: float


def thalamic_summary(graph: BrainGraph, threshold: float) -> ThalamicSummary:
    """Mean thalamic strength plus centrality/density on the |r|-binarized graph."""
    thal = [i for i, ch in enumerate(graph.nodes) if ch.is_thalamic]
    if not thal:
        raise NoThalamicNodes("graph has no thalamic nodes")
    strength = float(np.mean([node_strength(graph, i) for i in thal]))
    binary = binarize(graph, threshold)
    centrality = eigenvector_centrality(binary)
    return ThalamicSummary(
        avg_thalamic_strength=strength,
        thalamic_centrality=float(np.mean(centrality[thal])),
        density=density(binary),
    )


# --- exports ----------------------------------------------------------------

_DOT_THALAMIC = "#6699ff"
_DOT_SOZ = "#ff6666"
_DOT_OTHER = "#d9d9d9"


def _node_color(ch: ChannelInfo) -> str:
    if ch.is_thalamic:
        return _DOT_THALAMIC
    if ch.is_soz:
        return _DOT_SOZ
    return _DOT_OTHER


def _edge_list(graph: BrainGraph | BinaryGraph) -> list[tuple[int, int, float]]:
    edges = []
    if isinstance(graph, BinaryGraph):
        matrix = graph.adjacency
        for i, j in zip(*np.nonzero(np.triu(matrix, 1))):
            edges.append((int(i), int(j), 1.0))
    else:
        matrix = graph.weights
        for i, j in zip(*np.nonzero(np.triu(matrix, 1))):
            edges.append((int(i), int(j), float(matrix[i, j])))
    return edges


def export_graph(graph: BrainGraph | BinaryGraph, format: str = "json") -> bytes:
    """Serialize a graph as Graphviz DOT or JSON (deterministic byte output)."""
    if format == "dot":
        lines = ["graph brain {", "  node [style=filled];"]
        for i, ch in enumerate(graph.nodes):
            lines.append(
                f'  n{i} [label="{ch.label}" fillcolor="{_node_color(ch)}"'
                f' tooltip="{ch.region}"];'
            )
        for i, j, r in _edge_list(graph):
            if isinstance(graph, BinaryGraph):
                lines.append(f"  n{i} -- n{j};")
            else:
                lines.append(f'  n{i} -- n{j} [label="{r:.3f}"];')
        lines.append("}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    if format == "json":
        doc = {
            "nodes": [
                {
                    "label": ch.label,
                    "region": ch.region,
                    "is_thalamic": ch.is_thalamic,
                    "is_soz": ch.is_soz,
                }
                for ch in graph.nodes
            ],
            "edges": [
                {"i": i, "j": j, "r": r} for i, j, r in _edge_list(graph)
            ],
            "threshold": graph.threshold_used
            if isinstance(graph, BinaryGraph)
            else None,
        }
        return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")
    raise ValueError(f"unknown export format {format!r}")
