"""Channel/region importance and connectivity comparison reports.

Two attribution routes are provided: saliency (input-gradient magnitude,
cheap and differentiable) and occlusion (loss increase when a channel's node
is removed and the graph rebuilt without it). Scores aggregate by anatomical
region by default, since raw channel labels are patient-specific.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .braingraph import binarize, correlation_matrix, export_graph, thalamic_summary
from .dataset import Dataset, SeizureRecording
from .errors import EmptyResult, UntrainedModel
from .gnn import GcnModel, backward, forward, normalize_adjacency, softmax_cross_entropy
from .pipeline import LabelScheme, map_engel
from .preprocess import ProcessedSample

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ImportanceReport:
    scores: dict[str, float]  # label/region -> nonnegative score
    method: str  # "saliency" | "occlusion"
    group_by: str  # "region" | "label"
    n_samples_used: int
    n_samples_skipped: int = 0

    def to_dict(self, k: int = 10) -> dict:
        return {
            "method": self.method,
            "group_by": self.group_by,
            "n_samples_used": self.n_samples_used,
            "n_samples_skipped": self.n_samples_skipped,
            "scores": dict(sorted(self.scores.items())),
            "top": top_k(self, k),
        }


def _check_trained(model: GcnModel) -> None:
    if all(not value.any() for value in model.params().values()):
        raise UntrainedModel("model parameters are all zero")


def _channel_key(sample: ProcessedSample, index: int, group_by: str) -> str:
    ch = sample.channels[index]
    return ch.region if group_by == "region" else ch.label


def _mean_scores(sums: dict[str, float], counts: dict[str, int]) -> dict[str, float]:
    return {key: sums[key] / counts[key] for key in sums}


def saliency_importance(
    model: GcnModel,
    samples: Sequence[ProcessedSample],
    scheme: LabelScheme,
    group_by: str = "region",
) -> ImportanceReport:
    """Input-gradient magnitudes, summed per node and averaged per key.

    For each sample the gradient of the true-label loss with respect to the
    node features is taken, its absolute values are summed over the feature
    axis, and the per-channel totals are accumulated under the channel's
    region (or label) across all samples.
    """
    _check_trained(model)
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for sample in samples:
        graph = correlation_matrix(sample)
        a_hat = normalize_adjacency(np.abs(graph.weights))
        logits, cache = forward(model, a_hat, sample.features)
        _, dlogits = softmax_cross_entropy(logits, map_engel(sample.engel, scheme))
        grads = backward(model, cache, dlogits, need_input_grad=True)
        per_channel = np.abs(grads.x).sum(axis=1)
        for i in range(sample.n_channels):
            key = _channel_key(sample, i, group_by)
            sums[key] = sums.get(key, 0.0) + float(per_channel[i])
            counts[key] = counts.get(key, 0) + 1
    return ImportanceReport(
        scores=_mean_scores(sums, counts),
        method="saliency",
        group_by=group_by,
        n_samples_used=len(samples),
    )


def occlusion_importance(
    model: GcnModel,
    samples: Sequence[ProcessedSample],
    scheme: LabelScheme,
    group_by: str = "region",
) -> ImportanceReport:
    """Loss increase when a channel is dropped and the graph rebuilt without it.

    Pairwise correlations do not involve the removed channel, so occlusion
    deletes the node's row/column from the weight matrix and its feature row,
    then renormalizes the adjacency. Negative loss changes clamp to zero.
    Samples with fewer than two channels cannot be occluded and are skipped.
    """
    _check_trained(model)
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    used = skipped = 0
    for sample in samples:
        if sample.n_channels < 2:
            skipped += 1
            continue
        used += 1
        label = map_engel(sample.engel, scheme)
        graph = correlation_matrix(sample)
        weights = np.abs(graph.weights)
        a_hat = normalize_adjacency(weights)
        logits, _ = forward(model, a_hat, sample.features)
        base_loss, _ = softmax_cross_entropy(logits, label)
        for i in range(sample.n_channels):
            keep = np.arange(sample.n_channels) != i
            sub = weights[np.ix_(keep, keep)]
            a_sub = normalize_adjacency(sub)
            logits_i, _ = forward(model, a_sub, sample.features[keep])
            loss_i, _ = softmax_cross_entropy(logits_i, label)
            increase = max(0.0, loss_i - base_loss)
            key = _channel_key(sample, i, group_by)
            sums[key] = sums.get(key, 0.0) + increase
            counts[key] = counts.get(key, 0) + 1
    return ImportanceReport(
        scores=_mean_scores(sums, counts),
        method="occlusion",
        group_by=group_by,
        n_samples_used=used,
        n_samples_skipped=skipped,
    )


def top_k(report: ImportanceReport, k: int = 10) -> list[str]:
    """Labels sorted by descending score, ties broken lexicographically."""
    if k < 1:
        return []
    ordered = sorted(report.scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [key for key, _ in ordered[:k]]


def reduce_dataset(
    dataset: Dataset, labels: Sequence[str], match_on: str = "region"
) -> Dataset:
    """Keep only channels whose region (or label) is in ``labels``.

    Recordings left with fewer than two channels are dropped (and logged);
    if nothing survives, EmptyResult is raised.
    """
    wanted = set(labels)
    if not wanted:
        raise EmptyResult("no labels given")
    kept: list[SeizureRecording] = []
    for rec in dataset.recordings:
        mask = [
            (ch.region if match_on == "region" else ch.label) in wanted
            for ch in rec.channels
        ]
        n_kept = sum(mask)
        if n_kept < 2:
            logger.info(
                "dropping seizure %s: %d channel(s) match the label set",
                rec.seizure_id, n_kept,
            )
            continue
        idx = [i for i, keep in enumerate(mask) if keep]
        kept.append(
            SeizureRecording(
                seizure_id=rec.seizure_id,
                patient_id=rec.patient_id,
                engel=rec.engel,
                sampling_rate_hz=rec.sampling_rate_hz,
                channels=[rec.channels[i] for i in idx],
                signal=rec.signal[idx].copy(),
            )
        )
    if not kept:
        raise EmptyResult("no recording retains >= 2 channels")
    return Dataset(recordings=kept, provenance=f"{dataset.provenance}|reduced")


# --- connectivity reports -----------------------------------------------------

@dataclass(eq=False)
class ConnectivityReport:
    seizure_id: str
    patient_id: str
    threshold: float
    avg_thalamic_strength: float
    thalamic_centrality: float
    density: float
    n_nodes: int
    n_edges: int
    graph: dict  # JSON-compatible binarized graph (nodes/edges/threshold)
    dot: str
    dot_weighted: str

    def to_dict(self) -> dict:
        return {
            "seizure_id": self.seizure_id,
            "patient_id": self.patient_id,
            "threshold": self.threshold,
            "avg_thalamic_strength": self.avg_thalamic_strength,
            "thalamic_centrality": self.thalamic_centrality,
            "density": self.density,
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "graph": self.graph,
        }


def connectivity_report(
    sample: ProcessedSample, threshold: float
) -> ConnectivityReport:
    """Thalamic summary plus graph exports for one processed sample."""
    graph = correlation_matrix(sample)
    summary = thalamic_summary(graph, threshold)
    binary = binarize(graph, threshold)
    return ConnectivityReport(
        seizure_id=sample.seizure_id,
        patient_id=sample.patient_id,
        threshold=threshold,
        avg_thalamic_strength=summary.avg_thalamic_strength,
        thalamic_centrality=summary.thalamic_centrality,
        density=summary.density,
        n_nodes=binary.n_nodes,
        n_edges=binary.n_edges,
        graph=json.loads(export_graph(binary, "json")),
        dot=export_graph(binary, "dot").decode("utf-8"),
        dot_weighted=export_graph(graph, "dot").decode("utf-8"),
    )


def connectivity_comparison(
    sample_a: ProcessedSample, sample_b: ProcessedSample, threshold: float
) -> dict:
    """Side-by-side connectivity reports for two samples (A vs B)."""
    a = connectivity_report(sample_a, threshold)
    b = connectivity_report(sample_b, threshold)
    return {
        "a": a.to_dict(),
        "b": b.to_dict(),
        "delta_avg_thalamic_strength": a.avg_thalamic_strength - b.avg_thalamic_strength,
        "delta_density": a.density - b.density,
    }
