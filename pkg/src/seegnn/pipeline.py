"""Experiment driver: label mapping, splits, training, metrics, search.

Outcome grades map to classes two ways: binary (grades I-II positive = 0,
III-IV negative = 1) or three-class (I -> 0, II -> 1, III/IV -> 2). Training
is one Adam step per graph in seeded-shuffled order; every source of
randomness derives from explicit integer seeds, so a fixed seed gives a
bit-identical loss history on the same platform.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .braingraph import correlation_matrix
from .dataset import Engel
from .errors import (
    ClassTooSmall,
    EmptyMatrix,
    EmptySpace,
    InconsistentTruth,
    InvalidConfig,
    NonFiniteLoss,
    ShapeMismatch,
)
from .gnn import (
    AdamState,
    GcnModel,
    Gradients,
    adam_step,
    backward,
    forward,
    init_model,
    normalize_adjacency,
    softmax_cross_entropy,
)
from .preprocess import ProcessedSample


class LabelScheme(str, Enum):
    BINARY = "binary"
    THREE_CLASS = "three_class"

    @property
    def n_classes(self) -> int:
        return 2 if self is LabelScheme.BINARY else 3


def map_engel(engel: Engel, scheme: LabelScheme) -> int:
    """Class index of an outcome grade under the given scheme."""
    if scheme is LabelScheme.BINARY:
        return 0 if engel in (Engel.I, Engel.II) else 1
    return {Engel.I: 0, Engel.II: 1, Engel.III: 2, Engel.IV: 2}[engel]


def derive_seed(seed: int, *key: int) -> int:
    """Stable 64-bit subseed for a role, derived from a user-facing seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = 100
    lr: float = 1e-3
    hidden: int = 64
    weight_decay: float = 0.0
    dropout: float = 0.0
    split_ratio: float = 0.8

    def validate(self) -> None:
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if not self.lr >= 0:
            raise InvalidConfig("lr must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be >= 0")


def stratified_split(
    samples: Sequence, labels: Sequence[int], ratio: float, seed: int
) -> tuple[list, list]:
    """Per-class shuffled split; each class lands in both partitions.

    Train size per class is round(n_c * ratio), clamped so that classes with
    at least two members keep at least one sample on each side.
    """
    if not 0.0 < ratio < 1.0:
        raise InvalidConfig(f"split ratio must lie in (0, 1), got {ratio}")
    by_class: dict[int, list[int]] = {}
    for i, label in enumerate(labels):
        by_class.setdefault(int(label), []).append(i)
    for cls, idx in sorted(by_class.items()):
        if len(idx) < 2:
            raise ClassTooSmall(f"class {cls} has {len(idx)} sample(s); need >= 2")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for cls in sorted(by_class):
        idx = np.array(by_class[cls])
        rng.shuffle(idx)
        n_train = int(round(len(idx) * ratio))
        n_train = min(max(n_train, 1), len(idx) - 1)
        train_idx.extend(idx[:n_train].tolist())
        test_idx.extend(idx[n_train:].tolist())
    train_idx.sort()
    test_idx.sort()
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


# --- prepared per-graph inputs ----------------------------------------------

@dataclass(eq=False)
class PreparedGraph:
    seizure_id: str
    patient_id: str
    label: int
    a_hat: np.ndarray
    ax: np.ndarray


def prepare_graph(sample: ProcessedSample, scheme: LabelScheme) -> PreparedGraph:
    """Correlation graph -> normalized adjacency -> cached a_hat @ x."""
    graph = correlation_matrix(sample)
    a_hat = normalize_adjacency(np.abs(graph.weights))
    return PreparedGraph(
        seizure_id=sample.seizure_id,
        patient_id=sample.patient_id,
        label=map_engel(sample.engel, scheme),
        a_hat=a_hat,
        ax=a_hat @ sample.features,
    )


# --- training ----------------------------------------------------------------

@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    train_acc: float


@dataclass(eq=False)
class TrainResult:
    model: GcnModel
    state: AdamState
    history: list[EpochStats]
    config: TrainConfig
    scheme: LabelScheme


def history_to_csv(history: Sequence[EpochStats]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss", "train_acc"])
    for row in history:
        writer.writerow([row.epoch, repr(row.loss), repr(row.train_acc)])
    return buf.getvalue()


def _apply_weight_decay(model: GcnModel, grads: Gradients, wd: float) -> None:
    if wd == 0.0:
        return
    for name, param in model.params().items():
        g = getattr(grads, name)
        g += wd * param


def train(
    samples: Sequence[ProcessedSample],
    scheme: LabelScheme,
    config: TrainConfig,
    prepared: Sequence[PreparedGraph] | None = None,
) -> TrainResult:
    """Train on the given (already split) samples for ``config.epochs`` epochs.

    One Adam step per graph, visiting graphs in a freshly shuffled order each
    epoch. The reported accuracy is measured on the forward pass that feeds
    each step (before its update). ``prepared`` short-circuits graph
    construction when the caller already holds PreparedGraph inputs.
    """
    config.validate()
    if not samples and not prepared:
        raise EmptyMatrix("no training samples")
    if prepared is None:
        prepared = [prepare_graph(s, scheme) for s in samples]
    in_dim = prepared[0].ax.shape[1]

    model = init_model(
        config.hidden, scheme.n_classes, seed=derive_seed(config.seed, 0), in_dim=in_dim
    )
    state = AdamState.for_model(model, lr=config.lr)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, 1))
    dropout_rng = np.random.default_rng(derive_seed(config.seed, 2))

    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(prepared))
        total_loss = 0.0
        correct = 0
        for idx in order:
            item = prepared[idx]
            logits, cache = forward(
                model, item.a_hat, ax=item.ax,
                dropout=config.dropout, rng=dropout_rng,
            )
            loss, dlogits = softmax_cross_entropy(logits, item.label)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, seizure {item.seizure_id!r}"
                )
            total_loss += loss
            correct += int(int(np.argmax(logits)) == item.label)
            grads = backward(model, cache, dlogits)
            _apply_weight_decay(model, grads, config.weight_decay)
            adam_step(model, grads, state)
        history.append(
            EpochStats(
                epoch=epoch,
                loss=total_loss / len(prepared),
                train_acc=correct / len(prepared),
            )
        )
    return TrainResult(
        model=model, state=state, history=history, config=config, scheme=scheme
    )


# --- prediction and evaluation ------------------------------------------------

def predict(
    model: GcnModel, sample: ProcessedSample
) -> tuple[int, np.ndarray]:
    """Class index (ties to the lower index) and softmax probabilities."""
    if sample.features.shape[1] != model.in_dim:
        raise ShapeMismatch(
            f"sample has {sample.features.shape[1]} features per node, "
            f"model expects {model.in_dim}"
        )
    graph = correlation_matrix(sample)
    a_hat = normalize_adjacency(np.abs(graph.weights))
    logits, _ = forward(model, a_hat, sample.features)
    shifted = logits - logits.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    return int(np.argmax(logits)), probs


@dataclass(frozen=True)
class PredictionRecord:
    seizure_id: str
    patient_id: str
    predicted: int
    true: int


def predict_samples(
    model: GcnModel, samples: Sequence[ProcessedSample], scheme: LabelScheme
) -> list[PredictionRecord]:
    if model.n_classes != scheme.n_classes:
        raise ShapeMismatch(
            f"model has {model.n_classes} outputs, scheme {scheme.value!r} "
            f"needs {scheme.n_classes}"
        )
    records = []
    for sample in samples:
        predicted, _ = predict(model, sample)
        records.append(
            PredictionRecord(
                seizure_id=sample.seizure_id,
                patient_id=sample.patient_id,
                predicted=predicted,
                true=map_engel(sample.engel, scheme),
            )
        )
    return records


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(eq=False)
class EvalReport:
    confusion: np.ndarray  # (C, C) int, rows = true, cols = predicted
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: list[ClassMetrics]
    n: int

    def to_dict(self, scheme: LabelScheme | None = None) -> dict:
        doc = {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": [
                {
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                }
                for c in self.per_class
            ],
            "n": self.n,
        }
        if scheme is not None:
            doc["scheme"] = scheme.value
        return doc


def metrics_from_confusion(confusion: np.ndarray) -> EvalReport:
    """Accuracy plus support-weighted precision/recall/F1 (0/0 counts as 0)."""
    c = np.asarray(confusion, dtype=np.int64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
        raise EmptyMatrix(f"confusion matrix must be square, got {c.shape}")
    if (c < 0).any():
        raise EmptyMatrix("confusion entries must be nonnegative")
    total = int(c.sum())
    if total == 0:
        raise EmptyMatrix("confusion matrix has no samples")

    per_class: list[ClassMetrics] = []
    for k in range(c.shape[0]):
        tp = int(c[k, k])
        predicted = int(c[:, k].sum())
        support = int(c[k, :].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(
            ClassMetrics(precision=precision, recall=recall, f1=f1, support=support)
        )

    supports = np.array([m.support for m in per_class], dtype=np.float64)
    weighted = lambda vals: float(np.dot(vals, supports) / total)  # noqa: E731
    return EvalReport(
        confusion=c,
        accuracy=float(np.trace(c)) / total,
        precision=weighted([m.precision for m in per_class]),
        recall=weighted([m.recall for m in per_class]),
        f1=weighted([m.f1 for m in per_class]),
        per_class=per_class,
        n=total,
    )


def evaluate(
    model: GcnModel, samples: Sequence[ProcessedSample], scheme: LabelScheme
) -> EvalReport:
    """Confusion matrix over per-seizure predictions, then summary metrics."""
    if not samples:
        raise EmptyMatrix("no samples to evaluate")
    records = predict_samples(model, samples, scheme)
    return report_from_records(records, scheme.n_classes)


def report_from_records(
    records: Sequence[PredictionRecord], n_classes: int
) -> EvalReport:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for rec in records:
        confusion[rec.true, rec.predicted] += 1
    return metrics_from_confusion(confusion)


def patient_wise(
    records: Sequence[PredictionRecord], scheme: LabelScheme
) -> EvalReport:
    """Majority vote per patient; ties resolve to the worse (higher) class."""
    votes: dict[str, list[int]] = {}
    truth: dict[str, int] = {}
    for rec in records:
        votes.setdefault(rec.patient_id, []).append(rec.predicted)
        if truth.setdefault(rec.patient_id, rec.true) != rec.true:
            raise InconsistentTruth(
                f"patient {rec.patient_id!r} has conflicting true labels"
            )
    confusion = np.zeros((scheme.n_classes, scheme.n_classes), dtype=np.int64)
    for patient_id in sorted(votes):
        counts = np.bincount(votes[patient_id], minlength=scheme.n_classes)
        best = counts.max()
        winner = max(k for k in range(scheme.n_classes) if counts[k] == best)
        confusion[truth[patient_id], winner] += 1
    return metrics_from_confusion(confusion)


# --- hyperparameter search -----------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    hidden: tuple[int, ...] = (16, 32, 64, 128)
    lr_range: tuple[float, float] = (1e-4, 1e-2)  # log-uniform
    weight_decay_range: tuple[float, float] = (1e-6, 1e-3)  # log-uniform
    dropout: tuple[float, ...] = (0.0, 0.2, 0.5)

    def validate(self) -> None:
        if not self.hidden or not self.dropout:
            raise EmptySpace("hidden and dropout choices must be non-empty")
        for lo, hi in (self.lr_range, self.weight_decay_range):
            if not 0 < lo <= hi:
                raise EmptySpace(f"bad log-uniform range ({lo}, {hi})")


@dataclass(frozen=True)
class TrialResult:
    trial: int
    config: TrainConfig
    val_accuracy: float


def _sample_config(
    rng: np.random.Generator, space: SearchSpace, epochs: int, seed: int
) -> TrainConfig:
    hidden = int(rng.choice(np.asarray(space.hidden)))
    lr = float(np.exp(rng.uniform(*np.log(space.lr_range))))
    wd = float(np.exp(rng.uniform(*np.log(space.weight_decay_range))))
    dropout = float(rng.choice(np.asarray(space.dropout)))
    return TrainConfig(
        seed=seed, epochs=epochs, lr=lr, hidden=hidden,
        weight_decay=wd, dropout=dropout,
    )


def hyper_search(
    samples: Sequence[ProcessedSample],
    scheme: LabelScheme,
    n_trials: int,
    seed: int,
    space: SearchSpace | None = None,
    epochs: int = 100,
    jobs: int = 1,
) -> tuple[TrainConfig, list[TrialResult]]:
    """Seeded random search scored on an inner 80/20 split of ``samples``.

    All trial configurations are drawn up front from one generator, and each
    trial carries its own derived seed, so results do not depend on ``jobs``
    or scheduling. Returns the winning config (ties to the earliest trial)
    and the full trial log ordered by trial index.
    """
    if n_trials < 1:
        raise EmptySpace("n_trials must be >= 1")
    space = space or SearchSpace()
    space.validate()
    rng = np.random.default_rng(derive_seed(seed, 100))
    configs = [
        _sample_config(rng, space, epochs, seed=derive_seed(seed, 101, t))
        for t in range(n_trials)
    ]
    labels = [map_engel(s.engel, scheme) for s in samples]

    def run_trial(t: int) -> TrialResult:
        cfg = configs[t]
        inner_train, inner_val = stratified_split(
            samples, labels, ratio=0.8, seed=derive_seed(seed, 102, t)
        )
        result = train(inner_train, scheme, cfg)
        report = evaluate(result.model, inner_val, scheme)
        return TrialResult(trial=t, config=cfg, val_accuracy=report.accuracy)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(run_trial, range(n_trials)))
    else:
        trials = [run_trial(t) for t in range(n_trials)]

    best = trials[0]
    for trial in trials[1:]:
        if trial.val_accuracy > best.val_accuracy:
            best = trial
    return best.config, trials
