"""Signal conditioning: resample to 128 Hz, z-score, fit to 5000 points.

The per-channel order is fixed as resample -> zscore -> fit_length, so the
zero padding appended by ``fit_length`` never perturbs the standardized
statistics of the retained segment. Channels whose resampled trace is
(numerically) constant become all-zero rows and are flagged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ChannelInfo, Engel, SeizureRecording, load_signal, save_signal
from .errors import EmptySignal, IoFailure, MissingFile, NonPositiveRate, SchemaViolation

TARGET_RATE_HZ = 128.0
TARGET_LENGTH = 5000
CONSTANT_SD = 1e-8


@dataclass(eq=False)
class ProcessedSample:
    """One recording after conditioning: (n_channels x 5000) z-scored features."""

    seizure_id: str
    patient_id: str
    engel: Engel
    channels: list[ChannelInfo]
    features: np.ndarray  # float64
    constant_channels: np.ndarray  # bool per channel

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProcessedSample):
            return NotImplemented
        return (
            self.seizure_id == other.seizure_id
            and self.patient_id == other.patient_id
            and self.engel == other.engel
            and self.channels == other.channels
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.constant_channels, other.constant_channels)
        )


def resample(signal: np.ndarray, from_hz: float, to_hz: float = TARGET_RATE_HZ) -> np.ndarray:
    """Linear-interpolation resampling on the uniform time grid.

    Output length is ``round(len(signal) * to_hz / from_hz)``; equal rates
    return the input unchanged.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size < 2:
        raise EmptySignal("resample needs a 1-D signal of length >= 2")
    if not (from_hz > 0 and to_hz > 0):
        raise NonPositiveRate(f"rates must be positive, got {from_hz}, {to_hz}")
    if from_hz == to_hz:
        return signal
    n_out = int(round(signal.size * to_hz / from_hz))
    t_in = np.arange(signal.size) / from_hz
    t_out = np.arange(n_out) / to_hz
    return np.interp(t_out, t_in, signal)


def _standardize(signal: np.ndarray) -> tuple[np.ndarray, bool]:
    mean = signal.mean()
    sd = signal.std()  # population (1/N) convention
    if sd < CONSTANT_SD:
        return np.zeros_like(signal), True
    return (signal - mean) / sd, False


def zscore(signal: np.ndarray) -> np.ndarray:
    """Standardize to mean 0 / population sd 1; constant input maps to zeros."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size < 2:
        raise EmptySignal("zscore needs a 1-D signal of length >= 2")
    return _standardize(signal)[0]


def fit_length(signal: np.ndarray, target: int = TARGET_LENGTH) -> np.ndarray:
    """Truncate to the first ``target`` samples or zero-pad at the end."""
    signal = np.asarray(signal, dtype=np.float64)
    if target < 1:
        raise EmptySignal(f"target length must be >= 1, got {target}")
    if signal.size >= target:
        return signal[:target].copy()
    out = np.zeros(target, dtype=np.float64)
    out[: signal.size] = signal
    return out


def preprocess_recording(
    rec: SeizureRecording, target_length: int = TARGET_LENGTH
) -> ProcessedSample:
    """Apply resample -> zscore -> fit_length per channel; metadata passes through."""
    rec.validate()
    n = rec.n_channels
    features = np.empty((n, target_length), dtype=np.float64)
    flags = np.zeros(n, dtype=bool)
    for i in range(n):
        row = resample(rec.signal[i].astype(np.float64), rec.sampling_rate_hz)
        row, flags[i] = _standardize(row)
        features[i] = fit_length(row, target_length)
    return ProcessedSample(
        seizure_id=rec.seizure_id,
        patient_id=rec.patient_id,
        engel=rec.engel,
        channels=list(rec.channels),
        features=features,
        constant_channels=flags,
    )


# --- optional on-disk cache (f32le matrix + JSON sidecar) -------------------

def save_processed(sample: ProcessedSample, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{out_dir}: {exc}") from exc
    save_signal(sample.features, out_dir / f"{sample.seizure_id}.f32")
    sidecar = {
        "seizure_id": sample.seizure_id,
        "patient_id": sample.patient_id,
        "engel": sample.engel.value,
        "n_channels": sample.n_channels,
        "n_samples": sample.features.shape[1],
        "constant_channels": sample.constant_channels.tolist(),
        "channels": [
            {
                "label": ch.label,
                "region": ch.region,
                "is_thalamic": ch.is_thalamic,
                "is_soz": ch.is_soz,
            }
            for ch in sample.channels
        ],
    }
    sidecar_path = out_dir / f"{sample.seizure_id}.json"
    try:
        sidecar_path.write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(f"{sidecar_path}: {exc}") from exc
    return sidecar_path


def load_processed(sidecar_path: str | Path) -> ProcessedSample:
    sidecar_path = Path(sidecar_path)
    if not sidecar_path.exists():
        raise MissingFile(str(sidecar_path))
    try:
        doc = json.loads(sidecar_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{sidecar_path}: not valid JSON ({exc})") from exc
    for key in ("seizure_id", "patient_id", "engel", "n_channels", "n_samples", "channels"):
        if key not in doc:
            raise SchemaViolation(f"{sidecar_path}: missing field {key!r}")
    features = load_signal(
        sidecar_path.with_suffix(".f32"), doc["n_channels"], doc["n_samples"]
    ).astype(np.float64)
    channels = [
        ChannelInfo(
            label=ch["label"],
            region=ch["region"],
            is_thalamic=bool(ch.get("is_thalamic", False)),
            is_soz=bool(ch.get("is_soz", False)),
        )
        for ch in doc["channels"]
    ]
    flags = np.asarray(
        doc.get("constant_channels", [False] * doc["n_channels"]), dtype=bool
    )
    return ProcessedSample(
        seizure_id=doc["seizure_id"],
        patient_id=doc["patient_id"],
        engel=Engel(doc["engel"]),
        channels=channels,
        features=features,
        constant_channels=flags,
    )
