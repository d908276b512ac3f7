"""Cohort data model, manifest I/O, and the synthetic cohort generator.

A dataset is a collection of multichannel seizure recordings grouped by
patient, each carrying channel metadata (anatomical region, thalamic and
seizure-onset-zone flags) and a four-level Engel outcome score. Signals are
stored on disk as raw little-endian float32 (channel-major) next to a JSON
manifest; CSV is accepted as a convenience input format.

The synthetic generator produces cohorts with a known planted structure:
channels in a configurable set of "important" regions (plus all thalamic
channels) are driven by a shared latent source whose mixing weight scales
with the severity of the outcome, so worse-outcome recordings show stronger
cross-channel correlation in those regions. That gives downstream graph,
training, and importance code a measurable ground truth to recover.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateSeizureId,
    InvalidConfig,
    IoFailure,
    MissingFile,
    SchemaViolation,
    ShapeMismatch,
    UnreadableFile,
)

MANIFEST_VERSION = 1
SIGNAL_DTYPE = np.dtype("<f4")


class Engel(str, Enum):
    """Four-level surgical outcome score (I best, IV worst)."""

    I = "I"
    II = "II"
    III = "III"
    IV = "IV"

    @property
    def severity(self) -> int:
        """0 for grade I up to 3 for grade IV."""
        return ("I", "II", "III", "IV").index(self.value)


@dataclass(frozen=True)
class ChannelInfo:
    label: str
    region: str
    is_thalamic: bool = False
    is_soz: bool = False

    def validate(self) -> None:
        if not self.label:
            raise SchemaViolation("channel label must be non-empty")
        if not self.region:
            raise SchemaViolation(f"channel {self.label!r}: region must be non-empty")


@dataclass(eq=False)
class SeizureRecording:
    seizure_id: str
    patient_id: str
    engel: Engel
    sampling_rate_hz: float
    channels: list[ChannelInfo]
    signal: np.ndarray  # (n_channels, n_samples) float32

    def validate(self) -> None:
        for ch in self.channels:
            ch.validate()
        labels = [ch.label for ch in self.channels]
        if len(set(labels)) != len(labels):
            raise SchemaViolation(
                f"seizure {self.seizure_id!r}: duplicate channel labels"
            )
        if self.signal.ndim != 2 or self.signal.shape[0] != len(self.channels):
            raise ShapeMismatch(
                f"seizure {self.seizure_id!r}: signal has {self.signal.shape[0]} rows "
                f"but {len(self.channels)} channels are declared"
            )
        if self.signal.shape[1] < 2:
            raise SchemaViolation(
                f"seizure {self.seizure_id!r}: n_samples must be >= 2"
            )
        if not self.sampling_rate_hz > 0:
            raise SchemaViolation(
                f"seizure {self.seizure_id!r}: sampling_rate_hz must be positive"
            )

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SeizureRecording):
            return NotImplemented
        return (
            self.seizure_id == other.seizure_id
            and self.patient_id == other.patient_id
            and self.engel == other.engel
            and self.sampling_rate_hz == other.sampling_rate_hz
            and self.channels == other.channels
            and self.signal.shape == other.signal.shape
            and np.array_equal(self.signal, other.signal)
        )


@dataclass(eq=False)
class Dataset:
    recordings: list[SeizureRecording]
    provenance: str = ""

    def validate(self) -> None:
        if not self.recordings:
            raise SchemaViolation("dataset has no recordings")
        seen: set[str] = set()
        patient_engel: dict[str, Engel] = {}
        for rec in self.recordings:
            rec.validate()
            if rec.seizure_id in seen:
                raise DuplicateSeizureId(f"duplicate seizure_id {rec.seizure_id!r}")
            seen.add(rec.seizure_id)
            prior = patient_engel.setdefault(rec.patient_id, rec.engel)
            if prior != rec.engel:
                raise SchemaViolation(
                    f"patient {rec.patient_id!r} has inconsistent engel scores "
                    f"({prior.value} vs {rec.engel.value})"
                )

    @property
    def patient_ids(self) -> list[str]:
        out: list[str] = []
        for rec in self.recordings:
            if rec.patient_id not in out:
                out.append(rec.patient_id)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.recordings == other.recordings

    def __len__(self) -> int:
        return len(self.recordings)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for :func:`generate_synthetic`.

    ``coupling_strength`` sets the latent mixing weight for the worst-outcome
    group; better outcomes get proportionally weaker coupling (grade I none).
    """

    n_patients: int = 15
    seizures_per_patient: tuple[int, int] = (4, 19)
    channels_per_patient: tuple[int, int] = (58, 127)
    class_scheme: str = "engel4"  # binary | three_class | engel4
    planted_important_regions: tuple[str, ...] = ()
    coupling_strength: float = 0.8
    noise_sd: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 1:
            raise InvalidConfig("n_patients must be >= 1")
        lo, hi = self.seizures_per_patient
        if not (1 <= lo <= hi):
            raise InvalidConfig(f"bad seizures_per_patient range ({lo}, {hi})")
        lo, hi = self.channels_per_patient
        if not (2 <= lo <= hi <= 1024):
            raise InvalidConfig(
                f"channels_per_patient must lie within [2, 1024], got ({lo}, {hi})"
            )
        if self.class_scheme not in ("binary", "three_class", "engel4"):
            raise InvalidConfig(f"unknown class_scheme {self.class_scheme!r}")
        if not 0.0 <= self.coupling_strength <= 1.0:
            raise InvalidConfig("coupling_strength must lie in [0, 1]")
        if not self.noise_sd > 0:
            raise InvalidConfig("noise_sd must be positive")
        if self.seed < 0:
            raise InvalidConfig("seed must be a non-negative integer")


# Region vocabulary. The planted defaults line up with the ten-slot importance
# report downstream; "thalamus" must stay in the pool because every patient is
# guaranteed at least one thalamic channel.
PLANTED_REGIONS_DEFAULT: tuple[str, ...] = (
    "thalamus",
    "anterior cingulate",
    "frontal pole",
    "motor cortex",
    "insula",
    "orbitofrontal cortex",
    "anterior temporal",
    "posterior parietal",
    "central midline",
    "frontocentral",
)

FILLER_REGIONS: tuple[str, ...] = (
    "occipital",
    "hippocampus",
    "amygdala",
    "superior temporal",
    "precuneus",
    "supramarginal gyrus",
    "angular gyrus",
    "fusiform gyrus",
    "posterior cingulate",
    "parietal operculum",
    "cuneus",
    "lingual gyrus",
)

# How strongly each outcome grade couples planted channels to the shared
# latent, as a fraction of coupling_strength. Grades III/IV form the
# "negative outcome" group and get the full weight.
CLASS_COUPLING: dict[Engel, float] = {
    Engel.I: 0.0,
    Engel.II: 1.0 / 3.0,
    Engel.III: 1.0,
    Engel.IV: 1.0,
}

# Patient-count weights for the default engel4 scheme (grades I..IV).
_ENGEL4_WEIGHTS = (1, 2, 8, 4)


def _region_abbrev(region: str) -> str:
    words = re.findall(r"[a-zA-Z]+", region)
    if len(words) >= 2:
        return "".join(w[0] for w in words).upper()
    return region[:3].upper()


def _assign_engels(n_patients: int, class_scheme: str) -> list[Engel]:
    if class_scheme == "binary":
        cycle = (Engel.I, Engel.IV, Engel.II, Engel.III)
        return [cycle[i % 4] for i in range(n_patients)]
    if class_scheme == "three_class":
        cycle = (Engel.I, Engel.II, Engel.III, Engel.I, Engel.II, Engel.IV)
        return [cycle[i % 6] for i in range(n_patients)]
    # engel4: largest-remainder allocation over the 1:2:8:4 weights
    total = sum(_ENGEL4_WEIGHTS)
    raw = [w * n_patients / total for w in _ENGEL4_WEIGHTS]
    counts = [int(x) for x in raw]
    remainders = sorted(range(4), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in remainders:
        if sum(counts) >= n_patients:
            break
        counts[i] += 1
    # tiny cohorts: make sure at least one patient exists overall
    while sum(counts) < n_patients:
        counts[2] += 1
    grades = [Engel.I, Engel.II, Engel.III, Engel.IV]
    out: list[Engel] = []
    for grade, count in zip(grades, counts):
        out.extend([grade] * count)
    return out[:n_patients]


def _build_channels(
    rng: np.random.Generator, n_channels: int, planted: tuple[str, ...]
) -> list[ChannelInfo]:
    """Channel metadata for one patient: >=1 thalamic, >=1 SOZ, planted blocks."""
    regions: list[str] = []
    thalamic: list[bool] = []

    n_thal = 2 if n_channels >= 80 else 1
    regions.extend(["thalamus"] * n_thal)
    thalamic.extend([True] * n_thal)

    cortical_planted = [r for r in planted if r != "thalamus"]
    if cortical_planted:
        per_region = max(1, int(0.4 * n_channels) // max(1, len(planted)))
        for region in cortical_planted:
            take = min(per_region, n_channels - len(regions))
            regions.extend([region] * take)
            thalamic.extend([False] * take)
            if len(regions) >= n_channels:
                break

    fill_order = list(FILLER_REGIONS)
    i = 0
    while len(regions) < n_channels:
        regions.append(fill_order[i % len(fill_order)])
        thalamic.append(False)
        i += 1

    # SOZ channels sit among the planted cortical contacts when available
    cortical_idx = [
        i for i, r in enumerate(regions) if r in cortical_planted
    ] or [i for i, t in enumerate(thalamic) if not t] or list(range(n_channels))
    n_soz = int(rng.integers(1, min(3, len(cortical_idx)) + 1))
    soz_idx = set(rng.choice(cortical_idx, size=n_soz, replace=False).tolist())

    counters: dict[str, int] = {}
    channels: list[ChannelInfo] = []
    for i, region in enumerate(regions):
        abbrev = _region_abbrev(region)
        counters[abbrev] = counters.get(abbrev, 0) + 1
        channels.append(
            ChannelInfo(
                label=f"{abbrev}{counters[abbrev]}",
                region=region,
                is_thalamic=thalamic[i],
                is_soz=i in soz_idx,
            )
        )
    return channels


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Generate a deterministic cohort with planted correlation structure.

    Channels in the planted regions (and every thalamic channel) of a
    recording are a blend ``rho * latent + sqrt(1 - rho^2) * intrinsic`` of a
    shared per-recording latent source and channel-private noise, plus sensor
    noise scaled by ``noise_sd``. The blend weight rho is
    ``coupling_strength * CLASS_COUPLING[engel]`` with a small per-channel
    jitter, so the expected planted-pair correlation rises with both the
    coupling knob and the severity of the outcome. All random draws are made
    regardless of the coupling value, so two configs differing only in
    ``coupling_strength`` share identical noise realizations.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    planted = tuple(config.planted_important_regions) or PLANTED_REGIONS_DEFAULT
    engels = _assign_engels(config.n_patients, config.class_scheme)

    recordings: list[SeizureRecording] = []
    seizure_counter = 0
    for p, engel in enumerate(engels):
        patient_id = f"pt{p + 1:02d}"
        lo, hi = config.channels_per_patient
        n_channels = int(rng.integers(lo, hi + 1))
        channels = _build_channels(rng, n_channels, planted)
        coupled = np.array(
            [ch.is_thalamic or ch.region in planted for ch in channels]
        )
        lo_s, hi_s = config.seizures_per_patient
        n_seizures = int(rng.integers(lo_s, hi_s + 1))

        for s in range(n_seizures):
            # every 7th recording runs at 256 Hz to exercise resampling
            fs = 256.0 if seizure_counter % 7 == 3 else 128.0
            target_len = int(rng.integers(4200, 5801))
            n_samples = int(round(target_len * fs / 128.0))

            t = np.arange(n_samples) / fs
            f0 = rng.uniform(1.0, 8.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            sine_w = rng.uniform(0.4, 0.8)
            latent = sine_w * np.sqrt(2.0) * np.sin(2.0 * np.pi * f0 * t + phase)
            latent += np.sqrt(1.0 - sine_w**2) * rng.standard_normal(n_samples)

            rho_base = config.coupling_strength * CLASS_COUPLING[engel]
            signal = np.empty((n_channels, n_samples), dtype=np.float64)
            for i in range(n_channels):
                intrinsic = rng.standard_normal(n_samples)
                jitter = rng.uniform(0.85, 1.0)
                rho = rho_base * jitter if coupled[i] else 0.0
                base = rho * latent + np.sqrt(1.0 - rho * rho) * intrinsic
                base += config.noise_sd * rng.standard_normal(n_samples)
                amp = rng.uniform(20.0, 150.0)
                dc = rng.uniform(-40.0, 40.0)
                signal[i] = amp * base + dc

            seizure_counter += 1
            recordings.append(
                SeizureRecording(
                    seizure_id=f"{patient_id}s{s + 1:02d}",
                    patient_id=patient_id,
                    engel=engel,
                    sampling_rate_hz=fs,
                    channels=channels,
                    signal=signal.astype(SIGNAL_DTYPE),
                )
            )

    dataset = Dataset(recordings=recordings, provenance=f"synthetic:{config.seed}")
    dataset.validate()
    return dataset


# --- signal file I/O --------------------------------------------------------

def load_signal(
    path: str | Path,
    n_channels: int,
    n_samples: int,
    signal_format: str = "f32le",
) -> np.ndarray:
    """Load one signal matrix, checking the declared shape exactly."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    if signal_format == "f32le":
        data = path.read_bytes()
        expected = n_channels * n_samples * SIGNAL_DTYPE.itemsize
        if len(data) != expected:
            raise ShapeMismatch(
                f"{path}: {len(data)} bytes, expected {expected} "
                f"({n_channels} x {n_samples} float32)"
            )
        return np.frombuffer(data, dtype=SIGNAL_DTYPE).reshape(n_channels, n_samples).copy()
    if signal_format == "csv":
        try:
            matrix = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except (ValueError, OSError) as exc:
            raise UnreadableFile(f"{path}: {exc}") from exc
        if matrix.shape != (n_channels, n_samples):
            raise ShapeMismatch(
                f"{path}: CSV shape {matrix.shape}, expected ({n_channels}, {n_samples})"
            )
        return matrix.astype(SIGNAL_DTYPE)
    raise SchemaViolation(f"unknown signal_format {signal_format!r}")


def save_signal(signal: np.ndarray, path: str | Path) -> None:
    """Write a signal matrix as raw little-endian float32, channel-major."""
    out = np.ascontiguousarray(signal, dtype=SIGNAL_DTYPE)
    try:
        Path(path).write_bytes(out.tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


# --- manifest I/O -----------------------------------------------------------

def _require(obj: dict, key: str, context: str):
    if key not in obj:
        raise SchemaViolation(f"{context}: missing field {key!r}")
    return obj[key]


def load_manifest(path: str | Path) -> Dataset:
    """Load and fully validate a dataset from its JSON manifest."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaViolation(f"{path}: not valid JSON ({exc})") from exc
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc

    if not isinstance(doc, dict):
        raise SchemaViolation(f"{path}: manifest root must be an object")
    version = _require(doc, "version", str(path))
    if version != MANIFEST_VERSION:
        raise SchemaViolation(
            f"{path}: version: expected {MANIFEST_VERSION}, got {version!r}"
        )
    patients = _require(doc, "patients", str(path))
    if not isinstance(patients, list) or not patients:
        raise SchemaViolation(f"{path}: patients: must be a non-empty list")

    base = path.parent
    recordings: list[SeizureRecording] = []
    for patient in patients:
        patient_id = _require(patient, "patient_id", "patient")
        engel_raw = _require(patient, "engel", f"patient {patient_id!r}")
        try:
            engel = Engel(engel_raw)
        except ValueError:
            raise SchemaViolation(
                f"patient {patient_id!r}: engel: {engel_raw!r} is not one of I, II, III, IV"
            ) from None
        seizures = _require(patient, "seizures", f"patient {patient_id!r}")
        if not isinstance(seizures, list) or not seizures:
            raise SchemaViolation(
                f"patient {patient_id!r}: seizures: must be a non-empty list"
            )
        for seiz in seizures:
            sid = _require(seiz, "seizure_id", f"patient {patient_id!r} seizure")
            ctx = f"seizure {sid!r}"
            rate = _require(seiz, "sampling_rate_hz", ctx)
            if not isinstance(rate, (int, float)) or not rate > 0:
                raise SchemaViolation(f"{ctx}: sampling_rate_hz: must be positive")
            n_channels = _require(seiz, "n_channels", ctx)
            n_samples = _require(seiz, "n_samples", ctx)
            if not isinstance(n_channels, int) or n_channels < 1:
                raise SchemaViolation(f"{ctx}: n_channels: must be a positive integer")
            if not isinstance(n_samples, int) or n_samples < 2:
                raise SchemaViolation(f"{ctx}: n_samples: must be an integer >= 2")
            signal_format = seiz.get("signal_format", "f32le")
            if signal_format not in ("f32le", "csv"):
                raise SchemaViolation(
                    f"{ctx}: signal_format: {signal_format!r} is not 'f32le' or 'csv'"
                )
            chans_raw = _require(seiz, "channels", ctx)
            if not isinstance(chans_raw, list) or len(chans_raw) != n_channels:
                raise SchemaViolation(
                    f"{ctx}: channels: expected list of {n_channels} entries"
                )
            channels = []
            for ch in chans_raw:
                channels.append(
                    ChannelInfo(
                        label=str(_require(ch, "label", f"{ctx} channel")),
                        region=str(_require(ch, "region", f"{ctx} channel")),
                        is_thalamic=bool(ch.get("is_thalamic", False)),
                        is_soz=bool(ch.get("is_soz", False)),
                    )
                )
            signal_path = base / _require(seiz, "signal_path", ctx)
            signal = load_signal(signal_path, n_channels, n_samples, signal_format)
            recordings.append(
                SeizureRecording(
                    seizure_id=str(sid),
                    patient_id=str(patient_id),
                    engel=engel,
                    sampling_rate_hz=float(rate),
                    channels=channels,
                    signal=signal,
                )
            )

    dataset = Dataset(recordings=recordings, provenance=str(path))
    dataset.validate()
    return dataset


_SAFE_NAME = re.compile(r"[^A-Za-z0-9._-]")


def save_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write manifest + signal files under ``out_dir``; returns the manifest path."""
    dataset.validate()
    out_dir = Path(out_dir)
    signals_dir = out_dir / "signals"
    try:
        signals_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{out_dir}: {exc}") from exc

    used_names: set[str] = set()
    patients: dict[str, dict] = {}
    for rec in dataset.recordings:
        name = _SAFE_NAME.sub("_", rec.seizure_id) or "seizure"
        candidate, k = name, 1
        while candidate in used_names:
            candidate = f"{name}_{k}"
            k += 1
        used_names.add(candidate)
        rel_path = f"signals/{candidate}.f32"
        save_signal(rec.signal, out_dir / rel_path)

        entry = patients.setdefault(
            rec.patient_id,
            {"patient_id": rec.patient_id, "engel": rec.engel.value, "seizures": []},
        )
        entry["seizures"].append(
            {
                "seizure_id": rec.seizure_id,
                "sampling_rate_hz": rec.sampling_rate_hz,
                "n_channels": rec.n_channels,
                "n_samples": rec.n_samples,
                "signal_path": rel_path,
                "signal_format": "f32le",
                "channels": [
                    {
                        "label": ch.label,
                        "region": ch.region,
                        "is_thalamic": ch.is_thalamic,
                        "is_soz": ch.is_soz,
                    }
                    for ch in rec.channels
                ],
            }
        )

    manifest = {"version": MANIFEST_VERSION, "patients": list(patients.values())}
    manifest_path = out_dir / "manifest.json"
    try:
        manifest_path.write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(f"{manifest_path}: {exc}") from exc
    return manifest_path
