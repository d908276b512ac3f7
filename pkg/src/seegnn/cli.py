"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 validation/usage errors, 2 internal errors. Errors
are emitted as a single JSON line on stderr so wrappers can parse them. Every
command that consumes randomness requires an explicit ``--seed``; a run
manifest recording the resolved flags, derived seeds, and produced artifacts
is written atomically at the end of each successful run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    Dataset,
    SynthConfig,
    generate_synthetic,
    load_manifest,
    save_dataset,
)
from .errors import BadFlag, MissingFile, SeegnnError, ShapeMismatch
from .braingraph import binarize, correlation_matrix, export_graph
from .gnn import load_checkpoint, save_checkpoint
from .interpret import (
    connectivity_comparison,
    connectivity_report,
    occlusion_importance,
    reduce_dataset,
    saliency_importance,
    top_k,
)
from .pipeline import (
    LabelScheme,
    TrainConfig,
    derive_seed,
    evaluate,
    history_to_csv,
    hyper_search,
    map_engel,
    patient_wise,
    predict_samples,
    report_from_records,
    stratified_split,
    train,
)
from .preprocess import preprocess_recording, save_processed

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so errors map to exit code 1."""

    def error(self, message):
        raise BadFlag(message)


def _write_json(path: Path, doc) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_manifest(args, started: float, seeds: dict, artifacts: list[str]) -> None:
    """Record the resolved invocation next to its outputs (atomic write)."""
    flags = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in ("func",) and v is not None
    }
    doc = {
        "command": args.command,
        "flags": flags,
        "seeds": seeds,
        "artifacts": sorted(artifacts),
        "tool_version": __version__,
        "duration_s": round(time.monotonic() - started, 3),
    }
    _write_json(Path(args.out) / "run_manifest.json", doc)


def _load_processed_dataset(manifest: str):
    dataset = load_manifest(manifest)
    return dataset, [preprocess_recording(rec) for rec in dataset.recordings]


def _find_sample(samples, seizure_id: str):
    for sample in samples:
        if sample.seizure_id == seizure_id:
            return sample
    raise MissingFile(f"seizure {seizure_id!r} not found in manifest")


# --- subcommand bodies --------------------------------------------------------


def _cmd_synth(args) -> int:
    started = time.monotonic()
    config = SynthConfig(
        n_patients=args.patients,
        seizures_per_patient=tuple(args.seizures),
        channels_per_patient=tuple(args.channels),
        class_scheme=args.class_scheme,
        coupling_strength=args.coupling,
        noise_sd=args.noise,
        seed=args.seed,
    )
    dataset = generate_synthetic(config)
    out = _out_dir(args)
    manifest_path = save_dataset(dataset, out)
    if not args.quiet:
        print(f"{manifest_path} ({len(dataset)} recordings)")
    _run_manifest(args, started, {"seed": args.seed}, ["manifest.json", "signals/"])
    return 0


def _cmd_preprocess(args) -> int:
    started = time.monotonic()
    dataset, samples = _load_processed_dataset(args.manifest)
    out = _out_dir(args)
    artifacts = []
    for sample in samples:
        save_processed(sample, out)
        artifacts.append(f"{sample.seizure_id}.json")
        artifacts.append(f"{sample.seizure_id}.f32")
    if not args.quiet:
        print(f"{out} ({len(samples)} samples cached)")
    _run_manifest(args, started, {}, artifacts)
    return 0


def _split_with_seed(samples, scheme: LabelScheme, ratio: float, seed: int):
    labels = [map_engel(s.engel, scheme) for s in samples]
    return stratified_split(samples, labels, ratio=ratio, seed=seed)


def _cmd_train(args) -> int:
    started = time.monotonic()
    scheme = LabelScheme(args.scheme)
    _, samples = _load_processed_dataset(args.manifest)
    split_seed = derive_seed(args.seed, 10)
    train_seed = derive_seed(args.seed, 11)
    train_samples, test_samples = _split_with_seed(
        samples, scheme, args.split, split_seed
    )
    config = TrainConfig(
        seed=train_seed,
        epochs=args.epochs,
        lr=args.lr,
        hidden=args.hidden,
        weight_decay=args.weight_decay,
        dropout=args.dropout,
        split_ratio=args.split,
    )
    result = train(train_samples, scheme, config)
    out = _out_dir(args)
    save_checkpoint(result.model, result.state, out / "checkpoint.json")
    _write_text(out / "history.csv", history_to_csv(result.history))

    records = predict_samples(result.model, test_samples, scheme)
    report = report_from_records(records, scheme.n_classes)
    doc = report.to_dict(scheme)
    doc["patient_wise"] = patient_wise(records, scheme).to_dict(scheme)
    doc["n_train"] = len(train_samples)
    doc["n_test"] = len(test_samples)
    _write_json(out / "report.json", doc)
    if not args.quiet:
        print(
            f"test accuracy {report.accuracy:.3f} "
            f"({len(train_samples)} train / {len(test_samples)} test)"
        )
    _run_manifest(
        args, started,
        {"seed": args.seed, "split_seed": split_seed, "train_seed": train_seed},
        ["checkpoint.json", "history.csv", "report.json"],
    )
    return 0


def _cmd_evaluate(args) -> int:
    started = time.monotonic()
    scheme = LabelScheme(args.scheme)
    model, _ = load_checkpoint(args.checkpoint)
    if model.n_classes != scheme.n_classes:
        raise ShapeMismatch(
            f"checkpoint has {model.n_classes} classes, scheme {scheme.value!r} "
            f"needs {scheme.n_classes}"
        )
    _, samples = _load_processed_dataset(args.manifest)
    records = predict_samples(model, samples, scheme)
    report = report_from_records(records, scheme.n_classes)
    doc = report.to_dict(scheme)
    doc["patient_wise"] = patient_wise(records, scheme).to_dict(scheme)
    out = _out_dir(args)
    _write_json(out / "report.json", doc)
    if not args.quiet:
        print(f"accuracy {report.accuracy:.3f} over {report.n} samples")
    _run_manifest(args, started, {}, ["report.json"])
    return 0


def _cmd_hypersearch(args) -> int:
    started = time.monotonic()
    scheme = LabelScheme(args.scheme)
    _, samples = _load_processed_dataset(args.manifest)
    split_seed = derive_seed(args.seed, 10)
    train_samples, _ = _split_with_seed(samples, scheme, args.split, split_seed)
    best, trials = hyper_search(
        train_samples, scheme,
        n_trials=args.trials, seed=args.seed, epochs=args.epochs, jobs=args.jobs,
    )
    out = _out_dir(args)
    _write_json(
        out / "trials.json",
        [
            {
                "trial": t.trial,
                "val_accuracy": t.val_accuracy,
                "hidden": t.config.hidden,
                "lr": t.config.lr,
                "weight_decay": t.config.weight_decay,
                "dropout": t.config.dropout,
            }
            for t in trials
        ],
    )
    _write_json(
        out / "best_config.json",
        {
            "hidden": best.hidden,
            "lr": best.lr,
            "weight_decay": best.weight_decay,
            "dropout": best.dropout,
            "epochs": best.epochs,
        },
    )
    if not args.quiet:
        winner = max(trials, key=lambda t: t.val_accuracy)
        print(f"best trial {winner.trial}: val accuracy {winner.val_accuracy:.3f}")
    _run_manifest(
        args, started, {"seed": args.seed, "split_seed": split_seed},
        ["trials.json", "best_config.json"],
    )
    return 0


def _cmd_importance(args) -> int:
    started = time.monotonic()
    scheme = LabelScheme(args.scheme)
    model, _ = load_checkpoint(args.checkpoint)
    if model.n_classes != scheme.n_classes:
        raise ShapeMismatch(
            f"checkpoint has {model.n_classes} classes, scheme {scheme.value!r} "
            f"needs {scheme.n_classes}"
        )
    _, samples = _load_processed_dataset(args.manifest)
    fn = saliency_importance if args.method == "saliency" else occlusion_importance
    report = fn(model, samples, scheme, group_by=args.group_by)
    out = _out_dir(args)
    _write_json(out / "importance.json", report.to_dict(k=args.k))
    if not args.quiet:
        print(", ".join(top_k(report, args.k)))
    _run_manifest(args, started, {}, ["importance.json"])
    return 0


def _cmd_reduce(args) -> int:
    started = time.monotonic()
    if bool(args.labels) == bool(args.from_importance):
        raise BadFlag("give exactly one of --labels or --from-importance")
    if args.labels:
        path = Path(args.labels)
        if not path.exists():
            raise MissingFile(str(path))
        labels = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    else:
        path = Path(args.from_importance)
        if not path.exists():
            raise MissingFile(str(path))
        labels = json.loads(path.read_text())["top"]
    dataset = load_manifest(args.manifest)
    reduced = reduce_dataset(dataset, labels, match_on=args.match_on)
    out = _out_dir(args)
    manifest_path = save_dataset(reduced, out)
    if not args.quiet:
        print(f"{manifest_path} ({len(reduced)} of {len(dataset)} recordings kept)")
    _run_manifest(args, started, {}, ["manifest.json", "signals/"])
    return 0


def _cmd_connectivity(args) -> int:
    started = time.monotonic()
    _, samples = _load_processed_dataset(args.manifest)
    sample_a = _find_sample(samples, args.seizure)
    out = _out_dir(args)
    artifacts = ["connectivity.json"]
    if args.seizure_b:
        sample_b = _find_sample(samples, args.seizure_b)
        doc = connectivity_comparison(sample_a, sample_b, args.threshold)
        report_a = connectivity_report(sample_a, args.threshold)
        report_b = connectivity_report(sample_b, args.threshold)
        _write_text(out / f"{sample_a.seizure_id}.dot", report_a.dot)
        _write_text(out / f"{sample_b.seizure_id}.dot", report_b.dot)
        artifacts += [f"{sample_a.seizure_id}.dot", f"{sample_b.seizure_id}.dot"]
    else:
        report = connectivity_report(sample_a, args.threshold)
        doc = report.to_dict()
        _write_text(out / f"{sample_a.seizure_id}.dot", report.dot)
        artifacts.append(f"{sample_a.seizure_id}.dot")
    _write_json(out / "connectivity.json", doc)
    if not args.quiet:
        print(out / "connectivity.json")
    _run_manifest(args, started, {}, artifacts)
    return 0


def _cmd_export_graph(args) -> int:
    started = time.monotonic()
    _, samples = _load_processed_dataset(args.manifest)
    sample = _find_sample(samples, args.seizure)
    graph = correlation_matrix(sample)
    exported = binarize(graph, args.threshold) if args.binary else graph
    payload = export_graph(exported, args.format)
    out = _out_dir(args)
    name = f"{sample.seizure_id}.{args.format}"
    tmp = out / (name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, out / name)
    if not args.quiet:
        print(out / name)
    _run_manifest(args, started, {}, [name])
    return 0


# --- parser -------------------------------------------------------------------


def _add_common(p: _Parser, *, manifest=True, out=True, seed=False, scheme=False):
    if manifest:
        p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    if out:
        p.add_argument("--out", required=True, help="output directory")
    if seed:
        p.add_argument("--seed", type=int, required=True, help="RNG seed (required)")
    if scheme:
        p.add_argument(
            "--scheme", choices=[s.value for s in LabelScheme], required=True,
        )
    p.add_argument("--quiet", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="seegnn", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    _add_common(p, manifest=False, seed=True)
    p.add_argument("--patients", type=int, default=15)
    p.add_argument("--seizures", type=int, nargs=2, default=[4, 19],
                   metavar=("LO", "HI"))
    p.add_argument("--channels", type=int, nargs=2, default=[58, 127],
                   metavar=("LO", "HI"))
    p.add_argument("--class-scheme", choices=["binary", "three_class", "engel4"],
                   default="engel4")
    p.add_argument("--coupling", type=float, default=0.8)
    p.add_argument("--noise", type=float, default=0.3)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("preprocess", help="cache conditioned samples")
    _add_common(p)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train a model and evaluate the held-out split")
    _add_common(p, seed=True, scheme=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--split", type=float, default=0.8)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a manifest")
    _add_common(p, scheme=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("hypersearch", help="random hyperparameter search")
    _add_common(p, seed=True, scheme=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--split", type=float, default=0.8)
    p.set_defaults(func=_cmd_hypersearch)

    p = sub.add_parser("importance", help="channel/region importance scores")
    _add_common(p, scheme=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=["saliency", "occlusion"], default="saliency")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--group-by", choices=["region", "label"], default="region")
    p.set_defaults(func=_cmd_importance)

    p = sub.add_parser("reduce", help="restrict a dataset to selected channels")
    _add_common(p)
    p.add_argument("--labels", help="file with one label per line")
    p.add_argument("--from-importance", help="importance.json to take the top set from")
    p.add_argument("--match-on", choices=["region", "label"], default="region")
    p.set_defaults(func=_cmd_reduce)

    p = sub.add_parser("connectivity", help="thalamic connectivity report")
    _add_common(p)
    p.add_argument("--seizure", required=True, help="seizure_id to analyze")
    p.add_argument("--seizure-b", help="optional second seizure for A/B comparison")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_connectivity)

    p = sub.add_parser("export-graph", help="write a correlation graph as DOT/JSON")
    _add_common(p)
    p.add_argument("--seizure", required=True)
    p.add_argument("--format", choices=["dot", "json"], default="json")
    p.add_argument("--binary", action="store_true", help="export the thresholded graph")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_export_graph)

    return parser


def _fail(exc: Exception) -> None:
    line = json.dumps({"error": type(exc).__name__, "message": str(exc)})
    print(line, file=sys.stderr)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except BadFlag as exc:
        _fail(exc)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SeegnnError as exc:
        _fail(exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        _fail(exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
