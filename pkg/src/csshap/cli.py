"""Command-line workflow: simulate, ingest, train, attribute, report.

Configuration comes from a nested JSON file (``--config``); every key has
a built-in default and unknown keys are rejected with their dotted path.
Precedence, highest first: command-line flag, config file, built-in
default.  The fully resolved configuration (seeds included) is echoed to
``run_config.json`` in the output directory, so a run is reproducible
from its artifacts alone.

Top-level config sections::

    output_dir    str, overridden by --out
    dataset       benchmark generator knobs (samples_per_class, snr_db, ...)
    window        analysis window (kind, length, hop)
    model         architecture kind, training hyperparameters, seed
    attribution   domain, cells, background_size, num_permutations,
                  seed, target, method, sample_index

Exit codes: 0 success, 2 validation error, 3 training/runtime error,
4 IO or format error.

``--jobs`` bounds internal parallelism.  The current implementation is
single-process and sequential, so outputs are trivially independent of
the job count; the flag is validated and recorded for forward
compatibility.
"""

import argparse
import copy
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import nn, simulate
from .attribution import (
    AttributionConfig,
    attribute,
    export_attribution_csv,
)
from .domains import DOMAIN_KINDS, draw_background
from .errors import (
    CapacityError,
    ConfigurationError,
    FormatError,
    InvalidInputError,
    TrainingError,
)
from .reporting import (
    attribution_figures,
    sample_panel_figure,
    validate_summary,
    write_report,
)
from .signal import TimeSeries, WindowSpec, normalize_meanstd

log = logging.getLogger("csshap")

_DEFAULT_CONFIG = {
    "output_dir": "run",
    "dataset": {
        "samples_per_class": 300,
        "snr_db": 0.0,
        "seed": 0,
        "sample_length": 2000,
        "sample_rate_hz": 10_000.0,
        "train_fraction": 0.7,
    },
    "window": {"kind": "rectangular", "length": 32, "hop": 32},
    "model": {
        "kind": "cnn1d",
        "seed": 0,
        "epochs": 20,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "lr_decay": 0.99,
    },
    "attribution": {
        "domain": "cyclic_spectral",
        "cells": None,
        "background_size": 32,
        "num_permutations": 200,
        "seed": 0,
        "target": "probability",
        "method": "sampled",
        "sample_index": None,
    },
}


def _merge_config(base: dict, override: dict, path="") -> dict:
    merged = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown configuration key: {path}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(
                    f"configuration key {path}{key} must be an object"
                )
            merged[key] = _merge_config(base[key], value, f"{path}{key}.")
        else:
            merged[key] = value
    return merged


def _effective_config(args) -> dict:
    config = copy.deepcopy(_DEFAULT_CONFIG)
    if args.config is not None:
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except OSError as exc:
            raise FormatError(f"{path}: cannot read config ({exc})") from exc
        except ValueError as exc:
            raise FormatError(f"{path}: config is not valid JSON ({exc})") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path}: config root must be a JSON object")
        config = _merge_config(config, loaded)
    if args.out is not None:
        config["output_dir"] = args.out
    if args.seed is not None:
        config["dataset"]["seed"] = args.seed
        config["model"]["seed"] = args.seed
        config["attribution"]["seed"] = args.seed
    if args.jobs < 1:
        raise ConfigurationError(f"--jobs must be >= 1, got {args.jobs}")
    return config


def _write_config_echo(config: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n"
    )


def _window_from_config(config: dict) -> WindowSpec:
    w = config["window"]
    return WindowSpec(w["kind"], int(w["length"]), int(w["hop"]))


# ---------------------------------------------------------------------------
# Dataset access shared by train and attribute


class LoadedData:
    def __init__(self, samples, labels, train_mask, class_names, sample_rate_hz):
        self.samples = samples
        self.labels = labels
        self.train_mask = train_mask
        self.class_names = class_names
        self.sample_rate_hz = sample_rate_hz


def _load_any_dataset(root) -> LoadedData:
    """Load either a simulated or an ingested dataset directory."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{root}: no manifest.json found")
    manifest = json.loads(manifest_path.read_text())
    if "spec" in manifest:
        ds = simulate.load_dataset(root)
        return LoadedData(
            ds.samples, ds.labels, ds.train_mask, ds.class_names, ds.sample_rate_hz
        )
    try:
        meta = manifest["ingest"]
        entries = manifest["samples"]
        class_names = tuple(manifest["class_names"])
        length = int(meta["segment_length"])
        fs = float(meta["sample_rate_hz"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{manifest_path}: malformed manifest ({exc})") from exc
    n = len(entries)
    samples = np.empty((n, length), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    train_mask = np.zeros(n, dtype=bool)
    for entry in entries:
        i = entry["index"]
        payload = np.fromfile(root / entry["file"], dtype="<f4")
        if payload.size != length:
            raise FormatError(
                f"{entry['file']}: expected {length} float32 values, got {payload.size}"
            )
        samples[i] = payload
        labels[i] = entry["class_index"]
        train_mask[i] = entry["split"] == "train"
    return LoadedData(samples, labels, train_mask, class_names, fs)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args, config) -> int:
    out = Path(config["output_dir"])
    spec = simulate.benchmark_spec(**config["dataset"])
    ds = simulate.build_dataset(spec)
    _write_config_echo(config, out)
    manifest = simulate.save_dataset(ds, out / "dataset")
    if args.csv:
        simulate.export_dataset_csv(ds, out / "dataset" / "dataset.csv")
    n_train = int(ds.train_mask.sum())
    print(
        f"wrote {len(ds.labels)} samples ({n_train} train / "
        f"{len(ds.labels) - n_train} test) to {manifest.parent}"
    )
    return 0


# ---------------------------------------------------------------------------
# ingest


def _read_recording_csv(path: Path) -> np.ndarray:
    """One numeric value per row; an unparseable first row is a header."""
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for row, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != 1:
                raise FormatError(
                    f"{path}: row {row}: expected 1 column, got {len(cells)}"
                )
            try:
                values.append(float(cells[0]))
            except ValueError:
                if row == 0:
                    continue
                raise FormatError(
                    f"{path}: row {row}: could not parse {cells[0]!r} as a number"
                ) from None
    return np.asarray(values, dtype=np.float64)


def _read_recording_raw(path: Path) -> np.ndarray:
    size = path.stat().st_size
    if size % 4 != 0:
        raise FormatError(
            f"{path}: {size} bytes is not divisible by 4 (little-endian float32)"
        )
    return np.fromfile(path, dtype="<f4").astype(np.float64)


def _parse_label_map(text: str) -> dict:
    candidate = Path(text)
    try:
        if candidate.suffix == ".json" and candidate.exists():
            blob = json.loads(candidate.read_text())
        else:
            blob = json.loads(text)
    except ValueError as exc:
        raise ConfigurationError(
            f"--label-map must be a JSON object or a path to one ({exc})"
        ) from exc
    if not isinstance(blob, dict) or not all(
        isinstance(v, str) for v in blob.values()
    ):
        raise ConfigurationError("--label-map must map file names to label strings")
    return blob


def cmd_ingest(args, config) -> int:
    out = Path(config["output_dir"])
    label_map = _parse_label_map(args.label_map)
    length = args.segment_length
    if length < 2:
        raise ConfigurationError(f"--segment-length must be >= 2, got {length}")
    if not 0.0 < args.train_fraction < 1.0:
        raise ConfigurationError(
            f"--train-fraction must be in (0, 1), got {args.train_fraction}"
        )
    reader = _read_recording_csv if args.format == "csv" else _read_recording_raw
    class_names = []
    segments, labels, sources = [], [], []
    for source in args.paths:
        source = Path(source)
        name = source.name
        if name not in label_map:
            raise ConfigurationError(f"--label-map has no entry for {name}")
        label = label_map[name]
        if label not in class_names:
            class_names.append(label)
        values = reader(source)
        count = values.size // length
        if count == 0:
            raise FormatError(
                f"{source}: {values.size} samples is shorter than one "
                f"segment of {length}"
            )
        for k in range(count):
            seg = TimeSeries(
                samples=values[k * length:(k + 1) * length],
                sample_rate_hz=args.sample_rate,
            )
            try:
                segments.append(normalize_meanstd(seg).samples)
            except InvalidInputError as exc:
                raise FormatError(f"{source}: segment {k}: {exc}") from exc
            labels.append(class_names.index(label))
        sources.append({"file": str(source), "label": label, "segments": count})
        log.debug("ingested %s: %d segments", source, count)

    labels = np.asarray(labels, dtype=np.int64)
    split_rng = np.random.default_rng([config["dataset"]["seed"], 777])
    train_mask = np.zeros(len(labels), dtype=bool)
    for ci in range(len(class_names)):
        idx = np.flatnonzero(labels == ci)
        order = split_rng.permutation(len(idx))
        train_mask[idx[order[: int(args.train_fraction * len(idx))]]] = True

    data_dir = out / "dataset"
    (data_dir / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, seg in enumerate(segments):
        rel = f"samples/sample_{i:05d}.f32"
        np.asarray(seg).astype("<f4").tofile(data_dir / rel)
        entries.append(
            {
                "index": i,
                "file": rel,
                "class_index": int(labels[i]),
                "class_name": class_names[labels[i]],
                "split": "train" if train_mask[i] else "test",
            }
        )
    manifest = {
        "ingest": {
            "format": args.format,
            "segment_length": length,
            "sample_rate_hz": args.sample_rate,
            "train_fraction": args.train_fraction,
            "split_seed": config["dataset"]["seed"],
            "sources": sources,
        },
        "class_names": class_names,
        "samples": entries,
    }
    _write_config_echo(config, out)
    (data_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True)
    )
    print(f"ingested {len(segments)} segments from {len(sources)} files to {data_dir}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args, config) -> int:
    out = Path(config["output_dir"])
    data = _load_any_dataset(args.data if args.data else out / "dataset")
    mc = config["model"]
    length = data.samples.shape[1]
    k = len(data.class_names)
    if mc["kind"] == "cnn1d":
        model_config = nn.default_cnn_config(length, k, seed=int(mc["seed"]))
    elif mc["kind"] == "mlp":
        model_config = nn.default_mlp_config(length, k, seed=int(mc["seed"]))
    else:
        raise ConfigurationError(f"model.kind must be cnn1d or mlp, got {mc['kind']!r}")
    model = nn.build_model(model_config)
    split = nn.ArraySplit(
        train_x=data.samples[data.train_mask],
        train_y=data.labels[data.train_mask],
        test_x=data.samples[~data.train_mask],
        test_y=data.labels[~data.train_mask],
    )
    report = nn.train(
        model,
        split,
        epochs=int(mc["epochs"]),
        batch_size=int(mc["batch_size"]),
        learning_rate=float(mc["learning_rate"]),
        lr_decay=float(mc["lr_decay"]),
        seed=int(mc["seed"]),
    )
    model_dir = out / "model"
    model_dir.mkdir(parents=True, exist_ok=True)
    nn.save_model(model, model_dir / "model.bin")
    (model_dir / "train_report.json").write_text(report.to_json())
    report.save_csv(model_dir / "train_report.csv")
    _write_config_echo(config, out)
    print(
        f"trained {mc['kind']} for {mc['epochs']} epochs: "
        f"train accuracy {report.train_accuracies[-1]:.4f}, "
        f"test accuracy {report.test_accuracies[-1]:.4f}; "
        f"model at {model_dir / 'model.bin'}"
    )
    return 0


# ---------------------------------------------------------------------------
# attribute


def _select_sample(data: LoadedData, sample_index) -> int:
    if sample_index is None:
        test_indices = np.flatnonzero(~data.train_mask)
        if test_indices.size == 0:
            raise InvalidInputError("dataset has no test samples to explain")
        return int(test_indices[0])
    index = int(sample_index)
    if not 0 <= index < len(data.labels):
        raise InvalidInputError(
            f"sample index {index} out of range for {len(data.labels)} samples"
        )
    return index


def cmd_attribute(args, config) -> int:
    out = Path(config["output_dir"])
    ac = dict(config["attribution"])
    if args.domain is not None:
        ac["domain"] = args.domain
    if args.sample_index is not None:
        ac["sample_index"] = args.sample_index
    kind = ac["domain"]
    if kind not in DOMAIN_KINDS:
        raise ConfigurationError(
            f"attribution.domain must be one of {', '.join(DOMAIN_KINDS)}, "
            f"got {kind!r}"
        )
    data = _load_any_dataset(args.data if args.data else out / "dataset")
    model = nn.load_model(args.model if args.model else out / "model" / "model.bin")
    if model.config.class_count != len(data.class_names):
        raise InvalidInputError(
            f"model has {model.config.class_count} classes but the dataset "
            f"has {len(data.class_names)}"
        )
    index = _select_sample(data, ac["sample_index"])
    ac["sample_index"] = index
    config = dict(config)
    config["attribution"] = ac
    window = _window_from_config(config)
    x = TimeSeries(samples=data.samples[index], sample_rate_hz=data.sample_rate_hz)
    train_signals = [
        TimeSeries(samples=row, sample_rate_hz=data.sample_rate_hz)
        for row in data.samples[data.train_mask]
    ]
    background = draw_background(
        kind,
        train_signals,
        size=int(ac["background_size"]),
        seed=int(ac["seed"]),
        window=window,
    )
    cells = ac["cells"]
    if isinstance(cells, list):
        cells = tuple(cells)
    attr_config = AttributionConfig(
        background=background,
        cells=cells,
        num_permutations=int(ac["num_permutations"]),
        seed=int(ac["seed"]),
        window=window,
        target=ac["target"],
        method=ac["method"],
        class_labels=tuple(data.class_names),
    )
    log.debug("attributing sample %d in the %s domain", index, kind)
    started = time.perf_counter()
    amap = attribute(model, x, kind, attr_config)
    runtime = time.perf_counter() - started

    domain_dir = out / "attribution" / kind
    domain_dir.mkdir(parents=True, exist_ok=True)
    csv_paths = export_attribution_csv(amap, domain_dir)
    attribution_figures(amap, domain_dir)
    sample_panel_figure(x, window, domain_dir / "sample_panels.png")
    summary = amap.summary()
    summary["runtime_s"] = runtime
    summary["sample"] = {
        "index": index,
        "class_name": data.class_names[data.labels[index]],
        "split": "train" if data.train_mask[index] else "test",
    }
    summary["run_config"] = config
    validate_summary(summary)
    (domain_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    _write_config_echo(config, out)
    worst = max(entry["residual"] for entry in summary["efficiency"].values())
    print(
        f"attributed sample {index} ({summary['sample']['class_name']}, "
        f"{summary['sample']['split']}) in the {kind} domain: "
        f"{len(csv_paths)} class maps, max efficiency residual {worst:.3e}, "
        f"{runtime:.1f}s; outputs in {domain_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args, config) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else Path(config["output_dir"])
    if not run_dir.exists():
        raise FormatError(f"{run_dir}: run directory does not exist")
    path = write_report(run_dir)
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a JSON run configuration")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="override every section seed")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallelism bound (outputs are identical for any value)")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="csshap",
        description="Simulate vibration data, train a classifier, and explain "
        "its predictions with cyclic-spectral Shapley attribution.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", parents=[common],
                       help="generate the synthetic benchmark dataset")
    p.add_argument("--csv", action="store_true",
                   help="also write a single-file CSV export")

    p = sub.add_parser("ingest", parents=[common],
                       help="segment external recordings into a dataset")
    p.add_argument("paths", nargs="+", help="recording files")
    p.add_argument("--format", required=True, choices=("csv", "raw_f32"))
    p.add_argument("--segment-length", required=True, type=int)
    p.add_argument("--sample-rate", required=True, type=float)
    p.add_argument("--label-map", required=True,
                   help="JSON object (inline or a .json file) mapping file "
                        "names to class labels")
    p.add_argument("--train-fraction", type=float, default=0.7)

    p = sub.add_parser("train", parents=[common],
                       help="train a classifier on a dataset directory")
    p.add_argument("--data", help="dataset directory (default: <out>/dataset)")

    p = sub.add_parser("attribute", parents=[common],
                       help="explain one sample's prediction in a domain")
    p.add_argument("--data", help="dataset directory (default: <out>/dataset)")
    p.add_argument("--model", help="model file (default: <out>/model/model.bin)")
    p.add_argument("--domain", choices=DOMAIN_KINDS,
                   help="override attribution.domain")
    p.add_argument("--sample-index", type=int,
                   help="dataset row to explain (default: first test sample)")

    p = sub.add_parser("report", parents=[common],
                       help="collate a run directory into report.md")
    p.add_argument("run_dir", nargs="?",
                   help="run directory (default: output_dir)")
    return parser


_HANDLERS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "attribute": cmd_attribute,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(message)s",
    )
    try:
        config = _effective_config(args)
        return _HANDLERS[args.command](args, config)
    except (ConfigurationError, InvalidInputError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
