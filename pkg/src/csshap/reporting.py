"""Figures and collated reports for attribution runs.

Color convention for every attribution panel: a diverging map, positive
values red, negative blue, scale symmetric about zero so the neutral
midpoint always means "no contribution".  Grid domains render as
heatmaps, vector domains as bar charts with the same coloring.  Images
are PNG and exist for reading; the CSVs written next to them are the
round-trippable artifact.

``write_report`` collates a run directory into one markdown document:
a section per canonical domain with per-class panels and efficiency
numbers, an explicit "not computed" placeholder for domains that were
not run, plus dataset and training context when present.  Every summary
it picks up is validated against the published JSON schema
(``report_schema.json``, shipped with the package).
"""

import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # headless backend; must precede pyplot
import matplotlib.pyplot as plt
import numpy as np
import jsonschema

from .attribution import AttributionMap, _safe_label
from .cstransform import cs_forward, cs_magnitude
from .domains import DOMAIN_KINDS
from .errors import FormatError
from .signal import TimeSeries, WindowSpec, envelope_spectrum, spectrum, stft

_SCHEMA_PATH = Path(__file__).with_name("report_schema.json")
_AXIS_LABELS = {
    "time_s": "time [s]",
    "f_hz": "spectral frequency [Hz]",
    "alpha_hz": "cyclic frequency [Hz]",
}


def load_report_schema() -> dict:
    return json.loads(_SCHEMA_PATH.read_text())


def validate_summary(summary: dict) -> None:
    """Check an attribution summary against the published schema."""
    try:
        jsonschema.validate(summary, load_report_schema())
    except jsonschema.ValidationError as exc:
        raise FormatError(
            f"attribution summary does not match report_schema.json: {exc.message}"
        ) from exc


# ---------------------------------------------------------------------------
# Attribution panels


def _edges(centers: np.ndarray) -> np.ndarray:
    """Cell edges for pcolormesh from (possibly uneven) cell centers."""
    c = np.asarray(centers, dtype=np.float64)
    if c.size == 1:
        return np.array([c[0] - 0.5, c[0] + 0.5])
    mid = (c[1:] + c[:-1]) / 2.0
    return np.concatenate([[2 * c[0] - mid[0]], mid, [2 * c[-1] - mid[-1]]])


def _symmetric_peak(values: np.ndarray) -> float:
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    return peak if peak > 0.0 else 1.0


def attribution_heatmap(amap: AttributionMap, class_index: int, path, *, dpi=120) -> Path:
    """One per-class panel: heatmap for grid domains, bars for vector ones."""
    values = amap.per_class_values[class_index]
    vmax = _symmetric_peak(values)
    norm = matplotlib.colors.Normalize(vmin=-vmax, vmax=vmax)
    cmap = matplotlib.colormaps["RdBu_r"]
    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    if len(amap.axis_names) == 2:
        rows, cols = amap.cell_centers
        mesh = ax.pcolormesh(
            _edges(cols), _edges(rows), amap.values_grid(class_index),
            cmap=cmap, norm=norm, shading="flat",
        )
        ax.set_xlabel(_AXIS_LABELS[amap.axis_names[1]])
        ax.set_ylabel(_AXIS_LABELS[amap.axis_names[0]])
        fig.colorbar(mesh, ax=ax, label=f"contribution to {amap.target}")
    else:
        (centers,) = amap.cell_centers
        width = 0.9 * float(np.min(np.diff(centers))) if centers.size > 1 else 1.0
        ax.bar(centers, values, width=width, color=cmap(norm(values)))
        ax.axhline(0.0, color="0.3", linewidth=0.8)
        ax.set_xlabel(_AXIS_LABELS[amap.axis_names[0]])
        ax.set_ylabel(f"contribution to {amap.target}")
        mappable = matplotlib.cm.ScalarMappable(norm=norm, cmap=cmap)
        fig.colorbar(mappable, ax=ax)
    label = amap.class_labels[class_index]
    ax.set_title(f"{amap.domain} attribution, class {label}")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return Path(path)


def attribution_figures(amap: AttributionMap, directory, stem="attribution") -> list:
    """Write one PNG per class, named to mirror the CSV exports."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, label in enumerate(amap.class_labels):
        path = directory / f"{stem}_{amap.domain}_{_safe_label(label)}.png"
        paths.append(attribution_heatmap(amap, k, path))
    return paths


def sample_panel_figure(x: TimeSeries, window: WindowSpec, path, *, dpi=120) -> Path:
    """Overview panels of the explained sample in every analysis domain."""
    grid = stft(x, window)
    rep = cs_forward(x, window)
    spec = spectrum(x)
    env = envelope_spectrum(x)
    alpha_ceiling = x.sample_rate_hz / (2.0 * window.hop)

    fig, axes = plt.subplots(2, 3, figsize=(12.8, 7.2))
    ax = axes[0, 0]
    t = np.arange(x.n_samples) / x.sample_rate_hz
    ax.plot(t, x.samples, linewidth=0.6)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("amplitude")
    ax.set_title("waveform")

    ax = axes[0, 1]
    ax.plot(spec.freqs_hz, spec.magnitude(), linewidth=0.6)
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("|X(f)|")
    ax.set_title("spectrum")

    ax = axes[0, 2]
    keep = env.freqs_hz <= alpha_ceiling
    ax.plot(env.freqs_hz[keep], env.magnitude()[keep], linewidth=0.8)
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("|envelope spectrum|")
    ax.set_title("envelope spectrum")

    ax = axes[1, 0]
    mag_db = 20.0 * np.log10(np.abs(grid.values) + 1e-12)
    im = ax.imshow(
        mag_db, origin="lower", aspect="auto",
        extent=(grid.frame_times_s[0], grid.frame_times_s[-1],
                grid.freqs_hz[0], grid.freqs_hz[-1]),
    )
    ax.set_xlabel("time [s]")
    ax.set_ylabel("frequency [Hz]")
    ax.set_title("STFT magnitude [dB]")
    fig.colorbar(im, ax=ax)

    ax = axes[1, 1]
    mag = cs_magnitude(rep)
    # the alpha = 0 column is the mean power and would swamp the scale
    im = ax.imshow(
        mag[:, 1:], origin="lower", aspect="auto",
        extent=(rep.cyclic_freqs_hz[1], rep.cyclic_freqs_hz[-1],
                rep.freqs_hz[0], rep.freqs_hz[-1]),
    )
    ax.set_xlabel("cyclic frequency [Hz]")
    ax.set_ylabel("spectral frequency [Hz]")
    ax.set_title("cyclic-spectral magnitude (alpha > 0)")
    fig.colorbar(im, ax=ax)

    axes[1, 2].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return Path(path)


# ---------------------------------------------------------------------------
# Collated study report


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (ValueError, OSError) as exc:
        raise FormatError(f"{path}: cannot read JSON ({exc})") from exc


def _dataset_section(run_dir: Path, lines: list) -> None:
    manifest_path = run_dir / "dataset" / "manifest.json"
    if not manifest_path.exists():
        lines += ["## Dataset", "", "not computed", ""]
        return
    manifest = _load_json(manifest_path)
    entries = manifest.get("samples", [])
    counts = {}
    for entry in entries:
        key = (entry["class_name"], entry["split"])
        counts[key] = counts.get(key, 0) + 1
    names = manifest.get("class_names", sorted({e["class_name"] for e in entries}))
    lines += ["## Dataset", "", "| class | train | test |", "| --- | --- | --- |"]
    for name in names:
        lines.append(
            f"| {name} | {counts.get((name, 'train'), 0)} "
            f"| {counts.get((name, 'test'), 0)} |"
        )
    lines.append("")


def _training_section(run_dir: Path, lines: list) -> None:
    report_path = run_dir / "model" / "train_report.json"
    lines += ["## Training", ""]
    if not report_path.exists():
        lines += ["not computed", ""]
        return
    report = _load_json(report_path)
    train_acc = report.get("train_accuracies", [])
    test_acc = report.get("test_accuracies", [])
    if train_acc and test_acc:
        lines.append(
            f"Final accuracy after {len(train_acc)} epochs: "
            f"train {train_acc[-1]:.4f}, test {test_acc[-1]:.4f}."
        )
    lines += ["", "```json", json.dumps(report.get("hyperparameters", {}), indent=2), "```", ""]


def _attribution_section(run_dir: Path, kind: str, out_dir: Path, lines: list) -> None:
    domain_dir = run_dir / "attribution" / kind
    summary_path = domain_dir / "summary.json"
    lines += [f"## Attribution: {kind}", ""]
    if not summary_path.exists():
        lines += ["not computed", ""]
        return
    summary = _load_json(summary_path)
    validate_summary(summary)
    lines.append(
        f"{summary['cell_count']} cells, method {summary['method']}, "
        f"background size {summary['background_size']}, "
        f"seed {summary['seed']}, {summary['num_evaluations']} coalition "
        f"evaluations ({summary['model_evaluations']} model calls)."
    )
    lines += ["", "| class | model output | base rate | efficiency residual | within 3x stderr |",
              "| --- | --- | --- | --- | --- |"]
    for k, label in enumerate(summary["class_labels"]):
        eff = summary["efficiency"][label]
        bound = eff.get("within_bound")
        lines.append(
            f"| {label} | {summary['model_output'][k]:.6f} "
            f"| {summary['base_rate'][k]:.6f} | {eff['residual']:.3e} "
            f"| {'yes' if bound else 'n/a' if bound is None else 'no'} |"
        )
    lines.append("")
    for label in summary["class_labels"]:
        image = domain_dir / f"attribution_{kind}_{_safe_label(label)}.png"
        if image.exists():
            rel = os.path.relpath(image, out_dir)
            lines.append(f"![{kind} attribution, {label}]({rel})")
    panels = domain_dir / "sample_panels.png"
    if panels.exists():
        lines.append(f"![explained sample]({os.path.relpath(panels, out_dir)})")
    lines.append("")


def write_report(run_dir, path=None) -> Path:
    """Collate a run directory into ``report.md`` (or ``path``)."""
    run_dir = Path(run_dir)
    out = Path(path) if path is not None else run_dir / "report.md"
    lines = ["# Attribution study report", ""]
    config_path = run_dir / "run_config.json"
    if config_path.exists():
        lines += ["## Run configuration", "", "```json",
                  json.dumps(_load_json(config_path), indent=2, sort_keys=True),
                  "```", ""]
    _dataset_section(run_dir, lines)
    _training_section(run_dir, lines)
    for kind in DOMAIN_KINDS:
        _attribution_section(run_dir, kind, out.parent, lines)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    return out
