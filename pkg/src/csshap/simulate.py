"""Synthetic vibration benchmark with known attribution ground truth.

Signals are sums of periodically struck decaying oscillations: a strike
train at ``modulation_hz`` excites a carrier at ``carrier_hz`` whose
envelope decays exponentially.  Class identity is carried by which
(carrier, modulation) pairs are present, so the "right" explanation of a
classifier decision is known by construction.

The stock three-class benchmark:

=========  ==================  ===================  =====================
component  carrier (Hz)        modulation (Hz)      present in
=========  ==================  ===================  =====================
shared     1500                50                   all classes
random     uniform(1000,4000)  uniform(20,200)      Health only
fault-1    2500                100                  Fault #1 only
fault-2    3500                125                  Fault #2 only
=========  ==================  ===================  =====================

Each component gets an amplitude drawn uniformly from [0.8, 1.0]; white
Gaussian noise is injected at 0 dB SNR before per-sample mean/std
normalization.  Every sample's randomness comes from its own generator
keyed by (dataset seed, sample index), so builds are reproducible and
order-independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError
from .signal import TimeSeries, add_noise, normalize_meanstd

# fixed stream key for the train/test split shuffle (kept distinct from
# every per-sample key, which uses plain sample indices)
_SPLIT_STREAM = 999_999_937


def _as_range(value) -> tuple[float, float]:
    """Normalize a scalar or (lo, hi) pair to a (lo, hi) tuple."""
    if np.isscalar(value):
        v = float(value)
        return (v, v)
    lo, hi = (float(v) for v in value)
    if not lo <= hi:
        raise InvalidInputError(f"range lower bound {lo} exceeds upper bound {hi}")
    return (lo, hi)


@dataclass(frozen=True)
class ImpulseComponentSpec:
    """One periodically struck decaying oscillation.

    ``carrier_hz`` and ``modulation_hz`` may be scalars or (lo, hi) pairs;
    pairs are drawn uniformly once per synthesized sample.  ``damping`` is
    the per-sample-index exponential decay rate of each strike's envelope
    (0.04 means 1/e in 25 samples).  ``onset_jitter`` shifts the whole
    strike train by a random fraction of one strike period, for emulating
    unsynchronized acquisition; the default keeps the first strike at
    sample zero.
    """

    carrier_hz: "float | tuple[float, float]"
    modulation_hz: "float | tuple[float, float]"
    damping: float = 0.04
    onset_jitter: bool = False

    def __post_init__(self) -> None:
        carrier = _as_range(self.carrier_hz)
        modulation = _as_range(self.modulation_hz)
        if carrier[0] <= 0:
            raise InvalidInputError(f"carrier_hz must be positive, got {carrier}")
        if modulation[0] <= 0:
            raise InvalidInputError(f"modulation_hz must be positive, got {modulation}")
        if not (float(self.damping) > 0):
            raise InvalidInputError(f"damping must be positive, got {self.damping}")
        object.__setattr__(self, "carrier_hz", carrier if carrier[0] != carrier[1] else carrier[0])
        object.__setattr__(
            self, "modulation_hz", modulation if modulation[0] != modulation[1] else modulation[0]
        )
        object.__setattr__(self, "damping", float(self.damping))


@dataclass(frozen=True)
class ClassSpec:
    """A labeled mixture of impulse components plus a noise level."""

    name: str
    components: tuple
    amplitude_range: tuple = (0.8, 1.0)
    snr_db: float = 0.0

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if len(comps) < 1:
            raise InvalidInputError(f"class {self.name!r} needs at least one component")
        for c in comps:
            if not isinstance(c, ImpulseComponentSpec):
                raise InvalidInputError("components must be ImpulseComponentSpec instances")
        lo, hi = _as_range(self.amplitude_range)
        if lo <= 0:
            raise InvalidInputError(f"amplitude range must be positive, got {(lo, hi)}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "amplitude_range", (lo, hi))
        object.__setattr__(self, "snr_db", float(self.snr_db))


@dataclass(frozen=True)
class DatasetSpec:
    """Full recipe for a reproducible labeled dataset."""

    classes: tuple
    samples_per_class: int = 300
    sample_length: int = 2000
    sample_rate_hz: float = 10_000.0
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self) -> None:
        classes = tuple(self.classes)
        if len(classes) < 2:
            raise InvalidInputError("need at least two classes")
        names = [c.name for c in classes]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"duplicate class names: {names}")
        if self.samples_per_class < 1:
            raise InvalidInputError("samples_per_class must be >= 1")
        # keep room for at least two default-length analysis windows
        if self.sample_length < 512:
            raise InvalidInputError(
                f"sample_length must be >= 512 (2x the default analysis window), "
                f"got {self.sample_length}"
            )
        if not (0.0 < self.train_fraction < 1.0):
            raise InvalidInputError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )
        object.__setattr__(self, "classes", classes)


def periodic_impulse(
    spec: ImpulseComponentSpec, fs: float, n_samples: int, rng: np.random.Generator
) -> TimeSeries:
    """Synthesize one component: a strike train exciting a decaying carrier.

    Strike k lands at ``k * fs / modulation_hz`` samples (fractional in
    general; the first strike is exactly at sample zero unless jitter is
    on).  Each strike contributes, causally from its onset,
    ``exp(-damping * m) * sin(2*pi*carrier*m/fs + phase)`` with ``m`` the
    elapsed samples since onset.  The phase is drawn once per call.

    Draw order from ``rng``: carrier (if ranged), modulation (if ranged),
    phase, jitter (if enabled).
    """
    carrier = _draw(spec.carrier_hz, rng)
    modulation = _draw(spec.modulation_hz, rng)
    if carrier >= fs / 2:
        raise InvalidInputError(f"carrier {carrier} Hz is at or above Nyquist ({fs / 2} Hz)")
    if n_samples < fs / modulation:
        raise InvalidInputError(
            f"{n_samples} samples cover less than one strike period "
            f"({fs / modulation:.1f} samples)"
        )
    phase = rng.uniform(0.0, 2.0 * np.pi)
    offset = rng.uniform(0.0, fs / modulation) if spec.onset_jitter else 0.0

    x = np.zeros(n_samples, dtype=np.float64)
    period = fs / modulation
    k = 0
    while True:
        onset = k * period + offset
        if onset > n_samples - 1:
            break
        start = math.ceil(onset)
        m = np.arange(start - onset, n_samples - onset, 1.0)
        x[start:] += np.exp(-spec.damping * m) * np.sin(2.0 * np.pi * carrier * m / fs + phase)
        k += 1
    return TimeSeries(samples=x, sample_rate_hz=fs)


def _draw(value, rng: np.random.Generator) -> float:
    if np.isscalar(value):
        return float(value)
    return float(rng.uniform(value[0], value[1]))


def synthesize_sample(
    cls: ClassSpec, fs: float, n_samples: int, rng: np.random.Generator
) -> TimeSeries:
    """One raw (unnormalized) sample of a class.

    Per component, in order: amplitude from ``amplitude_range``, then the
    component's own draws.  Noise is injected last from the same stream.
    """
    total = np.zeros(n_samples, dtype=np.float64)
    for comp in cls.components:
        amplitude = rng.uniform(*cls.amplitude_range)
        total += amplitude * periodic_impulse(comp, fs, n_samples, rng).samples
    clean = TimeSeries(samples=total, sample_rate_hz=fs)
    return add_noise(clean, cls.snr_db, rng)


@dataclass(frozen=True)
class Dataset:
    """Built dataset: normalized samples, labels, split, and provenance."""

    samples: np.ndarray  # (n_total, sample_length) float64, normalized
    labels: np.ndarray  # (n_total,) int
    train_mask: np.ndarray  # (n_total,) bool
    class_names: tuple
    spec: DatasetSpec
    sample_seeds: tuple  # per-sample RNG keys, (dataset_seed, index)

    @property
    def sample_rate_hz(self) -> float:
        return self.spec.sample_rate_hz

    @property
    def train_x(self) -> np.ndarray:
        return self.samples[self.train_mask]

    @property
    def train_y(self) -> np.ndarray:
        return self.labels[self.train_mask]

    @property
    def test_x(self) -> np.ndarray:
        return self.samples[~self.train_mask]

    @property
    def test_y(self) -> np.ndarray:
        return self.labels[~self.train_mask]

    def timeseries(self, index: int) -> TimeSeries:
        return TimeSeries(samples=self.samples[index], sample_rate_hz=self.sample_rate_hz)


def build_dataset(spec: DatasetSpec) -> Dataset:
    """Synthesize, normalize and split a dataset.

    Each sample draws from ``default_rng([spec.seed, global_index])``.  The
    split shuffles indices per class with its own fixed stream and takes
    ``floor(train_fraction * samples_per_class)`` for training, so class
    balance is exact.
    """
    n_classes = len(spec.classes)
    n_total = n_classes * spec.samples_per_class
    samples = np.empty((n_total, spec.sample_length), dtype=np.float64)
    labels = np.empty(n_total, dtype=np.int64)
    seeds = []
    idx = 0
    for ci, cls in enumerate(spec.classes):
        for _ in range(spec.samples_per_class):
            rng = np.random.default_rng([spec.seed, idx])
            raw = synthesize_sample(cls, spec.sample_rate_hz, spec.sample_length, rng)
            samples[idx] = normalize_meanstd(raw).samples
            labels[idx] = ci
            seeds.append((spec.seed, idx))
            idx += 1

    split_rng = np.random.default_rng([spec.seed, _SPLIT_STREAM])
    train_mask = np.zeros(n_total, dtype=bool)
    n_train = int(spec.train_fraction * spec.samples_per_class)
    for ci in range(n_classes):
        class_idx = np.flatnonzero(labels == ci)
        order = split_rng.permutation(len(class_idx))
        train_mask[class_idx[order[:n_train]]] = True

    return Dataset(
        samples=samples,
        labels=labels,
        train_mask=train_mask,
        class_names=tuple(c.name for c in spec.classes),
        spec=spec,
        sample_seeds=tuple(seeds),
    )


# ---------------------------------------------------------------------------
# Stock benchmark


SHARED_COMPONENT = ImpulseComponentSpec(carrier_hz=1500.0, modulation_hz=50.0)
HEALTH_RANDOM_COMPONENT = ImpulseComponentSpec(
    carrier_hz=(1000.0, 4000.0), modulation_hz=(20.0, 200.0)
)
FAULT1_COMPONENT = ImpulseComponentSpec(carrier_hz=2500.0, modulation_hz=100.0)
FAULT2_COMPONENT = ImpulseComponentSpec(carrier_hz=3500.0, modulation_hz=125.0)


def benchmark_spec(
    samples_per_class: int = 300,
    snr_db: float = 0.0,
    seed: int = 0,
    sample_length: int = 2000,
    sample_rate_hz: float = 10_000.0,
    train_fraction: float = 0.7,
) -> DatasetSpec:
    """The stock three-class benchmark (see module docstring)."""
    classes = (
        ClassSpec(name="Health", components=(SHARED_COMPONENT, HEALTH_RANDOM_COMPONENT), snr_db=snr_db),
        ClassSpec(name="Fault #1", components=(SHARED_COMPONENT, FAULT1_COMPONENT), snr_db=snr_db),
        ClassSpec(name="Fault #2", components=(SHARED_COMPONENT, FAULT2_COMPONENT), snr_db=snr_db),
    )
    return DatasetSpec(
        classes=classes,
        samples_per_class=samples_per_class,
        sample_length=sample_length,
        sample_rate_hz=sample_rate_hz,
        train_fraction=train_fraction,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Persistence


def _spec_to_jsonable(spec: DatasetSpec) -> dict:
    return asdict(spec)


def _spec_from_jsonable(blob: dict) -> DatasetSpec:
    classes = []
    for c in blob["classes"]:
        comps = tuple(
            ImpulseComponentSpec(
                carrier_hz=_maybe_pair(k["carrier_hz"]),
                modulation_hz=_maybe_pair(k["modulation_hz"]),
                damping=k["damping"],
                onset_jitter=k.get("onset_jitter", False),
            )
            for k in c["components"]
        )
        classes.append(
            ClassSpec(
                name=c["name"],
                components=comps,
                amplitude_range=tuple(c["amplitude_range"]),
                snr_db=c["snr_db"],
            )
        )
    return DatasetSpec(
        classes=tuple(classes),
        samples_per_class=blob["samples_per_class"],
        sample_length=blob["sample_length"],
        sample_rate_hz=blob["sample_rate_hz"],
        train_fraction=blob["train_fraction"],
        seed=blob["seed"],
    )


def _maybe_pair(v):
    return tuple(v) if isinstance(v, (list, tuple)) else v


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Persist as a manifest plus one raw little-endian float32 file per sample."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    manifest = {
        "spec": _spec_to_jsonable(ds.spec),
        "class_names": list(ds.class_names),
        "samples": [
            {
                "index": int(i),
                "file": f"samples/sample_{i:05d}.f32",
                "class_index": int(ds.labels[i]),
                "class_name": ds.class_names[int(ds.labels[i])],
                "split": "train" if ds.train_mask[i] else "test",
                "seed": list(ds.sample_seeds[i]),
            }
            for i in range(len(ds.labels))
        ],
    }
    for i in range(len(ds.labels)):
        ds.samples[i].astype("<f4").tofile(out / "samples" / f"sample_{i:05d}.f32")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out / "manifest.json"


def load_dataset(in_dir) -> Dataset:
    """Rehydrate a dataset saved by :func:`save_dataset`.

    Sample payloads come back at float32 precision; metadata is exact.
    """
    root = Path(in_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{root}: no manifest.json found")
    try:
        manifest = json.loads(manifest_path.read_text())
        spec = _spec_from_jsonable(manifest["spec"])
        entries = manifest["samples"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{manifest_path}: malformed manifest ({exc})") from exc
    n = len(entries)
    samples = np.empty((n, spec.sample_length), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    train_mask = np.zeros(n, dtype=bool)
    seeds = []
    for entry in entries:
        i = entry["index"]
        payload = np.fromfile(root / entry["file"], dtype="<f4")
        if payload.size != spec.sample_length:
            raise FormatError(
                f"{entry['file']}: expected {spec.sample_length} float32 values, "
                f"got {payload.size}"
            )
        samples[i] = payload
        labels[i] = entry["class_index"]
        train_mask[i] = entry["split"] == "train"
        seeds.append(tuple(entry["seed"]))
    return Dataset(
        samples=samples,
        labels=labels,
        train_mask=train_mask,
        class_names=tuple(manifest["class_names"]),
        spec=spec,
        sample_seeds=tuple(seeds),
    )


def export_dataset_csv(ds: Dataset, path) -> None:
    """Single-file CSV: label column first, then the sample values."""
    with open(path, "w", encoding="utf-8") as fh:
        cols = ",".join(f"x{j}" for j in range(ds.samples.shape[1]))
        fh.write("label," + cols + "\n")
        for i in range(len(ds.labels)):
            row = ",".join(f"{v:.17g}" for v in ds.samples[i])
            fh.write(f"{int(ds.labels[i])}," + row + "\n")
