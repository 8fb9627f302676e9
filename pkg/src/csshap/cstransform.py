"""Cyclic-spectral transform pair for deterministic signals.

The forward transform takes the squared STFT magnitude (frame power) and
applies a DFT over the frame index, turning periodic amplitude modulation
into lines along a cyclic-frequency axis while the STFT phase is carried
separately.  Because frame power is real, the cyclic axis is stored
one-sided, mirroring the one-sided spectral convention.

The inverse reverses each step: inverse DFT along the cyclic axis back to
frame power, clamp small negative excursions introduced by editing the
representation, take the square root, reattach the carried phase, and
overlap-add back to a signal.  An unmodified representation round-trips to
the covered samples at rounding precision.

A pure sine at frequency ``f1`` concentrates at grid point ``(f1, 0)``:
its frame power is constant over frames, so the cyclic DFT piles the
entire column into the zero-cyclic-frequency bin with value equal to the
per-frame peak power times the frame count, and the peak power scales with
the squared amplitude.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError
from .signal import STFTGrid, TimeSeries, WindowSpec, istft, stft

_MAGIC = b"CSR1"
_VERSION = 1
_WINDOW_CODES = {"hann": 0, "rectangular": 1, "hamming": 2}
_WINDOW_NAMES = {v: k for k, v in _WINDOW_CODES.items()}


@dataclass(frozen=True)
class CSRepresentation:
    """Cyclic-spectral representation of a signal.

    Attributes
    ----------
    cs_values:
        Complex ``(n_bins, n_cyclic_bins)`` grid: DFT over frame index of
        the frame power, one-sided in cyclic frequency.
    phase:
        ``(n_bins, n_frames)`` STFT phase in radians, carried unchanged so
        the inverse can reattach it.
    freqs_hz / cyclic_freqs_hz:
        Spectral and cyclic frequency axes.  The cyclic axis spans
        ``[0, sample_rate / (2 * hop)]``.
    """

    cs_values: np.ndarray
    phase: np.ndarray
    freqs_hz: np.ndarray
    cyclic_freqs_hz: np.ndarray
    window: WindowSpec
    sample_rate_hz: float
    source_length: int

    def __post_init__(self) -> None:
        cs = np.asarray(self.cs_values, dtype=np.complex128)
        phase = np.asarray(self.phase, dtype=np.float64)
        if cs.ndim != 2 or phase.ndim != 2:
            raise InvalidInputError("cs_values and phase must be 2-D arrays")
        n_frames = phase.shape[1]
        if cs.shape[0] != phase.shape[0]:
            raise InvalidInputError("cs_values and phase disagree on spectral bin count")
        if cs.shape[1] != n_frames // 2 + 1:
            raise InvalidInputError(
                f"expected {n_frames // 2 + 1} one-sided cyclic bins for "
                f"{n_frames} frames, got {cs.shape[1]}"
            )
        if not (np.all(np.isfinite(cs)) and np.all(np.isfinite(phase))):
            raise InvalidInputError("representation values must be finite")
        object.__setattr__(self, "cs_values", cs)
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "freqs_hz", np.asarray(self.freqs_hz, dtype=np.float64))
        object.__setattr__(
            self, "cyclic_freqs_hz", np.asarray(self.cyclic_freqs_hz, dtype=np.float64)
        )
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "source_length", int(self.source_length))

    @property
    def n_bins(self) -> int:
        return int(self.cs_values.shape[0])

    @property
    def n_cyclic_bins(self) -> int:
        return int(self.cs_values.shape[1])

    @property
    def n_frames(self) -> int:
        return int(self.phase.shape[1])


def cs_forward_from_grid(grid: STFTGrid) -> CSRepresentation:
    """Build the cyclic-spectral representation from an existing STFT."""
    power = np.abs(grid.values) ** 2
    cs = np.fft.rfft(power, axis=1)
    cyclic = np.fft.rfftfreq(grid.n_frames, d=grid.window.hop / grid.sample_rate_hz)
    return CSRepresentation(
        cs_values=cs,
        phase=np.angle(grid.values),
        freqs_hz=grid.freqs_hz,
        cyclic_freqs_hz=cyclic,
        window=grid.window,
        sample_rate_hz=grid.sample_rate_hz,
        source_length=grid.source_length,
    )


def cs_forward(x: TimeSeries, window: WindowSpec) -> CSRepresentation:
    """Forward cyclic-spectral transform of a signal."""
    return cs_forward_from_grid(stft(x, window))


def reconstruct_frame_power(rep: CSRepresentation) -> tuple[np.ndarray, int]:
    """Inverse-DFT the cyclic axis back to frame power.

    Returns the clamped nonnegative power grid and the number of entries
    that had to be clamped.  Editing the representation (masking cells,
    mixing in another signal's cells) can push reconstructed power
    slightly negative; clamping keeps the square root real.
    """
    power = np.fft.irfft(rep.cs_values, n=rep.n_frames, axis=1)
    negative = power < 0.0
    n_clamped = int(np.count_nonzero(negative))
    if n_clamped:
        power = np.where(negative, 0.0, power)
    return power, n_clamped


def cs_inverse(rep: CSRepresentation) -> TimeSeries:
    """Inverse cyclic-spectral transform.

    Rebuilds frame power from the cyclic axis, clamps negatives, takes the
    square root, reattaches the carried phase and overlap-adds the frames.
    Samples beyond the region covered by full frames come back as zeros.
    """
    power, _ = reconstruct_frame_power(rep)
    magnitude = np.sqrt(power)
    values = magnitude * (np.cos(rep.phase) + 1j * np.sin(rep.phase))
    grid = STFTGrid(
        values=values,
        freqs_hz=rep.freqs_hz,
        frame_times_s=_frame_times(rep),
        window=rep.window,
        sample_rate_hz=rep.sample_rate_hz,
        source_length=rep.source_length,
    )
    return istft(grid)


def cs_magnitude(rep: CSRepresentation) -> np.ndarray:
    """Magnitude of the cyclic-spectral grid (used for display and export)."""
    return np.abs(rep.cs_values)


def _frame_times(rep: CSRepresentation) -> np.ndarray:
    starts = np.arange(rep.n_frames) * rep.window.hop
    return (starts + (rep.window.length - 1) / 2.0) / rep.sample_rate_hz


# ---------------------------------------------------------------------------
# Serialization

_HEADER = struct.Struct("<4sHBxIIIIIQd")  # magic, version, window code, pad,
# length, hop, n_bins, n_cyclic, n_frames, source_length, sample_rate


def save_cs(rep: CSRepresentation, path) -> None:
    """Write the representation to a binary container.

    Fixed little-endian header followed by the complex grid as interleaved
    float32 real/imag pairs and the phase as float32.
    """
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        _WINDOW_CODES[rep.window.kind],
        rep.window.length,
        rep.window.hop,
        rep.n_bins,
        rep.n_cyclic_bins,
        rep.n_frames,
        rep.source_length,
        rep.sample_rate_hz,
    )
    interleaved = np.empty((rep.n_bins, rep.n_cyclic_bins, 2), dtype="<f4")
    interleaved[..., 0] = rep.cs_values.real
    interleaved[..., 1] = rep.cs_values.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(interleaved.tobytes())
        fh.write(rep.phase.astype("<f4").tobytes())


def load_cs(path) -> CSRepresentation:
    """Read a representation written by :func:`save_cs`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a cyclic-spectral container")
    magic, version, wcode, length, hop, n_bins, n_cyc, n_frames, src_len, fs = _HEADER.unpack(
        blob[: _HEADER.size]
    )
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if wcode not in _WINDOW_NAMES:
        raise FormatError(f"{path}: unknown window code {wcode}")
    expected = _HEADER.size + 4 * (n_bins * n_cyc * 2 + n_bins * n_frames)
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for declared shapes, got {len(blob)}"
        )
    window = WindowSpec(_WINDOW_NAMES[wcode], length, hop)
    offset = _HEADER.size
    inter = np.frombuffer(blob, dtype="<f4", count=n_bins * n_cyc * 2, offset=offset)
    inter = inter.reshape(n_bins, n_cyc, 2).astype(np.float64)
    cs = inter[..., 0] + 1j * inter[..., 1]
    offset += 4 * n_bins * n_cyc * 2
    phase = np.frombuffer(blob, dtype="<f4", count=n_bins * n_frames, offset=offset)
    phase = phase.reshape(n_bins, n_frames).astype(np.float64)
    return CSRepresentation(
        cs_values=cs,
        phase=phase,
        freqs_hz=np.fft.rfftfreq(length, d=1.0 / fs),
        cyclic_freqs_hz=np.fft.rfftfreq(n_frames, d=hop / fs),
        window=window,
        sample_rate_hz=fs,
        source_length=src_len,
    )


def export_cs_magnitude_csv(rep: CSRepresentation, path) -> None:
    """Write the magnitude grid as CSV.

    One row per spectral bin; the header row carries the cyclic-frequency
    axis and the first column carries the spectral-frequency axis.
    """
    mag = cs_magnitude(rep)
    with open(path, "w", encoding="utf-8") as fh:
        header = ",".join(f"{a:.17g}" for a in rep.cyclic_freqs_hz)
        fh.write("spectral_hz\\cyclic_hz," + header + "\n")
        for i, f in enumerate(rep.freqs_hz):
            row = ",".join(f"{v:.17g}" for v in mag[i])
            fh.write(f"{f:.17g}," + row + "\n")


def cs_metadata(rep: CSRepresentation) -> dict:
    """Structured description of the grid layout, embeddable in reports."""
    return {
        "window": {
            "kind": rep.window.kind,
            "length": rep.window.length,
            "hop": rep.window.hop,
        },
        "sample_rate_hz": rep.sample_rate_hz,
        "source_length": rep.source_length,
        "n_spectral_bins": rep.n_bins,
        "n_cyclic_bins": rep.n_cyclic_bins,
        "n_frames": rep.n_frames,
        "spectral_range_hz": [float(rep.freqs_hz[0]), float(rep.freqs_hz[-1])],
        "cyclic_range_hz": [float(rep.cyclic_freqs_hz[0]), float(rep.cyclic_freqs_hz[-1])],
    }


def cs_metadata_json(rep: CSRepresentation) -> str:
    return json.dumps(cs_metadata(rep), indent=2, sort_keys=True)
