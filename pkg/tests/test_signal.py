"""Tests for the STFT pair, spectra, noise injection and normalization.

Oracles are computed with deliberately naive code (explicit DFT sums,
direct energy accumulation) so they do not share a code path with the
implementation under test.
"""

import numpy as np
import pytest

from csshap import (
    ConfigurationError,
    InvalidInputError,
    TimeSeries,
    WindowSpec,
    add_noise,
    analytic_envelope,
    envelope_spectrum,
    istft,
    normalize_meanstd,
    spectrum,
    stft,
)

FS = 10_000.0


def make_ts(samples, fs=FS):
    return TimeSeries(samples=np.asarray(samples, dtype=np.float64), sample_rate_hz=fs)


def naive_frame_dft(segment, window):
    """O(L^2) one-sided DFT of one windowed segment."""
    seg = segment * window
    length = seg.size
    n_bins = length // 2 + 1
    out = np.zeros(n_bins, dtype=np.complex128)
    for k in range(n_bins):
        acc = 0.0 + 0.0j
        for n in range(length):
            acc += seg[n] * np.exp(-2j * np.pi * k * n / length)
        out[k] = acc
    return out


# ---------------------------------------------------------------------------
# WindowSpec


class TestWindowSpec:
    def test_default_is_hann_256_64(self):
        w = WindowSpec()
        assert (w.kind, w.length, w.hop) == ("hann", 256, 64)
        assert w.n_bins == 129

    def test_hann_window_strictly_positive_and_symmetric(self):
        w = WindowSpec("hann", 128, 32).samples()
        assert np.all(w > 0)
        assert np.allclose(w, w[::-1], rtol=0, atol=1e-15)
        assert w.max() <= 1.0

    @pytest.mark.parametrize("hop", [16, 32, 64, 128])
    def test_hann_cola_for_dividing_hops(self, hop):
        spec = WindowSpec("hann", 256, hop)
        # overlap-add constant for this window family is length / (2 * hop)
        assert spec.cola_constant == pytest.approx(256 / (2 * hop), rel=1e-12)

    def test_hamming_pedestal_and_cola(self):
        spec = WindowSpec("hamming", 256, 32)
        w = spec.samples()
        assert w.min() >= 0.08
        assert spec.cola_constant == pytest.approx(0.54 * 256 / 32, rel=1e-12)

    def test_hamming_inverse_gain_bounded_on_edited_grids(self):
        # zeroing grid cells must not blow up the reconstruction at the
        # low-overlap signal edges (this is the point of the pedestal)
        rng = np.random.default_rng(21)
        x = rng.standard_normal(2048)
        from dataclasses import replace

        for kind, bound in [("hamming", 15.0)]:
            g = stft(make_ts(x), WindowSpec(kind, 256, 64))
            vals = g.values.copy()
            vals[30:60, :] = 0.0  # knock out a band, grid now inconsistent
            back = istft(replace(g, values=vals))
            assert np.max(np.abs(back.samples)) < bound * np.max(np.abs(x))

    def test_hann_full_hop_rejected(self):
        with pytest.raises(ConfigurationError):
            WindowSpec("hann", 256, 256)

    def test_hann_non_dividing_hop_rejected(self):
        with pytest.raises(ConfigurationError):
            WindowSpec("hann", 256, 100)

    def test_rectangular_tiling_hop_accepted(self):
        spec = WindowSpec("rectangular", 128, 128)
        assert spec.cola_constant == pytest.approx(1.0)

    def test_hop_larger_than_length_rejected(self):
        with pytest.raises(ConfigurationError):
            WindowSpec("hann", 64, 65)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            WindowSpec("blackman", 256, 64)

    def test_frame_count_matches_formula(self):
        spec = WindowSpec("hann", 256, 64)
        assert spec.frame_count(2000) == (2000 - 256) // 64 + 1
        assert spec.frame_count(256) == 1
        with pytest.raises(InvalidInputError):
            spec.frame_count(255)


# ---------------------------------------------------------------------------
# TimeSeries


class TestTimeSeries:
    def test_rejects_empty_and_2d(self):
        with pytest.raises(InvalidInputError):
            make_ts(np.zeros((0,)))
        with pytest.raises(InvalidInputError):
            make_ts(np.zeros((4, 4)))

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            make_ts([0.0, np.nan, 1.0])
        with pytest.raises(InvalidInputError):
            make_ts([0.0, np.inf])

    def test_rejects_bad_rate(self):
        with pytest.raises(InvalidInputError):
            TimeSeries(samples=np.ones(4), sample_rate_hz=0.0)

    def test_samples_are_readonly_copy(self):
        arr = np.ones(8)
        ts = make_ts(arr)
        arr[0] = 5.0  # caller's array stays writable
        assert ts.samples[0] == 1.0
        with pytest.raises(ValueError):
            ts.samples[0] = 2.0

    def test_duration(self):
        assert make_ts(np.ones(2000)).duration_s == pytest.approx(0.2)


# ---------------------------------------------------------------------------
# STFT forward


class TestStft:
    def test_grid_shape(self):
        rng = np.random.default_rng(0)
        g = stft(make_ts(rng.standard_normal(2000)), WindowSpec("hann", 256, 64))
        assert g.values.shape == (129, 28)
        assert g.n_bins == 129 and g.n_frames == 28
        assert g.freqs_hz[0] == 0.0
        assert g.freqs_hz[-1] == pytest.approx(FS / 2)

    def test_matches_naive_dft_per_frame(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(200)
        spec = WindowSpec("hann", 64, 16)
        g = stft(make_ts(x), spec)
        w = spec.samples()
        for m in range(g.n_frames):
            seg = x[m * 16 : m * 16 + 64]
            expected = naive_frame_dft(seg, w)
            np.testing.assert_allclose(g.values[:, m], expected, rtol=0, atol=1e-9)

    def test_trailing_partial_frame_dropped(self):
        # appending fewer than hop new samples to an aligned signal must
        # not change the grid
        rng = np.random.default_rng(2)
        x = rng.standard_normal(2048)
        spec = WindowSpec("hann", 256, 64)
        g1 = stft(make_ts(x), spec)
        x2 = np.concatenate([x, rng.standard_normal(63)])
        g2 = stft(make_ts(x2), spec)
        assert g1.n_frames == g2.n_frames
        np.testing.assert_array_equal(g1.values, g2.values)

    def test_sine_concentrates_near_tone(self):
        t = np.arange(2000) / FS
        g = stft(make_ts(np.sin(2 * np.pi * 1000.0 * t)), WindowSpec("hann", 256, 64))
        nearest = np.argmin(np.abs(g.freqs_hz - 1000.0))
        for m in range(g.n_frames):
            assert np.argmax(np.abs(g.values[:, m])) == nearest

    def test_zero_signal_gives_zero_grid(self):
        g = stft(make_ts(np.zeros(1024)), WindowSpec("hann", 256, 64))
        assert np.all(g.values == 0)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(1024)
        y = rng.standard_normal(1024)
        spec = WindowSpec("hann", 128, 32)
        gx = stft(make_ts(x), spec).values
        gy = stft(make_ts(y), spec).values
        gsum = stft(make_ts(2.5 * x - 0.5 * y), spec).values
        np.testing.assert_allclose(gsum, 2.5 * gx - 0.5 * gy, rtol=0, atol=1e-9)

    def test_frame_times_are_window_centers(self):
        g = stft(make_ts(np.ones(512)), WindowSpec("hann", 256, 64))
        assert g.frame_times_s[0] == pytest.approx(255 / 2 / FS)
        assert g.frame_times_s[1] - g.frame_times_s[0] == pytest.approx(64 / FS)

    def test_too_short_signal_rejected(self):
        with pytest.raises(InvalidInputError):
            stft(make_ts(np.ones(100)), WindowSpec("hann", 256, 64))


# ---------------------------------------------------------------------------
# iSTFT round trips


ROUNDTRIP_WINDOWS = [
    WindowSpec("hann", 128, 32),
    WindowSpec("hann", 256, 64),
    WindowSpec("hann", 512, 128),
    WindowSpec("rectangular", 256, 64),
]


class TestIstft:
    @pytest.mark.parametrize("spec", ROUNDTRIP_WINDOWS, ids=lambda s: f"{s.kind}-{s.length}-{s.hop}")
    def test_roundtrip_exact_on_noise(self, spec):
        rng = np.random.default_rng(42)
        x = rng.standard_normal(2048)  # 2048 - length divisible by every hop above
        ts = make_ts(x)
        back = istft(stft(ts, spec))
        err = np.max(np.abs(back.samples - x)) / np.max(np.abs(x))
        assert err < 1e-10

    def test_roundtrip_exact_on_sine(self):
        t = np.arange(2048) / FS
        x = np.sin(2 * np.pi * 937.3 * t)
        back = istft(stft(make_ts(x), WindowSpec("hann", 256, 64)))
        assert np.max(np.abs(back.samples - x)) < 1e-10

    def test_uncovered_tail_returns_zeros(self):
        # 2000 samples, hann(256, 64): frames cover only the first 1984
        rng = np.random.default_rng(5)
        x = rng.standard_normal(2000)
        back = istft(stft(make_ts(x), WindowSpec("hann", 256, 64)))
        np.testing.assert_allclose(back.samples[:1984], x[:1984], rtol=0, atol=1e-10)
        np.testing.assert_array_equal(back.samples[1984:], np.zeros(16))

    def test_zero_grid_inverts_to_zero(self):
        g = stft(make_ts(np.zeros(1024) + 1.0), WindowSpec("hann", 256, 64))
        zeroed = STFTGridZero(g)
        back = istft(zeroed)
        assert np.all(back.samples == 0)

    def test_linearity_of_inverse(self):
        rng = np.random.default_rng(6)
        spec = WindowSpec("hann", 128, 32)
        ga = stft(make_ts(rng.standard_normal(1024)), spec)
        gb = stft(make_ts(rng.standard_normal(1024)), spec)
        from dataclasses import replace

        combo = replace(ga, values=3.0 * ga.values - 2.0 * gb.values)
        xa, xb = istft(ga).samples, istft(gb).samples
        np.testing.assert_allclose(
            istft(combo).samples, 3.0 * xa - 2.0 * xb, rtol=0, atol=1e-9
        )


def STFTGridZero(g):
    from dataclasses import replace

    return replace(g, values=np.zeros_like(g.values))


# ---------------------------------------------------------------------------
# Spectrum


class TestSpectrum:
    def test_bin_centered_sine_single_dominant_bin(self):
        # 100 Hz over 0.2 s is exactly 20 periods: one-bin line spectrum.
        # Closed form: |X[k1]| = n/2 for a unit sine on a bin center.
        n = 2000
        t = np.arange(n) / FS
        s = spectrum(make_ts(np.sin(2 * np.pi * 100.0 * t)))
        mag = s.magnitude()
        k1 = int(np.argmax(mag))
        assert s.freqs_hz[k1] == pytest.approx(100.0)
        assert mag[k1] == pytest.approx(n / 2, rel=1e-9)
        others = np.delete(mag, k1)
        assert mag[k1] / others.max() > 100.0

    def test_dc_maps_to_bin_zero(self):
        s = spectrum(make_ts(np.full(1000, 3.0)))
        assert np.argmax(s.magnitude()) == 0
        assert s.magnitude()[0] == pytest.approx(3000.0)

    @pytest.mark.parametrize("n", [2000, 2001])
    def test_parseval_energy_identity(self, n):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(n)
        time_energy = float(sum(v * v for v in x))  # direct sum oracle
        mag2 = np.abs(spectrum(make_ts(x)).values) ** 2
        if n % 2 == 0:
            freq_energy = (mag2[0] + mag2[-1] + 2 * mag2[1:-1].sum()) / n
        else:
            freq_energy = (mag2[0] + 2 * mag2[1:].sum()) / n
        assert freq_energy == pytest.approx(time_energy, rel=1e-10)

    def test_axis_spacing(self):
        s = spectrum(make_ts(np.ones(2000)))
        assert s.freqs_hz[1] == pytest.approx(FS / 2000)
        assert s.freqs_hz[-1] == pytest.approx(FS / 2)


# ---------------------------------------------------------------------------
# Envelope spectrum


class TestEnvelopeSpectrum:
    def test_am_signal_peaks_at_modulation_rate(self):
        t = np.arange(2000) / FS
        x = (1.0 + 0.8 * np.cos(2 * np.pi * 50.0 * t)) * np.sin(2 * np.pi * 1500.0 * t)
        s = envelope_spectrum(make_ts(x))
        mag = s.magnitude()
        band = (s.freqs_hz > 10) & (s.freqs_hz < 400)
        peak_hz = s.freqs_hz[band][np.argmax(mag[band])]
        assert peak_hz == pytest.approx(50.0, abs=s.freqs_hz[1])
        # modulation lines dwarf everything else below the carrier
        floor = mag[(s.freqs_hz > 60) & (s.freqs_hz < 90)].max()
        assert mag[band].max() / floor > 50

    def test_pure_sine_envelope_is_flat(self):
        t = np.arange(2000) / FS
        x = np.sin(2 * np.pi * 1000.0 * t)  # bin-centered: envelope exactly 1
        env = analytic_envelope(make_ts(x))
        np.testing.assert_allclose(env, 1.0, rtol=0, atol=1e-9)
        s = envelope_spectrum(make_ts(x))
        mag = s.magnitude()
        assert np.argmax(mag) == 0
        assert mag[1:].max() / mag[0] < 1e-6

    def test_envelope_insensitive_to_carrier(self):
        t = np.arange(2000) / FS
        mod = 1.0 + 0.5 * np.cos(2 * np.pi * 120.0 * t)
        s1 = envelope_spectrum(make_ts(mod * np.sin(2 * np.pi * 1500.0 * t)))
        s2 = envelope_spectrum(make_ts(mod * np.sin(2 * np.pi * 3500.0 * t)))
        band = (s1.freqs_hz > 100) & (s1.freqs_hz < 140)
        p1 = s1.freqs_hz[band][np.argmax(s1.magnitude()[band])]
        p2 = s2.freqs_hz[band][np.argmax(s2.magnitude()[band])]
        assert p1 == p2 == pytest.approx(120.0, abs=5.0)


# ---------------------------------------------------------------------------
# Noise injection


class TestAddNoise:
    def measured_snr_db(self, clean, noisy):
        p_sig = np.mean(clean**2)
        p_noise = np.mean((noisy - clean) ** 2)
        return 10 * np.log10(p_sig / p_noise)

    @pytest.mark.parametrize("snr_db", [-10.0, 0.0, 6.0, 20.0])
    def test_realized_snr_is_exact(self, snr_db):
        t = np.arange(2000) / FS
        clean = make_ts(np.sin(2 * np.pi * 777.0 * t))
        noisy = add_noise(clean, snr_db, seed=123)
        assert self.measured_snr_db(clean.samples, noisy.samples) == pytest.approx(
            snr_db, abs=0.1
        )
        # scaling makes it exact, not just within tolerance
        assert self.measured_snr_db(clean.samples, noisy.samples) == pytest.approx(
            snr_db, abs=1e-9
        )

    def test_seed_determinism(self):
        x = make_ts(np.ones(500))
        a = add_noise(x, 0.0, seed=9).samples
        b = add_noise(x, 0.0, seed=9).samples
        c = add_noise(x, 0.0, seed=10).samples
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_infinite_snr_returns_input(self):
        x = make_ts(np.ones(100))
        assert np.array_equal(add_noise(x, np.inf, seed=0).samples, x.samples)

    def test_zero_energy_signal_rejected(self):
        with pytest.raises(InvalidInputError):
            add_noise(make_ts(np.zeros(100)), 0.0, seed=0)

    def test_nan_snr_rejected(self):
        with pytest.raises(InvalidInputError):
            add_noise(make_ts(np.ones(100)), float("nan"), seed=0)


# ---------------------------------------------------------------------------
# Normalization


class TestNormalize:
    def test_basic(self):
        out = normalize_meanstd(make_ts([1.0, 2.0, 3.0]))
        assert np.mean(out.samples) == pytest.approx(0.0, abs=1e-15)
        assert np.std(out.samples) == pytest.approx(1.0, rel=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(1000)
        a = normalize_meanstd(make_ts(x)).samples
        b = normalize_meanstd(make_ts(3.7 * x - 2.0)).samples
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(12)
        once = normalize_meanstd(make_ts(rng.standard_normal(1000)))
        twice = normalize_meanstd(once)
        np.testing.assert_allclose(once.samples, twice.samples, rtol=0, atol=1e-14)

    def test_constant_signal_rejected(self):
        with pytest.raises(InvalidInputError):
            normalize_meanstd(make_ts(np.full(10, 4.0)))
