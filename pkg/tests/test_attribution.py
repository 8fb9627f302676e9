"""Tests for the masking-game attribution engine.

The load-bearing oracle: a model whose output is a linear function of
signal energy makes the time-domain masking game against a zero
background exactly additive, so every Shapley value must equal its
segment's energy contribution to the float. Sign structure, efficiency,
determinism, and serialization are checked on top of that, ending with a
small trained classifier attributed end to end in the frequency domain.
"""

import json

import numpy as np
import pytest

from csshap import TimeSeries, WindowSpec, ConfigurationError, InvalidInputError
from csshap.attribution import (
    AttributionConfig,
    AttributionMap,
    attribute,
    build_masking_game,
    export_attribution_csv,
    export_attribution_json,
)
from csshap.domains import (
    MASKING_WINDOW,
    default_partition,
    domain_forward,
    domain_roundtrip,
    draw_background,
    zero_background,
)
from csshap import nn

FS = 1000.0


class _StubConfig:
    def __init__(self, class_count):
        self.class_count = class_count


class EnergyModel:
    """Class-1 output is a scaled mean square of the input; class 0 the rest.

    Linear in per-sample energy, so time-domain masking against silence
    yields an exactly additive cooperative game.
    """

    def __init__(self, scale=1.0):
        self.scale = scale
        self.config = _StubConfig(2)

    def predict_proba(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[None, :]
        e = (xs ** 2).mean(axis=1) * self.scale
        return np.stack([1.0 - e, e], axis=1)

    predict_logits = predict_proba


class ConstantModel:
    def __init__(self, class_count=3):
        self.config = _StubConfig(class_count)

    def predict_proba(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        n = 1 if xs.ndim == 1 else xs.shape[0]
        return np.full((n, self.config.class_count), 1.0 / self.config.class_count)

    predict_logits = predict_proba


def time_sample(seed=0, n=64):
    rng = np.random.default_rng(seed)
    return TimeSeries(samples=rng.normal(size=n) * 0.1, sample_rate_hz=FS)


@pytest.fixture(scope="module")
def additive_setup():
    x = time_sample()
    model = EnergyModel(scale=2.0)
    rep = domain_forward("time", x)
    part = default_partition("time", rep, cells=8)
    zbg = zero_background("time", rep)
    return x, model, rep, part, zbg


class TestMaskingGame:
    def test_empty_coalition_is_zero(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        game = build_masking_game(model, 1, x, "time", part, zbg)
        assert game.value(0) == 0.0

    def test_full_coalition_is_model_minus_base(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        game = build_masking_game(model, 1, x, "time", part, zbg)
        base = model.predict_proba(np.zeros((1, x.n_samples)))[0, 1]
        full_out = model.predict_proba(
            domain_roundtrip("time", rep).samples[None, :]
        )[0, 1]
        assert game.value(game.full_coalition) == pytest.approx(
            full_out - base, abs=1e-15
        )

    def test_game_is_additive_for_linear_model(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        game = build_masking_game(model, 1, x, "time", part, zbg)
        singletons = [game.value(1 << i) for i in range(8)]
        rng = np.random.default_rng(1)
        for _ in range(10):
            keep = int(rng.integers(0, 1 << 8))
            expect = sum(s for i, s in enumerate(singletons) if keep >> i & 1)
            assert game.value(keep) == pytest.approx(expect, abs=1e-12)

    def test_batch_value_matches_scalar(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        game = build_masking_game(model, 1, x, "time", part, zbg)
        keeps = [0, 5, 129, 255, 77]
        batch = game.batch_value(keeps)
        assert np.array_equal(batch, [game.value(k) for k in keeps])

    def test_class_index_validated(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        with pytest.raises(InvalidInputError):
            build_masking_game(model, 2, x, "time", part, zbg)
        with pytest.raises(InvalidInputError):
            build_masking_game(model, -1, x, "time", part, zbg)

    def test_domain_mismatch_rejected(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        freq_part = default_partition(
            "frequency", domain_forward("frequency", x), cells=8
        )
        with pytest.raises(InvalidInputError):
            build_masking_game(model, 0, x, "time", freq_part, zbg)


class TestAttribute:
    def test_exact_values_equal_segment_energies(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        config = AttributionConfig(background=zbg, cells=8, method="exact")
        amap = attribute(model, x, "time", config)
        cmap = np.asarray(part.cell_index_map)
        energies = np.array(
            [(x.samples[cmap == c] ** 2).sum() for c in range(8)]
        )
        expect = model.scale * energies / x.n_samples
        assert np.allclose(amap.per_class_values[1], expect, rtol=0, atol=1e-12)
        assert np.allclose(amap.per_class_values[0], -expect, rtol=0, atol=1e-12)
        assert amap.stderr is None
        assert amap.method == "exact"
        assert amap.num_evaluations == 1 << 8
        assert amap.model_evaluations == (1 << 8) * zbg.size

    def test_sampled_matches_exact_for_additive_game(self, additive_setup):
        # an additive game has constant marginals, so sampling is noiseless
        x, model, rep, part, zbg = additive_setup
        exact = attribute(
            model, x, "time", AttributionConfig(background=zbg, cells=8, method="exact")
        )
        sampled = attribute(
            model, x, "time",
            AttributionConfig(background=zbg, cells=8, num_permutations=20, seed=3),
        )
        assert np.allclose(
            sampled.per_class_values, exact.per_class_values, rtol=0, atol=1e-12
        )
        assert sampled.stderr is not None
        assert np.all(sampled.stderr < 1e-12)
        assert sampled.num_permutations == 20
        assert sampled.seed == 3

    def test_efficiency_residual_within_bound(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        amap = attribute(
            model, x, "time",
            AttributionConfig(background=zbg, cells=8, num_permutations=16, seed=0),
        )
        residuals = amap.efficiency_residuals()
        scale = np.abs(amap.per_class_values).sum()
        # permutation marginals telescope, so the residual is numerical noise
        assert np.all(residuals <= 1e-12 * max(scale, 1.0))
        agg = amap.aggregate_stderr()
        assert np.all(residuals <= 3.0 * agg + 1e-15)

    def test_constant_model_gives_zero_map(self):
        x = time_sample(4)
        model = ConstantModel()
        zbg = zero_background("time", domain_forward("time", x))
        amap = attribute(
            model, x, "time",
            AttributionConfig(background=zbg, cells=4, num_permutations=8, seed=1),
        )
        assert np.all(amap.per_class_values == 0.0)
        assert np.all(amap.stderr == 0.0)
        assert np.allclose(amap.base_rate, 1.0 / 3.0)

    def test_deterministic_given_seed(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        config = AttributionConfig(background=zbg, cells=8, num_permutations=12, seed=9)
        a = attribute(model, x, "time", config)
        b = attribute(model, x, "time", config)
        assert np.array_equal(a.per_class_values, b.per_class_values)
        assert np.array_equal(a.stderr, b.stderr)

    def test_frequency_attribution_localizes_tone(self):
        n = 128
        t = np.arange(n) / FS
        f_tone = 16 * FS / n
        x = TimeSeries(samples=np.sin(2 * np.pi * f_tone * t), sample_rate_hz=FS)
        model = EnergyModel(scale=0.5)
        rep = domain_forward("frequency", x)
        zbg = zero_background("frequency", rep)
        amap = attribute(
            model, x, "frequency",
            AttributionConfig(background=zbg, cells=8, method="exact"),
        )
        part = amap.partition
        values = amap.per_class_values[1]
        tone_cell = int(part.cell_index_map[16])
        assert np.abs(values[tone_cell]) >= 0.999 * np.abs(values).sum()

    def test_auto_method_picks_exact_for_small_partitions(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        small = attribute(
            model, x, "time", AttributionConfig(background=zbg, cells=4, method="auto")
        )
        assert small.method == "exact"
        big = attribute(
            model, x, "time",
            AttributionConfig(background=zbg, cells=16, method="auto",
                              num_permutations=4),
        )
        assert big.method == "sampled"

    def test_logit_target_uses_logits(self, additive_setup):
        x, model, rep, part, zbg = additive_setup

        class ShiftedLogits(EnergyModel):
            def predict_logits(self, xs):
                return 10.0 * self.predict_proba(xs)

        shifted = ShiftedLogits(scale=2.0)
        prob = attribute(
            shifted, x, "time", AttributionConfig(background=zbg, cells=8, method="exact")
        )
        logit = attribute(
            shifted, x, "time",
            AttributionConfig(background=zbg, cells=8, method="exact", target="logit"),
        )
        assert np.allclose(
            logit.per_class_values, 10.0 * prob.per_class_values, atol=1e-12
        )
        assert logit.target == "logit"

    def test_config_validation(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        with pytest.raises(ConfigurationError):
            AttributionConfig(background=zbg, target="odds")
        with pytest.raises(ConfigurationError):
            AttributionConfig(background=zbg, method="kernel")
        with pytest.raises(ConfigurationError):
            AttributionConfig(background=zbg, num_permutations=1)
        with pytest.raises(InvalidInputError):
            attribute(model, x, "time",
                      AttributionConfig(background=zbg, cells=8, method="exact",
                                        class_labels=("only_one",)))

    def test_class_labels_carried_through(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        amap = attribute(
            model, x, "time",
            AttributionConfig(background=zbg, cells=4, method="exact",
                              class_labels=("quiet", "loud")),
        )
        assert amap.class_labels == ("quiet", "loud")


class TestCellCenters:
    def test_time_centers_are_segment_midpoints(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        amap = attribute(
            model, x, "time", AttributionConfig(background=zbg, cells=8, method="exact")
        )
        assert amap.axis_names == ("time_s",)
        (centers,) = amap.cell_centers
        # 64 samples in 8 segments of 8: first midpoint (0+...+7)/8 samples
        assert centers[0] == pytest.approx(3.5 / FS)
        assert np.all(np.diff(centers) > 0)

    def test_cs_grid_centers_match_axes(self):
        rng = np.random.default_rng(0)
        x = TimeSeries(samples=rng.normal(size=2048), sample_rate_hz=10_000.0)
        model = ConstantModel(2)
        rep = domain_forward("cyclic_spectral", x, MASKING_WINDOW)
        zbg = zero_background("cyclic_spectral", rep)
        amap = attribute(
            model, x, "cyclic_spectral",
            AttributionConfig(background=zbg, num_permutations=2, seed=0),
        )
        assert amap.axis_names == ("f_hz", "alpha_hz")
        rows, cols = amap.cell_centers
        assert rows.size == 16 and cols.size == 16
        assert rows[8] == pytest.approx(2500.0)
        assert amap.values_grid(0).shape == (16, 16)


class TestSerialization:
    def test_csv_roundtrip_vector_domain(self, additive_setup, tmp_path):
        x, model, rep, part, zbg = additive_setup
        amap = attribute(
            model, x, "time",
            AttributionConfig(background=zbg, cells=8, method="exact",
                              class_labels=("quiet", "loud")),
        )
        paths = export_attribution_csv(amap, tmp_path, stem="run1")
        assert [p.name for p in paths] == [
            "run1_time_quiet.csv",
            "run1_time_loud.csv",
        ]
        table = np.genfromtxt(paths[1], delimiter=",", skip_header=1)
        assert table.shape == (8, 2)
        assert np.array_equal(table[:, 1], amap.per_class_values[1])
        assert np.array_equal(table[:, 0], amap.cell_centers[0])

    def test_csv_roundtrip_grid_domain(self, tmp_path):
        rng = np.random.default_rng(2)
        x = TimeSeries(samples=rng.normal(size=2048), sample_rate_hz=10_000.0)
        model = EnergyModel(scale=0.01)
        rep = domain_forward("cyclic_spectral", x, MASKING_WINDOW)
        zbg = zero_background("cyclic_spectral", rep)
        amap = attribute(
            model, x, "cyclic_spectral",
            AttributionConfig(background=zbg, num_permutations=4, seed=0),
        )
        paths = export_attribution_csv(amap, tmp_path)
        table = np.genfromtxt(paths[0], delimiter=",", skip_header=1)
        assert table.shape == (16, 17)
        assert np.array_equal(table[:, 0], amap.cell_centers[0])
        assert np.array_equal(table[:, 1:], amap.values_grid(0))
        header = paths[0].read_text().splitlines()[0].split(",")
        assert header[0] == "f_hz\\alpha_hz"
        assert float(header[1]) == amap.cell_centers[1][0]

    def test_json_summary(self, additive_setup, tmp_path):
        x, model, rep, part, zbg = additive_setup
        amap = attribute(
            model, x, "time",
            AttributionConfig(background=zbg, cells=8, num_permutations=8, seed=5),
        )
        path = export_attribution_json(amap, tmp_path / "summary.json")
        loaded = json.loads(path.read_text())
        assert loaded["domain"] == "time"
        assert loaded["seed"] == 5
        assert loaded["num_permutations"] == 8
        assert loaded["background_size"] == 1
        assert loaded["num_evaluations"] == amap.num_evaluations
        for entry in loaded["efficiency"].values():
            assert entry["within_bound"]
        assert "segment_count: 8" in loaded["partition_layout"]
        assert loaded["window"] == {"kind": "rectangular", "length": 32, "hop": 32}

    def test_map_validation(self, additive_setup):
        x, model, rep, part, zbg = additive_setup
        amap = attribute(
            model, x, "time", AttributionConfig(background=zbg, cells=8, method="exact")
        )
        with pytest.raises(InvalidInputError):
            AttributionMap(
                domain="time", partition=amap.partition,
                per_class_values=np.zeros((3, 8)), class_labels=("a", "b"),
                target="probability", base_rate=np.zeros(2),
                model_output=np.zeros(2), stderr=None, num_evaluations=1,
                model_evaluations=1, num_permutations=None, background_size=1,
                seed=None, method="exact", window=MASKING_WINDOW,
                axis_names=("time_s",), cell_centers=(np.zeros(8),),
            )


@pytest.fixture(scope="module")
def trained_two_tone():
    """Tiny classifier separating two tones, for end-to-end attribution."""
    n, per_class = 64, 40
    rng = np.random.default_rng(0)
    t = np.arange(n) / FS
    tones = (6 * FS / n, 20 * FS / n)
    xs, ys, signals = [], [], []
    for label, f in enumerate(tones):
        for _ in range(per_class):
            s = np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
            s = s + 0.05 * rng.normal(size=n)
            xs.append(s)
            ys.append(label)
            signals.append(TimeSeries(samples=s, sample_rate_hz=FS))
    xs = np.asarray(xs, dtype=np.float32)
    ys = np.asarray(ys, dtype=np.int64)
    config = nn.default_mlp_config(n, 2, seed=2)
    model = nn.build_model(config)
    data = nn.ArraySplit(train_x=xs, train_y=ys, test_x=xs[:8], test_y=ys[:8])
    nn.train(model, data, epochs=30, batch_size=16, learning_rate=3e-3, seed=0)
    return model, signals, tones


class TestEndToEnd:
    def test_trained_model_attribution_finds_tone_band(self, trained_two_tone):
        model, signals, tones = trained_two_tone
        assert nn.accuracy(model, np.stack([s.samples for s in signals]),
                           np.array([0] * 40 + [1] * 40)) == 1.0
        x = signals[0]  # a class-0 tone
        bg = draw_background("frequency", signals, size=8, seed=4)
        amap = attribute(
            model, x, "frequency",
            AttributionConfig(background=bg, cells=8, num_permutations=60, seed=1,
                              class_labels=("low", "high")),
        )
        part = amap.partition
        own = amap.per_class_values[0]
        other = amap.per_class_values[1]
        tone_cell = int(part.cell_index_map[6])
        rival_cell = int(part.cell_index_map[20])
        assert tone_cell != rival_cell
        # both tone bands are informative: keeping the own tone is evidence
        # for class 0, and keeping the sample's silent rival band blocks
        # class-1 backgrounds, so those two cells dominate everything else
        top_two = set(np.argsort(np.abs(own))[-2:].tolist())
        assert top_two == {tone_cell, rival_cell}
        assert own[tone_cell] > 0
        assert other[tone_cell] < 0
        residual = amap.efficiency_residuals()
        assert np.all(residual <= 3.0 * amap.aggregate_stderr() + 1e-12)
