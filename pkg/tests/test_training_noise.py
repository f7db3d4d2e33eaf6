import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_spec, tone_clips
from terrain_acoustics.audio import AudioSignal
from terrain_acoustics.metrics import Metrics
from terrain_acoustics.nn import Network
from terrain_acoustics.noise import (
    NoiseBank,
    NoiseSampler,
    NoiseSamplerConfig,
    mix_noise,
    sample_noise,
    signal_power,
    synthetic_noise_bank,
)
from terrain_acoustics.training import (
    Corruption,
    TrainConfig,
    TrainingDivergedError,
    WindowedData,
    evaluate,
    finetune_noise_aware,
    poly_lr,
    sgd_momentum_step,
    train,
)

# --- schedule and optimizer -----------------------------------------------------------


def test_poly_lr_examples():
    cfg = TrainConfig(lr0=0.01, max_iters=1000, lr_power=1.0)
    assert poly_lr(cfg, 0) == 0.01
    assert poly_lr(cfg, 1000) == 0
    assert poly_lr(cfg, 500) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        poly_lr(cfg, 1001)


@given(st.floats(0.1, 3.0), st.integers(1, 500))
def test_poly_lr_nonincreasing(power, n_max):
    cfg = TrainConfig(max_iters=n_max, lr_power=power)
    lrs = [poly_lr(cfg, n) for n in range(n_max + 1)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_momentum_zero_is_vanilla_sgd():
    w = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, 0.25])}
    sgd_momentum_step(w, g, {}, lr=0.1, momentum=0.0)
    np.testing.assert_array_equal(w["w"], np.array([1.0, -2.0]) - 0.1 * np.array([0.5, 0.25]))


def test_momentum_pure_inertia():
    w = {"w": np.zeros(2)}
    v = {"w": np.array([1.0, 2.0])}
    sgd_momentum_step(w, {"w": np.zeros(2)}, v, lr=0.5, momentum=0.9)
    np.testing.assert_allclose(v["w"], [0.9, 1.8])
    np.testing.assert_allclose(w["w"], [0.9, 1.8])


def test_momentum_two_steps():
    g = np.array([1.0, -3.0])
    w0 = np.array([0.5, 0.5])
    w = {"w": w0.copy()}
    v = {}
    for _ in range(2):
        sgd_momentum_step(w, {"w": g}, v, lr=1.0, momentum=0.9)
    np.testing.assert_allclose(v["w"], -1.9 * g)
    np.testing.assert_allclose(w["w"], w0 - 2.9 * g)


def test_momentum_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_momentum_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {}, 0.1, 0.9)


# --- noise sampling and mixing --------------------------------------------------------

def _bank(names=("a", "b", "c")):
    rng = np.random.default_rng(0)
    return NoiseBank({n: [AudioSignal(rng.standard_normal(1000), 8000)] for n in names})


def test_single_category_always_chosen():
    bank = _bank(("only",))
    rng = np.random.default_rng(1)
    assert {sample_noise(bank, NoiseSamplerConfig(), rng)[2] for _ in range(50)} == {"only"}


def test_symmetric_dirichlet_frequencies_uniform():
    bank = _bank()
    rng = np.random.default_rng(2)
    n = 100_000
    counts = {k: 0 for k in bank.names}
    cfg = NoiseSamplerConfig()
    for _ in range(n):
        counts[sample_noise(bank, cfg, rng)[2]] += 1
    p = 1 / 3
    sigma = math.sqrt(n * p * (1 - p))
    for c in counts.values():
        assert abs(c - n * p) < 3 * sigma


def test_zero_snr_std_is_constant():
    cfg = NoiseSamplerConfig(snr_mean=7.0, snr_std=0.0)
    rng = np.random.default_rng(3)
    assert {sample_noise(_bank(), cfg, rng)[1] for _ in range(20)} == {7.0}


def test_snr_distribution_moments():
    cfg = NoiseSamplerConfig(snr_mean=10.0, snr_std=10.0)
    rng = np.random.default_rng(4)
    snrs = np.array([sample_noise(_bank(), cfg, rng)[1] for _ in range(20_000)])
    assert abs(snrs.mean() - 10) < 0.5 and abs(snrs.std() - 10) < 0.5


def test_dirichlet_weights_are_a_simplex_point():
    sampler = NoiseSampler(_bank(), NoiseSamplerConfig(dirichlet_alpha=[0.5, 1.0, 2.0]),
                           np.random.default_rng(5))
    for _ in range(100):
        w = sampler.new_epoch()
        assert abs(w.sum() - 1) < 1e-12 and np.all(w > 0)


def test_empty_bank_errors():
    with pytest.raises(ValueError):
        NoiseBank({})
    with pytest.raises(ValueError):
        NoiseBank({"a": []})


def test_mix_equal_power_zero_db_unit_gain():
    clean = np.full(100, 0.5)
    noise = np.full(300, -0.5)
    out = mix_noise(clean, noise, 0.0, np.random.default_rng(0))
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


def test_mix_20db_noise_power():
    rng = np.random.default_rng(6)
    clean = rng.standard_normal(4000)
    out = mix_noise(clean, rng.standard_normal(9000), 20.0, rng)
    assert signal_power(out - clean) == pytest.approx(signal_power(clean) / 100, rel=1e-9)


@given(st.floats(-10, 30), st.integers(0, 2**31))
@settings(max_examples=200, deadline=None)
def test_mix_realized_snr(snr, seed):
    rng = np.random.default_rng(seed)
    clean = rng.standard_normal(int(rng.integers(10, 3000))) * rng.uniform(0.01, 2)
    noise = rng.standard_normal(int(rng.integers(10, 3000))) * rng.uniform(0.01, 2)
    out = mix_noise(clean, noise, snr, rng)
    added = out - clean
    realized = 10 * math.log10(signal_power(clean) / signal_power(added))
    assert abs(realized - snr) < 0.1


def test_mix_wraps_short_noise():
    out = mix_noise(np.ones(10), np.array([1.0, -1.0, 1.0]), 0.0, np.random.default_rng(0))
    assert out.shape == (10,)


def test_mix_errors_and_inf():
    rng = np.random.default_rng(0)
    with pytest.raises(FloatingPointError):
        mix_noise(np.zeros(10), np.ones(10), 0.0, rng)
    x = AudioSignal(np.arange(5.0), 8000)
    assert np.array_equal(mix_noise(x, np.ones(3), math.inf, rng).samples, x.samples)


def test_synthetic_noise_bank():
    bank = synthetic_noise_bank(duration_s=0.5, recordings_per_category=1)
    assert bank.names == ["white", "pink", "hum", "chirp", "babble"]
    for recs in bank.categories.values():
        assert signal_power(recs[0].samples) == pytest.approx(0.01)


def test_noise_bank_from_directory(tmp_path):
    from terrain_acoustics.audio import save_wav

    for cat in ("street", "cafe"):
        (tmp_path / cat).mkdir()
        save_wav(tmp_path / cat / "x.wav", AudioSignal(np.full(100, 0.1), 8000))
    assert NoiseBank.from_directory(tmp_path).names == ["cafe", "street"]


# --- metrics ---------------------------------------------------------------------------

def test_metrics_perfect_and_support():
    y = np.repeat(np.arange(9), 5)
    m = Metrics.from_predictions(y, y, [str(i) for i in range(9)])
    assert m.accuracy == 1.0
    np.testing.assert_array_equal(m.confusion, 5 * np.eye(9))


def test_metrics_random_predictor():
    rng = np.random.default_rng(0)
    y = np.repeat(np.arange(9), 2000)
    m = Metrics.from_predictions(y, rng.integers(0, 9, y.size), list("abcdefghi"))
    assert abs(m.accuracy - 1 / 9) < 0.01
    np.testing.assert_array_equal(m.confusion.sum(axis=1), np.bincount(y))
    assert m.accuracy == np.trace(m.confusion) / m.confusion.sum()


# --- training --------------------------------------------------------------------------

def test_tiny_m1_separates_two_tones():
    data = WindowedData(tone_clips(16), 1)
    net = Network(tiny_spec("M1"), seed=0)
    rows = train(net, data, TrainConfig(batch_size=8, lr0=0.01, max_iters=200))
    assert len(rows) == 200
    assert evaluate(net, data).accuracy == 1.0


def test_training_is_reproducible():
    data = WindowedData(tone_clips(8), 2)
    runs = []
    for _ in range(2):
        net = Network(tiny_spec("M4"), seed=3)
        rows = train(net, data, TrainConfig(batch_size=4, max_iters=15, seed=5),
                     synthetic_noise_bank(duration_s=0.5, recordings_per_category=1),
                     NoiseSamplerConfig(seed=1))
        runs.append(([r["loss"] for r in rows], net.params()))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        assert np.array_equal(runs[0][1][k], runs[1][1][k])


def test_noise_aware_needs_bank():
    data = WindowedData(tone_clips(4), 1)
    with pytest.raises(ValueError):
        train(Network(tiny_spec()), data, TrainConfig(max_iters=1), None, NoiseSamplerConfig())


def test_window_requires_lstm():
    data = WindowedData(tone_clips(8), 2)
    with pytest.raises(ValueError):
        train(Network(tiny_spec("M2")), data, TrainConfig(max_iters=1))


def test_divergence_raises():
    data = WindowedData(tone_clips(4), 1)
    net = Network(tiny_spec(), seed=0)
    net.head.params["bias"][:] = np.nan
    with pytest.raises((TrainingDivergedError, FloatingPointError)):
        train(net, data, TrainConfig(max_iters=3, batch_size=4))


def test_finetune_lr_and_zero_iterations():
    data = WindowedData(tone_clips(4), 1)
    net = Network(tiny_spec(), seed=0)
    bank = synthetic_noise_bank(duration_s=0.5, recordings_per_category=1)
    tuned, rows = finetune_noise_aware(net, data, TrainConfig(lr0=0.01, max_iters=3, batch_size=4),
                                       bank, NoiseSamplerConfig())
    assert rows[0]["lr"] == pytest.approx(0.001)
    same, rows = finetune_noise_aware(net, data, TrainConfig(max_iters=0), bank, NoiseSamplerConfig())
    assert rows == []
    for k, v in net.params().items():
        assert np.array_equal(same.params()[k], v)


def test_infinite_snr_corruption_equals_clean():
    data = WindowedData(tone_clips(4), 1)
    net = Network(tiny_spec(), seed=0)
    bank = synthetic_noise_bank(duration_s=0.5, recordings_per_category=1)
    clean = evaluate(net, data)
    noisy = evaluate(net, data, Corruption("white", math.inf), bank)
    np.testing.assert_array_equal(clean.confusion, noisy.confusion)
    with pytest.raises(ValueError):
        evaluate(net, data, Corruption("nope", 0.0), bank)


def test_windowed_data_shapes():
    clips = tone_clips(8, clips_per_recording=4)
    data = WindowedData(clips, 3)
    # 4 recordings of 4 clips -> 2 windows each
    assert data.index.shape == (8, 3)
    assert data.inputs(np.arange(2)).shape == (2, 3, 512, 7)
    assert np.all(clips.recording[data.index[:, 0]] == clips.recording[data.index[:, -1]])
