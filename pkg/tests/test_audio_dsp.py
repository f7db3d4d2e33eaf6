import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrain_acoustics.audio import (
    AudioSignal,
    ClipConfig,
    UnsupportedWavError,
    WavFormatError,
    load_wav,
    parse_wav,
    save_wav,
    segment_clips,
    wav_bytes,
)
from terrain_acoustics.dsp import (
    LOG_FLOOR,
    AugmentationSpec,
    NormStats,
    Spectrogram,
    StftConfig,
    augment,
    batch_log_spectrogram,
    clip_spectrogram,
    dataset_stats,
    hamming_window,
    load_tspg,
    log_power_spectrogram,
    normalize_array,
    normalize_spectrogram,
    save_tspg,
    stft,
)


def naive_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def raw_wav(samples, channels=1, rate=8000, tag=1, bits=16, dtype="<i2"):
    data = np.asarray(samples, dtype=dtype).tobytes()
    align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * align, align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


# --- WAV ---------------------------------------------------------------------------

def test_wav_int16_scaling(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(raw_wav([32767], rate=22050))
    sig = load_wav(p)
    assert sig.sample_rate == 22050
    assert sig.samples[0] == pytest.approx(32767 / 32768)


def test_wav_zeros():
    assert parse_wav(raw_wav([0, 0, 0])).samples.tolist() == [0.0, 0.0, 0.0]


def test_wav_stereo_averages_to_mono():
    sig = parse_wav(raw_wav([1.0, 0.0], channels=2, tag=3, bits=32, dtype="<f4"))
    np.testing.assert_array_equal(sig.samples, [0.5])


def test_wav_round_trip_float32(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 101).astype(np.float32).astype(np.float64)
    save_wav(tmp_path / "f.wav", AudioSignal(x, 44100), float32=True)
    np.testing.assert_array_equal(load_wav(tmp_path / "f.wav").samples, x)


def test_wav_round_trip_int16():
    x = np.array([-1.0, -0.5, 0.0, 0.25, 32767 / 32768])
    np.testing.assert_array_equal(parse_wav(wav_bytes(AudioSignal(x, 8000))).samples, x)


def test_wav_rejects_bad_input():
    with pytest.raises(WavFormatError):
        parse_wav(b"RIFX" + b"\0" * 40)
    with pytest.raises(UnsupportedWavError):
        parse_wav(raw_wav([1, 2, 3], bits=8, dtype="u1"))
    with pytest.raises(WavFormatError):
        parse_wav(raw_wav([1, 2])[:-2])


def test_audio_signal_validation():
    with pytest.raises(ValueError):
        AudioSignal(np.array([]), 44100)
    with pytest.raises(ValueError):
        AudioSignal(np.array([np.nan]), 44100)
    with pytest.raises(ValueError):
        AudioSignal(np.zeros(3), 0)


# --- segmentation --------------------------------------------------------------------

def test_segment_counts():
    sig = AudioSignal(np.zeros(1000), 1000)
    assert len(segment_clips(sig, ClipConfig(200, 0))) == 5
    clips = segment_clips(sig, ClipConfig(200, 100))
    assert len(clips) == 9


def test_segment_starts_reconstruct():
    x = np.arange(1000, dtype=float)
    clips = segment_clips(AudioSignal(x, 1000), ClipConfig(200, 100))
    assert [c.samples[0] for c in clips] == [100.0 * i for i in range(9)]
    assert {len(c) for c in clips} == {200}


def test_segment_too_short():
    with pytest.raises(ValueError):
        segment_clips(AudioSignal(np.zeros(150), 1000), ClipConfig(200, 0))


# --- window and STFT -----------------------------------------------------------------

def test_hamming_small():
    np.testing.assert_allclose(hamming_window(4), [0.08, 0.77, 0.77, 0.08], atol=1e-12)
    np.testing.assert_allclose(hamming_window(3), [0.08, 1.0, 0.08], atol=1e-12)


@given(st.integers(2, 4096))
@settings(max_examples=50, deadline=None)
def test_hamming_symmetric_and_bounded(M):
    w = hamming_window(M)
    np.testing.assert_allclose(w, w[::-1], atol=1e-15)
    assert w.min() >= 0.08 - 1e-15 and w.max() <= 1.0


def test_num_frames_200ms():
    assert StftConfig().num_frames(8820) == 7
    assert batch_log_spectrogram(np.zeros((1, 8820))).shape == (1, 512, 7)


def test_stft_dc():
    cfg = StftConfig()
    X = stft(np.ones(cfg.frame_len), cfg)
    assert X.shape == (cfg.frame_len, 1)
    assert abs(X[0, 0]) == pytest.approx(hamming_window(cfg.frame_len).sum())
    assert np.all(np.abs(X[1:, 0]) < np.abs(X[0, 0]))


def test_stft_bin_peak():
    cfg = StftConfig()
    k = 37
    x = np.cos(2 * np.pi * k * np.arange(cfg.frame_len) / cfg.frame_len)
    X = stft(x, cfg)[:, 0]
    assert np.argmax(np.abs(X[: cfg.frame_len // 2])) == k
    oracle = naive_dft(x * hamming_window(cfg.frame_len))
    assert np.linalg.norm(X - oracle) / np.linalg.norm(oracle) < 1e-9


def test_stft_random_frames_match_naive_dft():
    rng = np.random.default_rng(1)
    cfg = StftConfig()
    w = hamming_window(cfg.frame_len)
    for _ in range(5):
        x = rng.standard_normal(cfg.frame_len)
        X = stft(x, cfg)[:, 0]
        oracle = naive_dft(x * w)
        assert np.linalg.norm(X - oracle) / np.linalg.norm(oracle) < 1e-9


def test_stft_frame_hops():
    cfg = StftConfig()
    rng = np.random.default_rng(2)
    x = rng.standard_normal(8820)
    X = stft(x, cfg)
    assert X.shape == (2048, 7)
    np.testing.assert_allclose(X[:, 3], np.fft.fft(x[3 * 1024:3 * 1024 + 2048] * hamming_window(2048)))


def test_log_power_values():
    cfg = StftConfig(frame_len=4, kept_bins=2)
    X = np.array([[1.0], [10.0], [0.0], [0.0]])
    spec = log_power_spectrogram(X, cfg, 8000)
    np.testing.assert_allclose(spec.values[:, 0], [0.0, 20.0], atol=1e-8)  # additive floor
    floor = log_power_spectrogram(np.zeros((4, 1)), cfg, 8000).values
    np.testing.assert_allclose(floor, 20 * np.log10(LOG_FLOOR))


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    clips = rng.standard_normal((3, 8820))
    batch = batch_log_spectrogram(clips)
    for i in range(3):
        single = clip_spectrogram(AudioSignal(clips[i], 44100))
        np.testing.assert_allclose(batch[i], single.values, rtol=1e-12, atol=1e-9)
        assert single.bin_freqs[1] == pytest.approx(44100 / 2048)


# --- normalization -------------------------------------------------------------------

def _spec(v, shape=(3, 2)):
    return Spectrogram(np.full(shape, float(v)), np.arange(shape[0]), np.arange(shape[1]))


def test_stats_examples():
    s = dataset_stats([_spec(5)])
    assert s.global_max == 5 and np.all(s.mean_spectrum == 5)
    s = dataset_stats([_spec(2), _spec(4)])
    assert s.global_max == 4 and np.all(s.mean_spectrum == 3)
    with pytest.raises(ValueError):
        dataset_stats([])


def test_normalize_identical_is_zero():
    specs = [_spec(-7.5)] * 3
    stats = dataset_stats(specs)
    for s in specs:
        assert np.all(normalize_spectrogram(s, stats).values == 0)


def test_normalize_arithmetic():
    stats = NormStats(4.0, np.full((3, 2), 2.0))
    np.testing.assert_allclose(stats.mean_normalized, 0.5)
    np.testing.assert_allclose(normalize_spectrogram(_spec(4), stats).values, 0.5)


def test_normalized_training_set_has_zero_mean():
    rng = np.random.default_rng(4)
    stack = rng.normal(-40, 15, size=(50, 6, 4))
    out = normalize_array(stack, dataset_stats(stack))
    assert np.abs(out.mean(axis=0)).max() < 1e-10


# --- augmentation --------------------------------------------------------------------

def test_augment_identity():
    rng = np.random.default_rng(0)
    spec = Spectrogram(rng.normal(size=(8, 7)), np.arange(8), np.arange(7))
    out = augment(spec, AugmentationSpec(), rng)
    np.testing.assert_array_equal(out.values, spec.values)


def test_augment_gain():
    spec = _spec(-3, (4, 7))
    out = augment(spec, AugmentationSpec(gain_db=(6, 6)), np.random.default_rng(0))
    np.testing.assert_allclose(out.values, 3.0)


def test_augment_time_shift():
    v = np.zeros((4, 7))
    v[:, 0] = 1.0
    spec = Spectrogram(v, np.arange(4), np.arange(7))
    out = augment(spec, AugmentationSpec(time_shift_frames=(2, 2)), np.random.default_rng(0)).values
    assert np.flatnonzero(out.any(axis=0)).tolist() == [2]


@given(st.integers(0, 3), st.integers(-4, 4), st.floats(0.5, 2.0), st.floats(-10, 10), st.integers(0, 100))
@settings(max_examples=40, deadline=None)
def test_augment_preserves_shape(shift, fshift, stretch, gain, seed):
    rng = np.random.default_rng(seed)
    spec = Spectrogram(rng.normal(size=(16, 7)), np.arange(16), np.arange(7))
    aug = AugmentationSpec((0, shift), (min(0, fshift), max(0, fshift)), (min(1, stretch), max(1, stretch)),
                           (min(0, gain), max(0, gain)))
    assert augment(spec, aug, rng).values.shape == (16, 7)


def test_tspg_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    spec = Spectrogram(rng.normal(size=(512, 7)).astype(np.float32).astype(np.float64),
                       np.arange(512) * 44100 / 2048, np.arange(7) * 1024 / 44100)
    save_tspg(tmp_path / "x.tspg", spec)
    back = load_tspg(tmp_path / "x.tspg", 1024 / 44100)
    np.testing.assert_array_equal(back.values, spec.values)
    assert (tmp_path / "x.tspg").read_bytes()[:4] == b"TSPG"
