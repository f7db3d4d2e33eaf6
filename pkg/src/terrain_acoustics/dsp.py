"""Hamming-windowed STFT log-power spectrograms, dataset normalization and augmentation."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioSignal

__all__ = [
    "LOG_FLOOR",
    "StftConfig",
    "Spectrogram",
    "NormStats",
    "AugmentationSpec",
    "hamming_window",
    "stft",
    "log_power_spectrogram",
    "clip_spectrogram",
    "batch_log_spectrogram",
    "dataset_stats",
    "normalize_spectrogram",
    "normalize_array",
    "augment",
    "save_tspg",
    "load_tspg",
    "save_spectrogram_csv",
]

LOG_FLOOR = 1e-10
TSPG_MAGIC = b"TSPG"


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 2048
    frame_overlap_fraction: float = 0.5
    kept_bins: int = 512

    def __post_init__(self):
        if self.frame_len < 2 or self.frame_len % 2:
            raise ValueError("frame_len must be even and >= 2")
        if not 0 <= self.frame_overlap_fraction < 1:
            raise ValueError("frame_overlap_fraction must lie in [0, 1)")
        if not 1 <= self.kept_bins <= self.frame_len // 2:
            raise ValueError("kept_bins must lie in [1, frame_len / 2]")

    @property
    def hop(self) -> int:
        return max(1, int(round(self.frame_len * (1.0 - self.frame_overlap_fraction))))

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.frame_len:
            return 0
        return 1 + (num_samples - self.frame_len) // self.hop


@dataclass
class Spectrogram:
    """Log-power matrix with shape ``(bins, frames)``."""

    values: np.ndarray
    bin_freqs: np.ndarray
    frame_times: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ValueError("spectrogram must be 2-D with at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram values must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "Spectrogram":
        return Spectrogram(values, self.bin_freqs, self.frame_times)


@dataclass
class NormStats:
    """Training-set normalization statistics.

    ``global_max`` is the largest absolute log-power entry; ``mean_spectrum`` is the
    element-wise mean of the undivided spectrograms.
    """

    global_max: float
    mean_spectrum: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.global_max) or self.global_max == 0:
            raise ZeroDivisionError("global_max must be finite and nonzero")
        self.mean_spectrum = np.asarray(self.mean_spectrum, dtype=np.float64)

    @property
    def mean_normalized(self) -> np.ndarray:
        # mean of divided spectrograms equals divided mean
        return self.mean_spectrum / self.global_max


@dataclass(frozen=True)
class AugmentationSpec:
    time_shift_frames: tuple[int, int] = (0, 0)
    freq_shift_bins: tuple[int, int] = (0, 0)
    time_stretch_factor: tuple[float, float] = (1.0, 1.0)
    gain_db: tuple[float, float] = (0.0, 0.0)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("time_shift_frames", "freq_shift_bins", "time_stretch_factor", "gain_db"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty")
        if self.time_stretch_factor[0] <= 0:
            raise ValueError("time stretch factors must be positive")


def hamming_window(M: int) -> np.ndarray:
    if M < 2:
        raise ValueError(f"window length must be >= 2, got {M}")
    n = np.arange(M)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (M - 1))


def _frames(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """View the trailing axis of ``samples`` as (..., frames, frame_len)."""
    n = samples.shape[-1]
    count = cfg.num_frames(n)
    if count < 1:
        raise ValueError(f"clip of {n} samples is shorter than one {cfg.frame_len}-sample frame")
    windows = np.lib.stride_tricks.sliding_window_view(samples, cfg.frame_len, axis=-1)
    return windows[..., : (count - 1) * cfg.hop + 1 : cfg.hop, :]


def stft(clip: AudioSignal | np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex STFT with shape ``(frame_len, frames)``; tail samples that do not fill a frame are dropped."""
    samples = clip.samples if isinstance(clip, AudioSignal) else np.asarray(clip, dtype=np.float64)
    frames = _frames(samples, cfg) * hamming_window(cfg.frame_len)
    return np.fft.fft(frames, axis=-1).T


def _log_magnitude(mag: np.ndarray) -> np.ndarray:
    return 20.0 * np.log10(mag + LOG_FLOOR)


def log_power_spectrogram(X: np.ndarray, cfg: StftConfig = StftConfig(),
                          sample_rate: int = 44100) -> Spectrogram:
    X = np.asarray(X)
    if X.size == 0:
        raise ValueError("empty STFT matrix")
    values = _log_magnitude(np.abs(X[: cfg.kept_bins]))
    bin_freqs = np.arange(cfg.kept_bins) * sample_rate / cfg.frame_len
    frame_times = np.arange(X.shape[1]) * cfg.hop / sample_rate
    return Spectrogram(values, bin_freqs, frame_times)


def clip_spectrogram(clip: AudioSignal, cfg: StftConfig = StftConfig()) -> Spectrogram:
    return log_power_spectrogram(stft(clip, cfg), cfg, clip.sample_rate)


def batch_log_spectrogram(clips: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Log-power spectrograms for a stack of equal-length clips.

    ``clips`` has shape ``(..., samples)``; the result has shape ``(..., kept_bins, frames)``.
    Uses a real FFT, which yields the same lower bins as :func:`stft`.
    """
    frames = _frames(np.asarray(clips, dtype=np.float64), cfg) * hamming_window(cfg.frame_len)
    spec = np.fft.rfft(frames, axis=-1)[..., : cfg.kept_bins]
    return np.swapaxes(_log_magnitude(np.abs(spec)), -1, -2)


def dataset_stats(spectrograms: Sequence[Spectrogram] | np.ndarray) -> NormStats:
    if isinstance(spectrograms, np.ndarray):
        stack = spectrograms
    else:
        if len(spectrograms) == 0:
            raise ValueError("cannot compute statistics of an empty set")
        shapes = {s.shape for s in spectrograms}
        if len(shapes) != 1:
            raise ValueError(f"spectrogram shapes differ: {sorted(shapes)}")
        stack = np.stack([s.values for s in spectrograms])
    if stack.shape[0] == 0:
        raise ValueError("cannot compute statistics of an empty set")
    return NormStats(float(np.max(np.abs(stack))), stack.mean(axis=0))


def normalize_array(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return values / stats.global_max - stats.mean_normalized


def normalize_spectrogram(spec: Spectrogram, stats: NormStats) -> Spectrogram:
    if stats.global_max == 0:
        raise ZeroDivisionError("global_max is zero")
    if stats.mean_spectrum.shape != spec.shape:
        raise ValueError(f"stats shape {stats.mean_spectrum.shape} does not match {spec.shape}")
    return spec.with_values(normalize_array(spec.values, stats))


def _stretch(values: np.ndarray, factor: float) -> np.ndarray:
    T = values.shape[1]
    if factor == 1.0 or T == 1:
        return values
    src = np.clip(np.arange(T) / factor, 0, T - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, T - 1)
    frac = src - lo
    return values[:, lo] * (1 - frac) + values[:, hi] * frac


def augment(spec: Spectrogram, aug: AugmentationSpec, rng: np.random.Generator) -> Spectrogram:
    """Time shift, frequency shift, time stretch, then log-domain gain. Shape is preserved."""
    values = spec.values
    t_shift = int(rng.integers(aug.time_shift_frames[0], aug.time_shift_frames[1] + 1))
    f_shift = int(rng.integers(aug.freq_shift_bins[0], aug.freq_shift_bins[1] + 1))
    factor = float(rng.uniform(*aug.time_stretch_factor))
    gain = float(rng.uniform(*aug.gain_db))

    values = np.roll(values, t_shift, axis=1)
    if f_shift:
        shifted = np.zeros_like(values)
        if f_shift > 0:
            shifted[f_shift:] = values[:-f_shift]
        else:
            shifted[:f_shift] = values[-f_shift:]
        values = shifted
    values = _stretch(values, factor) + gain
    return spec.with_values(values)


def save_tspg(path: str | Path, spec: Spectrogram) -> None:
    rows, cols = spec.shape
    spacing = float(spec.bin_freqs[1] - spec.bin_freqs[0]) if len(spec.bin_freqs) > 1 else 0.0
    header = TSPG_MAGIC + struct.pack("<IId", rows, cols, spacing)
    Path(path).write_bytes(header + spec.values.astype("<f4").tobytes(order="C"))


def load_tspg(path: str | Path, frame_hop_s: float = 0.0) -> Spectrogram:
    raw = Path(path).read_bytes()
    if raw[:4] != TSPG_MAGIC or len(raw) < 20:
        raise ValueError(f"{path}: not a TSPG file")
    rows, cols, spacing = struct.unpack("<IId", raw[4:20])
    body = np.frombuffer(raw[20:], dtype="<f4")
    if body.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {body.size}")
    return Spectrogram(body.reshape(rows, cols).astype(np.float64),
                       np.arange(rows) * spacing, np.arange(cols) * frame_hop_s)


def save_spectrogram_csv(path: str | Path, spec: Spectrogram) -> None:
    header = "freq_hz," + ",".join(f"t{t:.6f}" for t in spec.frame_times)
    rows = np.column_stack([spec.bin_freqs, spec.values])
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.9g")
