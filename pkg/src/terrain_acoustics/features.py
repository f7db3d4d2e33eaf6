"""Hand-crafted audio features used by the shallow baselines.

Frame-level features operate on a :class:`FrameSpectrum`, whose ``magnitudes`` hold
power-spectrum samples ``|FFT|^2 / N`` for the lower ``N / 2`` bins of a window of
``N`` samples. Clip-level bundles aggregate frame features into fixed-length vectors.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioSignal
from .dsp import LOG_FLOOR, hamming_window

__all__ = [
    "BUNDLES",
    "FrameSpectrum",
    "FeatureVector",
    "UndefinedFeatureError",
    "zcr",
    "short_time_energy",
    "spectral_centroid",
    "spectral_flux",
    "spectral_rolloff",
    "spectral_skewness",
    "spectral_kurtosis",
    "spectral_std",
    "mel_filterbank",
    "mfcc",
    "frame_spectra",
    "feature_bundle",
    "feature_matrix",
    "write_feature_csv",
    "read_feature_csv",
]

BUNDLES = ("ginna", "ginna_shape", "spectral", "timbral", "cepstral_mfcc")
ROLLOFF_FRACTION = 0.95


class UndefinedFeatureError(ValueError):
    """A feature is mathematically undefined for this input (e.g. an all-zero spectrum)."""


@dataclass
class FrameSpectrum:
    magnitudes: np.ndarray
    bin_freqs: np.ndarray
    window_size: int

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes, dtype=np.float64)
        self.bin_freqs = np.asarray(self.bin_freqs, dtype=np.float64)
        if self.magnitudes.ndim != 1 or self.magnitudes.size == 0:
            raise ValueError("magnitudes must be a nonempty 1-D sequence")
        if self.magnitudes.shape != self.bin_freqs.shape:
            raise ValueError("magnitudes and bin_freqs differ in length")
        if np.any(self.magnitudes < 0) or not np.all(np.isfinite(self.magnitudes)):
            raise ValueError("magnitudes must be finite and nonnegative")
        if self.magnitudes.size != self.window_size // 2:
            raise ValueError("expected window_size / 2 magnitudes")

    @classmethod
    def from_frame(cls, frame: np.ndarray, sample_rate: int, window: np.ndarray | None = None):
        frame = np.asarray(frame, dtype=np.float64)
        N = frame.size
        if window is not None:
            frame = frame * window
        power = np.abs(np.fft.rfft(frame)[: N // 2]) ** 2 / N
        return cls(power, np.arange(N // 2) * sample_rate / N, N)


@dataclass
class FeatureVector:
    values: np.ndarray
    names: list[str]
    undefined: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.names),):
            raise ValueError("values and names differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")

    def __len__(self) -> int:
        return len(self.names)


def _sgn(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0, -1.0)


def zcr(frame: Sequence[float]) -> float:
    y = np.asarray(frame, dtype=np.float64)
    N = y.size
    if N < 2:
        raise ValueError("zero crossing rate needs at least two samples")
    s = _sgn(y)
    return float(np.sum(np.abs(np.diff(s))) / (2 * N))


def short_time_energy(frame: Sequence[float], window: Sequence[float]) -> float:
    x = np.asarray(frame, dtype=np.float64)
    w = np.asarray(window, dtype=np.float64)
    if x.shape != w.shape:
        raise ValueError("frame and window lengths differ")
    return float(np.sum((x * w) ** 2))


def _total(spec: FrameSpectrum, feature: str) -> float:
    total = float(np.sum(spec.magnitudes))
    if total <= 0:
        raise UndefinedFeatureError(f"{feature} is undefined for an all-zero spectrum")
    return total


def spectral_centroid(spec: FrameSpectrum) -> float:
    total = _total(spec, "spectral centroid")
    return float(np.dot(spec.bin_freqs, spec.magnitudes) / total)


def spectral_flux(prev: FrameSpectrum, cur: FrameSpectrum) -> float:
    if prev.magnitudes.shape != cur.magnitudes.shape:
        raise ValueError("spectra differ in length")
    N = cur.window_size
    if N < 2:
        raise ValueError("window size must be >= 2")
    return float(np.sqrt(np.sum((cur.magnitudes - prev.magnitudes) ** 2)) / (N - 1))


def spectral_rolloff(spec: FrameSpectrum) -> int:
    """Smallest bin index whose cumulative power reaches 95% of the total."""
    total = _total(spec, "spectral rolloff")
    cumulative = np.cumsum(spec.magnitudes)
    return int(min(np.searchsorted(cumulative, ROLLOFF_FRACTION * total, side="left"),
                   spec.magnitudes.size - 1))


def _moments(spec: FrameSpectrum) -> tuple[np.ndarray, float]:
    X = spec.magnitudes
    mu = X.mean()
    sigma = np.sqrt(np.mean((X - mu) ** 2))
    if sigma == 0:
        raise UndefinedFeatureError("spectral moments are undefined for a constant spectrum")
    return (X - mu) / sigma, float(sigma)


def spectral_std(spec: FrameSpectrum) -> float:
    X = spec.magnitudes
    return float(np.sqrt(np.mean((X - X.mean()) ** 2)))


def spectral_skewness(spec: FrameSpectrum) -> float:
    z, _ = _moments(spec)
    return float(np.mean(z ** 3))


def spectral_kurtosis(spec: FrameSpectrum) -> float:
    z, _ = _moments(spec)
    return float(np.mean(z ** 4) - 3.0)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def _cached_filterbank(n_bins: int, bin_spacing: float, n_mels: int, f_s: float) -> np.ndarray:
    freqs = np.arange(n_bins) * bin_spacing
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(f_s / 2.0), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for j in range(n_mels):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        bank[j] = np.clip(np.minimum(rising, falling), 0.0, None)
        if bank[j].sum() == 0:
            # band narrower than the bin spacing: take the nearest bin
            bank[j, int(np.argmin(np.abs(freqs - mid)))] = 1.0
    bank /= bank.sum(axis=1, keepdims=True)
    bank.flags.writeable = False
    return bank


def mel_filterbank(bin_freqs: np.ndarray, n_mels: int, f_s: float) -> np.ndarray:
    """Unit-area triangular filters on the HTK mel scale, shape ``(n_mels, bins)``."""
    bin_freqs = np.asarray(bin_freqs, dtype=np.float64)
    spacing = float(bin_freqs[1] - bin_freqs[0]) if bin_freqs.size > 1 else f_s / 2.0
    return _cached_filterbank(bin_freqs.size, spacing, int(n_mels), float(f_s))


@lru_cache(maxsize=32)
def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    D = np.cos(np.pi * k * (2 * m + 1) / (2 * n)) * np.sqrt(2.0 / n)
    D[0] /= np.sqrt(2.0)
    D.flags.writeable = False
    return D


def _mfcc_power(power: np.ndarray, bin_freqs: np.ndarray, n_mels: int, n_coeffs: int,
                f_s: float) -> np.ndarray:
    bank = mel_filterbank(bin_freqs, n_mels, f_s)
    log_energy = np.log(power @ bank.T + LOG_FLOOR)
    return log_energy @ _dct_matrix(n_mels)[:n_coeffs].T


def mfcc(spec: FrameSpectrum, n_mels: int = 26, n_coeffs: int = 13,
         f_s: float | None = None) -> FeatureVector:
    if n_mels < 1 or not 1 <= n_coeffs <= n_mels:
        raise ValueError("require 1 <= n_coeffs <= n_mels")
    if f_s is None:
        f_s = spec.bin_freqs[1] * spec.window_size if spec.bin_freqs.size > 1 else 2.0
    coeffs = _mfcc_power(spec.magnitudes, spec.bin_freqs, n_mels, n_coeffs, f_s)
    return FeatureVector(coeffs, [f"mfcc{i}" for i in range(n_coeffs)])


def frame_spectra(clip: AudioSignal, frame_len: int = 2048, hop: int | None = None):
    """Frames of ``clip`` plus their Hamming-windowed power spectra.

    Returns ``(frames, power, bin_freqs)`` with shapes ``(F, N)``, ``(F, N/2)``, ``(N/2,)``.
    """
    hop = hop or frame_len // 2
    x = clip.samples
    if x.size < frame_len:
        frame_len = x.size - x.size % 2
        hop = frame_len
    count = 1 + (x.size - frame_len) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[: (count - 1) * hop + 1 : hop]
    window = hamming_window(frame_len)
    power = np.abs(np.fft.rfft(frames * window, axis=-1)[:, : frame_len // 2]) ** 2 / frame_len
    bin_freqs = np.arange(frame_len // 2) * clip.sample_rate / frame_len
    return frames, power, bin_freqs


class _FrameFeatures:
    """Per-frame feature tracks for one clip; undefined entries are 0 and recorded."""

    def __init__(self, clip: AudioSignal, frame_len: int, hop: int | None):
        self.frames, self.power, self.freqs = frame_spectra(clip, frame_len, hop)
        self.f_s = clip.sample_rate
        self.N = self.frames.shape[1]
        self.window = hamming_window(self.N)
        self.undefined: set[str] = set()
        self._cache: dict[str, np.ndarray] = {}

    def track(self, name: str) -> np.ndarray:
        if name not in self._cache:
            self._cache[name] = getattr(self, "_" + name)()
        return self._cache[name]

    def _spectra(self):
        return [FrameSpectrum(p, self.freqs, self.N) for p in self.power]

    def _guarded(self, name, fn):
        out = []
        for spec in self._spectra():
            try:
                out.append(fn(spec))
            except UndefinedFeatureError:
                self.undefined.add(name)
                out.append(0.0)
        return np.asarray(out, dtype=np.float64)

    def _zcr(self):
        return np.array([zcr(f) for f in self.frames])

    def _ste(self):
        return np.array([short_time_energy(f, self.window) for f in self.frames])

    def _sc(self):
        return self._guarded("sc", spectral_centroid)

    def _sr(self):
        return self.freqs[self._guarded("sr", spectral_rolloff).astype(int)]

    def _sf(self):
        spectra = self._spectra()
        if len(spectra) < 2:
            self.undefined.add("sf")
            return np.zeros(1)
        return np.array([spectral_flux(a, b) for a, b in zip(spectra[:-1], spectra[1:])])

    def _std(self):
        return np.array([spectral_std(s) for s in self._spectra()])

    def _skew(self):
        return self._guarded("skew", spectral_skewness)

    def _kurt(self):
        return self._guarded("kurt", spectral_kurtosis)

    def _mfcc(self):
        return _mfcc_power(self.power, self.freqs, 26, 13, self.f_s)

    def low_energy(self) -> float:
        ste = self.track("ste")
        return float(np.mean(ste < ste.mean()))


def _mean_std(ff: _FrameFeatures, names: Sequence[str], values, labels):
    for name in names:
        t = ff.track(name)
        values += [t.mean(), t.std()]
        labels += [f"{name}_mean", f"{name}_std"]


def feature_bundle(clip: AudioSignal, bundle: str = "ginna", frame_len: int = 2048,
                   hop: int | None = None) -> FeatureVector:
    """Clip-level feature vector: per-frame features summarized across frames.

    Bundles: ``ginna`` (ZCR, STE, SC, SR, SF), ``ginna_shape`` (adds spectral std,
    skewness, kurtosis), ``spectral`` (SC, SR, SF, skewness, kurtosis), ``timbral``
    (19-dim means and variances incl. low energy and MFCC 0-4) and ``cepstral_mfcc``
    (13 MFCCs). Rolloff is stored as a frequency. Undefined frame features become 0
    and are listed in ``FeatureVector.undefined``.
    """
    if bundle not in BUNDLES:
        raise ValueError(f"unknown bundle {bundle!r}; choose from {BUNDLES}")
    ff = _FrameFeatures(clip, frame_len, hop)
    values: list[float] = []
    names: list[str] = []
    if bundle == "ginna":
        _mean_std(ff, ["zcr", "ste", "sc", "sr", "sf"], values, names)
    elif bundle == "ginna_shape":
        _mean_std(ff, ["zcr", "ste", "sc", "sr", "sf", "std", "skew", "kurt"], values, names)
    elif bundle == "spectral":
        _mean_std(ff, ["sc", "sr", "sf", "skew", "kurt"], values, names)
    elif bundle == "timbral":
        for name in ("sc", "sr", "sf", "zcr"):
            t = ff.track(name)
            values += [t.mean(), t.var()]
            names += [f"{name}_mean", f"{name}_var"]
        values.append(ff.low_energy())
        names.append("low_energy")
        m = ff.track("mfcc")[:, :5]
        values += list(m.mean(axis=0)) + list(m.var(axis=0))
        names += [f"mfcc{i}_mean" for i in range(5)] + [f"mfcc{i}_var" for i in range(5)]
    else:
        m = ff.track("mfcc")
        values += list(m.mean(axis=0)) + list(m.std(axis=0))
        names += [f"mfcc{i}_mean" for i in range(13)] + [f"mfcc{i}_std" for i in range(13)]
    if ff.undefined:
        warnings.warn(f"undefined features set to 0: {sorted(ff.undefined)}", RuntimeWarning,
                      stacklevel=2)
    return FeatureVector(np.asarray(values), names, set(ff.undefined))


def feature_matrix(clips: Sequence[AudioSignal], bundle: str, **kw) -> tuple[np.ndarray, list[str]]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        vectors = [feature_bundle(c, bundle, **kw) for c in clips]
    return np.stack([v.values for v in vectors]), vectors[0].names


def write_feature_csv(path: str | Path, X: np.ndarray, names: Sequence[str],
                      labels: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + ["label"])
        for row, label in zip(X, labels):
            writer.writerow([repr(float(v)) for v in row] + [label])


def read_feature_csv(path: str | Path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    X = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64)
    return X, header[:-1], [r[-1] for r in rows]
