"""Categorized noise banks, Dirichlet/multinomial noise sampling and SNR mixing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .audio import AudioSignal, load_wav

__all__ = [
    "NoiseBank",
    "NoiseSamplerConfig",
    "NoiseSampler",
    "sample_noise",
    "mix_noise",
    "signal_power",
    "synthetic_noise_bank",
]


class NoiseBank:
    """Named categories of noise recordings. Every category must hold at least one signal."""

    def __init__(self, categories: Mapping[str, Sequence[AudioSignal]]):
        if not categories:
            raise ValueError("noise bank has no categories")
        self.categories: dict[str, list[AudioSignal]] = {}
        for name, signals in categories.items():
            signals = list(signals)
            if not signals:
                raise ValueError(f"noise category {name!r} is empty")
            self.categories[name] = signals

    @property
    def names(self) -> list[str]:
        return list(self.categories)

    def __len__(self) -> int:
        return len(self.categories)

    def subset(self, names: Sequence[str]) -> "NoiseBank":
        return NoiseBank({n: self.categories[n] for n in names})

    @classmethod
    def from_directory(cls, root: str | Path) -> "NoiseBank":
        """One subdirectory per category, each containing WAV files."""
        root = Path(root)
        cats = {}
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            wavs = sorted(sub.glob("*.wav"))
            if wavs:
                cats[sub.name] = [load_wav(w) for w in wavs]
        return cls(cats)


@dataclass
class NoiseSamplerConfig:
    dirichlet_alpha: Sequence[float] | None = None  # one per category; None means all ones
    snr_mean: float = 10.0
    snr_std: float = 10.0
    seed: int = 0
    corrupt_fraction: float = 0.5

    def __post_init__(self):
        if self.dirichlet_alpha is not None and any(a <= 0 for a in self.dirichlet_alpha):
            raise ValueError("Dirichlet concentrations must be positive")
        if self.snr_std < 0:
            raise ValueError("snr_std must be nonnegative")
        if not 0 <= self.corrupt_fraction <= 1:
            raise ValueError("corrupt_fraction must lie in [0, 1]")

    def alphas(self, n: int) -> np.ndarray:
        if self.dirichlet_alpha is None:
            return np.ones(n)
        if len(self.dirichlet_alpha) != n:
            raise ValueError(f"expected {n} Dirichlet concentrations, got {len(self.dirichlet_alpha)}")
        return np.asarray(self.dirichlet_alpha, dtype=np.float64)


def sample_noise(bank: NoiseBank, cfg: NoiseSamplerConfig, rng: np.random.Generator,
                 weights: np.ndarray | None = None) -> tuple[AudioSignal, float, str]:
    """Draw ``(noise recording, target SNR in dB, category)``.

    ``weights`` are the current multinomial category probabilities; if omitted they are
    drawn from the Dirichlet prior for this call alone.
    """
    if bank is None or len(bank) == 0:
        raise ValueError("noise bank is empty")
    if weights is None:
        weights = rng.dirichlet(cfg.alphas(len(bank)))
    k = int(rng.choice(len(bank), p=weights))
    name = bank.names[k]
    recordings = bank.categories[name]
    noise = recordings[int(rng.integers(len(recordings)))]
    snr = float(rng.normal(cfg.snr_mean, cfg.snr_std)) if cfg.snr_std > 0 else float(cfg.snr_mean)
    return noise, snr, name


class NoiseSampler:
    """Stateful sampler: category weights are redrawn from the Dirichlet prior once per epoch."""

    def __init__(self, bank: NoiseBank, cfg: NoiseSamplerConfig, rng: np.random.Generator):
        if bank is None or len(bank) == 0:
            raise ValueError("noise-aware training needs a nonempty noise bank")
        self.bank, self.cfg, self.rng = bank, cfg, rng
        self.weights = None
        self.new_epoch()

    def new_epoch(self) -> np.ndarray:
        self.weights = self.rng.dirichlet(self.cfg.alphas(len(self.bank)))
        return self.weights

    def sample(self):
        return sample_noise(self.bank, self.cfg, self.rng, self.weights)


def signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x, dtype=np.float64)))


def _noise_segment(noise: np.ndarray, length: int, start: int) -> np.ndarray:
    # read from start, concatenating copies of the recording as needed
    idx = (start + np.arange(length)) % noise.size
    return noise[idx]


def mix_noise(clean: AudioSignal | np.ndarray, noise: AudioSignal | np.ndarray, snr_db: float,
              rng: np.random.Generator) -> AudioSignal | np.ndarray:
    """Add a random-offset noise segment scaled to ``snr_db`` relative to the clean clip.

    Power is the mean square over the whole clip. The result is not renormalized, so
    samples may exceed [-1, 1]. ``snr_db = inf`` returns the clean clip unchanged.
    """
    is_signal = isinstance(clean, AudioSignal)
    x = clean.samples if is_signal else np.asarray(clean, dtype=np.float64)
    n = noise.samples if isinstance(noise, AudioSignal) else np.asarray(noise, dtype=np.float64)
    if x.size == 0 or n.size == 0:
        raise ValueError("clean and noise signals must be nonempty")
    start = int(rng.integers(n.size))
    if math.isinf(snr_db) and snr_db > 0:
        out = x.copy()
    else:
        seg = _noise_segment(n, x.size, start)
        p_clean, p_noise = signal_power(x), signal_power(seg)
        if p_clean == 0 or p_noise == 0:
            raise FloatingPointError("cannot set an SNR with a zero-power clean or noise signal")
        gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
        out = x + gain * seg
    return AudioSignal(out, clean.sample_rate) if is_signal else out


def _pink(rng, n):
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spectrum.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spectrum / np.sqrt(f), n)


def synthetic_noise_bank(sample_rate: int = 44100, duration_s: float = 2.0, seed: int = 0,
                         recordings_per_category: int = 2) -> NoiseBank:
    """Synthetic stand-ins for ambient-noise categories.

    ``white`` Gaussian, ``pink`` 1/f, ``hum`` mains harmonics (50 or 60 Hz), ``chirp``
    bursts of linear sweeps, ``babble`` a crowd surrogate from summed random tones with
    syllable-rate envelopes. Every recording is scaled to an RMS of 0.1.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    cats: dict[str, list[AudioSignal]] = {k: [] for k in ("white", "pink", "hum", "chirp", "babble")}
    for _ in range(recordings_per_category):
        cats["white"].append(rng.standard_normal(n))
        cats["pink"].append(_pink(rng, n))

        mains = rng.choice([50.0, 60.0])
        hum = sum(rng.uniform(0.2, 1.0) / k * np.sin(2 * np.pi * mains * k * t + rng.uniform(0, 2 * np.pi))
                  for k in range(1, 12))
        cats["hum"].append(hum + 0.05 * rng.standard_normal(n))

        chirp = np.zeros(n)
        burst = int(0.15 * sample_rate)
        tb = np.arange(burst) / sample_rate
        for start in rng.integers(0, n - burst, size=max(1, int(4 * duration_s))):
            f0, f1 = rng.uniform(300, 2000), rng.uniform(2000, 9000)
            sweep = np.sin(2 * np.pi * (f0 * tb + 0.5 * (f1 - f0) / tb[-1] * tb ** 2))
            chirp[start:start + burst] += sweep * np.hanning(burst)
        cats["chirp"].append(chirp + 0.02 * rng.standard_normal(n))

        babble = np.zeros(n)
        for _ in range(12):
            f = rng.uniform(100, 3500, size=4)
            voice = sum(np.sin(2 * np.pi * fk * t + rng.uniform(0, 2 * np.pi)) for fk in f)
            env = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(2, 6) * t + rng.uniform(0, 2 * np.pi)))
            babble += voice * env
        cats["babble"].append(babble)
    out = {}
    for name, sigs in cats.items():
        out[name] = [AudioSignal(s / np.sqrt(signal_power(s)) * 0.1, sample_rate) for s in sigs]
    return NoiseBank(out)
