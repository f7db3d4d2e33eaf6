"""Seeded synthetic terrain corpus.

Each class mixes three components:

* band-limited noise in a class band, amplitude-modulated at a class rate,
* a harmonic comb with a class fundamental, restricted to a class band,
* a gate that switches the comb on and off as a two-state Markov process, so that
  some clips carry only the band noise.

Two class pairs (mowed/medium-high grass, paving/cobble) share band, modulation and
comb band and differ only in comb fundamental. Single clips that fall in a comb gap
are ambiguous inside those pairs; a window of consecutive clips is not.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CLASS_NAMES
from .audio import AudioSignal, save_wav
from .data import Manifest, ManifestEntry

__all__ = ["ClassRecipe", "RECIPES", "synth_recording", "synth_dataset"]


@dataclass(frozen=True)
class ClassRecipe:
    noise_band: tuple[float, float]  # Hz
    am_rate: float  # Hz
    am_depth: float
    f0: float  # comb fundamental, Hz
    comb_band: tuple[float, float]  # Hz
    comb_level: float  # comb RMS relative to band noise RMS


RECIPES: dict[str, ClassRecipe] = {
    "asphalt": ClassRecipe((150, 1200), 2.0, 0.3, 310.0, (1500, 6000), 0.8),
    "mowed_grass": ClassRecipe((2000, 6500), 5.0, 0.5, 185.0, (2200, 6000), 1.0),
    "grass_medhigh": ClassRecipe((2000, 6500), 5.0, 0.5, 215.0, (2200, 6000), 1.0),
    "paving": ClassRecipe((600, 3000), 8.0, 0.6, 240.0, (1800, 5500), 1.0),
    "cobble": ClassRecipe((600, 3000), 8.0, 0.6, 270.0, (1800, 5500), 1.0),
    "offroad": ClassRecipe((80, 700), 12.0, 0.7, 130.0, (600, 3000), 0.8),
    "wood": ClassRecipe((1000, 4500), 3.0, 0.4, 410.0, (800, 4000), 0.9),
    "linoleum": ClassRecipe((3500, 9000), 1.5, 0.2, 520.0, (3000, 9000), 0.8),
    "carpet": ClassRecipe((100, 2500), 6.0, 0.3, 160.0, (300, 2000), 0.5),
}

GATE_MEAN_ON_S = 0.9
GATE_MEAN_OFF_S = 0.35
GATE_RAMP_S = 0.01


def _band_noise(rng, n, sample_rate, band):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(f < band[0]) | (f > band[1])] = 0.0
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x ** 2))


def _gate(rng, n, sample_rate):
    g = np.zeros(n)
    pos = 0
    on = bool(rng.random() < GATE_MEAN_ON_S / (GATE_MEAN_ON_S + GATE_MEAN_OFF_S))
    while pos < n:
        dur = int(rng.exponential(GATE_MEAN_ON_S if on else GATE_MEAN_OFF_S) * sample_rate) + 1
        g[pos:pos + dur] = 1.0 if on else 0.0
        pos += dur
        on = not on
    ramp = max(1, int(GATE_RAMP_S * sample_rate))
    kernel = np.ones(ramp) / ramp
    return np.convolve(g, kernel, mode="same")


def synth_recording(label: str, duration_s: float, rng: np.random.Generator,
                    sample_rate: int = 44100) -> AudioSignal:
    r = RECIPES[label]
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    noise = _band_noise(rng, n, sample_rate, r.noise_band)
    am = 1.0 + r.am_depth * np.sin(2 * np.pi * r.am_rate * t + rng.uniform(0, 2 * np.pi))
    f0 = r.f0 * rng.uniform(0.995, 1.005)
    k_lo = max(1, int(np.ceil(r.comb_band[0] / f0)))
    k_hi = int(np.floor(r.comb_band[1] / f0))
    comb = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / np.sqrt(k)
               for k in range(k_lo, k_hi + 1))
    comb = comb / np.sqrt(np.mean(comb ** 2))
    level = r.comb_level * rng.uniform(0.8, 1.25)
    x = noise * am + level * comb * _gate(rng, n, sample_rate)
    gain = rng.uniform(0.05, 0.2)
    x = gain * x / np.sqrt(np.mean(x ** 2))
    return AudioSignal(np.clip(x, -1.0, 1.0), sample_rate)


def synth_dataset(out_dir: str | Path, clips_per_class: int = 300, seed: int = 0,
                  clip_len_ms: float = 200.0, clips_per_recording: int = 20,
                  sample_rate: int = 44100, split_fractions=(0.7, 0.15, 0.15)) -> Manifest:
    """Write WAV recordings for all nine classes plus ``manifest.csv`` into ``out_dir``.

    Every recording has its own location tag and recordings are split by location,
    so no location appears in two splits.
    """
    if clips_per_class < 1:
        raise ValueError("clips_per_class must be >= 1")
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_rec = -(-clips_per_class // clips_per_recording)
    n_test = max(1, int(round(split_fractions[2] * n_rec)))
    n_val = max(1, int(round(split_fractions[1] * n_rec))) if n_rec > 2 else 0
    n_train = n_rec - n_test - n_val
    if n_train < 1:
        raise ValueError("too few recordings per class to form train/val/test splits")
    duration = clips_per_recording * clip_len_ms / 1000.0
    entries = []
    for label in CLASS_NAMES:
        for r in range(n_rec):
            split = "train" if r < n_train else ("val" if r < n_train + n_val else "test")
            rel = f"audio/{label}_{r:03d}.wav"
            save_wav(out / rel, synth_recording(label, duration, rng, sample_rate))
            entries.append(ManifestEntry(rel, label, split, f"{label}-site{r:03d}"))
    manifest = Manifest(entries, out)
    manifest.save(out / "manifest.csv")
    return manifest
