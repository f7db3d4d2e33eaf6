"""Dataset manifests and in-memory clip/window sets."""

from __future__ import annotations

import csv
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import CLASS_NAMES
from .audio import ClipConfig, load_wav, segment_clips
from .dsp import StftConfig, batch_log_spectrogram

__all__ = ["ManifestEntry", "Manifest", "ManifestError", "ClipSet", "load_clip_set"]

SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    split: str
    location: str


class Manifest:
    """CSV manifest with header ``path,label,split,location``; paths are relative to the file."""

    def __init__(self, entries: Sequence[ManifestEntry], root: str | Path = ".",
                 classes: Sequence[str] = CLASS_NAMES):
        self.entries = list(entries)
        self.root = Path(root)
        self.classes = tuple(classes)
        self.validate()

    def validate(self) -> None:
        if not self.entries:
            raise ManifestError("manifest is empty")
        seen: dict[str, str] = {}
        locations: dict[str, set[str]] = {s: set() for s in SPLITS}
        for e in self.entries:
            if e.split not in SPLITS:
                raise ManifestError(f"{e.path}: unknown split {e.split!r}")
            if e.label not in self.classes:
                raise ManifestError(f"{e.path}: unknown label {e.label!r}")
            if e.path in seen and seen[e.path] != e.split:
                raise ManifestError(f"{e.path} appears in splits {seen[e.path]} and {e.split}")
            seen[e.path] = e.split
            locations[e.split].add(e.location)
        shared = locations["train"] & locations["val"]
        if shared:
            raise ManifestError(f"train and val share locations: {sorted(shared)}")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def label_index(self, label: str) -> int:
        return self.classes.index(label)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    @classmethod
    def load(cls, path: str | Path, classes: Sequence[str] = CLASS_NAMES) -> "Manifest":
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["path", "label", "split", "location"]:
                raise ManifestError(f"{path}: header must be path,label,split,location")
            entries = [ManifestEntry(r["path"], r["label"], r["split"], r["location"]) for r in reader]
        return cls(entries, path.parent, classes)

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label", "split", "location"])
            for e in self.entries:
                writer.writerow([e.path, e.label, e.split, e.location])


@dataclass
class ClipSet:
    """Equal-length clips from one split, with their recording of origin.

    ``audio`` has shape ``(clips, samples)``; clips of one recording are stored
    consecutively in time order.
    """

    audio: np.ndarray
    labels: np.ndarray
    recording: np.ndarray
    sample_rate: int
    class_names: tuple[str, ...] = CLASS_NAMES

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.labels)

    def log_spectrograms(self, stft_cfg: StftConfig = StftConfig(), chunk: int = 512) -> np.ndarray:
        out = [batch_log_spectrogram(self.audio[s:s + chunk], stft_cfg)
               for s in range(0, len(self), chunk)]
        return np.concatenate(out)

    def windows(self, L: int) -> np.ndarray:
        """Indices ``(windows, L)`` of L consecutive clips within one recording, stride 1."""
        if L < 1:
            raise ValueError("window length must be >= 1")
        out = []
        for rec in np.unique(self.recording):
            idx = np.flatnonzero(self.recording == rec)
            for s in range(len(idx) - L + 1):
                out.append(idx[s:s + L])
        return np.asarray(out, dtype=int).reshape(-1, L)

    def check_balance(self, tolerance: float = 1.5) -> None:
        counts = Counter(self.labels.tolist())
        if len(counts) < self.num_classes or max(counts.values()) > tolerance * min(counts.values()):
            warnings.warn(f"class counts are imbalanced: {dict(sorted(counts.items()))}",
                          RuntimeWarning, stacklevel=2)


def load_clip_set(manifest: Manifest, split: str, clip_cfg: ClipConfig = ClipConfig()) -> ClipSet:
    entries = manifest.split(split)
    if not entries:
        raise ManifestError(f"manifest has no {split!r} entries")
    audio, labels, recording = [], [], []
    rate = None
    for r, entry in enumerate(entries):
        signal = load_wav(manifest.resolve(entry))
        if rate is None:
            rate = signal.sample_rate
        elif signal.sample_rate != rate:
            raise ManifestError(f"{entry.path}: sample rate {signal.sample_rate} != {rate}")
        clips = segment_clips(signal, clip_cfg)
        audio += [c.samples for c in clips]
        labels += [manifest.label_index(entry.label)] * len(clips)
        recording += [r] * len(clips)
    return ClipSet(np.stack(audio), np.asarray(labels), np.asarray(recording), rate,
                   manifest.classes)

