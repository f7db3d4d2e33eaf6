"""Audio containers, RIFF/WAV reading and writing, and clip segmentation."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "AudioSignal",
    "ClipConfig",
    "WavFormatError",
    "parse_wav",
    "wav_bytes",
    "UnsupportedWavError",
    "load_wav",
    "save_wav",
    "segment_clips",
]

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    """Raised when a file is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(ValueError):
    """Raised for valid WAV files using an encoding we do not read."""


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_ms(self) -> float:
        return 1000.0 * self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ClipConfig:
    clip_len_ms: float = 200.0
    overlap_ms: float = 0.0

    def __post_init__(self):
        if not 0 <= self.overlap_ms < self.clip_len_ms:
            raise ValueError("require 0 <= overlap_ms < clip_len_ms")

    @property
    def hop_ms(self) -> float:
        return self.clip_len_ms - self.overlap_ms


def _ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(round(ms * sample_rate / 1000.0))


def segment_clips(signal: AudioSignal, cfg: ClipConfig) -> list[AudioSignal]:
    """Split ``signal`` into equal-length clips; a tail shorter than a clip is dropped."""
    clip_len = _ms_to_samples(cfg.clip_len_ms, signal.sample_rate)
    hop = _ms_to_samples(cfg.hop_ms, signal.sample_rate)
    if clip_len < 1 or hop < 1:
        raise ValueError("clip length and hop must cover at least one sample")
    n = len(signal)
    if n < clip_len:
        raise ValueError(
            f"signal of {signal.duration_ms:.1f} ms is shorter than one {cfg.clip_len_ms} ms clip"
        )
    starts = range(0, n - clip_len + 1, hop)
    return [AudioSignal(signal.samples[s:s + clip_len], signal.sample_rate) for s in starts]


def _parse_fmt(chunk: bytes) -> tuple[int, int, int, int]:
    if len(chunk) < 16:
        raise WavFormatError("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", chunk[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(chunk) < 40:
            raise WavFormatError("extensible fmt chunk too short")
        # first two bytes of the subformat GUID carry the real format tag
        tag = struct.unpack("<H", chunk[24:26])[0]
    if channels < 1 or rate < 1:
        raise WavFormatError("fmt chunk declares no channels or zero sample rate")
    if block_align != channels * (bits // 8):
        raise WavFormatError("block alignment inconsistent with channels and bit depth")
    return tag, channels, rate, bits


def load_wav(path: str | Path) -> AudioSignal:
    """Read a PCM WAV file (16-bit int or 32-bit float) and return mono samples in [-1, 1].

    Multichannel files are averaged to mono.
    """
    return parse_wav(Path(path).read_bytes(), str(path))


def parse_wav(raw: bytes, path: str = "<bytes>") -> AudioSignal:
    """Decode an in-memory WAV file; see :func:`load_wav`."""
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: missing RIFF/WAVE header")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack("<4sI", raw[pos:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: chunk {cid!r} truncated")
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")

    tag, channels, rate, bits = fmt
    if tag == WAVE_FORMAT_PCM and bits == 16:
        samples = np.frombuffer(data[: len(data) - len(data) % 2], dtype="<i2") / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data[: len(data) - len(data) % 4], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedWavError(f"{path}: format tag {tag:#06x} with {bits} bits is not supported")

    frames = samples.size // channels
    if frames == 0:
        raise WavFormatError(f"{path}: no sample frames")
    samples = samples[: frames * channels].reshape(frames, channels).mean(axis=1)
    return AudioSignal(samples, rate)


def save_wav(path: str | Path, signal: AudioSignal, *, float32: bool = False) -> None:
    """Write a mono WAV file. 16-bit output clips samples to [-1, 1)."""
    Path(path).write_bytes(wav_bytes(signal, float32=float32))


def wav_bytes(signal: AudioSignal, *, float32: bool = False) -> bytes:
    if float32:
        payload = signal.samples.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        ints = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, signal.sample_rate,
                      signal.sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body
