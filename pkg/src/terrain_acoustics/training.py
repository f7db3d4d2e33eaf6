"""Minibatch SGD with momentum and a poly learning-rate schedule, noise-aware fine-tuning,
and evaluation."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ClipSet
from .dsp import (
    AugmentationSpec,
    NormStats,
    Spectrogram,
    StftConfig,
    augment,
    batch_log_spectrogram,
    dataset_stats,
    normalize_array,
)
from .metrics import Metrics
from .nn import Network
from .noise import NoiseBank, NoiseSampler, NoiseSamplerConfig, mix_noise

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainingDivergedError",
    "SGDMomentum",
    "poly_lr",
    "sgd_momentum_step",
    "WindowedData",
    "train",
    "finetune_noise_aware",
    "evaluate",
    "corrupt_log_spectrograms",
]


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr0: float = 0.01
    lr_power: float = 1.0
    momentum: float = 0.9
    max_iters: int = 300
    seed: int = 0
    augment_fraction: float = 0.0
    augmentation: AugmentationSpec | None = None

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if isinstance(self.augmentation, dict):
            spec = AugmentationSpec(**{k: tuple(v) if isinstance(v, list) else v
                                       for k, v in self.augmentation.items()})
            object.__setattr__(self, "augmentation", spec)


def poly_lr(cfg: TrainConfig, n: int) -> float:
    """lr0 * (1 - n / max_iters) ** power."""
    if not 0 <= n <= cfg.max_iters:
        raise ValueError(f"iteration {n} outside [0, {cfg.max_iters}]")
    if cfg.max_iters == 0:
        return cfg.lr0
    return cfg.lr0 * (1.0 - n / cfg.max_iters) ** cfg.lr_power


def sgd_momentum_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                      velocity: dict[str, np.ndarray], lr: float, momentum: float):
    """In-place update: v <- momentum * v - lr * grad; w <- w + v. Returns (params, velocity)."""
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {w.shape}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(w)
        v *= momentum
        v -= lr * g
        w += v
    return params, velocity


class SGDMomentum:
    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr):
        sgd_momentum_step(params, grads, self.velocity, lr, self.momentum)


class WindowedData:
    """Clips of one split, their raw log-power spectrograms and L-clip windows."""

    def __init__(self, clips: ClipSet, window: int = 1, stft_cfg: StftConfig = StftConfig(),
                 stats: NormStats | None = None):
        self.clips = clips
        self.stft_cfg = stft_cfg
        self.window = window
        self.logspec = clips.log_spectrograms(stft_cfg)
        self.stats = stats if stats is not None else dataset_stats(self.logspec)
        self.index = clips.windows(window)
        self.labels = clips.labels[self.index[:, -1]]

    def __len__(self) -> int:
        return len(self.index)

    @property
    def class_names(self):
        return self.clips.class_names

    def inputs(self, rows: np.ndarray | None = None, logspec: np.ndarray | None = None) -> np.ndarray:
        rows = np.arange(len(self)) if rows is None else rows
        logspec = self.logspec if logspec is None else logspec
        return normalize_array(logspec[self.index[rows]], self.stats)


def corrupt_log_spectrograms(audio: np.ndarray, noises, snrs, rng: np.random.Generator,
                             stft_cfg: StftConfig) -> np.ndarray:
    mixed = np.stack([mix_noise(a, n, s, rng) for a, n, s in zip(audio, noises, snrs)])
    return batch_log_spectrogram(mixed, stft_cfg)


def _make_batch(data: WindowedData, rows, rng, cfg: TrainConfig, sampler: NoiseSampler | None):
    logspec = data.logspec[data.index[rows]]  # (B, L, F, T)
    if sampler is not None:
        hit = np.flatnonzero(rng.random(len(rows)) < sampler.cfg.corrupt_fraction)
        if hit.size:
            logspec = logspec.copy()
            for b in hit:
                noise, snr, _ = sampler.sample()
                clip_ids = data.index[rows[b]]
                logspec[b] = corrupt_log_spectrograms(
                    data.clips.audio[clip_ids], [noise] * len(clip_ids), [snr] * len(clip_ids),
                    sampler.rng, data.stft_cfg)
    if cfg.augmentation is not None and cfg.augment_fraction > 0:
        logspec = logspec.copy()
        for b in np.flatnonzero(rng.random(len(rows)) < cfg.augment_fraction):
            for k in range(logspec.shape[1]):
                spec = Spectrogram(logspec[b, k], np.arange(logspec.shape[2]), np.arange(logspec.shape[3]))
                logspec[b, k] = augment(spec, cfg.augmentation, rng).values
    return normalize_array(logspec, data.stats)


def train(net: Network, data: WindowedData, cfg: TrainConfig,
          noise_bank: NoiseBank | None = None, noise_cfg: NoiseSamplerConfig | None = None,
          log_path: str | Path | None = None) -> list[dict]:
    """Train ``net`` in place and return the per-iteration log.

    With ``noise_cfg`` set, a ``corrupt_fraction`` share of each minibatch is mixed with
    noise from ``noise_bank`` in the time domain before the spectrogram front-end.
    """
    if noise_cfg is not None and (noise_bank is None or len(noise_bank) == 0):
        raise ValueError("noise-aware training requires a nonempty noise bank")
    spec = net.spec
    if data.logspec.shape[1:] != (spec.in_bins, spec.in_frames):
        raise ValueError(f"data spectrograms {data.logspec.shape[1:]} do not match the network "
                         f"input {(spec.in_bins, spec.in_frames)}")
    if data.window != 1 and not spec.uses_lstm:
        raise ValueError(f"{spec.variant} trains on single clips; got window {data.window}")
    data.clips.check_balance()

    rng = np.random.default_rng(cfg.seed)
    sampler = None
    if noise_cfg is not None:
        sampler = NoiseSampler(noise_bank, noise_cfg, np.random.default_rng(noise_cfg.seed))
    opt = SGDMomentum(cfg.momentum)
    params = net.params()
    rows_log: list[dict] = []
    order = rng.permutation(len(data))
    pos = 0
    for it in range(cfg.max_iters):
        if pos + cfg.batch_size > len(order):
            order = rng.permutation(len(data))
            pos = 0
            if sampler is not None:
                sampler.new_epoch()
        rows = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        x = _make_batch(data, rows, rng, cfg, sampler)
        y = data.labels[rows]
        net.zero_grad()
        probs = net.forward(x, training=True, rng=rng)
        loss = net.backward(y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at iteration {it}")
        lr = poly_lr(cfg, it)
        opt.step(params, net.grads(), lr)
        acc = float(np.mean(probs[:, -1].argmax(axis=1) == y))
        rows_log.append({"iter": it, "lr": lr, "loss": loss, "train_acc": acc})
        if it % 50 == 0:
            log.info("iter %d lr %.5f loss %.4f acc %.3f", it, lr, loss, acc)
    if log_path is not None:
        write_training_log(log_path, rows_log)
    return rows_log


def write_training_log(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["iter", "lr", "loss", "train_acc"])
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def finetune_noise_aware(net: Network, data: WindowedData, cfg: TrainConfig,
                         noise_bank: NoiseBank, noise_cfg: NoiseSamplerConfig,
                         log_path: str | Path | None = None) -> tuple[Network, list[dict]]:
    """Copy ``net`` and continue training on noise-corrupted batches at a tenth of ``cfg.lr0``."""
    if data.logspec.shape[1:] != (net.spec.in_bins, net.spec.in_frames):
        raise ValueError("checkpoint input shape does not match the data")
    tuned = copy.deepcopy(net)
    ft_cfg = replace(cfg, lr0=cfg.lr0 / 10.0)
    rows = train(tuned, data, ft_cfg, noise_bank, noise_cfg, log_path)
    return tuned, rows


@dataclass
class Corruption:
    category: str
    snr_db: float
    seed: int = 0


def evaluate(net: Network, data: WindowedData, corruption: Corruption | None = None,
             noise_bank: NoiseBank | None = None, batch_size: int = 256) -> Metrics:
    """Accuracy and confusion over all windows; optional test-time noise on every clip."""
    if net.spec.num_classes != len(data.class_names):
        raise ValueError("network class count differs from the data's label set")
    logspec = data.logspec
    if corruption is not None:
        if noise_bank is None or corruption.category not in noise_bank.categories:
            raise ValueError(f"noise category {corruption.category!r} is not in the bank")
        rng = np.random.default_rng(corruption.seed)
        recs = noise_bank.categories[corruption.category]
        noises = [recs[int(rng.integers(len(recs)))] for _ in range(len(data.clips))]
        logspec = np.concatenate([
            corrupt_log_spectrograms(data.clips.audio[s:s + 512], noises[s:s + 512],
                                     [corruption.snr_db] * 512, rng, data.stft_cfg)
            for s in range(0, len(data.clips), 512)])
    preds = []
    for s in range(0, len(data), batch_size):
        rows = np.arange(s, min(s + batch_size, len(data)))
        preds.append(net.forward(data.inputs(rows, logspec))[:, -1].argmax(axis=1))
    net._probs = None
    y_pred = np.concatenate(preds)
    return Metrics.from_predictions(data.labels, y_pred, data.class_names)
