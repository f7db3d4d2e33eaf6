"""Experiment orchestration: single runs, clip/window sweeps, noise grids, baselines and latency."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from .audio import AudioSignal, ClipConfig, parse_wav, wav_bytes
from .baselines import LabeledFeatureSet, grid_search, knn_predict, linear_svm_train
from .data import Manifest, load_clip_set
from .dsp import NormStats, StftConfig, batch_log_spectrogram, normalize_array
from .features import BUNDLES, feature_matrix
from .metrics import Metrics
from .nn import Network, NetworkSpec
from .noise import NoiseBank, NoiseSamplerConfig, synthetic_noise_bank
from .training import (
    Corruption,
    TrainConfig,
    WindowedData,
    evaluate,
    finetune_noise_aware,
    train,
)

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    "run_finetune",
    "evaluate_checkpoint",
    "sweep",
    "SWEEP_CLIPS_MS",
    "SWEEP_WINDOWS",
    "NOISE_SNRS",
    "noise_robustness_eval",
    "write_noise_table",
    "bench_latency",
    "run_baselines",
    "comparison_table",
    "load_noise_bank",
    "load_checkpoint",
    "load_split_data",
    "stats_from_dict",
    "stats_to_dict",
]

SWEEP_CLIPS_MS = (200, 250, 300)
SWEEP_WINDOWS = (2, 3, 4, 5, 6)
NOISE_SNRS = (30, 20, 10, 0, -10)


@dataclass
class ExperimentConfig:
    manifest: str = "data/manifest.csv"
    out_dir: str = "runs/default"
    variant: str = "M4"
    clip_len_ms: float = 200.0
    overlap_ms: float = 0.0
    window: int = 5
    seed: int = 0
    channels: tuple[int, ...] = (64, 128, 256)
    fc_widths: tuple[int, ...] = (512, 256, 128)
    lstm_hidden: int = 128
    dropout: float = 0.5
    init_gain: float = 2 ** 0.5
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseSamplerConfig = field(default_factory=NoiseSamplerConfig)
    noise_dir: str | None = None  # directory-per-category WAVs; None means the synthetic bank

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window length L must be >= 1")
        if self.variant in ("M1", "M2") and self.window != 1:
            raise ValueError(f"{self.variant} has no LSTM; window must be 1")
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if isinstance(self.noise, dict):
            self.noise = NoiseSamplerConfig(**self.noise)
        self.channels = tuple(self.channels)
        self.fc_widths = tuple(self.fc_widths)

    @property
    def clip_config(self) -> ClipConfig:
        return ClipConfig(self.clip_len_ms, self.overlap_ms)

    def network_spec(self, in_frames: int, num_classes: int) -> NetworkSpec:
        return NetworkSpec(self.variant, StftConfig().kept_bins, in_frames, self.channels,
                           self.fc_widths, self.lstm_hidden, self.dropout, num_classes,
                           self.init_gain)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path: str | Path | None, **overrides) -> ExperimentConfig:
    """Read a YAML (or JSON) config and apply non-None keyword overrides."""
    d = {}
    if path is not None:
        d = yaml.safe_load(Path(path).read_text()) or {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(d)


def load_noise_bank(cfg: ExperimentConfig) -> NoiseBank:
    if cfg.noise_dir:
        return NoiseBank.from_directory(cfg.noise_dir)
    return synthetic_noise_bank(seed=cfg.seed)


def stats_to_dict(stats: NormStats) -> dict:
    return {"global_max": stats.global_max, "mean_spectrum": stats.mean_spectrum.tolist()}


def stats_from_dict(d: dict) -> NormStats:
    return NormStats(float(d["global_max"]), np.asarray(d["mean_spectrum"]))


def load_split_data(cfg: ExperimentConfig, splits=("train", "test"), stats: NormStats | None = None):
    manifest = Manifest.load(cfg.manifest)
    out = {}
    for split in splits:
        clips = load_clip_set(manifest, split, cfg.clip_config)
        out[split] = WindowedData(clips, cfg.window, stats=stats)
        if stats is None:
            stats = out[split].stats
    return out


def _checkpoint_metadata(cfg: ExperimentConfig, data: WindowedData) -> dict:
    return {"norm_stats": stats_to_dict(data.stats), "clip_len_ms": cfg.clip_len_ms,
            "window": cfg.window, "sample_rate": data.clips.sample_rate,
            "class_names": list(data.class_names), "config": cfg.to_dict()}


def load_checkpoint(path: str | Path) -> tuple[Network, dict]:
    path = Path(path)
    net = Network.load(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())["metadata"]
    return net, meta


def _write_report(out: Path, metrics: Metrics, extra: dict) -> None:
    metrics.write_json(out / "metrics.json", extra)
    metrics.write_confusion_csv(out / "confusion.csv")


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Train on the train split, evaluate on test and write the run's report files.

    Files: ``metrics.json``, ``confusion.csv``, ``training_log.csv``, ``model.tnet``
    (with a ``model.tnet.json`` sidecar that holds normalization statistics) and
    ``config.json``.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    data = load_split_data(cfg)
    tr, te = data["train"], data["test"]
    spec = cfg.network_spec(tr.logspec.shape[2], tr.clips.num_classes)
    net = Network(spec, seed=cfg.seed)
    train_cfg = replace(cfg.train, seed=cfg.seed)
    train(net, tr, train_cfg, log_path=out / "training_log.csv")
    net.save(out / "model.tnet", _checkpoint_metadata(cfg, tr))
    metrics = evaluate(net, te)
    extra = {"variant": cfg.variant, "window": cfg.window, "clip_len_ms": cfg.clip_len_ms,
             "seed": cfg.seed, "split": "test", "num_params": net.num_params()}
    _write_report(out, metrics, extra)
    log.info("%s L=%d clip=%gms: test accuracy %.4f", cfg.variant, cfg.window, cfg.clip_len_ms,
             metrics.accuracy)
    return {**extra, "accuracy": metrics.accuracy, "out_dir": str(out)}


def run_finetune(cfg: ExperimentConfig, checkpoint: str | Path) -> dict:
    """Noise-aware fine-tuning of a trained checkpoint; writes the same report files."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, meta = load_checkpoint(checkpoint)
    stats = stats_from_dict(meta["norm_stats"])
    cfg = replace(cfg, variant=net.spec.variant, window=meta["window"], clip_len_ms=meta["clip_len_ms"])
    data = load_split_data(cfg, stats=stats)
    bank = load_noise_bank(cfg)
    tuned, _ = finetune_noise_aware(net, data["train"], replace(cfg.train, seed=cfg.seed), bank,
                                    cfg.noise, log_path=out / "training_log.csv")
    tuned.save(out / "model.tnet", {**meta, "finetuned_from": str(checkpoint)})
    metrics = evaluate(tuned, data["test"])
    extra = {"variant": cfg.variant, "window": cfg.window, "clip_len_ms": cfg.clip_len_ms,
             "seed": cfg.seed, "split": "test", "noise_aware": True}
    _write_report(out, metrics, extra)
    return {**extra, "accuracy": metrics.accuracy, "out_dir": str(out)}


def evaluate_checkpoint(checkpoint: str | Path, manifest: str | Path, out_dir: str | Path,
                        split: str = "test") -> Metrics:
    net, meta = load_checkpoint(checkpoint)
    cfg = ExperimentConfig(manifest=str(manifest), variant=net.spec.variant, window=meta["window"],
                           clip_len_ms=meta["clip_len_ms"])
    data = load_split_data(cfg, (split,), stats=stats_from_dict(meta["norm_stats"]))[split]
    metrics = evaluate(net, data)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out, metrics, {"variant": net.spec.variant, "window": cfg.window,
                                 "clip_len_ms": cfg.clip_len_ms, "split": split,
                                 "checkpoint": Path(checkpoint).name})
    return metrics


def sweep(cfg: ExperimentConfig, clips_ms: Sequence[float] = SWEEP_CLIPS_MS,
          windows: Sequence[int] = SWEEP_WINDOWS) -> list[dict]:
    """One run per (clip length, window) pair in ``<out_dir>/clip<ms>_L<L>``, plus ``sweep.csv``."""
    root = Path(cfg.out_dir)
    results = []
    for clip in clips_ms:
        for L in windows:
            sub = replace(cfg, clip_len_ms=float(clip), window=int(L),
                          out_dir=str(root / f"clip{int(clip)}_L{int(L)}"))
            results.append(run_experiment(sub))
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_len_ms", "window", "accuracy"])
        for r in results:
            w.writerow([r["clip_len_ms"], r["window"], repr(r["accuracy"])])
    return results


def comparison_table(report_dirs: Sequence[str | Path], out_path: str | Path) -> list[dict]:
    """Collect ``metrics.json`` of several runs into one CSV row per run."""
    rows = []
    for d in report_dirs:
        m = json.loads((Path(d) / "metrics.json").read_text())
        rows.append({"run": Path(d).name, "variant": m.get("variant", ""),
                     "window": m.get("window", ""), "accuracy": m["accuracy"]})
    with open(out_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["run", "variant", "window", "accuracy"])
        w.writeheader()
        w.writerows(rows)
    return rows


def noise_robustness_eval(net: Network, data: WindowedData, bank: NoiseBank,
                          snrs: Sequence[float] = NOISE_SNRS, seed: int = 0) -> dict:
    """Accuracy for every (category, SNR) cell, the clean accuracy and row/column means.

    Row means average over SNRs; column means average over categories.
    """
    clean = evaluate(net, data).accuracy
    cells = {}
    for i, cat in enumerate(bank.names):
        for j, snr in enumerate(snrs):
            corruption = Corruption(cat, float(snr), seed=seed + 1000 * i + j)
            cells[cat, snr] = evaluate(net, data, corruption, bank).accuracy
    row_mean = {c: float(np.mean([cells[c, s] for s in snrs])) for c in bank.names}
    col_mean = {s: float(np.mean([cells[c, s] for c in bank.names])) for s in snrs}
    return {"clean": clean, "snrs": list(snrs), "categories": bank.names, "cells": cells,
            "row_mean": row_mean, "col_mean": col_mean,
            "overall_mean": float(np.mean(list(cells.values())))}


def write_noise_table(table: dict, path: str | Path) -> None:
    """Rows are noise categories, columns are SNRs in dB, then the row mean; last row holds
    the column means. The clean accuracy is repeated in its own column."""
    snrs = table["snrs"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise", "clean", *[f"{s:g}dB" for s in snrs], "mean"])
        for c in table["categories"]:
            w.writerow([c, f"{table['clean']:.6f}", *[f"{table['cells'][c, s]:.6f}" for s in snrs],
                        f"{table['row_mean'][c]:.6f}"])
        w.writerow(["mean", f"{table['clean']:.6f}", *[f"{table['col_mean'][s]:.6f}" for s in snrs],
                    f"{table['overall_mean']:.6f}"])


def bench_latency(net: Network, stats: NormStats, clip_len_ms: float = 200.0,
                  iterations: int = 50, sample_rate: int = 44100, seed: int = 0) -> dict:
    """Wall time from WAV bytes of one clip to class probabilities, on one thread.

    LSTM variants process a full window of ``L`` clips per call (no feature caching),
    which overstates streaming cost.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    n = int(round(clip_len_ms * sample_rate / 1000.0))
    wav = wav_bytes(AudioSignal(0.1 * rng.standard_normal(n), sample_rate))
    L = 5 if net.spec.uses_lstm else 1
    history = np.zeros((L - 1, net.spec.in_bins, net.spec.in_frames))
    times = []
    with threadpool_limits(limits=1):
        for _ in range(iterations + 1):
            t0 = time.perf_counter()
            clip = parse_wav(wav).samples
            spec = batch_log_spectrogram(clip[None])
            window = np.concatenate([history, spec])[None]
            probs = net.forward(normalize_array(window, stats))[:, -1]
            times.append(time.perf_counter() - t0)
    net._probs = None
    times = np.asarray(times[1:])  # first call warms caches
    median = float(np.median(times))
    clip_s = clip_len_ms / 1000.0
    return {"iterations": iterations, "median_s": median, "p95_s": float(np.percentile(times, 95)),
            "mean_s": float(times.mean()), "rtf": median / clip_s, "clip_len_ms": clip_len_ms,
            "window": L, "probs_sum": float(probs.sum())}


def run_baselines(cfg: ExperimentConfig, bundles: Sequence[str] = BUNDLES,
                  classifiers: Sequence[str] = ("knn", "svm")) -> list[dict]:
    """Grid-searched kNN / linear SVM per feature bundle; one report directory each."""
    manifest = Manifest.load(cfg.manifest)
    tr = load_clip_set(manifest, "train", cfg.clip_config)
    te = load_clip_set(manifest, "test", cfg.clip_config)
    to_signals = lambda cs: [AudioSignal(a, cs.sample_rate) for a in cs.audio]
    root = Path(cfg.out_dir)
    results = []
    for bundle in bundles:
        Xtr, _ = feature_matrix(to_signals(tr), bundle)
        Xte, _ = feature_matrix(to_signals(te), bundle)
        fs = LabeledFeatureSet.fit(Xtr, tr.labels)
        Q = fs.transform(Xte)
        for kind in classifiers:
            best, scores = grid_search(Xtr, tr.labels, kind, seed=cfg.seed)
            if kind == "knn":
                pred = knn_predict(fs, Q, best)
            else:
                pred = linear_svm_train(fs, best, seed=cfg.seed).predict(Q)
            metrics = Metrics.from_predictions(te.labels, pred, tr.class_names)
            out = root / f"{bundle}_{kind}"
            out.mkdir(parents=True, exist_ok=True)
            extra = {"bundle": bundle, "classifier": kind, "param": best,
                     "cv_scores": {str(k): v for k, v in scores.items()}, "split": "test"}
            _write_report(out, metrics, extra)
            results.append({"bundle": bundle, "classifier": kind, "param": best,
                            "accuracy": metrics.accuracy})
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "baselines.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["bundle", "classifier", "param", "accuracy"])
        w.writeheader()
        w.writerows(results)
    return results
