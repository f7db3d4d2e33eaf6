"""Command-line entry point: ``terrain-acoustics <command> [--config FILE] [--seed N] [--out PATH]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .audio import AudioSignal
from .data import Manifest, load_clip_set
from .dsp import Spectrogram, StftConfig, dataset_stats, save_tspg
from .experiments import (
    bench_latency,
    evaluate_checkpoint,
    load_checkpoint,
    load_config,
    load_noise_bank,
    load_split_data,
    noise_robustness_eval,
    run_baselines,
    run_experiment,
    run_finetune,
    stats_from_dict,
    sweep,
    write_noise_table,
)
from .features import BUNDLES, feature_matrix, write_feature_csv
from .synth import synth_dataset

log = logging.getLogger("terrain_acoustics")


def _config(args, **extra):
    return load_config(args.config, seed=args.seed, manifest=getattr(args, "manifest", None),
                       out_dir=args.out, **extra)


def cmd_synth_data(args):
    opts = {"clips_per_class": 300, "clip_len_ms": 200.0, "clips_per_recording": 20}
    if args.config:
        opts.update(yaml.safe_load(Path(args.config).read_text()) or {})
    if args.clips_per_class is not None:
        opts["clips_per_class"] = args.clips_per_class
    m = synth_dataset(args.out or "data", seed=args.seed or 0, **opts)
    print(f"wrote {len(m.entries)} recordings to {m.root}")


def cmd_preprocess(args):
    cfg = _config(args)
    manifest = Manifest.load(cfg.manifest)
    out = Path(cfg.out_dir)
    stft_cfg = StftConfig()
    for split in ("train", "val", "test"):
        if not manifest.split(split):
            continue
        clips = load_clip_set(manifest, split, cfg.clip_config)
        logspec = clips.log_spectrograms(stft_cfg)
        if split == "train":
            stats = dataset_stats(logspec)
            (out / "norm_stats.json").parent.mkdir(parents=True, exist_ok=True)
            (out / "norm_stats.json").write_text(json.dumps(
                {"global_max": stats.global_max, "mean_spectrum": stats.mean_spectrum.tolist()}))
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        freqs = [k * clips.sample_rate / stft_cfg.frame_len for k in range(stft_cfg.kept_bins)]
        times = [t * stft_cfg.hop / clips.sample_rate for t in range(logspec.shape[2])]
        for i, values in enumerate(logspec):
            name = f"{i:06d}_{clips.class_names[clips.labels[i]]}.tspg"
            save_tspg(d / name, Spectrogram(values, freqs, times))
        print(f"{split}: {len(logspec)} spectrograms")


def cmd_features(args):
    cfg = _config(args)
    manifest = Manifest.load(cfg.manifest)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        clips = load_clip_set(manifest, split, cfg.clip_config)
        signals = [AudioSignal(a, clips.sample_rate) for a in clips.audio]
        X, names = feature_matrix(signals, args.bundle)
        labels = [clips.class_names[i] for i in clips.labels]
        write_feature_csv(out / f"{args.bundle}_{split}.csv", X, names, labels)
        print(f"{split}: {X.shape[0]} x {X.shape[1]} features")


def cmd_train(args):
    r = run_experiment(_config(args, variant=args.variant, window=args.window))
    print(json.dumps(r, indent=2))


def cmd_finetune(args):
    r = run_finetune(_config(args), args.checkpoint)
    print(json.dumps(r, indent=2))


def cmd_eval(args):
    cfg = _config(args)
    m = evaluate_checkpoint(args.checkpoint, cfg.manifest, cfg.out_dir, args.split)
    print(f"accuracy {m.accuracy:.4f}")


def cmd_noise_eval(args):
    cfg = _config(args)
    net, meta = load_checkpoint(args.checkpoint)
    cfg.window, cfg.clip_len_ms, cfg.variant = meta["window"], meta["clip_len_ms"], net.spec.variant
    data = load_split_data(cfg, ("test",), stats=stats_from_dict(meta["norm_stats"]))["test"]
    table = noise_robustness_eval(net, data, load_noise_bank(cfg), seed=cfg.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_noise_table(table, out / "noise_robustness.csv")
    print((out / "noise_robustness.csv").read_text())


def cmd_sweep(args):
    results = sweep(_config(args, variant=args.variant))
    for r in results:
        print(f"clip {r['clip_len_ms']:g} ms  L={r['window']}  accuracy {r['accuracy']:.4f}")


def cmd_bench(args):
    net, meta = load_checkpoint(args.checkpoint)
    r = bench_latency(net, stats_from_dict(meta["norm_stats"]), meta["clip_len_ms"],
                      args.iterations, meta["sample_rate"], seed=args.seed or 0)
    if args.out:
        Path(args.out).write_text(json.dumps(r, indent=2, sort_keys=True))
    print(f"median {1e3 * r['median_s']:.2f} ms  p95 {1e3 * r['p95_s']:.2f} ms  RTF {r['rtf']:.4f}")


def cmd_baseline(args):
    bundles = [args.bundle] if args.bundle else BUNDLES
    for r in run_baselines(_config(args), bundles):
        print(f"{r['bundle']:>14} {r['classifier']:>4} param={r['param']}  accuracy {r['accuracy']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terrain-acoustics", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help, manifest=True):
        s = sub.add_parser(name, help=help)
        s.add_argument("--config", help="YAML or JSON config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output path")
        if manifest:
            s.add_argument("--manifest", help="manifest CSV (overrides the config)")
        s.set_defaults(func=fn)
        return s

    s = add("synth-data", cmd_synth_data, "generate the synthetic 9-class corpus", manifest=False)
    s.add_argument("--clips-per-class", type=int)
    add("preprocess", cmd_preprocess, "write log spectrograms (.tspg) and training norm stats")
    s = add("features", cmd_features, "write a hand-crafted feature bundle as CSV")
    s.add_argument("--bundle", choices=BUNDLES, default="ginna")
    s = add("train", cmd_train, "train and evaluate one model")
    s.add_argument("--variant", choices=("M1", "M2", "M3", "M4"))
    s.add_argument("--window", type=int)
    s = add("finetune-noise", cmd_finetune, "noise-aware fine-tuning of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s = add("eval", cmd_eval, "evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s = add("noise-eval", cmd_noise_eval, "accuracy over noise categories x SNRs")
    s.add_argument("--checkpoint", required=True)
    s = add("sweep", cmd_sweep, "clip length x LSTM window grid")
    s.add_argument("--variant", choices=("M3", "M4"))
    s = add("bench", cmd_bench, "single-thread latency and real-time factor", manifest=False)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--iterations", type=int, default=50)
    s = add("baseline", cmd_baseline, "kNN and linear SVM on feature bundles")
    s.add_argument("--bundle", choices=BUNDLES)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
