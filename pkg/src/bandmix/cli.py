"""Command-line entry point: train / separate / evaluate / inspect.

Configuration is a versioned JSON document; every omitted key falls back
to the built-in defaults (the published band table and training recipe),
and unknown keys are rejected outright so typos cannot silently change a
run. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .audio import read_wav, write_wav
from .checkpoint import CheckpointError, load_checkpoint, read_manifest
from .datasets import load_stem_dataset
from .dsp import DEFAULT_BAND_TABLE, TRACKS, BandConfig, StftConfig, make_band_layout
from .ensemble import (
    EnsembleSpec,
    ensemble_separate,
    save_ensemble_spec,
    weights_from_scores,
)
from .metrics import si_sdr
from .networks import ModelConfig, build_model
from .training import TrainConfig, train, write_history_csv

CONFIG_VERSION = 1

THREADS_ENV = "BANDMIX_NUM_THREADS"


class UsageError(Exception):
    """Bad invocation or configuration; maps to exit code 2."""


def default_run_config() -> dict:
    return {
        "config_version": CONFIG_VERSION,
        "sample_rate": 44100,
        "channels": 2,
        "seed": 0,
        "stft": {"n_fft": 2048, "hop": 600, "window": "hann", "center_pad": True},
        "bands": {
            track: {
                "band1_end_hz": cfg.band1_end,
                "band2_end_hz": cfg.band2_end,
            }
            for track, cfg in DEFAULT_BAND_TABLE.items()
        },
        "model": {
            "base_channels": 4,
            "encoder_depth": 4,
            "encoder_channel_plan": None,
            "dprnn_hidden": None,
            "dprnn_blocks": 1,
            "mlp_hidden_layers": 1,
        },
        "train": {
            "learning_rate": 1e-3,
            "batch_size": 2,
            "grad_accum_steps": 6,
            "max_steps": 1000,
            "segment_s": 4.0,
            "checkpoint_every": None,
            "validation_every": None,
            "grad_clip": None,
        },
        "paths": {"dataset": None, "val_dataset": None},
    }


def _merge_strict(defaults: dict, override: dict, prefix: str = "") -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise UsageError(f"unknown config key: {path!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise UsageError(f"config key {path!r} must be an object")
            merged[key] = _merge_strict(defaults[key], value, prefix=f"{path}.")
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[str]) -> dict:
    cfg = default_run_config()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    version = user.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise UsageError(
            f"unsupported config_version {version!r} (expected {CONFIG_VERSION})"
        )
    return _merge_strict(cfg, user)


def _band_config(run_cfg: dict, track: str) -> BandConfig:
    edges = run_cfg["bands"][track]
    b1 = float(edges["band1_end_hz"])
    b2 = float(edges["band2_end_hz"])
    return BandConfig(track, 0.0, b1, b1, b2)


def _configure_threads(deterministic: bool) -> None:
    env = os.environ.get(THREADS_ENV)
    if deterministic:
        torch.set_num_threads(1)
    elif env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}")
        if n < 1:
            raise UsageError(f"{THREADS_ENV} must be >= 1, got {n}")
        torch.set_num_threads(n)


def cmd_train(args) -> int:
    run_cfg = load_run_config(args.config)
    if args.seed is not None:
        run_cfg["seed"] = args.seed
    dataset_path = args.dataset or run_cfg["paths"]["dataset"]
    if dataset_path is None:
        raise UsageError("no dataset given: set paths.dataset or pass --dataset")
    if not Path(dataset_path).is_dir():
        raise UsageError(f"dataset path does not exist: {dataset_path}")
    run_cfg["paths"]["dataset"] = str(dataset_path)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set = load_stem_dataset(dataset_path)
    for song_id, reason in train_set.skipped:
        print(f"skipped song {song_id!r}: {reason}", file=sys.stderr)
    if len(train_set.songs) == 0:
        raise UsageError(f"no usable songs under {dataset_path}")

    val_set = None
    val_path = run_cfg["paths"]["val_dataset"]
    if val_path is not None:
        if not Path(val_path).is_dir():
            raise UsageError(f"validation dataset path does not exist: {val_path}")
        val_set = load_stem_dataset(val_path)

    stft_cfg = StftConfig(**run_cfg["stft"])
    sample_rate = run_cfg["sample_rate"]
    layout = make_band_layout(_band_config(run_cfg, args.track), stft_cfg, sample_rate)
    model_meta = dict(run_cfg["model"])
    if model_meta["encoder_channel_plan"] is not None:
        model_meta["encoder_channel_plan"] = tuple(model_meta["encoder_channel_plan"])
    model_cfg = ModelConfig(
        track=args.track, channels=run_cfg["channels"], **model_meta
    )
    model = build_model(
        model_cfg, layout, stft_cfg, seed=run_cfg["seed"], sample_rate=sample_rate
    )
    print(
        f"model: {model.parameter_count} parameters ({model.size_mb:.1f} MB), "
        f"track {args.track}"
    )

    train_cfg = TrainConfig(seed=run_cfg["seed"], **run_cfg["train"])
    with open(out_dir / "effective_config.json", "w") as fh:
        json.dump(run_cfg, fh, indent=2, sort_keys=True)

    result = train(model, train_set, val_set, train_cfg, out_dir / "checkpoints")
    write_history_csv(result.history, out_dir / "history.csv")

    if result.aborted:
        print(
            "training aborted on non-finite loss; last good checkpoint retained",
            file=sys.stderr,
        )
        return 1
    final = result.final_checkpoint
    score = final.validation_score if final else None
    if score is None:
        print("final validation score: n/a (no validation set)")
    else:
        print(f"final validation score: {score:.3f} dB SI-SDR (proxy metric)")
    return 0


def _parse_weights(text: str, n: int) -> List[float]:
    try:
        weights = [float(w) for w in text.split(",")]
    except ValueError:
        raise UsageError(f"--weights must be comma-separated numbers, got {text!r}")
    if len(weights) != n:
        raise UsageError(f"--weights has {len(weights)} entries for {n} checkpoints")
    return weights


def cmd_separate(args) -> int:
    if args.deterministic:
        torch.manual_seed(0)
    models, infos = [], []
    for ckpt in args.checkpoint:
        model, info = load_checkpoint(ckpt)
        models.append(model)
        infos.append(info)
    track = models[0].config.track
    for model in models[1:]:
        if model.config.track != track:
            raise UsageError(
                "all checkpoints must separate the same track; "
                f"got {sorted({m.config.track for m in models})}"
            )

    mixture = read_wav(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if len(models) == 1:
        estimate = models[0].separate(mixture)
    else:
        if args.weights is not None:
            weights = _parse_weights(args.weights, len(models))
        else:
            scores = [i.validation_score for i in infos]
            if any(s is None for s in scores):
                weights = [1.0] * len(models)
            else:
                weights = weights_from_scores(scores)
        spec = EnsembleSpec([i.ckpt_id for i in infos], weights)
        save_ensemble_spec(spec, out_dir / "ensemble.json")
        estimate = ensemble_separate(models, weights, mixture)

    out_path = out_dir / f"{track}.wav"
    write_wav(out_path, estimate)
    print(f"wrote {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    est_root = Path(args.estimates)
    ref_root = Path(args.references)
    if not est_root.is_dir():
        raise UsageError(f"estimates directory does not exist: {est_root}")
    if not ref_root.is_dir():
        raise UsageError(f"references directory does not exist: {ref_root}")

    references = load_stem_dataset(ref_root)
    for song_id, reason in references.skipped:
        print(f"skipped reference song {song_id!r}: {reason}", file=sys.stderr)
    if len(references.songs) == 0:
        raise UsageError(f"no usable reference songs under {ref_root}")

    tracks = [args.track] if args.track else list(TRACKS)
    rows = []
    missing = []
    for song in references.songs:
        for track in tracks:
            est_path = est_root / song.song_id / f"{track}.wav"
            if not est_path.exists():
                missing.append(str(est_path))
                continue
            est = read_wav(est_path)
            result = si_sdr(est, song.stems[track])
            left = float(result.per_channel[0])
            right = float(result.per_channel[1]) if len(result.per_channel) > 1 else ""
            rows.append([song.song_id, track, left, right, result.mean])

    header = ["song", "track", "left_db", "right_db", "mean_db"]
    writer = csv.writer(sys.stdout)
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            file_writer = csv.writer(fh)
            file_writer.writerow(header)
            file_writer.writerows(rows)

    if rows:
        lefts = [r[2] for r in rows]
        rights = [r[3] for r in rows if r[3] != ""]
        means = [r[4] for r in rows]
        right_str = f"{np.mean(rights):.3f}" if rights else "n/a"
        print(
            f"aggregate SI-SDR (proxy metric): left {np.mean(lefts):.3f} dB, "
            f"right {right_str} dB, overall {np.mean(means):.3f} dB"
        )

    if missing:
        for path in missing:
            print(f"missing estimate: {path}", file=sys.stderr)
        return 1
    return 0


def cmd_inspect(args) -> int:
    manifest = read_manifest(args.checkpoint)
    count = 0
    for meta in manifest["parameters"].values():
        count += int(np.prod(meta["shape"], dtype=np.int64))
    size_mb = count * 4 / 2 ** 20
    print(f"checkpoint: {args.checkpoint}")
    print(f"track: {manifest['model']['track']}")
    print(f"parameters: {count}")
    print(f"size: {size_mb:.1f} MB")
    print(f"sample_rate: {manifest['sample_rate']}")
    print(f"seed: {manifest['seed']}")
    print(f"step: {manifest.get('step')}")
    print(f"validation_score: {manifest.get('validation_score')}")
    print(f"stft: {manifest['stft']}")
    print(f"band_layout: {manifest['band_layout']}")
    print(f"model: {manifest['model']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bandmix",
        description="Sub-band/full-band music source separation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one track's separator")
    p_train.add_argument("--config", help="JSON run config")
    p_train.add_argument("--track", required=True, choices=TRACKS)
    p_train.add_argument("--dataset", help="stem dataset root (overrides config)")
    p_train.add_argument("--seed", type=int, help="overrides config seed")
    p_train.add_argument("--out", required=True, help="run output directory")
    p_train.add_argument("--deterministic", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_sep = sub.add_parser("separate", help="demix a mixture WAV")
    p_sep.add_argument("input", help="mixture WAV file")
    p_sep.add_argument(
        "--checkpoint", required=True, nargs="+", help="one or more checkpoints"
    )
    p_sep.add_argument("--out", required=True, help="output directory")
    p_sep.add_argument("--weights", help="comma-separated ensemble weights")
    p_sep.add_argument("--deterministic", action="store_true")
    p_sep.set_defaults(func=cmd_separate)

    p_eval = sub.add_parser("evaluate", help="score estimates against references")
    p_eval.add_argument("estimates", help="directory of per-song estimate folders")
    p_eval.add_argument("references", help="stem dataset root with clean stems")
    p_eval.add_argument("--track", choices=TRACKS, help="restrict to one track")
    p_eval.add_argument("--out", help="also write the per-song CSV here")
    p_eval.add_argument("--deterministic", action="store_true")
    p_eval.set_defaults(func=cmd_evaluate)

    p_ins = sub.add_parser("inspect", help="print checkpoint metadata")
    p_ins.add_argument("checkpoint", help="checkpoint directory")
    p_ins.add_argument("--deterministic", action="store_true")
    p_ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _configure_threads(args.deterministic)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FileNotFoundError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
