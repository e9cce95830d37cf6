"""Checkpoint container: JSON manifest plus one raw float32 file per parameter.

Layout of a checkpoint directory:

    <dir>/manifest.json        configuration, band layout, seed, format
                               version, validation score, parameter index
    <dir>/params/<name>.bin    raw little-endian float32, C order

Save -> load round-trips bit-exactly, which requires the model itself to be
float32 (the on-disk format is).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch

from .dsp import BandLayout, StftConfig
from .networks import ModelConfig, SeparatorModel, build_model

FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Raised for unreadable, incomplete or inconsistent checkpoints."""


@dataclass
class CheckpointInfo:
    path: Path
    step: Optional[int]
    validation_score: Optional[float]

    @property
    def ckpt_id(self) -> str:
        return self.path.name


def save_checkpoint(
    model: SeparatorModel,
    path,
    validation_score: Optional[float] = None,
    step: Optional[int] = None,
) -> CheckpointInfo:
    """Write a model to a checkpoint directory (created if needed)."""
    if model.dtype != torch.float32:
        raise CheckpointError(
            f"checkpoints store float32 parameters; model is {model.dtype}"
        )
    path = Path(path)
    params_dir = path / "params"
    params_dir.mkdir(parents=True, exist_ok=True)

    state = model.state_dict()
    index = {}
    for name, tensor in state.items():
        data = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        rel = f"params/{name}.bin"
        data.tofile(path / rel)
        index[name] = {"shape": list(tensor.shape), "file": rel}

    cfg = model.config
    lay = model.band_layout
    stft = model.stft_config
    manifest = {
        "format_version": FORMAT_VERSION,
        "sample_rate": model.sample_rate,
        "seed": getattr(model, "build_seed", 0),
        "validation_score": validation_score,
        "step": step,
        "stft": {
            "n_fft": stft.n_fft,
            "hop": stft.hop,
            "window": stft.window,
            "center_pad": stft.center_pad,
        },
        "band_layout": {
            "f1_bins": lay.f1_bins,
            "f2_bins": lay.f2_bins,
            "total_bins": lay.total_bins,
            "cut1": lay.cut1,
            "cut2": lay.cut2,
        },
        "model": {
            "track": cfg.track,
            "channels": cfg.channels,
            "base_channels": cfg.base_channels,
            "encoder_depth": cfg.encoder_depth,
            "encoder_channel_plan": list(cfg.channel_plan),
            "dprnn_hidden": cfg.rnn_hidden,
            "dprnn_blocks": cfg.dprnn_blocks,
            "mlp_hidden_layers": cfg.mlp_hidden_layers,
        },
        "parameters": index,
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return CheckpointInfo(path=path, step=step, validation_score=validation_score)


def read_manifest(path) -> dict:
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"missing manifest: {manifest_path}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest {manifest_path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r} (expected {FORMAT_VERSION})"
        )
    return manifest


def load_checkpoint(path) -> Tuple[SeparatorModel, CheckpointInfo]:
    """Rebuild a model from a checkpoint directory, bit-exactly."""
    path = Path(path)
    manifest = read_manifest(path)
    try:
        stft = StftConfig(**manifest["stft"])
        layout = BandLayout(**manifest["band_layout"])
        model_meta = dict(manifest["model"])
        model_meta["encoder_channel_plan"] = tuple(model_meta["encoder_channel_plan"])
        config = ModelConfig(**model_meta)
        sample_rate = manifest["sample_rate"]
        seed = manifest["seed"]
        param_index = manifest["parameters"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"manifest {path} is inconsistent: {exc}") from exc

    model = build_model(
        config, layout, stft, seed=seed, sample_rate=sample_rate, dtype=torch.float32
    )
    model.build_seed = seed

    expected = set(model.state_dict().keys())
    provided = set(param_index.keys())
    if expected != provided:
        missing = sorted(expected - provided)
        extra = sorted(provided - expected)
        raise CheckpointError(
            f"parameter set mismatch in {path}: missing {missing}, unexpected {extra}"
        )

    state = {}
    for name, meta in param_index.items():
        shape = tuple(meta["shape"])
        file_path = path / meta["file"]
        if not file_path.exists():
            raise CheckpointError(f"missing parameter file for {name!r}: {file_path}")
        data = np.fromfile(file_path, dtype="<f4")
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(
                f"parameter {name!r} in {path} has {data.size} values on disk, "
                f"expected {int(np.prod(shape, dtype=np.int64))} for shape {shape}"
            )
        state[name] = torch.from_numpy(data.reshape(shape).copy())
    model.load_state_dict(state)
    model.eval()
    info = CheckpointInfo(
        path=path,
        step=manifest.get("step"),
        validation_score=manifest.get("validation_score"),
    )
    return model, info
