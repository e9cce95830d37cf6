"""Weighted-average ensembling of separately trained models.

Averaging happens in the waveform domain after each member's own
separation pass. Members are summed in a canonical order (parameter
fingerprint, then weight) with float64 accumulation, so permuting the
(model, weight) pairs yields bit-identical output.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .audio import AudioSegment
from .networks import SeparatorModel


@dataclass
class EnsembleSpec:
    """Checkpoint ids plus their (pre-normalization) mixing weights."""

    checkpoint_ids: List[str]
    weights: List[float]

    def __post_init__(self):
        if len(self.checkpoint_ids) != len(self.weights):
            raise ValueError(
                f"{len(self.checkpoint_ids)} checkpoint ids vs "
                f"{len(self.weights)} weights"
            )
        if len(self.checkpoint_ids) < 1:
            raise ValueError("ensemble needs at least one member")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if sum(self.weights) <= 0:
            raise ValueError("weight sum must be positive")

    def normalized_weights(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum()


def save_ensemble_spec(spec: EnsembleSpec, path) -> None:
    payload = {"checkpoint_ids": spec.checkpoint_ids, "weights": spec.weights}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_ensemble_spec(path) -> EnsembleSpec:
    with open(Path(path)) as fh:
        payload = json.load(fh)
    return EnsembleSpec(
        checkpoint_ids=list(payload["checkpoint_ids"]),
        weights=[float(w) for w in payload["weights"]],
    )


def parameter_fingerprint(model: SeparatorModel) -> str:
    """sha256 over the model's named parameters (names, shapes, bytes)."""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def _check_members(models: Sequence[SeparatorModel]) -> None:
    first = models[0]
    for i, model in enumerate(models[1:], start=1):
        if model.config.track != first.config.track:
            raise ValueError(
                f"member {i} separates {model.config.track!r}, "
                f"member 0 separates {first.config.track!r}"
            )
        if model.sample_rate != first.sample_rate:
            raise ValueError(f"member {i} sample rate differs")
        if model.stft_config != first.stft_config:
            raise ValueError(f"member {i} STFT config differs")
        if model.band_layout != first.band_layout:
            raise ValueError(f"member {i} band layout differs")


def ensemble_separate(
    models: Sequence[SeparatorModel],
    weights: Sequence[float],
    mixture: AudioSegment,
    chunk_s: float = 4.0,
    overlap_frac: float = 0.5,
) -> AudioSegment:
    """Separate with each member and average the waveforms.

    Weights are normalized to sum 1. The weighted sum runs in float64 in
    an order fixed by each member's parameter fingerprint, making the
    result independent of the order in which (model, weight) pairs are
    passed.
    """
    if len(models) < 1:
        raise ValueError("ensemble needs at least one member")
    if len(models) != len(weights):
        raise ValueError(f"{len(models)} models vs {len(weights)} weights")
    spec = EnsembleSpec([f"member{i}" for i in range(len(models))], list(weights))
    norm = spec.normalized_weights()
    _check_members(models)

    members = []
    for model, w in zip(models, norm):
        estimate = model.separate(mixture, chunk_s=chunk_s, overlap_frac=overlap_frac)
        members.append((parameter_fingerprint(model), float(w), estimate))
    members.sort(key=lambda m: (m[0], m[1]))

    out = np.zeros_like(members[0][2].samples, dtype=np.float64)
    for _, w, estimate in members:
        out += w * estimate.samples.astype(np.float64)
    out = out.astype(members[0][2].samples.dtype, copy=False)
    return AudioSegment(out, mixture.sample_rate)


def weights_from_scores(scores: Sequence[float]) -> List[float]:
    """Mixing weights proportional to validation scores.

    Negative scores are floored at zero; if every score is non-positive
    the weights fall back to uniform.
    """
    floored = [max(float(s), 0.0) for s in scores]
    if sum(floored) <= 0:
        return [1.0] * len(floored)
    return floored
