"""Separation quality metrics.

SI-SDR (scale-invariant signal-to-distortion ratio) is the desk-scale
evaluation proxy used throughout: perceptual quality indices that need an
auditory model and listener profiles are out of scope here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .audio import AudioSegment, check_same_rate

# est == ref gives an infinite ratio; report this cap instead
SI_SDR_CAP_DB = 100.0


@dataclass
class SiSdrResult:
    per_channel: np.ndarray  # dB, one entry per channel
    mean: float


def _as_samples(x: Union[AudioSegment, np.ndarray]) -> np.ndarray:
    if isinstance(x, AudioSegment):
        return x.samples
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (channels, samples), got shape {x.shape}")
    return x


def si_sdr(
    est: Union[AudioSegment, np.ndarray],
    ref: Union[AudioSegment, np.ndarray],
    cap_db: float = SI_SDR_CAP_DB,
) -> SiSdrResult:
    """Scale-invariant SDR per channel plus the channel mean, in dB.

    The estimate is projected onto the reference; the ratio of projected
    power to residual power is reported, clamped to [-cap_db, cap_db].
    A zero reference channel is rejected.
    """
    if isinstance(est, AudioSegment) and isinstance(ref, AudioSegment):
        check_same_rate(est, ref)
    e = _as_samples(est).astype(np.float64)
    r = _as_samples(ref).astype(np.float64)
    if e.shape != r.shape:
        raise ValueError(f"shape mismatch: est {e.shape} vs ref {r.shape}")

    scores = np.empty(e.shape[0])
    for ch in range(e.shape[0]):
        ref_energy = np.dot(r[ch], r[ch])
        if ref_energy == 0:
            raise ValueError(f"reference channel {ch} is all zeros")
        scale = np.dot(e[ch], r[ch]) / ref_energy
        target = scale * r[ch]
        noise = e[ch] - target
        target_power = np.dot(target, target)
        noise_power = np.dot(noise, noise)
        if noise_power == 0 or target_power == 0:
            # no projected signal (silent estimate included) is the floor,
            # even when the residual is also zero
            db = -cap_db if target_power == 0 else cap_db
        else:
            db = 10.0 * np.log10(target_power / noise_power)
        scores[ch] = min(max(db, -cap_db), cap_db)
    return SiSdrResult(per_channel=scores, mean=float(scores.mean()))


def evaluate_model(model, dataset, track: str = None) -> float:
    """Mean SI-SDR of the model's separations against the clean stems."""
    track = track or model.config.track
    if len(dataset.songs) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    scores = []
    for song in dataset.songs:
        est = model.separate(song.mixture)
        scores.append(si_sdr(est, song.stems[track]).mean)
    return float(np.mean(scores))
