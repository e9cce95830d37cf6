"""Waveform container, validation helpers and WAV file I/O.

Audio is always channels-first float arrays of shape (channels, samples),
nominally in [-1, 1]. WAV support covers PCM 16-bit integer and 32-bit
float; resampling is out of scope, so sample-rate mismatches are rejected
wherever two signals meet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile


def check_samples(samples: np.ndarray, name: str = "samples") -> np.ndarray:
    """Validate a (channels, samples) float array and return it.

    Raises ValueError on wrong rank, empty axes, or non-finite values.
    """
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise ValueError(
            f"{name} must be 2-D (channels, samples), got shape {samples.shape}"
        )
    if samples.shape[0] < 1 or samples.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {samples.shape}")
    if not np.issubdtype(samples.dtype, np.floating):
        samples = samples.astype(np.float64)
    if not np.isfinite(samples).all():
        raise ValueError(f"{name} contains non-finite values")
    return samples


def check_sample_rate(sample_rate: int) -> int:
    if not isinstance(sample_rate, (int, np.integer)) or sample_rate <= 0:
        raise ValueError(f"sample_rate must be a positive integer, got {sample_rate!r}")
    return int(sample_rate)


def check_same_rate(a: "AudioSegment", b: "AudioSegment") -> None:
    if a.sample_rate != b.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: {a.sample_rate} Hz vs {b.sample_rate} Hz "
            "(resampling is not supported)"
        )


@dataclass
class AudioSegment:
    """A multichannel waveform with its sample rate.

    samples: float array (channels, samples), amplitude, nominal range [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = check_samples(self.samples)
        self.sample_rate = check_sample_rate(self.sample_rate)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


def read_wav(path) -> AudioSegment:
    """Read a WAV file into a channels-first float segment.

    PCM 16-bit is scaled to [-1, 1); 32-bit float is passed through.
    Other encodings are rejected.
    """
    rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float32)
    else:
        raise ValueError(
            f"{path}: unsupported WAV encoding {data.dtype}; "
            "expected PCM 16-bit integer or 32-bit float"
        )
    return AudioSegment(np.ascontiguousarray(samples.T), int(rate))


def write_wav(path, segment: AudioSegment, pcm16: bool = False) -> None:
    """Write a segment as 32-bit float WAV (default) or PCM 16-bit."""
    data = segment.samples.T
    if pcm16:
        clipped = np.clip(data, -1.0, 1.0 - 1.0 / 32768.0)
        wavfile.write(path, segment.sample_rate, (clipped * 32768.0).astype(np.int16))
    else:
        wavfile.write(path, segment.sample_rate, data.astype("<f4"))
