"""Deterministic signal math: STFT/iSTFT, band partitioning, masking, chunking.

Spectrograms are complex arrays of shape (channels, frames, bins) with
bins = n_fft // 2 + 1. The tensor-level transforms accept arbitrary
leading batch dimensions and are differentiable, so the same code path
serves file-level processing and the training graph.

The inverse transform is the least-squares inverse: frames are windowed,
overlap-added, and divided by the accumulated squared window, which makes
stft -> istft an exact round-trip even when n_fft / hop is not an integer
ratio (2048 / 600 in the default configuration).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np
import torch
from scipy.signal import get_window

from .audio import AudioSegment, check_sample_rate

TRACKS = ("vocals", "drums", "bass", "other")

ArrayOrTensor = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters shared by every transform call."""

    n_fft: int = 2048
    hop: int = 600
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft % 2 != 0:
            raise ValueError(f"n_fft must be a positive even integer, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"hop must satisfy 0 < hop <= n_fft, got {self.hop}")
        # fail early on unknown window names
        get_window(self.window, self.n_fft, fftbins=True)

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def window_array(self) -> np.ndarray:
        return get_window(self.window, self.n_fft, fftbins=True).astype(np.float64)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.center_pad:
            return n_samples // self.hop + 1
        if n_samples < self.n_fft:
            raise ValueError(
                f"without center_pad the signal must span one frame: "
                f"{n_samples} < n_fft={self.n_fft}"
            )
        return (n_samples - self.n_fft) // self.hop + 1


@dataclass
class ComplexSpectrogram:
    """Complex STFT values (channels, frames, bins) plus their provenance."""

    values: np.ndarray
    stft_config: StftConfig
    sample_rate: int

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError(
                f"spectrogram must be 3-D (channels, frames, bins), got {self.values.shape}"
            )
        if self.values.shape[-1] != self.stft_config.n_bins:
            raise ValueError(
                f"bin count {self.values.shape[-1]} does not match "
                f"n_fft // 2 + 1 = {self.stft_config.n_bins}"
            )
        if not np.isfinite(self.values.real).all() or not np.isfinite(self.values.imag).all():
            raise ValueError("spectrogram contains non-finite values")
        self.sample_rate = check_sample_rate(self.sample_rate)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def n_bins(self) -> int:
        return self.values.shape[2]


def _window_tensor(cfg: StftConfig, dtype: torch.dtype, device) -> torch.Tensor:
    return torch.as_tensor(cfg.window_array(), dtype=dtype, device=device)


def stft_tensor(x: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    """STFT of a real tensor (..., samples) -> complex (..., frames, bins).

    With center_pad the signal is zero-padded by n_fft // 2 on both sides,
    giving frames = samples // hop + 1.
    """
    if x.shape[-1] < 1:
        raise ValueError("cannot transform an empty signal")
    n_frames = cfg.n_frames(x.shape[-1])  # validates length for center_pad=False
    if cfg.center_pad:
        pad = cfg.n_fft // 2
        x = torch.nn.functional.pad(x, (pad, pad))
    frames = x.unfold(-1, cfg.n_fft, cfg.hop)  # (..., frames, n_fft)
    frames = frames[..., :n_frames, :]
    window = _window_tensor(cfg, x.dtype, x.device)
    return torch.fft.rfft(frames * window, dim=-1)


def istft_tensor(spec: torch.Tensor, cfg: StftConfig, target_length: int) -> torch.Tensor:
    """Least-squares inverse of stft_tensor.

    spec: complex (..., frames, bins) -> real (..., target_length).
    Rejects target lengths beyond the span the frames can represent and
    output positions where the squared-window sum vanishes.
    """
    if spec.shape[-1] != cfg.n_bins:
        raise ValueError(
            f"bin count {spec.shape[-1]} does not match n_fft // 2 + 1 = {cfg.n_bins}"
        )
    if target_length < 1:
        raise ValueError("target_length must be >= 1")
    n_frames = spec.shape[-2]
    pad = cfg.n_fft // 2 if cfg.center_pad else 0
    total = (n_frames - 1) * cfg.hop + cfg.n_fft
    if pad + target_length > total:
        raise ValueError(
            f"target_length {target_length} exceeds the representable span "
            f"{total - pad} of {n_frames} frames"
        )

    real_dtype = torch.float64 if spec.dtype == torch.complex128 else torch.float32
    window = _window_tensor(cfg, real_dtype, spec.device)

    frames = torch.fft.irfft(spec, n=cfg.n_fft, dim=-1) * window
    lead_shape = frames.shape[:-2]
    cols = frames.reshape(-1, n_frames, cfg.n_fft).transpose(1, 2)  # (B, n_fft, frames)
    acc = torch.nn.functional.fold(
        cols, output_size=(1, total), kernel_size=(1, cfg.n_fft), stride=(1, cfg.hop)
    ).reshape(-1, total)

    wsq = (window * window)[None, :, None].expand(1, cfg.n_fft, n_frames)
    den = torch.nn.functional.fold(
        wsq, output_size=(1, total), kernel_size=(1, cfg.n_fft), stride=(1, cfg.hop)
    ).reshape(total)

    den = den[pad : pad + target_length]
    if (den <= torch.finfo(real_dtype).tiny).any():
        raise ValueError(
            "window sum vanishes inside the requested output range; "
            "the inverse is undefined at those samples"
        )
    out = acc[:, pad : pad + target_length] / den
    return out.reshape(*lead_shape, target_length)


def stft(audio: AudioSegment, cfg: StftConfig) -> ComplexSpectrogram:
    """Transform an AudioSegment into its complex spectrogram."""
    x = torch.as_tensor(audio.samples)
    values = stft_tensor(x, cfg).numpy()
    return ComplexSpectrogram(values, cfg, audio.sample_rate)


def istft(spec: ComplexSpectrogram, target_length: int) -> AudioSegment:
    """Invert a spectrogram back to a waveform of exactly target_length samples."""
    values = torch.as_tensor(spec.values)
    samples = istft_tensor(values, spec.stft_config, target_length).numpy()
    return AudioSegment(samples, spec.sample_rate)


def hz_to_bin(freq: float, cfg: StftConfig, sample_rate: int) -> int:
    """Map a frequency to its nearest STFT bin index (ties round up).

    Result is clamped to [0, n_bins - 1]. Negative or super-Nyquist
    frequencies are rejected.
    """
    sample_rate = check_sample_rate(sample_rate)
    if freq < 0:
        raise ValueError(f"frequency must be non-negative, got {freq}")
    if freq > sample_rate / 2:
        raise ValueError(f"frequency {freq} Hz exceeds Nyquist {sample_rate / 2} Hz")
    bin_index = int(math.floor(freq * cfg.n_fft / sample_rate + 0.5))
    return min(max(bin_index, 0), cfg.n_bins - 1)


@dataclass(frozen=True)
class BandConfig:
    """Per-track sub-band edges in Hz. Band 1 starts at DC and meets band 2."""

    track: str
    band1_start: float
    band1_end: float
    band2_start: float
    band2_end: float

    def __post_init__(self):
        if self.track not in TRACKS:
            raise ValueError(f"unknown track {self.track!r}, expected one of {TRACKS}")
        if self.band1_start != 0:
            raise ValueError("band 1 must start at 0 Hz")
        if self.band1_end != self.band2_start:
            raise ValueError("band 1 must end where band 2 starts")
        if not 0 < self.band1_end < self.band2_end:
            raise ValueError("band edges must satisfy 0 < band1_end < band2_end")

    def validate_rate(self, sample_rate: int) -> None:
        if not self.band2_end < sample_rate / 2:
            raise ValueError(
                f"band2_end {self.band2_end} Hz must stay below Nyquist "
                f"{sample_rate / 2} Hz"
            )


# Sub-band edges per track (Hz), at the default 44.1 kHz stereo setup.
DEFAULT_BAND_TABLE = {
    "vocals": BandConfig("vocals", 0.0, 4000.0, 4000.0, 10000.0),
    "drums": BandConfig("drums", 0.0, 6000.0, 6000.0, 10000.0),
    "bass": BandConfig("bass", 0.0, 1000.0, 1000.0, 6000.0),
    "other": BandConfig("other", 0.0, 7000.0, 7000.0, 11000.0),
}

DEFAULT_SAMPLE_RATE = 44100
DEFAULT_CHANNELS = 2


@dataclass(frozen=True)
class BandLayout:
    """Sub-band boundaries resolved to bin indices.

    Bins [0, cut1) form sub-band 1, [cut1, cut2) sub-band 2, and
    [cut2, total_bins) the residual handled by the full band only.
    """

    f1_bins: int
    f2_bins: int
    total_bins: int
    cut1: int
    cut2: int

    def __post_init__(self):
        if not 0 < self.cut1 < self.cut2 < self.total_bins:
            raise ValueError(
                f"cuts must satisfy 0 < cut1 < cut2 < total_bins, got "
                f"cut1={self.cut1}, cut2={self.cut2}, total={self.total_bins}"
            )
        if self.f1_bins != self.cut1 or self.f2_bins != self.cut2 - self.cut1:
            raise ValueError("bin counts are inconsistent with the cut indices")
        if self.f1_bins + self.f2_bins >= self.total_bins:
            raise ValueError("sub-bands must leave a non-empty residual high band")

    @property
    def low_bins(self) -> int:
        return self.f1_bins + self.f2_bins


def make_band_layout(
    band_cfg: BandConfig, stft_cfg: StftConfig, sample_rate: int
) -> BandLayout:
    """Resolve Hz band edges to a bin layout for one track."""
    band_cfg.validate_rate(sample_rate)
    cut1 = hz_to_bin(band_cfg.band1_end, stft_cfg, sample_rate)
    cut2 = hz_to_bin(band_cfg.band2_end, stft_cfg, sample_rate)
    if cut1 == 0:
        raise ValueError(f"band 1 resolves to zero bins (cut1=0) for {band_cfg}")
    if cut2 <= cut1:
        raise ValueError(f"band 2 resolves to zero bins (cut1={cut1}, cut2={cut2})")
    if cut2 >= stft_cfg.n_bins:
        raise ValueError(f"cut2={cut2} leaves no residual band above the sub-bands")
    return BandLayout(
        f1_bins=cut1,
        f2_bins=cut2 - cut1,
        total_bins=stft_cfg.n_bins,
        cut1=cut1,
        cut2=cut2,
    )


def band_split(
    spec: Union[ComplexSpectrogram, ArrayOrTensor], layout: BandLayout
) -> Tuple[ArrayOrTensor, ArrayOrTensor]:
    """Slice a spectrogram into its two sub-bands along the bin axis.

    Accepts a ComplexSpectrogram or a bare array/tensor (..., bins); the
    slices are plain views, no resampling.
    """
    values = spec.values if isinstance(spec, ComplexSpectrogram) else spec
    if values.shape[-1] != layout.total_bins:
        raise ValueError(
            f"spectrogram has {values.shape[-1]} bins, layout expects {layout.total_bins}"
        )
    return values[..., : layout.cut1], values[..., layout.cut1 : layout.cut2]


def mask_values(values: ArrayOrTensor, mask_real: ArrayOrTensor, mask_imag: ArrayOrTensor):
    """Elementwise (mask_real + i * mask_imag) * values; works for numpy and torch."""
    if isinstance(values, torch.Tensor):
        return torch.complex(mask_real, mask_imag) * values
    return (mask_real + 1j * mask_imag) * values


def apply_complex_mask(
    spec: ComplexSpectrogram, mask_real: np.ndarray, mask_imag: np.ndarray
) -> ComplexSpectrogram:
    """Apply a complex ratio mask to a spectrogram."""
    mask_real = np.asarray(mask_real)
    mask_imag = np.asarray(mask_imag)
    if mask_real.shape != spec.values.shape or mask_imag.shape != spec.values.shape:
        raise ValueError(
            f"mask shapes {mask_real.shape}/{mask_imag.shape} do not match "
            f"spectrogram shape {spec.values.shape}"
        )
    if not np.isfinite(mask_real).all() or not np.isfinite(mask_imag).all():
        raise ValueError("mask contains non-finite values")
    return ComplexSpectrogram(
        mask_values(spec.values, mask_real, mask_imag), spec.stft_config, spec.sample_rate
    )


def chunk_and_stitch(
    audio: AudioSegment,
    chunk_s: float,
    overlap_frac: float,
    per_chunk_fn: Callable[[np.ndarray], np.ndarray],
) -> AudioSegment:
    """Process long audio in fixed-size chunks and cross-fade the results.

    per_chunk_fn maps a (channels, chunk_len) array to an equally shaped
    array. Chunks overlap by overlap_frac and are blended with linear
    cross-fade ramps; the accumulated fade weights are divided out, so an
    identity per_chunk_fn reproduces the input (within float rounding).
    Audio shorter than one chunk is zero-padded for processing and trimmed
    on output.
    """
    if chunk_s <= 0:
        raise ValueError(f"chunk_s must be positive, got {chunk_s}")
    if not 0 <= overlap_frac < 1:
        raise ValueError(f"overlap_frac must lie in [0, 1), got {overlap_frac}")

    x = audio.samples
    n_ch, length = x.shape
    chunk_len = max(int(round(chunk_s * audio.sample_rate)), 1)
    overlap_len = int(round(chunk_len * overlap_frac))
    hop = chunk_len - overlap_len
    if hop < 1:
        raise ValueError("overlap too large: chunk hop collapses to zero")

    starts = list(range(0, max(length - chunk_len, 0) + 1, hop))
    if starts[-1] + chunk_len < length:
        starts.append(length - chunk_len)

    # trapezoid fade: full weight in the middle, linear ramps over the overlap
    ramp = overlap_len
    base = np.ones(chunk_len)
    if ramp > 0:
        base[:ramp] = np.arange(1, ramp + 1) / (ramp + 1)
        base[-ramp:] = base[:ramp][::-1]

    out = np.zeros((n_ch, length), dtype=np.float64)
    weight = np.zeros(length, dtype=np.float64)
    for i, start in enumerate(starts):
        chunk = x[:, start : start + chunk_len]
        pad = chunk_len - chunk.shape[1]
        if pad > 0:
            chunk = np.pad(chunk, ((0, 0), (0, pad)))
        processed = np.asarray(per_chunk_fn(chunk))
        if processed.shape != (n_ch, chunk_len):
            raise ValueError(
                f"per_chunk_fn returned shape {processed.shape}, "
                f"expected {(n_ch, chunk_len)}"
            )
        w = base.copy()
        if i == 0:
            w[:ramp] = 1.0  # no fade-in at the start of the signal
        if i == len(starts) - 1 and ramp > 0:
            w[-ramp:] = 1.0  # no fade-out at the end
        span = min(chunk_len, length - start)
        out[:, start : start + span] += processed[:, :span] * w[:span]
        weight[start : start + span] += w[:span]

    out /= weight  # weights are strictly positive everywhere by construction
    return AudioSegment(out.astype(x.dtype, copy=False), audio.sample_rate)
