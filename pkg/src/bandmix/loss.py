"""Four-term demixing objective.

The loss compares an estimated and a reference waveform with mean absolute
error in four views: the waveforms themselves, their spectrogram
magnitudes, and the real and imaginary spectrogram parts. All reductions
are means, so the value is invariant to batch size — a requirement for
gradient accumulation to be exactly equivalent to large batches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import torch

from .audio import AudioSegment, check_same_rate
from .dsp import StftConfig, stft_tensor

WaveLike = Union[AudioSegment, np.ndarray, torch.Tensor]


class _Magnitude(torch.autograd.Function):
    """|re + i*im| with the subgradient at 0 defined as 0.

    The forward is exactly sqrt(re^2 + im^2); torch.abs on complex values
    would propagate NaN gradients wherever the magnitude is exactly zero
    (silent bins, padding frames).
    """

    @staticmethod
    def forward(ctx, re, im):
        mag = torch.sqrt(re * re + im * im)
        ctx.save_for_backward(re, im, mag)
        return mag

    @staticmethod
    def backward(ctx, grad):
        re, im, mag = ctx.saved_tensors
        safe = torch.where(mag > 0, mag, torch.ones_like(mag))
        zero = torch.zeros_like(mag)
        grad_re = torch.where(mag > 0, re / safe, zero) * grad
        grad_im = torch.where(mag > 0, im / safe, zero) * grad
        return grad_re, grad_im


def complex_magnitude(re: torch.Tensor, im: torch.Tensor) -> torch.Tensor:
    return _Magnitude.apply(re, im)


@dataclass
class LossBreakdown:
    """The four loss terms and their sum, as scalar tensors."""

    time_term: torch.Tensor
    mag_term: torch.Tensor
    real_term: torch.Tensor
    imag_term: torch.Tensor
    total: torch.Tensor

    def floats(self) -> dict:
        return {
            "time_term": float(self.time_term.detach()),
            "mag_term": float(self.mag_term.detach()),
            "real_term": float(self.real_term.detach()),
            "imag_term": float(self.imag_term.detach()),
            "total": float(self.total.detach()),
        }

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.total.detach()))


def _coerce_wave(x: WaveLike) -> torch.Tensor:
    if isinstance(x, AudioSegment):
        return torch.as_tensor(x.samples)
    if isinstance(x, np.ndarray):
        return torch.as_tensor(x)
    return x


def demix_loss(est: WaveLike, ref: WaveLike, stft_cfg: StftConfig) -> LossBreakdown:
    """Mean-absolute losses between estimate and reference.

    Accepts AudioSegments, arrays or tensors of shape (..., channels,
    samples); gradients flow through tensor inputs. Spectrogram terms use
    stft_cfg for both signals.
    """
    if isinstance(est, AudioSegment) and isinstance(ref, AudioSegment):
        check_same_rate(est, ref)
    est_t = _coerce_wave(est)
    ref_t = _coerce_wave(ref)
    if est_t.shape != ref_t.shape:
        raise ValueError(f"shape mismatch: estimate {tuple(est_t.shape)} vs reference {tuple(ref_t.shape)}")
    if not torch.isfinite(est_t).all() or not torch.isfinite(ref_t).all():
        raise ValueError("loss inputs contain non-finite values")

    time_term = (est_t - ref_t).abs().mean()

    est_spec = stft_tensor(est_t, stft_cfg)
    ref_spec = stft_tensor(ref_t, stft_cfg)
    est_mag = complex_magnitude(est_spec.real, est_spec.imag)
    ref_mag = complex_magnitude(ref_spec.real, ref_spec.imag)

    mag_term = (est_mag - ref_mag).abs().mean()
    real_term = (est_spec.real - ref_spec.real).abs().mean()
    imag_term = (est_spec.imag - ref_spec.imag).abs().mean()
    total = time_term + mag_term + real_term + imag_term
    return LossBreakdown(time_term, mag_term, real_term, imag_term, total)
