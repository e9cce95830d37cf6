"""Separator network for one track.

Three U-Nets with a dual-path recurrent bottleneck produce mask embeddings
for the full band and the two sub-bands. An interactive fusion block merges
them with kernel-size-1 convolutions into the real and imaginary parts of a
complex ratio mask, which a pair of frequency-axis MLPs adjusts before the
mask multiplies the mixture spectrogram.

Tensor layout is (batch, channels, frames, bins) everywhere; downsampling
happens along the bin axis only, so frame count is preserved end to end.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .audio import AudioSegment
from .dsp import (
    BandLayout,
    ComplexSpectrogram,
    StftConfig,
    band_split,
    chunk_and_stitch,
    istft_tensor,
    mask_values,
    stft_tensor,
)


class NonFiniteActivationError(RuntimeError):
    """A branch produced NaN/inf activations; the trainer treats this the
    same as a non-finite loss and aborts the step."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters for one track's separator.

    mask embeddings have base_channels * channels channels (4C with the
    defaults); encoder_channel_plan lists the width of each encoder stage
    and defaults to 32 doubling per stage.
    """

    track: str = "vocals"
    channels: int = 2
    base_channels: int = 4
    encoder_depth: int = 4
    encoder_channel_plan: Optional[Tuple[int, ...]] = None
    dprnn_hidden: Optional[int] = None
    dprnn_blocks: int = 1
    mlp_hidden_layers: int = 1

    def __post_init__(self):
        if self.channels < 1 or self.base_channels < 1:
            raise ValueError("channels and base_channels must be >= 1")
        if self.encoder_depth < 1:
            raise ValueError("encoder_depth must be >= 1")
        if self.dprnn_blocks < 1:
            raise ValueError("dprnn_blocks must be >= 1")
        if self.mlp_hidden_layers < 0:
            raise ValueError("mlp_hidden_layers must be >= 0")
        if self.encoder_channel_plan is not None:
            object.__setattr__(
                self, "encoder_channel_plan", tuple(int(c) for c in self.encoder_channel_plan)
            )
            if len(self.encoder_channel_plan) != self.encoder_depth:
                raise ValueError(
                    f"encoder_channel_plan has {len(self.encoder_channel_plan)} entries "
                    f"for encoder_depth {self.encoder_depth}"
                )
            if any(c < 1 for c in self.encoder_channel_plan):
                raise ValueError("encoder channel counts must be >= 1")
        if self.dprnn_hidden is not None and self.dprnn_hidden < 1:
            raise ValueError("dprnn_hidden must be >= 1")

    @property
    def channel_plan(self) -> Tuple[int, ...]:
        if self.encoder_channel_plan is not None:
            return self.encoder_channel_plan
        return tuple(32 * 2 ** i for i in range(self.encoder_depth))

    @property
    def mask_channels(self) -> int:
        return self.base_channels * self.channels

    @property
    def rnn_hidden(self) -> int:
        return self.dprnn_hidden if self.dprnn_hidden is not None else self.channel_plan[-1]


@dataclass
class MaskPair:
    """Real and imaginary parts of a complex ratio mask, shape (C, T, F)."""

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real)
        self.imag = np.asarray(self.imag)
        if self.real.shape != self.imag.shape:
            raise ValueError(
                f"mask parts differ in shape: {self.real.shape} vs {self.imag.shape}"
            )
        if not np.isfinite(self.real).all() or not np.isfinite(self.imag).all():
            raise ValueError("mask contains non-finite values")


def encoder_freq_sizes(n_bins: int, depth: int) -> list:
    """Bin counts after each stride-2 encoder stage (index 0 = input width)."""
    sizes = [n_bins]
    for _ in range(depth):
        nxt = (sizes[-1] - 1) // 2 + 1
        if nxt < 1:
            raise ValueError(
                f"frequency dimension collapses to zero: {n_bins} bins cannot "
                f"support {depth} stride-2 stages"
            )
        sizes.append(nxt)
    return sizes


class DualPathBlock(nn.Module):
    """Bidirectional LSTM along bins, then along frames, each residual.

    Shape-preserving on (B, C, T, F). Zeroing a projection's weight and bias
    reduces that pass to the identity.
    """

    def __init__(self, channels: int, hidden: int):
        super().__init__()
        self.freq_rnn = nn.LSTM(channels, hidden, batch_first=True, bidirectional=True)
        self.freq_proj = nn.Linear(2 * hidden, channels)
        self.time_rnn = nn.LSTM(channels, hidden, batch_first=True, bidirectional=True)
        self.time_proj = nn.Linear(2 * hidden, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t, f = x.shape
        # intra: recur along frequency within each frame
        seq = x.permute(0, 2, 3, 1).reshape(b * t, f, c)
        out, _ = self.freq_rnn(seq)
        out = self.freq_proj(out).reshape(b, t, f, c).permute(0, 3, 1, 2)
        x = x + out
        # inter: recur along time within each bin
        seq = x.permute(0, 3, 2, 1).reshape(b * f, t, c)
        out, _ = self.time_rnn(seq)
        out = self.time_proj(out).reshape(b, f, t, c).permute(0, 3, 2, 1)
        return x + out


class UNetBranch(nn.Module):
    """Encoder / dual-path bottleneck / decoder over one frequency band.

    Input (B, 2C, T, F_b) -> mask embedding (B, 4C, T, F_b). Each encoder
    stage halves the bin axis (stride (1, 2)); decoder stages mirror it with
    transposed convolutions and skip concatenation, so output dims equal
    input dims.
    """

    def __init__(
        self,
        name: str,
        in_channels: int,
        mask_channels: int,
        channel_plan: Sequence[int],
        n_bins: int,
        rnn_hidden: int,
        dprnn_blocks: int,
    ):
        super().__init__()
        self.name = name
        self.n_bins = n_bins
        self.freq_sizes = encoder_freq_sizes(n_bins, len(channel_plan))

        self.encoders = nn.ModuleList()
        prev = in_channels
        for width in channel_plan:
            self.encoders.append(
                nn.Sequential(
                    nn.Conv2d(prev, width, kernel_size=3, stride=(1, 2), padding=1),
                    nn.InstanceNorm2d(width, affine=True),
                    nn.LeakyReLU(0.1),
                )
            )
            prev = width

        self.bottleneck = nn.ModuleList(
            DualPathBlock(channel_plan[-1], rnn_hidden) for _ in range(dprnn_blocks)
        )

        # decoders run deepest-first; the last one emits the mask embedding
        self.decoders = nn.ModuleList()
        for i in reversed(range(len(channel_plan))):
            out_ch = channel_plan[i - 1] if i > 0 else mask_channels
            upconv = nn.ConvTranspose2d(
                2 * channel_plan[i],
                out_ch,
                kernel_size=3,
                stride=(1, 2),
                padding=1,
                output_padding=(0, 1),
            )
            if i > 0:
                self.decoders.append(
                    nn.Sequential(upconv, nn.InstanceNorm2d(out_ch, affine=True), nn.LeakyReLU(0.1))
                )
            else:
                self.decoders.append(nn.Sequential(upconv))

    def _check_finite(self, x: torch.Tensor, stage: str) -> None:
        if not torch.isfinite(x).all():
            raise NonFiniteActivationError(
                f"non-finite activations in branch {self.name!r} at {stage}"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.n_bins:
            raise ValueError(
                f"branch {self.name!r} expects {self.n_bins} bins, got {x.shape[-1]}"
            )
        skips = []
        for i, enc in enumerate(self.encoders):
            x = enc(x)
            self._check_finite(x, f"encoder[{i}]")
            skips.append(x)
        for i, block in enumerate(self.bottleneck):
            x = block(x)
            self._check_finite(x, f"dprnn[{i}]")
        for j, dec in enumerate(self.decoders):
            scale = len(self.encoders) - 1 - j
            x = dec(torch.cat([x, skips[scale]], dim=1))
            x = x[..., : self.freq_sizes[scale]]  # crop the stride-2 upsample overshoot
            self._check_finite(x, f"decoder[{j}]")
        return x


class InteractiveFusion(nn.Module):
    """Merge sub-band and full-band mask embeddings into a complex mask.

    The full-band embedding is split at F1+F2; the low part is channel-
    concatenated with the frequency-concatenated sub-band embeddings and
    reduced back by a 1x1 convolution; the high part passes through
    untouched. Two 1x1 convolutions project the merged embedding to the
    real and imaginary mask parts. All kernels are size 1, so bins never
    mix here.
    """

    def __init__(self, mask_channels: int, out_channels: int, layout: BandLayout):
        super().__init__()
        self.layout = layout
        self.mask_channels = mask_channels
        self.merge = nn.Conv2d(2 * mask_channels, mask_channels, kernel_size=1)
        self.to_real = nn.Conv2d(mask_channels, out_channels, kernel_size=1)
        self.to_imag = nn.Conv2d(mask_channels, out_channels, kernel_size=1)

    def forward(
        self, h_full: torch.Tensor, h_sub1: torch.Tensor, h_sub2: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        lay = self.layout
        if h_full.shape[-1] != lay.total_bins:
            raise ValueError(
                f"full-band embedding has {h_full.shape[-1]} bins, expected {lay.total_bins}"
            )
        if h_sub1.shape[-1] != lay.f1_bins or h_sub2.shape[-1] != lay.f2_bins:
            raise ValueError(
                f"sub-band embeddings ({h_sub1.shape[-1]}, {h_sub2.shape[-1]}) do not "
                f"match layout ({lay.f1_bins}, {lay.f2_bins})"
            )
        low = lay.low_bins
        h_low = h_full[..., :low]
        h_high = h_full[..., low:]
        sub = torch.cat([h_sub1, h_sub2], dim=-1)
        merged = self.merge(torch.cat([sub, h_low], dim=1))
        full = torch.cat([merged, h_high], dim=-1)
        return self.to_real(full), self.to_imag(full)


class FrequencyMlp(nn.Module):
    """Per-frame MLP along the bin axis, applied identically to every
    channel and frame. All linear layers are initialized to the identity,
    so the zero-hidden-layer variant starts as an exact pass-through."""

    def __init__(self, n_bins: int, hidden_layers: int = 1):
        super().__init__()
        layers = []
        for _ in range(hidden_layers):
            layers.append(nn.Linear(n_bins, n_bins))
            layers.append(nn.Tanh())
        layers.append(nn.Linear(n_bins, n_bins))
        self.net = nn.Sequential(*layers)
        for module in self.net:
            if isinstance(module, nn.Linear):
                nn.init.eye_(module.weight)
                nn.init.zeros_(module.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class SeparatorModel(nn.Module):
    """Full separator for one track: branches, fusion, beamformer, masking.

    Immutable during inference; concurrent forward calls on the same built
    model are safe. Training mutates parameters and needs exclusive access.
    """

    def __init__(
        self,
        config: ModelConfig,
        band_layout: BandLayout,
        stft_config: StftConfig,
        sample_rate: int,
    ):
        super().__init__()
        if band_layout.total_bins != stft_config.n_bins:
            raise ValueError(
                f"band layout covers {band_layout.total_bins} bins but the STFT "
                f"produces {stft_config.n_bins}"
            )
        self.config = config
        self.band_layout = band_layout
        self.stft_config = stft_config
        self.sample_rate = sample_rate

        in_ch = 2 * config.channels
        mask_ch = config.mask_channels
        plan = config.channel_plan
        hidden = config.rnn_hidden

        def branch(name, bins):
            return UNetBranch(name, in_ch, mask_ch, plan, bins, hidden, config.dprnn_blocks)

        self.full_branch = branch("full", band_layout.total_bins)
        self.sub1_branch = branch("sub1", band_layout.f1_bins)
        self.sub2_branch = branch("sub2", band_layout.f2_bins)
        self.fusion = InteractiveFusion(mask_ch, config.channels, band_layout)
        self.beam_real = FrequencyMlp(band_layout.total_bins, config.mlp_hidden_layers)
        self.beam_imag = FrequencyMlp(band_layout.total_bins, config.mlp_hidden_layers)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @property
    def size_mb(self) -> float:
        """Checkpoint size in MB at 4 bytes per parameter."""
        return self.parameter_count * 4 / 2 ** 20

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def forward(self, spec: torch.Tensor):
        """Mask a complex mixture spectrogram.

        spec: complex tensor (C, T, F) or (B, C, T, F).
        Returns (estimate, mask_real, mask_imag) with the input's rank.
        """
        if not spec.is_complex():
            raise ValueError("forward expects a complex spectrogram tensor")
        squeeze = spec.dim() == 3
        if squeeze:
            spec = spec.unsqueeze(0)
        if spec.dim() != 4:
            raise ValueError(f"expected 3-D or 4-D input, got {spec.dim()}-D")
        if spec.shape[1] != self.config.channels:
            raise ValueError(
                f"model expects {self.config.channels} channels, got {spec.shape[1]}"
            )
        if spec.shape[-1] != self.band_layout.total_bins:
            raise ValueError(
                f"model expects {self.band_layout.total_bins} bins, got {spec.shape[-1]}"
            )

        features = torch.cat([spec.real, spec.imag], dim=1)  # (B, 2C, T, F)
        sub1, sub2 = band_split(features, self.band_layout)
        h_full = self.full_branch(features)
        h1 = self.sub1_branch(sub1)
        h2 = self.sub2_branch(sub2)
        mask_real, mask_imag = self.fusion(h_full, h1, h2)
        mask_real = self.beam_real(mask_real)
        mask_imag = self.beam_imag(mask_imag)
        estimate = mask_values(spec, mask_real, mask_imag)
        if squeeze:
            return estimate.squeeze(0), mask_real.squeeze(0), mask_imag.squeeze(0)
        return estimate, mask_real, mask_imag

    def separate_spectrogram(
        self, spec: ComplexSpectrogram
    ) -> Tuple[ComplexSpectrogram, MaskPair]:
        """Typed single-item forward: spectrogram in, (estimate, mask) out."""
        if spec.stft_config != self.stft_config:
            raise ValueError("spectrogram was produced with a different STFT configuration")
        complex_dtype = torch.complex128 if self.dtype == torch.float64 else torch.complex64
        values = torch.as_tensor(spec.values).to(complex_dtype)
        with torch.no_grad():
            est, mask_real, mask_imag = self.forward(values)
        return (
            ComplexSpectrogram(est.numpy(), spec.stft_config, spec.sample_rate),
            MaskPair(mask_real.numpy(), mask_imag.numpy()),
        )

    def separate(
        self, mixture: AudioSegment, chunk_s: float = 4.0, overlap_frac: float = 0.5
    ) -> AudioSegment:
        """Waveform in, estimated stem out (same length, same rate).

        Long audio is processed in chunks with cross-faded overlap.
        """
        if mixture.sample_rate != self.sample_rate:
            raise ValueError(
                f"mixture is {mixture.sample_rate} Hz but the model was built "
                f"for {self.sample_rate} Hz"
            )
        if mixture.n_channels != self.config.channels:
            raise ValueError(
                f"mixture has {mixture.n_channels} channels, model expects "
                f"{self.config.channels}"
            )

        def run_chunk(chunk: np.ndarray) -> np.ndarray:
            x = torch.as_tensor(chunk).to(self.dtype)
            spec = stft_tensor(x, self.stft_config)
            with torch.no_grad():
                est, _, _ = self.forward(spec)
            return istft_tensor(est, self.stft_config, chunk.shape[-1]).numpy()

        return chunk_and_stitch(mixture, chunk_s, overlap_frac, run_chunk)


@contextlib.contextmanager
def _default_dtype(dtype: torch.dtype):
    prev = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(prev)


def build_model(
    config: ModelConfig,
    band_layout: BandLayout,
    stft_config: StftConfig,
    seed: int,
    sample_rate: int = 44100,
    dtype: torch.dtype = torch.float32,
) -> SeparatorModel:
    """Construct a separator with deterministic, seed-driven initialization."""
    for bins in (band_layout.total_bins, band_layout.f1_bins, band_layout.f2_bins):
        encoder_freq_sizes(bins, config.encoder_depth)
    torch.manual_seed(seed)
    with _default_dtype(dtype):
        model = SeparatorModel(config, band_layout, stft_config, sample_rate)
    model.build_seed = seed
    model.eval()
    return model
