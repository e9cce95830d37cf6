"""Gradient-accumulated training loop, history logging, top-k selection.

The accumulation contract: running grad_accum_steps micro-batches of
batch_size and scaling each loss by 1/grad_accum_steps produces, with the
mean-reduced loss, exactly the gradient of one combined batch of
batch_size * grad_accum_steps samples. Tests pin this to 1e-10 at 64-bit.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .checkpoint import CheckpointInfo, save_checkpoint
from .datasets import StemDataset
from .dsp import StftConfig, istft_tensor, stft_tensor
from .loss import demix_loss
from .metrics import evaluate_model
from .networks import NonFiniteActivationError, SeparatorModel

HISTORY_COLUMNS = (
    "step",
    "time_term",
    "mag_term",
    "real_term",
    "imag_term",
    "total",
    "val_score",
)


class NonFiniteLossError(RuntimeError):
    """Loss went NaN/inf; the step is not applied."""


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int
    learning_rate: float = 1e-3
    batch_size: int = 2
    grad_accum_steps: int = 6
    seed: int = 0
    segment_s: float = 4.0
    checkpoint_every: Optional[int] = None
    validation_every: Optional[int] = None
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ValueError("batch_size and grad_accum_steps must be >= 1")
        if self.segment_s <= 0:
            raise ValueError("segment_s must be positive")
        for name in ("checkpoint_every", "validation_every"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be >= 1 when set")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.grad_accum_steps


@dataclass
class TrainRecord:
    step: int
    time_term: float
    mag_term: float
    real_term: float
    imag_term: float
    total: float
    wall_time: float
    val_score: Optional[float] = None


@dataclass
class TrainResult:
    checkpoints: List[CheckpointInfo]
    history: List[TrainRecord]
    aborted: bool = False

    @property
    def final_checkpoint(self) -> Optional[CheckpointInfo]:
        return self.checkpoints[-1] if self.checkpoints else None


def sample_segments(
    dataset: StemDataset,
    track: str,
    batch_size: int,
    segment_len: int,
    rng: np.random.Generator,
    dtype: torch.dtype = torch.float32,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Draw batch_size random fixed-length crops as (mixture, reference).

    Songs shorter than the segment are zero-padded at the tail. Returns
    two tensors of shape (batch, channels, segment_len).
    """
    if len(dataset.songs) == 0:
        raise ValueError("cannot sample from an empty dataset")
    mixes, refs = [], []
    for _ in range(batch_size):
        song = dataset.songs[int(rng.integers(len(dataset.songs)))]
        mix = song.mixture.samples
        ref = song.stems[track].samples
        length = mix.shape[-1]
        if length >= segment_len:
            off = int(rng.integers(0, length - segment_len + 1))
            m = mix[:, off : off + segment_len]
            r = ref[:, off : off + segment_len]
        else:
            pad = segment_len - length
            m = np.pad(mix, ((0, 0), (0, pad)))
            r = np.pad(ref, ((0, 0), (0, pad)))
        mixes.append(np.asarray(m, dtype=np.float64))
        refs.append(np.asarray(r, dtype=np.float64))
    mix_t = torch.as_tensor(np.stack(mixes)).to(dtype)
    ref_t = torch.as_tensor(np.stack(refs)).to(dtype)
    return mix_t, ref_t


def accumulate_and_step(
    model: SeparatorModel,
    optimizer: torch.optim.Optimizer,
    micro_batches: Sequence[Tuple[torch.Tensor, torch.Tensor]],
    stft_cfg: StftConfig,
    grad_clip: Optional[float] = None,
) -> dict:
    """One optimizer update from accumulated micro-batch gradients.

    Each micro-batch is (mixture, reference) of shape (B, C, L). Losses
    are scaled by 1/len(micro_batches) before backward so the sum equals
    the mean-reduced loss of the concatenated batch. Returns the
    aggregated loss terms as plain floats. Raises NonFiniteLossError
    before the parameters are touched if any micro-batch loss is not
    finite.
    """
    if len(micro_batches) == 0:
        raise ValueError("need at least one micro-batch")
    optimizer.zero_grad(set_to_none=True)
    n = len(micro_batches)
    totals = dict.fromkeys(
        ("time_term", "mag_term", "real_term", "imag_term", "total"), 0.0
    )
    for mix, ref in micro_batches:
        spec = stft_tensor(mix, stft_cfg)
        est_spec, _, _ = model(spec)
        est = istft_tensor(est_spec, stft_cfg, mix.shape[-1])
        if not torch.isfinite(est.detach()).all():
            optimizer.zero_grad(set_to_none=True)
            raise NonFiniteLossError("estimate waveform is non-finite")
        breakdown = demix_loss(est, ref, stft_cfg)
        if not breakdown.is_finite():
            optimizer.zero_grad(set_to_none=True)
            raise NonFiniteLossError(
                f"non-finite loss terms: {breakdown.floats()}"
            )
        (breakdown.total / n).backward()
        for key, value in breakdown.floats().items():
            totals[key] += value / n
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return totals


def train(
    model: SeparatorModel,
    train_set: StemDataset,
    val_set: Optional[StemDataset],
    cfg: TrainConfig,
    out_dir=None,
) -> TrainResult:
    """Optimize the model on random crops of the training songs.

    Checkpoints (with the latest validation score) are written under
    out_dir per cfg.checkpoint_every, plus a final one; a non-finite loss
    aborts the loop with the parameters still at their last good values,
    and that state is checkpointed. Returns the checkpoint list, the
    per-step history and the abort flag.
    """
    if len(train_set.songs) == 0:
        raise ValueError("training set is empty")
    track = model.config.track
    if train_set.sample_rate != model.sample_rate:
        raise ValueError(
            f"dataset rate {train_set.sample_rate} != model rate {model.sample_rate}"
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    dtype = model.dtype
    segment_len = max(int(round(cfg.segment_s * model.sample_rate)), 1)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=cfg.adam_betas,
        eps=cfg.adam_eps,
    )

    history: List[TrainRecord] = []
    checkpoints: List[CheckpointInfo] = []
    aborted = False
    last_val: Optional[float] = None
    last_step = 0

    def run_validation() -> Optional[float]:
        if val_set is None or len(val_set.songs) == 0:
            return None
        model.eval()
        score = evaluate_model(model, val_set, track)
        model.train()
        return score

    model.train()
    for step in range(1, cfg.max_steps + 1):
        t0 = time.perf_counter()
        micro = [
            sample_segments(train_set, track, cfg.batch_size, segment_len, rng, dtype)
            for _ in range(cfg.grad_accum_steps)
        ]
        try:
            terms = accumulate_and_step(
                model, optimizer, micro, model.stft_config, cfg.grad_clip
            )
        except (NonFiniteLossError, NonFiniteActivationError):
            # parameters are still at their last good values
            optimizer.zero_grad(set_to_none=True)
            aborted = True
            break
        last_step = step

        val = None
        if cfg.validation_every is not None and step % cfg.validation_every == 0:
            val = run_validation()
            if val is not None:
                last_val = val

        history.append(
            TrainRecord(
                step=step,
                wall_time=time.perf_counter() - t0,
                val_score=val,
                **terms,
            )
        )

        if (
            out_dir is not None
            and cfg.checkpoint_every is not None
            and step % cfg.checkpoint_every == 0
        ):
            info = save_checkpoint(
                model,
                out_dir / f"ckpt-{step:06d}",
                validation_score=val if val is not None else last_val,
                step=step,
            )
            checkpoints.append(info)

    model.eval()
    if out_dir is not None:
        final_path = out_dir / f"ckpt-{last_step:06d}"
        if not checkpoints or checkpoints[-1].path != final_path:
            if last_val is None:
                last_val = run_validation()
                model.eval()
            info = save_checkpoint(
                model, final_path, validation_score=last_val, step=last_step
            )
            checkpoints.append(info)
    return TrainResult(checkpoints=checkpoints, history=history, aborted=aborted)


def write_history_csv(history: Sequence[TrainRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow(
                [
                    rec.step,
                    repr(rec.time_term),
                    repr(rec.mag_term),
                    repr(rec.real_term),
                    repr(rec.imag_term),
                    repr(rec.total),
                    "" if rec.val_score is None else repr(rec.val_score),
                ]
            )


def select_top_k(checkpoints: Sequence[CheckpointInfo], k: int) -> List[CheckpointInfo]:
    """Best-k checkpoints by validation score.

    Descending score; ties prefer the later training step, then the
    lexicographically smaller id. k larger than the pool returns all of
    them sorted, without error. Checkpoints lacking a score are ignored;
    at least one scored checkpoint is required.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    scored = [c for c in checkpoints if c.validation_score is not None]
    if not scored:
        raise ValueError("no checkpoint has a validation score")
    ordered = sorted(
        scored,
        key=lambda c: (
            -c.validation_score,
            -(c.step if c.step is not None else -1),
            c.ckpt_id,
        ),
    )
    return ordered[:k]
