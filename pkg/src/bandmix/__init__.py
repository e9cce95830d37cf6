"""bandmix: sub-band/full-band interactive music source separation."""

from .audio import AudioSegment, read_wav, write_wav
from .checkpoint import CheckpointError, CheckpointInfo, load_checkpoint, save_checkpoint
from .datasets import (
    SongStems,
    StemDataset,
    load_stem_dataset,
    make_synthetic_fixture,
    write_stem_dataset,
)
from .dsp import (
    DEFAULT_BAND_TABLE,
    DEFAULT_CHANNELS,
    DEFAULT_SAMPLE_RATE,
    TRACKS,
    BandConfig,
    BandLayout,
    ComplexSpectrogram,
    StftConfig,
    apply_complex_mask,
    band_split,
    chunk_and_stitch,
    hz_to_bin,
    istft,
    make_band_layout,
    stft,
)
from .ensemble import (
    EnsembleSpec,
    ensemble_separate,
    load_ensemble_spec,
    parameter_fingerprint,
    save_ensemble_spec,
    weights_from_scores,
)
from .estimator import StemSeparator
from .loss import LossBreakdown, demix_loss
from .metrics import SiSdrResult, evaluate_model, si_sdr
from .networks import (
    MaskPair,
    ModelConfig,
    NonFiniteActivationError,
    SeparatorModel,
    build_model,
)
from .training import (
    NonFiniteLossError,
    TrainConfig,
    TrainRecord,
    TrainResult,
    select_top_k,
    train,
    write_history_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AudioSegment",
    "BandConfig",
    "BandLayout",
    "CheckpointError",
    "CheckpointInfo",
    "ComplexSpectrogram",
    "DEFAULT_BAND_TABLE",
    "DEFAULT_CHANNELS",
    "DEFAULT_SAMPLE_RATE",
    "EnsembleSpec",
    "LossBreakdown",
    "MaskPair",
    "ModelConfig",
    "NonFiniteActivationError",
    "NonFiniteLossError",
    "SeparatorModel",
    "SiSdrResult",
    "SongStems",
    "StemDataset",
    "StemSeparator",
    "StftConfig",
    "TRACKS",
    "TrainConfig",
    "TrainRecord",
    "TrainResult",
    "apply_complex_mask",
    "band_split",
    "build_model",
    "chunk_and_stitch",
    "demix_loss",
    "ensemble_separate",
    "evaluate_model",
    "hz_to_bin",
    "istft",
    "load_checkpoint",
    "load_ensemble_spec",
    "load_stem_dataset",
    "make_band_layout",
    "make_synthetic_fixture",
    "parameter_fingerprint",
    "read_wav",
    "save_checkpoint",
    "save_ensemble_spec",
    "select_top_k",
    "si_sdr",
    "stft",
    "train",
    "weights_from_scores",
    "write_history_csv",
    "write_stem_dataset",
    "write_wav",
]
