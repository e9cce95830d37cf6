"""scikit-learn style facade over the separation pipeline.

StemSeparator follows the estimator protocol: constructor stores
hyperparameters verbatim (so get_params/set_params/clone work), fit
trains a separator on a stem dataset, transform/predict demix mixtures,
score reports mean SI-SDR.
"""

from __future__ import annotations

from typing import Iterable, Optional, Union

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .audio import AudioSegment
from .datasets import StemDataset, load_stem_dataset
from .dsp import DEFAULT_BAND_TABLE, BandConfig, StftConfig, make_band_layout
from .metrics import evaluate_model
from .networks import ModelConfig, build_model
from .training import TrainConfig, train


class StemSeparator(BaseEstimator):
    """Train and apply a single-track music source separator.

    Parameters mirror the underlying model and trainer configs; the
    default band table covers the four canonical tracks. band_edges, when
    given, overrides the table with (band1_end_hz, band2_end_hz).
    """

    def __init__(
        self,
        track: str = "vocals",
        sample_rate: int = 44100,
        n_channels: int = 2,
        n_fft: int = 2048,
        hop: int = 600,
        window: str = "hann",
        band_edges: Optional[tuple] = None,
        base_channels: int = 4,
        encoder_depth: int = 4,
        encoder_channel_plan: Optional[tuple] = None,
        dprnn_hidden: Optional[int] = None,
        dprnn_blocks: int = 1,
        mlp_hidden_layers: int = 1,
        learning_rate: float = 1e-3,
        batch_size: int = 2,
        grad_accum_steps: int = 6,
        max_steps: int = 100,
        segment_s: float = 4.0,
        validation_every: Optional[int] = None,
        seed: int = 0,
    ):
        self.track = track
        self.sample_rate = sample_rate
        self.n_channels = n_channels
        self.n_fft = n_fft
        self.hop = hop
        self.window = window
        self.band_edges = band_edges
        self.base_channels = base_channels
        self.encoder_depth = encoder_depth
        self.encoder_channel_plan = encoder_channel_plan
        self.dprnn_hidden = dprnn_hidden
        self.dprnn_blocks = dprnn_blocks
        self.mlp_hidden_layers = mlp_hidden_layers
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.grad_accum_steps = grad_accum_steps
        self.max_steps = max_steps
        self.segment_s = segment_s
        self.validation_every = validation_every
        self.seed = seed

    def _band_config(self) -> BandConfig:
        if self.band_edges is not None:
            b1, b2 = self.band_edges
            return BandConfig(self.track, 0.0, float(b1), float(b1), float(b2))
        if self.track not in DEFAULT_BAND_TABLE:
            raise ValueError(f"no default band edges for track {self.track!r}")
        return DEFAULT_BAND_TABLE[self.track]

    def _build_model(self):
        stft_cfg = StftConfig(n_fft=self.n_fft, hop=self.hop, window=self.window)
        layout = make_band_layout(self._band_config(), stft_cfg, self.sample_rate)
        model_cfg = ModelConfig(
            track=self.track,
            channels=self.n_channels,
            base_channels=self.base_channels,
            encoder_depth=self.encoder_depth,
            encoder_channel_plan=self.encoder_channel_plan,
            dprnn_hidden=self.dprnn_hidden,
            dprnn_blocks=self.dprnn_blocks,
            mlp_hidden_layers=self.mlp_hidden_layers,
        )
        return build_model(
            model_cfg, layout, stft_cfg, seed=self.seed, sample_rate=self.sample_rate
        )

    @staticmethod
    def _as_dataset(X) -> StemDataset:
        if isinstance(X, StemDataset):
            return X
        if isinstance(X, (str,)) or hasattr(X, "__fspath__"):
            return load_stem_dataset(X)
        raise TypeError(
            f"expected a StemDataset or a dataset directory path, got {type(X)!r}"
        )

    def fit(self, X, y=None, val_set=None):
        """Train on a StemDataset (or dataset directory path)."""
        dataset = self._as_dataset(X)
        if len(dataset.songs) == 0:
            raise ValueError("training dataset has no usable songs")
        model = self._build_model()
        cfg = TrainConfig(
            max_steps=self.max_steps,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            grad_accum_steps=self.grad_accum_steps,
            seed=self.seed,
            segment_s=self.segment_s,
            validation_every=self.validation_every,
        )
        val = self._as_dataset(val_set) if val_set is not None else None
        result = train(model, dataset, val, cfg)
        self.model_ = model
        self.history_ = result.history
        self.aborted_ = result.aborted
        return self

    def transform(
        self, X: Union[AudioSegment, Iterable[AudioSegment]]
    ) -> Union[AudioSegment, list]:
        """Demix one mixture (or a sequence of them) into this track's stem."""
        check_is_fitted(self, "model_")
        if isinstance(X, AudioSegment):
            return self.model_.separate(X, chunk_s=self.segment_s)
        return [self.model_.separate(x, chunk_s=self.segment_s) for x in X]

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y=None) -> float:
        """Mean SI-SDR (dB) of this track's estimates over a stem dataset."""
        check_is_fitted(self, "model_")
        dataset = self._as_dataset(X)
        return evaluate_model(self.model_, dataset, self.track)
