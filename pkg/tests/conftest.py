import numpy as np
import pytest
import torch

from bandmix import BandConfig, ModelConfig, StftConfig, make_band_layout

# single-threaded math keeps float summation order, and thus results,
# reproducible across runs
torch.set_num_threads(1)

TINY_SR = 8000


@pytest.fixture(scope="session")
def tiny_stft():
    return StftConfig(n_fft=256, hop=80)


@pytest.fixture(scope="session")
def tiny_layout(tiny_stft):
    band = BandConfig("vocals", 0.0, 800.0, 800.0, 2000.0)
    return make_band_layout(band, tiny_stft, TINY_SR)


@pytest.fixture(scope="session")
def tiny_model_config():
    return ModelConfig(
        track="vocals",
        channels=2,
        base_channels=2,
        encoder_depth=2,
        encoder_channel_plan=(4, 8),
        dprnn_hidden=8,
        mlp_hidden_layers=1,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
