"""Estimator-protocol facade: params round-trip, clone, fit/transform/score."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bandmix import StemSeparator, make_synthetic_fixture, write_stem_dataset
from bandmix.audio import AudioSegment

SR = 8000

TINY = dict(
    track="vocals",
    sample_rate=SR,
    n_fft=256,
    hop=80,
    band_edges=(800.0, 2000.0),
    base_channels=2,
    encoder_depth=2,
    encoder_channel_plan=(4, 8),
    dprnn_hidden=8,
    max_steps=2,
    batch_size=1,
    grad_accum_steps=1,
    segment_s=0.5,
)


@pytest.fixture(scope="module")
def fixture_set():
    return make_synthetic_fixture(seed=21, n_songs=2, duration_s=1.2, sample_rate=SR)


@pytest.fixture(scope="module")
def fitted(fixture_set):
    return StemSeparator(**TINY).fit(fixture_set)


class TestEstimatorProtocol:
    def test_get_params_round_trip(self):
        est = StemSeparator(**TINY)
        params = est.get_params()
        assert params["track"] == "vocals"
        assert params["n_fft"] == 256
        rebuilt = StemSeparator(**params)
        assert rebuilt.get_params() == params

    def test_set_params_chains(self):
        est = StemSeparator()
        out = est.set_params(track="bass", max_steps=7)
        assert out is est
        assert est.track == "bass"
        assert est.max_steps == 7

    def test_clone_is_unfitted_copy(self, fixture_set):
        est = StemSeparator(**TINY).fit(fixture_set)
        dup = clone(est)
        assert dup.get_params() == est.get_params()
        assert not hasattr(dup, "model_")

    def test_unfitted_raises(self, fixture_set):
        est = StemSeparator(**TINY)
        mixture = fixture_set.songs[0].mixture
        with pytest.raises(NotFittedError):
            est.transform(mixture)
        with pytest.raises(NotFittedError):
            est.score(fixture_set)


class TestFitTransform:
    def test_fit_attributes(self, fitted):
        assert hasattr(fitted, "model_")
        assert fitted.aborted_ is False
        assert [r.step for r in fitted.history_] == [1, 2]
        assert fitted.model_.config.track == "vocals"
        assert not fitted.model_.training

    def test_transform_single_segment(self, fitted, fixture_set):
        mixture = fixture_set.songs[0].mixture
        out = fitted.transform(mixture)
        assert isinstance(out, AudioSegment)
        assert out.samples.shape == mixture.samples.shape
        assert out.sample_rate == SR
        assert np.all(np.isfinite(out.samples))

    def test_transform_list(self, fitted, fixture_set):
        mixtures = [s.mixture for s in fixture_set.songs]
        outs = fitted.transform(mixtures)
        assert isinstance(outs, list)
        assert len(outs) == 2
        for out, mix in zip(outs, mixtures):
            assert out.samples.shape == mix.samples.shape

    def test_predict_is_transform(self, fitted, fixture_set):
        mixture = fixture_set.songs[0].mixture
        a = fitted.transform(mixture)
        b = fitted.predict(mixture)
        assert np.array_equal(a.samples, b.samples)

    def test_score_returns_float(self, fitted, fixture_set):
        value = fitted.score(fixture_set)
        assert isinstance(value, float)
        assert np.isfinite(value)

    def test_fit_from_directory(self, tmp_path, fixture_set):
        root = tmp_path / "data"
        write_stem_dataset(fixture_set, root)
        est = StemSeparator(**TINY).fit(root)
        assert hasattr(est, "model_")

    def test_fit_rejects_other_types(self):
        with pytest.raises(TypeError, match="StemDataset"):
            StemSeparator(**TINY).fit(12345)

    def test_validation_scores_recorded(self, fixture_set):
        est = StemSeparator(**{**TINY, "validation_every": 1})
        est.fit(fixture_set, val_set=fixture_set)
        assert all(r.val_score is not None for r in est.history_)

    def test_unknown_track_without_edges(self, fixture_set):
        est = StemSeparator(**{**TINY, "track": "choir", "band_edges": None})
        with pytest.raises(ValueError, match="choir"):
            est.fit(fixture_set)
