"""Ensemble averaging: degenerate weights, order independence, convexity,
spec serialization."""

import numpy as np
import pytest
import torch

from bandmix import (
    EnsembleSpec,
    build_model,
    ensemble_separate,
    load_ensemble_spec,
    parameter_fingerprint,
    save_ensemble_spec,
    weights_from_scores,
)
from bandmix.audio import AudioSegment
from bandmix.networks import ModelConfig

SR = 8000


@pytest.fixture(scope="module")
def members(tiny_model_config, tiny_layout, tiny_stft):
    return [
        build_model(tiny_model_config, tiny_layout, tiny_stft, seed=s, sample_rate=SR)
        for s in (0, 1, 2)
    ]


@pytest.fixture(scope="module")
def mixture():
    rng = np.random.default_rng(77)
    samples = (rng.standard_normal((2, SR)) * 0.1).astype(np.float32)
    return AudioSegment(samples, SR)


class TestEnsembleSeparate:
    def test_degenerate_weights_reproduce_single_member(self, members, mixture):
        solo = members[1].separate(mixture)
        ens = ensemble_separate(members, [0.0, 1.0, 0.0], mixture)
        assert np.array_equal(ens.samples, solo.samples)

    def test_duplicate_member_is_fixed_point(self, members, mixture):
        solo = members[0].separate(mixture)
        ens = ensemble_separate([members[0], members[0]], [0.5, 0.5], mixture)
        assert np.array_equal(ens.samples, solo.samples)

    def test_weights_invariant_to_scale(self, members, mixture):
        a = ensemble_separate(members, [2.0, 1.0, 1.0], mixture)
        b = ensemble_separate(members, [0.5, 0.25, 0.25], mixture)
        assert np.array_equal(a.samples, b.samples)

    def test_member_order_does_not_matter(self, members, mixture):
        weights = [0.5, 0.3, 0.2]
        base = ensemble_separate(members, weights, mixture)
        perm = [2, 0, 1]
        shuffled = ensemble_separate(
            [members[i] for i in perm], [weights[i] for i in perm], mixture
        )
        assert np.array_equal(base.samples, shuffled.samples)

    def test_output_inside_member_envelope(self, members, mixture):
        estimates = np.stack([m.separate(mixture).samples for m in members])
        ens = ensemble_separate(members, [0.2, 0.5, 0.3], mixture)
        slack = 1e-6 * np.abs(estimates).max()
        assert np.all(ens.samples >= estimates.min(axis=0) - slack)
        assert np.all(ens.samples <= estimates.max(axis=0) + slack)

    def test_output_metadata(self, members, mixture):
        ens = ensemble_separate(members, [1.0, 1.0, 1.0], mixture)
        assert ens.samples.shape == mixture.samples.shape
        assert ens.samples.dtype == np.float32
        assert ens.sample_rate == SR

    def test_argument_validation(self, members, mixture):
        with pytest.raises(ValueError, match="at least one"):
            ensemble_separate([], [], mixture)
        with pytest.raises(ValueError, match="models vs"):
            ensemble_separate(members, [1.0], mixture)
        with pytest.raises(ValueError, match="non-negative"):
            ensemble_separate(members, [1.0, -1.0, 1.0], mixture)
        with pytest.raises(ValueError, match="sum"):
            ensemble_separate(members, [0.0, 0.0, 0.0], mixture)

    def test_mismatched_members_rejected(
        self, members, mixture, tiny_model_config, tiny_layout, tiny_stft
    ):
        other_track = ModelConfig(
            track="drums",
            channels=tiny_model_config.channels,
            base_channels=tiny_model_config.base_channels,
            encoder_depth=tiny_model_config.encoder_depth,
            encoder_channel_plan=tiny_model_config.encoder_channel_plan,
            dprnn_hidden=tiny_model_config.dprnn_hidden,
            mlp_hidden_layers=tiny_model_config.mlp_hidden_layers,
        )
        bad = build_model(other_track, tiny_layout, tiny_stft, seed=5, sample_rate=SR)
        with pytest.raises(ValueError, match="separates 'drums'"):
            ensemble_separate([members[0], bad], [1.0, 1.0], mixture)

        wrong_rate = build_model(
            tiny_model_config, tiny_layout, tiny_stft, seed=5, sample_rate=16000
        )
        with pytest.raises(ValueError, match="sample rate"):
            ensemble_separate([members[0], wrong_rate], [1.0, 1.0], mixture)


class TestEnsembleSpec:
    def test_normalization(self):
        spec = EnsembleSpec(["a", "b", "c"], [2.0, 1.0, 1.0])
        assert np.array_equal(spec.normalized_weights(), [0.5, 0.25, 0.25])

    @pytest.mark.parametrize(
        "ids, weights, pattern",
        [
            (["a"], [1.0, 2.0], "ids vs"),
            ([], [], "at least one"),
            (["a", "b"], [1.0, -0.5], "non-negative"),
            (["a", "b"], [0.0, 0.0], "sum"),
        ],
    )
    def test_validation(self, ids, weights, pattern):
        with pytest.raises(ValueError, match=pattern):
            EnsembleSpec(ids, weights)

    def test_json_round_trip(self, tmp_path):
        spec = EnsembleSpec(["ckpt-000100", "ckpt-000200"], [0.75, 0.25])
        path = tmp_path / "ensemble.json"
        save_ensemble_spec(spec, path)
        back = load_ensemble_spec(path)
        assert back.checkpoint_ids == spec.checkpoint_ids
        assert back.weights == spec.weights


class TestFingerprint:
    def test_same_build_same_fingerprint(self, tiny_model_config, tiny_layout, tiny_stft):
        a = build_model(tiny_model_config, tiny_layout, tiny_stft, seed=3, sample_rate=SR)
        b = build_model(tiny_model_config, tiny_layout, tiny_stft, seed=3, sample_rate=SR)
        assert parameter_fingerprint(a) == parameter_fingerprint(b)

    def test_single_value_changes_fingerprint(self, members):
        base = parameter_fingerprint(members[0])
        saved = members[0].fusion.merge.bias.detach().clone()
        with torch.no_grad():
            members[0].fusion.merge.bias[0] += 1e-3
        try:
            assert parameter_fingerprint(members[0]) != base
        finally:
            with torch.no_grad():
                members[0].fusion.merge.bias.copy_(saved)


class TestWeightsFromScores:
    def test_proportional(self):
        assert weights_from_scores([1.0, 3.0]) == [1.0, 3.0]

    def test_negative_floored(self):
        assert weights_from_scores([-1.0, 2.0]) == [0.0, 2.0]

    def test_all_non_positive_falls_back_to_uniform(self):
        assert weights_from_scores([-1.0, 0.0, -2.0]) == [1.0, 1.0, 1.0]
