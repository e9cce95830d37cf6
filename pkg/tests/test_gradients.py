"""Finite-difference gradient verification for each block and a small
end-to-end model, all at 64-bit."""

import numpy as np
import pytest
import torch

from bandmix import BandLayout, ModelConfig, StftConfig, build_model
from bandmix.networks import (
    DualPathBlock,
    FrequencyMlp,
    InteractiveFusion,
    UNetBranch,
)

EPS = 1e-5
RTOL = 1e-4
ATOL = 1e-8


def check_parameter_gradients(module: torch.nn.Module, loss_fn):
    """Compare backward gradients with central differences, parameter by
    parameter. loss_fn() must rebuild the scalar from the module's current
    parameter values."""
    params = [p for p in module.parameters() if p.requires_grad]
    assert params, "module has no trainable parameters"

    module.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.detach().clone() for p in params]

    worst = 0.0
    with torch.no_grad():
        for p, grad in zip(params, analytic):
            flat = p.view(-1)
            gflat = grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + EPS
                plus = loss_fn().item()
                flat[i] = orig - EPS
                minus = loss_fn().item()
                flat[i] = orig
                fd = (plus - minus) / (2 * EPS)
                a = gflat[i].item()
                err = abs(a - fd)
                bound = RTOL * max(abs(a), abs(fd)) + ATOL
                assert err <= bound, (
                    f"gradient mismatch: analytic={a!r} fd={fd!r} err={err:.3e}"
                )
                scale = max(abs(a), abs(fd), ATOL)
                worst = max(worst, err / scale)
    return worst


def weighted_sum(rng, *tensors):
    total = None
    for t in tensors:
        w = torch.as_tensor(rng.standard_normal(tuple(t.shape)))
        term = (w * t).sum()
        total = term if total is None else total + term
    return total


class TestBlockGradients:
    def test_dual_path_block(self, rng):
        torch.manual_seed(0)
        block = DualPathBlock(3, 4).double()
        x = torch.as_tensor(rng.standard_normal((1, 3, 4, 5)))

        def loss():
            return weighted_sum(np.random.default_rng(0), block(x))

        worst = check_parameter_gradients(block, loss)
        assert worst < RTOL

    def test_unet_branch(self, rng):
        torch.manual_seed(1)
        branch = UNetBranch("g", 2, 2, (3,), 8, 3, 1).double()
        x = torch.as_tensor(rng.standard_normal((1, 2, 3, 8)))

        def loss():
            return weighted_sum(np.random.default_rng(1), branch(x))

        check_parameter_gradients(branch, loss)

    def test_interactive_fusion(self, rng):
        torch.manual_seed(2)
        layout = BandLayout(f1_bins=2, f2_bins=3, total_bins=7, cut1=2, cut2=5)
        fusion = InteractiveFusion(2, 1, layout).double()
        h = torch.as_tensor(rng.standard_normal((1, 2, 3, 7)))
        h1 = torch.as_tensor(rng.standard_normal((1, 2, 3, 2)))
        h2 = torch.as_tensor(rng.standard_normal((1, 2, 3, 3)))

        def loss():
            return weighted_sum(np.random.default_rng(2), *fusion(h, h1, h2))

        check_parameter_gradients(fusion, loss)

    def test_frequency_mlp(self, rng):
        torch.manual_seed(3)
        mlp = FrequencyMlp(5, hidden_layers=1).double()
        with torch.no_grad():  # move off the identity point
            for lin in mlp.net:
                if isinstance(lin, torch.nn.Linear):
                    lin.weight.add_(torch.randn_like(lin.weight) * 0.3)
                    lin.bias.add_(torch.randn_like(lin.bias) * 0.1)
        x = torch.as_tensor(rng.standard_normal((1, 2, 3, 5)))

        def loss():
            return weighted_sum(np.random.default_rng(3), mlp(x))

        check_parameter_gradients(mlp, loss)


class TestEndToEnd:
    def test_small_model_all_parameters(self, rng):
        stft_cfg = StftConfig(n_fft=32, hop=8)
        layout = BandLayout(f1_bins=4, f2_bins=5, total_bins=17, cut1=4, cut2=9)
        cfg = ModelConfig(
            track="vocals",
            channels=2,
            base_channels=1,
            encoder_depth=1,
            encoder_channel_plan=(2,),
            dprnn_hidden=2,
            mlp_hidden_layers=0,
        )
        model = build_model(
            cfg, layout, stft_cfg, seed=9, sample_rate=8000, dtype=torch.float64
        )
        model.train()
        values = rng.standard_normal((2, 4, 17)) + 1j * rng.standard_normal((2, 4, 17))
        spec = torch.as_tensor(values, dtype=torch.complex128)

        def loss():
            est, mr, mi = model(spec)
            g = np.random.default_rng(4)
            return weighted_sum(g, est.real, est.imag)

        check_parameter_gradients(model, loss)

    def test_gradcheck_through_transforms(self, rng):
        # stft -> istft composition is differentiable w.r.t. the waveform
        cfg = StftConfig(n_fft=16, hop=4)
        from bandmix.dsp import istft_tensor, stft_tensor

        x = torch.as_tensor(rng.standard_normal((1, 40)))
        x.requires_grad_(True)

        def fn(inp):
            return istft_tensor(stft_tensor(inp, cfg), cfg, 40)

        assert torch.autograd.gradcheck(fn, (x,), eps=1e-6, atol=1e-8)
