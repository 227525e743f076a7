import numpy as np
import pytest
import torch

from eeg2speech.eeg_net import (
    EegAutoencoder,
    EegEncoderConfig,
    cosine_reconstruction_loss,
)
from eeg2speech.errors import ConfigError

SMALL = EegEncoderConfig(
    n_channels_in=8, hidden_dim=16, n_conv_blocks=3, conv_strides=[1, 3, 1],
    n_s4_layers=1, s4_state_dim=8, dropout=0.1, embed_dim=12,
)


@pytest.fixture
def model():
    torch.manual_seed(0)
    return EegAutoencoder(SMALL)


class TestEncoder:
    def test_output_shape(self, model):
        cfg = EegEncoderConfig(
            n_channels_in=128, hidden_dim=32, n_conv_blocks=4,
            conv_strides=[1, 3, 1, 1], n_s4_layers=1, s4_state_dim=8, embed_dim=24,
        )
        torch.manual_seed(1)
        enc = EegAutoencoder(cfg).eval()
        e = enc.encode(torch.randn(1, 128, 768))
        assert e.shape == (1, 24, 256)

    def test_eval_determinism(self, model):
        model.eval()
        x = torch.randn(1, 8, 96)
        a = model.encode(x)
        b = model.encode(x)
        assert torch.equal(a, b)

    def test_zero_input_is_finite(self, model):
        model.eval()
        e = model.encode(torch.zeros(1, 8, 96))
        assert torch.all(torch.isfinite(e))

    def test_channel_mismatch_raises(self, model):
        with pytest.raises(ConfigError):
            model.encode(torch.randn(1, 5, 96))


class TestDecoder:
    def test_round_trip_shape(self, model):
        model.eval()
        x = torch.randn(2, 8, 768)
        assert model(x).shape == x.shape

    def test_eval_determinism(self, model):
        model.eval()
        e = model.encode(torch.randn(1, 8, 96))
        assert torch.equal(model.decode(e), model.decode(e))

    def test_embed_dim_mismatch_raises(self, model):
        with pytest.raises(ConfigError):
            model.decode(torch.randn(1, 7, 32))

    def test_gradient_reaches_encoder(self, model):
        model.train()
        torch.manual_seed(3)
        x = torch.randn(1, 8, 96)
        loss = cosine_reconstruction_loss(x, model(x))
        loss.backward()
        grads = [p.grad for p in model.encoder.parameters() if p.grad is not None]
        assert any(g.abs().sum() > 0 for g in grads)

    def test_encoder_gradient_matches_finite_difference(self):
        torch.manual_seed(4)
        model = EegAutoencoder(SMALL).double().eval()
        x = torch.randn(1, 8, 48, dtype=torch.float64)
        param = model.encoder.proj.weight

        def loss_value():
            return cosine_reconstruction_loss(x, model(x))

        loss = loss_value()
        loss.backward()
        g = param.grad[0, 0, 0].item()
        eps = 1e-6
        with torch.no_grad():
            param[0, 0, 0] += eps
            up = loss_value().item()
            param[0, 0, 0] -= 2 * eps
            down = loss_value().item()
            param[0, 0, 0] += eps
        fd = (up - down) / (2 * eps)
        assert g == pytest.approx(fd, rel=5e-3, abs=1e-8)


class TestCosineLoss:
    def test_identical_is_zero(self):
        x = torch.randn(3, 100)
        assert cosine_reconstruction_loss(x, x).item() == pytest.approx(0.0, abs=1e-6)

    def test_negated_is_two(self):
        x = torch.randn(3, 100)
        assert cosine_reconstruction_loss(x, -x).item() == pytest.approx(2.0, abs=1e-6)

    def test_orthogonal_is_one(self):
        t = torch.arange(64, dtype=torch.float32)
        x = torch.stack([torch.sin(2 * np.pi * t / 32)])
        y = torch.stack([torch.cos(2 * np.pi * t / 32)])
        assert cosine_reconstruction_loss(x, y).item() == pytest.approx(1.0, abs=1e-5)

    def test_zero_norm_channel_counts_as_one(self):
        x = torch.ones(2, 10)
        y = torch.cat([torch.ones(1, 10), torch.zeros(1, 10)])
        assert cosine_reconstruction_loss(x, y).item() == pytest.approx(0.5, abs=1e-6)

    def test_bounds_random_pairs(self):
        torch.manual_seed(5)
        for _ in range(200):
            x, y = torch.randn(2, 4, 30)
            val = cosine_reconstruction_loss(x, y).item()
            assert 0.0 <= val <= 2.0

    def test_positive_scaling_invariance(self):
        torch.manual_seed(6)
        x, y = torch.randn(2, 4, 30)
        a = cosine_reconstruction_loss(x, y)
        b = cosine_reconstruction_loss(x, 3.7 * y)
        assert torch.allclose(a, b, atol=1e-6)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ConfigError):
            cosine_reconstruction_loss(torch.ones(2, 10), torch.ones(2, 11))

    def test_masked_equals_per_item_mean(self):
        torch.manual_seed(7)
        a = torch.randn(3, 40)
        b = torch.randn(3, 25)
        xs = [a, b]
        recon = [x + 0.1 * torch.randn_like(x) for x in xs]
        padded_x = torch.zeros(2, 3, 40)
        padded_r = torch.zeros(2, 3, 40)
        for i, (x, r) in enumerate(zip(xs, recon)):
            padded_x[i, :, : x.shape[1]] = x
            padded_r[i, :, : r.shape[1]] = r
        lengths = torch.tensor([40, 25])
        masked = cosine_reconstruction_loss(padded_x, padded_r, lengths)
        per_item = torch.stack(
            [cosine_reconstruction_loss(x, r) for x, r in zip(xs, recon)]
        ).mean()
        assert torch.allclose(masked, per_item, atol=1e-5)


def test_overfit_small_batch_halves_loss():
    torch.manual_seed(8)
    model = EegAutoencoder(SMALL)
    x = torch.randn(4, 8, 96)
    opt = torch.optim.AdamW(model.parameters(), lr=1e-3)
    model.train()
    initial = cosine_reconstruction_loss(x, model(x)).item()
    for _ in range(200):
        opt.zero_grad()
        loss = cosine_reconstruction_loss(x, model(x))
        loss.backward()
        opt.step()
    model.eval()
    final = cosine_reconstruction_loss(x, model(x)).item()
    assert final <= 0.5 * initial
