import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import numeric_grad, rel_error
from digitnet.autoencoders import (
    AeConfig,
    AeModel,
    VaeConfig,
    VaeModel,
    ae_forward,
    ae_train,
    export_reconstructions,
    export_samples,
    kl_divergence,
    vae_encode,
    vae_forward_backward,
    vae_loss,
    vae_sample,
    vae_train,
)
from digitnet.errors import ShapeError
from digitnet.images import read_pgm
from digitnet.tensor import SeededRng


class TestAe:
    def test_output_range_and_latent(self):
        m = AeModel(seed=1)
        x = np.random.default_rng(0).random((5, 784))
        r = ae_forward(m, x)
        assert r.shape == (5, 784)
        assert np.all((r > 0) & (r < 1))
        assert m.encode(x).shape == (5, 32)
        assert ae_forward(m, x[0]).shape == (784,)

    def test_accepts_images(self):
        m = AeModel(seed=1)
        x = np.random.default_rng(0).random((2, 28, 28, 1))
        np.testing.assert_array_equal(ae_forward(m, x), ae_forward(m, x.reshape(2, 784)))

    def test_bad_width(self):
        with pytest.raises(ShapeError):
            ae_forward(AeModel(), np.zeros((2, 100)))

    def test_training_lowers_loss(self, real5k):
        _, curve = ae_train(AeConfig(epochs=3, limit_train=1000, seed=2), real5k[0])
        losses = [v for _, v in curve]
        assert losses[-1] < losses[0]

    def test_deterministic(self, mini_train):
        _, a = ae_train(AeConfig(epochs=2, seed=3), mini_train)
        _, b = ae_train(AeConfig(epochs=2, seed=3), mini_train)
        assert a == b


class TestKl:
    def test_prior(self):
        assert kl_divergence(np.zeros(4), np.zeros(4)) == 0.0

    def test_unit_mean(self):
        assert kl_divergence([1.0], [0.0]) == pytest.approx(0.5, abs=1e-15)

    def test_log_four(self):
        v = kl_divergence([0.0], [math.log(4)])
        assert v == pytest.approx(1.5 - math.log(2), abs=1e-14)
        assert v == pytest.approx(0.80685, abs=1e-5)

    def test_nonnegative_on_random_draws(self):
        rng = np.random.default_rng(0)
        mu = rng.normal(0, 3, (10_000, 8))
        lv = rng.uniform(-8, 8, (10_000, 8))
        assert np.all(kl_divergence(mu, lv) >= 0.0)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(-20, 20), st.floats(-15, 15))
    def test_nonnegative_property(self, mu, lv):
        assert kl_divergence([mu], [lv]) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            kl_divergence(np.zeros(3), np.zeros(4))


class TestVaeLoss:
    def test_half_everywhere(self):
        half = np.full(784, 0.5)
        parts = vae_loss(half, half, np.zeros(20), np.zeros(20))
        assert parts.recon == pytest.approx(784 * math.log(2), rel=1e-12)
        assert parts.recon == pytest.approx(543.43, abs=0.01)
        assert parts.total == parts.recon

    def test_batch_mean(self):
        rng = np.random.default_rng(1)
        r, t = rng.uniform(0.1, 0.9, (3, 784)), rng.random((3, 784))
        mu, lv = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        whole = vae_loss(r, t, mu, lv)
        each = [vae_loss(r[i], t[i], mu[i], lv[i]) for i in range(3)]
        assert whole.recon == pytest.approx(np.mean([p.recon for p in each]))
        assert whole.kl == pytest.approx(np.mean([p.kl for p in each]))


class TestVaeGradients:
    """Central differences of the batch-mean ELBO through every parameter."""

    def _setup(self, seed, kind):
        rng = np.random.default_rng(seed)
        model = VaeModel(latent=3, hidden=6, seed=seed)
        x = rng.random((2, 784))
        eps = rng.standard_normal((2, 3))
        return model, x, eps

    @staticmethod
    def _loss(model, x, eps, kind):
        h = model.trunk.forward(x, mode="eval")[0]
        mu = model.mu_head.forward(h, mode="eval")[0]
        lv = model.logvar_head.forward(h, mode="eval")[0]
        r = model.decoder.forward(mu + np.exp(0.5 * lv) * eps, mode="eval")[0]
        return vae_loss(r, x, mu, lv, kind).total

    @staticmethod
    def _sampled_grad(f, p, idx, h=1e-5):
        """Central differences at the flat positions ``idx`` only."""
        flat = p.reshape(-1)
        out = np.empty(len(idx))
        for k, j in enumerate(idx):
            old = flat[j]
            flat[j] = old + h
            fp = f()
            flat[j] = old - h
            fm = f()
            flat[j] = old
            out[k] = (fp - fm) / (2 * h)
        return out

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("kind", ["bce", "mse"])
    def test_parameters(self, seed, kind):
        model, x, eps = self._setup(seed, kind)
        vae_forward_backward(model, x, eps, kind)
        pick = np.random.default_rng(seed)
        f = lambda: self._loss(model, x, eps, kind)
        for net in model.networks:
            for p, g in net.parameters():
                # wide 784-sized tensors are checked on a random sample of entries
                idx = np.arange(p.size) if p.size <= 200 else pick.choice(p.size, 200, replace=False)
                num = self._sampled_grad(f, p, idx)
                assert rel_error(g.reshape(-1)[idx], num) < 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_latent_outputs(self, seed):
        model, x, eps = self._setup(seed, "bce")
        _, g_mu, g_lv = vae_forward_backward(model, x, eps)
        h = model.trunk.forward(x, mode="eval")[0]
        mu = model.mu_head.forward(h, mode="eval")[0]
        lv = model.logvar_head.forward(h, mode="eval")[0]

        def total():
            r = model.decoder.forward(mu + np.exp(0.5 * lv) * eps, mode="eval")[0]
            return vae_loss(r, x, mu, lv).total

        assert rel_error(g_mu, numeric_grad(total, mu)) < 1e-4
        assert rel_error(g_lv, numeric_grad(total, lv)) < 1e-4


class TestVaeEncode:
    def test_zero_noise(self):
        m = VaeModel(seed=1)
        x = np.random.default_rng(0).random(784)
        z, mu, _ = vae_encode(m, x, eps=np.zeros(20))
        np.testing.assert_array_equal(z, mu)

    def test_unit_sigma(self):
        m = VaeModel(seed=1)
        for net in (m.logvar_head,):
            for p, _ in net.parameters():
                p[...] = 0.0
        z, mu, lv = vae_encode(m, np.random.default_rng(0).random(784), eps=np.ones(20))
        np.testing.assert_array_equal(lv, 0.0)
        np.testing.assert_allclose(z, mu + 1.0, rtol=0, atol=1e-15)

    def test_sample_mean(self):
        m = VaeModel(seed=2)
        x = np.random.default_rng(0).random(784)
        x_many = np.repeat(x[None], 100_000, axis=0)
        z, mu, lv = vae_encode(m, x_many, rng=SeededRng(9))
        sigma = np.exp(0.5 * lv[0])
        # within 1 % of the latent scale, several standard errors wide
        assert np.all(np.abs(z.mean(axis=0) - mu[0]) <= 0.01 * np.maximum(np.abs(mu[0]), sigma))

    def test_pure_when_noise_fixed(self):
        m = VaeModel(seed=3)
        x = np.random.default_rng(0).random((4, 784))
        a = vae_encode(m, x, eps=np.zeros((4, 20)))
        b = vae_encode(m, x, eps=np.zeros((4, 20)))
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)


class TestVaeTrain:
    def test_loss_decreases(self, real5k):
        _, curve = vae_train(VaeConfig(epochs=3, limit_train=1000, seed=1), real5k[0])
        assert curve[-1][3] < curve[0][3]
        assert all(kl >= 0 for _, _, kl, _ in curve)

    def test_samples_in_range(self):
        s = vae_sample(VaeModel(seed=4), 16, SeededRng(1))
        assert s.shape == (16, 784) and np.all((s > 0) & (s < 1))


class TestGrids:
    def test_pair_grid_dims(self, tmp_path, mini_test):
        grid = export_reconstructions(AeModel(seed=1), mini_test.images[:8], tmp_path / "g.pgm")
        assert grid.shape == (2 * 28 + 2, 8 * 28 + 7 * 2)
        assert read_pgm(tmp_path / "g.pgm").shape == grid.shape

    def test_deterministic_files(self, tmp_path, mini_test):
        for name in ("a", "b"):
            m = VaeModel(seed=5)
            export_samples(m, 16, SeededRng(2), tmp_path / f"{name}_s.pgm")
            export_reconstructions(m, mini_test.images[:8], tmp_path / f"{name}_r.pgm")
        assert (tmp_path / "a_s.pgm").read_bytes() == (tmp_path / "b_s.pgm").read_bytes()
        assert (tmp_path / "a_r.pgm").read_bytes() == (tmp_path / "b_r.pgm").read_bytes()
