import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import numeric_grad, rel_error
from digitnet.errors import ConfigError, ShapeError
from digitnet.layers import softmax
from digitnet.losses import categorical_crossentropy, mse, mse_grad, softmax_ce_grad
from digitnet.optim import OptimizerState, SgdConfig, effective_lr, sgd_step


class TestCrossEntropy:
    def test_perfect(self):
        assert categorical_crossentropy(np.eye(10)[3], np.eye(10)[3]) == pytest.approx(0.0, abs=1e-11)

    def test_uniform(self):
        assert categorical_crossentropy(np.full(10, 0.1), np.eye(10)[0]) == pytest.approx(math.log(10), abs=1e-12)
        assert math.log(10) == pytest.approx(2.302585, abs=1e-6)

    def test_half(self):
        p = np.array([0.5, 0.25, 0.25])
        assert categorical_crossentropy(p, np.eye(3)[0]) == pytest.approx(0.693147, abs=1e-6)

    def test_confident_wrong_is_finite(self):
        loss = categorical_crossentropy(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert loss == pytest.approx(-math.log(1e-12))

    def test_batch_mean(self):
        p = np.array([[0.5, 0.5], [0.25, 0.75]])
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert categorical_crossentropy(p, y) == pytest.approx((math.log(2) - math.log(0.75)) / 2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            categorical_crossentropy(np.ones(3) / 3, np.eye(4)[0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=12), st.data())
    def test_nonnegative(self, logits, data):
        k = data.draw(st.integers(0, len(logits) - 1))
        assert categorical_crossentropy(softmax(np.array(logits)), np.eye(len(logits))[k]) >= 0.0


class TestSoftmaxCeGrad:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax_ce_grad(np.zeros(2), np.array([1.0, 0.0])), [-0.5, 0.5])

    def test_optimum(self):
        # logits whose softmax is (numerically) one-hot
        g = softmax_ce_grad(np.array([0.0, 800.0, 0.0]), np.eye(3)[1])
        np.testing.assert_allclose(g, 0.0, atol=1e-300)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(4, 10)) * 2
        y = np.eye(10)[rng.integers(0, 10, size=4)]
        num = numeric_grad(lambda: categorical_crossentropy(softmax(z), y), z)
        assert rel_error(softmax_ce_grad(z, y), num) < 1e-6

    def test_components_sum_to_zero(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(50, 10))
        y = np.eye(10)[rng.integers(0, 10, size=50)]
        np.testing.assert_allclose(softmax_ce_grad(z, y).sum(axis=1), 0.0, atol=1e-15)


class TestMse:
    def test_values(self):
        a = np.array([0.3, 0.7])
        assert mse(a, a) == 0.0
        assert mse([0.0, 0.0], [1.0, 1.0]) == 1.0
        b = np.array([1.0, -2.0])
        assert mse(a, b) == mse(b, a)

    def test_grad(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        assert rel_error(mse_grad(a, b), numeric_grad(lambda: mse(a, b), a)) < 1e-8

    def test_shape(self):
        with pytest.raises(ShapeError):
            mse(np.ones(2), np.ones(3))


class TestEffectiveLr:
    def test_values(self):
        cfg = SgdConfig()
        assert effective_lr(cfg, 0) == 0.001
        assert effective_lr(cfg, 10**6) == pytest.approx(0.0005, rel=1e-12)
        no_decay = SgdConfig(decay=0.0)
        assert all(effective_lr(no_decay, t) == 0.001 for t in (0, 10, 10**9))

    def test_non_increasing(self):
        cfg = SgdConfig(decay=1e-3)
        lrs = [effective_lr(cfg, t) for t in range(0, 10_000, 7)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SgdConfig(lr0=0.0)
        with pytest.raises(ConfigError):
            SgdConfig(decay=-1.0)
        with pytest.raises(ConfigError):
            SgdConfig(momentum=1.0)


class TestSgdStep:
    def _run(self, cfg, grads, w0=0.0):
        w = np.array([w0])
        state = OptimizerState()
        history = []
        for g in grads:
            sgd_step([w], [np.array([g])], state, cfg)
            history.append((w[0], state.velocity[0][0]))
        return history, state

    def test_plain_sgd(self):
        cfg = SgdConfig(lr0=0.1, decay=0.0, momentum=0.0, nesterov=False)
        (w, _), = self._run(cfg, [2.0], w0=1.0)[0]
        assert w == pytest.approx(1.0 - 0.2)

    def test_classical_momentum_two_steps(self):
        cfg = SgdConfig(lr0=0.1, decay=0.0, momentum=0.9, nesterov=False)
        hist, state = self._run(cfg, [1.0, 1.0])
        assert hist[0][1] == pytest.approx(-0.1) and hist[0][0] == pytest.approx(-0.1)
        assert hist[1][1] == pytest.approx(-0.19) and hist[1][0] == pytest.approx(-0.29)
        assert state.iteration == 2

    def test_nesterov_first_step(self):
        cfg = SgdConfig(lr0=0.1, decay=0.0, momentum=0.9, nesterov=True)
        hist, _ = self._run(cfg, [1.0])
        assert hist[0][0] == pytest.approx(-0.19)

    def test_nesterov_matches_plain_without_momentum(self):
        grads = list(np.random.default_rng(0).normal(size=20))
        a, _ = self._run(SgdConfig(lr0=0.05, decay=1e-2, momentum=0.0, nesterov=True), grads, 0.3)
        b, _ = self._run(SgdConfig(lr0=0.05, decay=1e-2, momentum=0.0, nesterov=False), grads, 0.3)
        assert [h[0] for h in a] == [h[0] for h in b]

    def test_zero_grad_no_move(self):
        w = np.array([1.0, -2.0])
        sgd_step([w], [np.zeros(2)], OptimizerState(), SgdConfig())
        np.testing.assert_array_equal(w, [1.0, -2.0])

    def test_decay_applied_per_update(self):
        cfg = SgdConfig(lr0=1.0, decay=1.0, momentum=0.0, nesterov=False)
        hist, _ = self._run(cfg, [1.0, 1.0, 1.0])
        # steps of 1/(1+0), 1/(1+1), 1/(1+2)
        assert [h[0] for h in hist] == pytest.approx([-1.0, -1.5, -1.5 - 1 / 3])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sgd_step([np.zeros(2)], [np.zeros(3)], OptimizerState(), SgdConfig())
