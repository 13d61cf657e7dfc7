import math

import numpy as np
import pytest

from gainimpute import gan_baselines as gb
from gainimpute.errors import DataError
from gainimpute.tensors import PerformanceTensor

SMALL = dict(conv_channels=8, latent_dim=8, learning_rate=1e-3)


def block_tensor(seed=5, shape=(16, 6, 4), p_missing=0.3):
    rng = np.random.default_rng(seed)
    u, n, m = shape
    au = rng.integers(0, 2, u)
    bq = rng.integers(0, 2, n)
    ci = np.sort(rng.integers(0, 2, m))
    au[0] = bq[0] = ci[-1] = 1
    truth = np.einsum("u,j,i->uji", au, bq, ci).astype(float)
    hidden = rng.random(shape) < p_missing
    t = PerformanceTensor(correct=truth.astype(bool), observed=~hidden)
    return t, truth, hidden


class TestGaussianBlur:
    def test_sigma_zero_identity(self):
        x = np.random.default_rng(0).normal(size=(1, 4, 5))
        assert np.array_equal(gb.gaussian_blur(x, 0.0), x)

    def test_constant_preserved(self):
        x = np.full((1, 5, 5), 0.37)
        assert np.allclose(gb.gaussian_blur(x, 1.7), 0.37)

    def test_three_tap_row(self):
        row = np.zeros((1, 1, 3))
        row[0, 0, 1] = 1.0
        w = np.exp(-np.array([-1.0, 0.0, 1.0]) ** 2 / 2.0)
        w /= w.sum()
        out = gb.gaussian_blur(row, 1.0)
        assert np.allclose(out[0, 0], [w[0], w[1], w[2]], atol=1e-12)
        assert out[0, 0] == pytest.approx([0.2741, 0.4519, 0.2741], abs=1e-4)

    def test_impulse_spread_matches_separable_kernel(self):
        img = np.zeros((1, 3, 3))
        img[0, 1, 1] = 1.0
        w = np.exp(-np.array([-1.0, 0.0, 1.0]) ** 2 / 2.0)
        w /= w.sum()
        assert np.allclose(gb.gaussian_blur(img, 1.0)[0], np.outer(w, w), atol=1e-12)

    def test_linearity(self):
        x = np.random.default_rng(1).normal(size=(2, 5, 4))
        assert np.allclose(gb.gaussian_blur(2.5 * x, 0.8), 2.5 * gb.gaussian_blur(x, 0.8))

    def test_adjoint_identity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 6, 5))
        y = rng.normal(size=(1, 6, 5))
        lhs = float((gb.gaussian_blur(x, 1.2) * y).sum())
        rhs = float((x * gb.gaussian_blur_adjoint(y, 1.2)).sum())
        assert abs(lhs - rhs) < 1e-12

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            gb.gaussian_blur(np.zeros((1, 2, 2)), -0.1)


class TestLosses:
    def test_lsgan_values(self):
        assert gb.lsgan_d_loss(1.0, 0.0) == 0.0
        assert gb.lsgan_d_loss(0.0, 1.0) == 1.0
        assert gb.lsgan_g_loss(1.0) == 0.0
        assert gb.lsgan_g_loss(0.0) == 0.5

    def test_infogan_without_mi_reduces_to_gan(self):
        codes = np.array([0.3, -0.5])
        q_out = np.array([0.1, 0.2])
        for d_fake in (0.0, 0.4, 0.9):
            assert gb.infogan_g_loss(d_fake, codes, q_out, 0.0) == gb.lsgan_g_loss(d_fake)

    def test_infogan_mi_term(self):
        codes = np.array([1.0, 0.0])
        q_out = np.array([0.0, 0.0])
        loss = gb.infogan_g_loss(0.5, codes, q_out, mi_weight=2.0)
        assert loss == pytest.approx(gb.lsgan_g_loss(0.5) + 2.0 * 0.5)


class TestGanTrainImpute:
    def test_fully_observed_merge_identity(self):
        rng = np.random.default_rng(3)
        correct = rng.random((4, 4, 3)) < 0.5
        t = PerformanceTensor(correct=correct, observed=np.ones_like(correct))
        cfg = gb.GanConfig(epochs=1, seed=1, latent_steps=3, **SMALL)
        dense = gb.gan_impute(gb.gan_train(t, cfg), t)
        assert np.array_equal(dense.values, correct.astype(float))

    def test_seeded_determinism(self):
        t, _, _ = block_tensor(seed=7, shape=(6, 5, 3))
        cfg = gb.GanConfig(epochs=2, seed=9, latent_steps=10, **SMALL)
        d1 = gb.gan_impute(gb.gan_train(t, cfg), t)
        d2 = gb.gan_impute(gb.gan_train(t, cfg), t)
        assert np.array_equal(d1.values, d2.values)

    def test_beats_constant_half_on_block_tensor(self):
        t, truth, hidden = block_tensor(seed=5)
        cfg = gb.GanConfig(epochs=30, seed=11, latent_steps=150, **SMALL)
        dense = gb.gan_impute(gb.gan_train(t, cfg), t)
        rmse = math.sqrt(((dense.values[hidden] - truth[hidden]) ** 2).mean())
        assert rmse < 0.5

    def test_all_missing_rejected(self):
        t = PerformanceTensor(
            correct=np.zeros((2, 2, 2), bool), observed=np.zeros((2, 2, 2), bool)
        )
        with pytest.raises(DataError):
            gb.gan_train(t, gb.GanConfig(epochs=1))


class TestInfoGan:
    def test_merge_identity_fully_observed(self):
        rng = np.random.default_rng(4)
        correct = rng.random((4, 4, 3)) < 0.5
        t = PerformanceTensor(correct=correct, observed=np.ones_like(correct))
        cfg = gb.GanConfig(epochs=1, seed=2, latent_steps=3, **SMALL)
        dense = gb.infogan_impute(gb.infogan_train(t, cfg), t)
        assert np.array_equal(dense.values, correct.astype(float))

    def test_code_reconstruction_improves(self):
        t, _, _ = block_tensor(seed=5)
        init = gb.infogan_train(t, gb.GanConfig(epochs=0, seed=11, **SMALL))
        trained = gb.infogan_train(
            t, gb.GanConfig(epochs=25, seed=11, mi_weight=2.0, **SMALL)
        )
        err_init = gb.code_reconstruction_error(init, 30, seed=99)
        err_trained = gb.code_reconstruction_error(trained, 30, seed=99)
        assert err_trained < err_init


class TestAmbientGan:
    def test_zero_sigma_matches_plain_gan(self):
        t, _, _ = block_tensor(seed=6, shape=(6, 5, 3))
        cfg = gb.GanConfig(epochs=2, seed=13, sigma_start=0.0, sigma_end=0.0, **SMALL)
        plain = gb.gan_train(t, cfg)
        ambient = gb.ambientgan_train(t, cfg)
        assert all(
            np.array_equal(plain.generator.params[k], ambient.generator.params[k])
            for k in plain.generator.params
        )

    def test_merge_identity_fully_observed(self):
        rng = np.random.default_rng(5)
        correct = rng.random((4, 4, 3)) < 0.5
        t = PerformanceTensor(correct=correct, observed=np.ones_like(correct))
        cfg = gb.GanConfig(epochs=2, seed=3, latent_steps=3, **SMALL)
        dense = gb.ambientgan_impute(gb.ambientgan_train(t, cfg), t)
        assert np.array_equal(dense.values, correct.astype(float))

    def test_sigma_schedule_linear_decay(self):
        cfg = gb.GanConfig(epochs=5, sigma_start=2.0, sigma_end=0.0)
        sigmas = [gb._blur_sigma(cfg, e) for e in range(5)]
        assert sigmas == pytest.approx([2.0, 1.5, 1.0, 0.5, 0.0])

    def test_increasing_schedule_rejected(self):
        with pytest.raises(ValueError):
            gb.GanConfig(sigma_start=0.5, sigma_end=1.0)


class TestSharedLaws:
    @pytest.mark.parametrize(
        "train,impute",
        [
            (gb.gan_train, gb.gan_impute),
            (gb.infogan_train, gb.infogan_impute),
            (gb.ambientgan_train, gb.ambientgan_impute),
        ],
    )
    def test_passthrough_and_bounds(self, train, impute):
        t, _, _ = block_tensor(seed=8, shape=(5, 4, 3))
        cfg = gb.GanConfig(epochs=1, seed=4, latent_steps=5, **SMALL)
        dense = impute(train(t, cfg), t)
        assert np.array_equal(
            dense.values[t.observed], t.correct[t.observed].astype(float)
        )
        assert dense.values.min() >= 0.0 and dense.values.max() <= 1.0
