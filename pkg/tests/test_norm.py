import numpy as np
import pytest

from bwrfn import autodiff as ad
from bwrfn import norm
from bwrfn.autodiff import Parameter, Tensor, gradcheck
from bwrfn.errors import ConfigError, ShapeError
from helpers import loop_mean, loop_var

RNG = np.random.default_rng(112)


def rand_x(shape=(2, 3, 4, 5)):
    return Tensor(RNG.normal(size=shape))


def make_vw(f, mu=None, log_sigma=None):
    mu = np.zeros(2 * f) if mu is None else np.asarray(mu, dtype=float)
    ls = np.zeros(2 * f) if log_sigma is None else np.asarray(log_sigma, dtype=float)
    return norm.VariationalWeights(
        mu=Parameter(mu, "mu", decay=False),
        log_sigma=Parameter(ls, "log_sigma", decay=False),
    )


class TestIfn:
    def test_constant_over_ct_maps_to_zero(self):
        x = np.zeros((2, 3, 4, 5))
        for n in range(2):
            for f in range(4):
                x[n, :, f, :] = RNG.normal()
        out = norm.ifn(Tensor(x), 1e-5)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_two_point_standardization(self):
        x = np.array([0.0, 2.0]).reshape(1, 1, 1, 2)
        out = norm.ifn(Tensor(x), 1e-12)
        np.testing.assert_allclose(out.data.ravel(), [-1.0, 1.0], atol=1e-5)

    def test_statistics_vs_loop_oracle(self):
        eps = 1e-5
        x = RNG.normal(size=(2, 3, 4, 5))
        out = norm.ifn(Tensor(x), eps).data
        v_in = loop_var(x, (1, 3))
        mean_out = loop_mean(out, (1, 3))
        var_out = loop_var(out, (1, 3))
        np.testing.assert_allclose(mean_out, 0.0, atol=1e-9)
        np.testing.assert_allclose(var_out, v_in / (v_in + eps), atol=1e-9)

    def test_translation_invariance_per_nf(self):
        x = RNG.normal(size=(2, 3, 4, 5))
        shift = RNG.normal(size=(2, 1, 4, 1))
        a = norm.ifn(Tensor(x), 1e-5).data
        b = norm.ifn(Tensor(x + shift), 1e-5).data
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_rank_check(self):
        with pytest.raises(ShapeError):
            norm.ifn(Tensor(np.zeros((2, 3))))


class TestLn:
    def test_constant_tensor_zeros(self):
        out = norm.ln(Tensor(np.full((2, 3, 4, 5), 1.7)), 1e-5)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_two_point_standardization(self):
        x = np.array([1.0, 3.0]).reshape(1, 1, 1, 2)
        out = norm.ln(Tensor(x), 1e-12)
        np.testing.assert_allclose(out.data.ravel(), [-1.0, 1.0], atol=1e-5)

    def test_statistics_vs_loop_oracle(self):
        eps = 1e-5
        x = RNG.normal(size=(2, 3, 4, 5))
        out = norm.ln(Tensor(x), eps).data
        v_in = loop_var(x, (1, 2, 3))
        np.testing.assert_allclose(loop_mean(out, (1, 2, 3)), 0.0, atol=1e-9)
        np.testing.assert_allclose(loop_var(out, (1, 2, 3)), v_in / (v_in + eps), atol=1e-9)

    def test_translation_invariance_per_n(self):
        x = RNG.normal(size=(2, 3, 4, 5))
        shift = RNG.normal(size=(2, 1, 1, 1))
        np.testing.assert_allclose(
            norm.ln(Tensor(x), 1e-5).data,
            norm.ln(Tensor(x + shift), 1e-5).data,
            atol=1e-9,
        )


class TestRfn:
    def test_lambda_one_is_ln_exact(self):
        x = rand_x()
        cfg = norm.RelaxationConfig(lam=1.0)
        np.testing.assert_array_equal(
            norm.rfn(x, cfg).data, norm.ln(x, cfg.epsilon).data
        )

    def test_lambda_zero_is_ifn_exact(self):
        x = rand_x()
        cfg = norm.RelaxationConfig(lam=0.0)
        np.testing.assert_array_equal(
            norm.rfn(x, cfg).data, norm.ifn(x, cfg.epsilon).data
        )

    def test_midpoint_is_elementwise_average(self):
        x = rand_x()
        cfg = norm.RelaxationConfig(lam=0.5)
        expected = 0.5 * norm.ln(x, cfg.epsilon).data + 0.5 * norm.ifn(x, cfg.epsilon).data
        np.testing.assert_allclose(norm.rfn(x, cfg).data, expected, atol=1e-12)

    def test_lambda_out_of_range(self):
        with pytest.raises(ConfigError):
            norm.RelaxationConfig(lam=1.5)


class TestWrfn:
    def make_dw(self, f, w1, w2):
        return norm.DeterministicWeights(
            w1=Parameter(np.full(f, float(w1)), "w1"),
            w2=Parameter(np.full(f, float(w2)), "w2"),
        )

    def test_zero_weights_half_rfn(self):
        x = rand_x()
        cfg = norm.RelaxationConfig()
        out = norm.wrfn(x, cfg, self.make_dw(4, 0.0, 0.0))
        np.testing.assert_allclose(out.data, 0.5 * norm.rfn(x, cfg).data, atol=1e-12)

    def test_saturated_weights_match_rfn(self):
        x = rand_x()
        cfg = norm.RelaxationConfig()
        out = norm.wrfn(x, cfg, self.make_dw(4, 10.0, 10.0))
        ref = norm.rfn(x, cfg).data
        np.testing.assert_allclose(out.data, ref, rtol=1e-3, atol=1e-3)

    def test_saturation_limits_at_20(self):
        x = rand_x()
        cfg = norm.RelaxationConfig()
        ref = norm.rfn(x, cfg).data
        hi = norm.wrfn(x, cfg, self.make_dw(4, 20.0, 20.0)).data
        lo = norm.wrfn(x, cfg, self.make_dw(4, -20.0, -20.0)).data
        assert np.all(np.abs(hi - ref) <= 1e-6 * np.abs(ref) + 1e-12)
        assert np.all(np.abs(lo) <= 1e-6 * np.abs(ref) + 1e-12)

    def test_random_weights_vs_loop_oracle(self):
        x = RNG.normal(size=(2, 3, 4, 5))
        w1 = RNG.normal(size=4)
        w2 = RNG.normal(size=4)
        cfg = norm.RelaxationConfig()
        dw = norm.DeterministicWeights(
            w1=Parameter(w1, "w1"), w2=Parameter(w2, "w2")
        )
        out = norm.wrfn(Tensor(x), cfg, dw).data
        ln_x = norm.ln(Tensor(x), cfg.epsilon).data
        ifn_x = norm.ifn(Tensor(x), cfg.epsilon).data
        s = lambda v: 1.0 / (1.0 + np.exp(-v))
        expected = np.zeros_like(x)
        for n in range(2):
            for c in range(3):
                for f in range(4):
                    for t in range(5):
                        expected[n, c, f, t] = (
                            cfg.lam * ln_x[n, c, f, t] * s(w1[f])
                            + (1 - cfg.lam) * ifn_x[n, c, f, t] * s(w2[f])
                        )
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_weight_length_mismatch(self):
        x = rand_x()
        with pytest.raises(ShapeError):
            norm.wrfn(x, norm.RelaxationConfig(), self.make_dw(3, 0, 0))


class TestSampleWeights:
    def test_mean_mode_exact(self):
        vw = make_vw(4, mu=RNG.normal(size=8))
        out = norm.sample_weights(vw, norm.NoiseMode.mean())
        np.testing.assert_array_equal(out.data, vw.mu.data)

    def test_fixed_unit_case(self):
        vw = make_vw(2)  # mu=0, log_sigma=0 -> sigma=1
        out = norm.sample_weights(vw, norm.NoiseMode.fixed(np.ones(4)))
        np.testing.assert_array_equal(out.data, np.ones(4))

    def test_fixed_wrong_length(self):
        vw = make_vw(2)
        with pytest.raises(ShapeError):
            norm.sample_weights(vw, norm.NoiseMode.fixed(np.ones(3)))

    def test_monte_carlo_statistics(self):
        n = 10**5
        mu, sigma = 0.3, 0.2
        vw = make_vw(1, mu=[mu, mu], log_sigma=np.log([sigma, sigma]))
        rng = np.random.default_rng(5)
        draws = np.array(
            [norm.sample_weights(vw, norm.NoiseMode.sample(rng)).data for _ in range(n // 2)]
        ).ravel()
        se = sigma / np.sqrt(len(draws))
        assert abs(draws.mean() - mu) < 3 * se
        assert abs(draws.std() - sigma) / sigma < 0.02


class TestBwrfn:
    def test_mean_mode_zero_mu_half_rfn(self):
        x = rand_x()
        cfg = norm.RelaxationConfig()
        vw = make_vw(4)
        out = norm.bwrfn(x, cfg, vw, norm.NoiseMode.mean())
        np.testing.assert_allclose(out.data, 0.5 * norm.rfn(x, cfg).data, atol=1e-15)

    def test_zero_noise_reduces_to_wrfn(self):
        x = rand_x()
        cfg = norm.RelaxationConfig()
        mu = RNG.normal(size=8)
        vw = make_vw(4, mu=mu, log_sigma=RNG.normal(size=8))
        out = norm.bwrfn(x, cfg, vw, norm.NoiseMode.fixed(np.zeros(8)))
        dw = norm.DeterministicWeights(
            w1=Parameter(mu[:4], "w1"), w2=Parameter(mu[4:], "w2")
        )
        np.testing.assert_allclose(out.data, norm.wrfn(x, cfg, dw).data, atol=1e-14)

    def test_gradcheck_fixed_noise(self):
        cfg = norm.RelaxationConfig()
        x = Parameter(RNG.normal(size=(2, 2, 3, 4)), "x")
        vw = make_vw(3, mu=RNG.normal(size=6), log_sigma=RNG.normal(-2, 0.3, size=6))
        noise = RNG.standard_normal(6)
        proj = RNG.normal(size=(2, 2, 3, 4))
        mode = norm.NoiseMode.fixed(noise)
        report = gradcheck(
            lambda: ad.reduce_sum(ad.mul(norm.bwrfn(x, cfg, vw, mode), proj)),
            [x, vw.mu, vw.log_sigma],
        )
        assert report.passed(1e-4), report.lines(1e-4)

    def test_mean_mode_deterministic_bitwise(self):
        x = rand_x()
        cfg = norm.RelaxationConfig()
        vw = make_vw(4, mu=RNG.normal(size=8))
        a = norm.bwrfn(x, cfg, vw, norm.NoiseMode.mean()).data
        b = norm.bwrfn(x, cfg, vw, norm.NoiseMode.mean()).data
        np.testing.assert_array_equal(a, b)


class TestShapePreservation:
    @pytest.mark.parametrize("shape", [(1, 1, 1, 2), (2, 3, 4, 5), (3, 1, 8, 2)])
    def test_all_layers_preserve_shape(self, shape):
        x = rand_x(shape)
        f = shape[2]
        cfg = norm.RelaxationConfig()
        dw = norm.DeterministicWeights(
            w1=Parameter(np.zeros(f), "w1"), w2=Parameter(np.zeros(f), "w2")
        )
        vw = make_vw(f)
        outs = [
            norm.ifn(x, cfg.epsilon),
            norm.ln(x, cfg.epsilon),
            norm.rfn(x, cfg),
            norm.wrfn(x, cfg, dw),
            norm.bwrfn(x, cfg, vw, norm.NoiseMode.mean()),
        ]
        for out in outs:
            assert out.data.shape == shape


class TestKl:
    def test_standard_posterior_is_zero(self):
        vw = make_vw(4)  # mu=0, sigma=1
        assert abs(norm.kl_to_standard_normal(vw).item()) < 1e-12

    def test_single_coordinate_hand_value(self):
        # KL(N(1,1) || N(0,1)) = 0.5, evaluated per coordinate
        vw = norm.VariationalWeights(
            mu=Parameter(np.array([1.0, 0.0]), "mu", decay=False),
            log_sigma=Parameter(np.zeros(2), "ls", decay=False),
        )
        assert norm.kl_to_standard_normal(vw).item() == pytest.approx(0.5, abs=1e-12)

    def test_nonnegative_random(self):
        for _ in range(20):
            vw = make_vw(3, mu=RNG.normal(size=6), log_sigma=RNG.normal(size=6))
            assert norm.kl_to_standard_normal(vw).item() >= 0.0

    def test_matches_monte_carlo_estimate(self):
        rng = np.random.default_rng(17)
        mu = rng.normal(size=4)
        sigma = np.exp(rng.normal(-0.5, 0.4, size=4))
        vw = make_vw(2, mu=mu, log_sigma=np.log(sigma))
        closed = norm.kl_to_standard_normal(vw).item()
        n = 10**5
        w = mu + sigma * rng.standard_normal((n, 4))
        log_q = (-0.5 * ((w - mu) / sigma) ** 2 - np.log(sigma)).sum(axis=1)
        log_p = (-0.5 * w**2).sum(axis=1)
        diffs = log_q - log_p
        est = diffs.mean()
        se = diffs.std(ddof=1) / np.sqrt(n)
        assert abs(closed - est) < 3 * se

    def test_gradcheck(self):
        vw = make_vw(3, mu=RNG.normal(size=6), log_sigma=RNG.normal(size=6))
        report = gradcheck(lambda: norm.kl_to_standard_normal(vw), vw.params())
        assert report.passed(1e-6)
