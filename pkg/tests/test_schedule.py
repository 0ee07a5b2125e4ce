import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framecast.errors import ConfigurationError
from framecast.schedule import NoiseSchedule, forward_step, make_linear_schedule, marginal


class TestMakeLinearSchedule:
    def test_single_step(self):
        s = make_linear_schedule(1, 0.1, 0.1)
        np.testing.assert_allclose(s.alpha, [0.9])
        np.testing.assert_allclose(s.alpha_bar, [0.9])

    def test_three_step_hand_values(self):
        # beta_t = 0.1 + 0.2 * (t-1)/2 -> [0.1, 0.2, 0.3]
        s = make_linear_schedule(3, 0.1, 0.3)
        np.testing.assert_allclose(s.alpha, [0.9, 0.8, 0.7], atol=1e-15)
        np.testing.assert_allclose(s.alpha_bar, [0.9, 0.72, 0.504], atol=1e-15)

    def test_alpha_bar_non_increasing(self):
        s = make_linear_schedule(200)
        assert np.all(np.diff(s.alpha_bar) <= 0.0)

    def test_parameter_validation(self):
        with pytest.raises(ConfigurationError):
            make_linear_schedule(0)
        with pytest.raises(ConfigurationError):
            make_linear_schedule(10, 0.2, 0.1)
        with pytest.raises(ConfigurationError):
            make_linear_schedule(10, 0.0, 0.1)
        with pytest.raises(ConfigurationError):
            make_linear_schedule(10, 0.1, 1.0)

    def test_inconsistent_alpha_bar_rejected(self):
        with pytest.raises(ConfigurationError):
            NoiseSchedule(t_steps=2, alpha=np.array([0.9, 0.8]), alpha_bar=np.array([0.9, 0.7]))

    def test_step_accessors_one_based(self):
        s = make_linear_schedule(3, 0.1, 0.3)
        assert s.alpha_at(1) == pytest.approx(0.9)
        assert s.beta_at(3) == pytest.approx(0.3)
        with pytest.raises(IndexError):
            s.alpha_at(0)
        with pytest.raises(IndexError):
            s.alpha_bar_at(4)


class TestForwardStep:
    def test_noise_free_step_is_identity(self):
        s = NoiseSchedule(t_steps=1, alpha=np.array([1.0]))
        x = np.linspace(-1, 1, 7)
        n = np.ones_like(x)
        np.testing.assert_array_equal(forward_step(x, 1, s, n), x)

    def test_zero_signal_scales_noise_by_half(self):
        s = NoiseSchedule(t_steps=1, alpha=np.array([0.75]))
        n = np.random.default_rng(0).standard_normal(16)
        np.testing.assert_allclose(forward_step(np.zeros(16), 1, s, n), 0.5 * n, atol=1e-15)

    def test_monte_carlo_moments(self):
        # Empirical mean -> sqrt(a)*x, variance -> 1-a, within 3 standard errors.
        s = make_linear_schedule(3, 0.1, 0.3)
        rng = np.random.default_rng(42)
        n_trials = 100_000
        x_prev = 0.7
        out = forward_step(x_prev, 2, s, rng.standard_normal(n_trials))
        mean_se = math.sqrt(0.2 / n_trials)
        var_se = 0.2 * math.sqrt(2.0 / (n_trials - 1))
        assert abs(out.mean() - math.sqrt(0.8) * x_prev) < 3 * mean_se
        assert abs(out.var() - 0.2) < 3 * var_se


class TestMarginal:
    def test_one_step_equals_forward_step(self):
        s = make_linear_schedule(3, 0.1, 0.3)
        x0 = np.linspace(-0.5, 0.5, 5)
        n = np.random.default_rng(1).standard_normal(5)
        np.testing.assert_array_equal(marginal(x0, 1, s, n), forward_step(x0, 1, s, n))

    def test_deep_marginal_decorrelates_from_signal(self):
        # alpha_bar ~ 0.7^30 ~ 2e-5: output is essentially the injected noise.
        s = NoiseSchedule(t_steps=30, alpha=np.full(30, 0.7))
        rng = np.random.default_rng(7)
        x0 = rng.standard_normal(20_000)
        out = marginal(x0, 30, s, rng.standard_normal(20_000))
        corr = np.corrcoef(out, x0)[0, 1]
        assert abs(corr) < 0.05

    def test_chain_matches_marginal_distribution(self):
        # Brute-force chain simulation as the oracle for the closed form.
        s = make_linear_schedule(3, 0.1, 0.3)
        rng = np.random.default_rng(11)
        n_trials = 100_000
        x0 = -0.4
        x = np.full(n_trials, x0)
        for t in (1, 2, 3):
            x = forward_step(x, t, s, rng.standard_normal(n_trials))
        direct = marginal(x0, 3, s, rng.standard_normal(n_trials))
        ab = s.alpha_bar_at(3)
        var = 1.0 - ab
        mean_se = math.sqrt(var / n_trials)
        var_se = var * math.sqrt(2.0 / (n_trials - 1))
        assert abs(x.mean() - direct.mean()) < 3 * math.sqrt(2) * mean_se
        assert abs(x.var() - direct.var()) < 3 * math.sqrt(2) * var_se
        assert abs(x.mean() - math.sqrt(ab) * x0) < 3 * mean_se
        assert abs(x.var() - var) < 3 * var_se


class TestProperties:
    @given(
        scale=st.floats(-3, 3, allow_nan=False),
        x=st.floats(-2, 2, allow_nan=False),
        noise=st.floats(-2, 2, allow_nan=False),
        t=st.integers(1, 3),
    )
    @settings(max_examples=50, deadline=None)
    def test_linearity(self, scale, x, noise, t):
        s = make_linear_schedule(3, 0.1, 0.3)
        for op in (forward_step, marginal):
            left = op(scale * x, t, s, scale * noise)
            right = scale * op(x, t, s, noise)
            assert left == pytest.approx(right, abs=1e-12)

    def test_joint_factorizes_into_per_step_kernels(self):
        # Independent route: the chain (x_1..x_T | x_0) is jointly Gaussian
        # with mean sqrt(alpha_bar_t) x_0 and covariance B B^T where
        # B[t, s] = sqrt(1 - alpha_s) * prod_{r>s}^{t} sqrt(alpha_r).
        # Its multivariate log-density must equal the sum of per-step
        # Gaussian log-densities along a simulated chain.
        s = make_linear_schedule(4, 0.1, 0.4)
        rng = np.random.default_rng(3)
        x0 = 0.3
        xs, x = [], x0
        for t in range(1, 5):
            x = forward_step(x, t, s, rng.standard_normal())
            xs.append(x)
        xs = np.array(xs)

        per_step = 0.0
        prev = x0
        for t in range(1, 5):
            a = s.alpha_at(t)
            var = 1.0 - a
            resid = xs[t - 1] - math.sqrt(a) * prev
            per_step += -0.5 * (resid**2 / var + math.log(2 * math.pi * var))
            prev = xs[t - 1]

        mean = np.array([math.sqrt(s.alpha_bar_at(t)) * x0 for t in range(1, 5)])
        b = np.zeros((4, 4))
        for t in range(1, 5):
            for step in range(1, t + 1):
                tail = np.prod([math.sqrt(s.alpha_at(r)) for r in range(step + 1, t + 1)])
                b[t - 1, step - 1] = math.sqrt(1.0 - s.alpha_at(step)) * tail
        cov = b @ b.T
        resid = xs - mean
        joint = -0.5 * (
            resid @ np.linalg.solve(cov, resid)
            + math.log((2 * math.pi) ** 4 * np.linalg.det(cov))
        )
        assert joint == pytest.approx(per_step, abs=1e-8)
