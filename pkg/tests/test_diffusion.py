"""Forward/reverse process math against independently computed oracles.

The oracle arrays (betas, cumulative products, posterior coefficients) are
rebuilt inside the tests from first principles in float64 so they share no
code with the implementation.
"""

import math

import numpy as np
import pytest
import torch

from artifact.diffusion import (DiffusionLossSample, forward_sample,
                                forward_sample_batched, loss_target,
                                make_loss_sample, make_schedule, noise_mse,
                                posterior_params, reverse_step)
from artifact.images import Domain, ImageTensor


def oracle_arrays(T=250, b0=1e-4, b1=0.02):
    """Length-(T+1) beta/alpha/alpha_bar arrays built with plain numpy."""
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(b0, b1, T)
    alpha = 1.0 - beta
    abar = np.cumprod(alpha)
    return beta, alpha, abar


class TestSchedule:
    def test_telescoping_within_1e12(self):
        s = make_schedule(250)
        for t in range(1, 251):
            assert abs(s.alpha_bar[t] - s.alpha_bar[t - 1] * s.alpha[t]) < 1e-12

    def test_matches_oracle_arrays(self):
        s = make_schedule(250)
        beta, alpha, abar = oracle_arrays()
        assert np.allclose(s.beta, beta, atol=0, rtol=1e-14)
        assert np.allclose(s.alpha_bar, abar, atol=0, rtol=1e-12)

    def test_alpha_bar_strictly_decreasing_and_positive(self):
        s = make_schedule(250)
        diffs = np.diff(s.alpha_bar)
        assert (diffs < 0).all()
        assert s.alpha_bar[250] > 0

    def test_one_minus_alpha_bar_consistent(self):
        s = make_schedule(250)
        _, _, abar = oracle_arrays()
        for t in range(1, 251):
            assert s.one_minus_alpha_bar[t] == pytest.approx(
                1.0 - abar[t], rel=1e-12)

    def test_posterior_var_t1_is_exactly_zero(self):
        assert make_schedule(250).posterior_var[1] == 0.0

    def test_posterior_var_oracle(self):
        s = make_schedule(250)
        beta, alpha, abar = oracle_arrays()
        for t in range(2, 251):
            expected = beta[t] * (1 - abar[t - 1]) / (1 - abar[t])
            assert s.posterior_var[t] == pytest.approx(expected, rel=1e-10)

    def test_constant_kind(self):
        s = make_schedule(10, kind="constant", beta_start=0.01, beta_end=0.01)
        assert np.allclose(s.beta[1:], 0.01)

    @pytest.mark.parametrize("kwargs", [
        {"T": 0}, {"T": 5, "kind": "cosine"},
        {"T": 5, "beta_start": 0.0}, {"T": 5, "beta_end": 1.0},
        {"T": 5, "beta_start": 0.5, "beta_end": 0.1},
    ])
    def test_invalid_schedules_rejected(self, kwargs):
        with pytest.raises(ValueError):
            make_schedule(**kwargs)


class TestForwardSample:
    def test_monte_carlo_marginal_mean(self):
        # 1e4 scalar draws at t=100; sample mean within 3 sigma of the
        # closed-form mean, sample var within chi^2 3-sigma spread.
        s = make_schedule(250)
        _, _, abar = oracle_arrays()
        t, x0val, n = 100, 0.7, 10_000
        x0 = torch.full((n, 1, 1, 1), x0val)
        eps = torch.randn(n, 1, 1, 1, generator=torch.Generator().manual_seed(7))
        xt = forward_sample(x0, t, eps, s).reshape(-1).numpy()

        mean_true = math.sqrt(abar[t]) * x0val
        var_true = 1.0 - abar[t]
        assert abs(xt.mean() - mean_true) < 3 * math.sqrt(var_true / n)
        var_sigma = var_true * math.sqrt(2.0 / (n - 1))
        assert abs(xt.var(ddof=1) - var_true) < 3 * var_sigma

    def test_t0_identity(self):
        s = make_schedule(10)
        x0 = torch.rand(1, 3, 4, 4)
        out = forward_sample(x0, 0, torch.randn(1, 3, 4, 4), s)
        assert out is x0

    def test_scalar_formula(self):
        s = make_schedule(50)
        _, _, abar = oracle_arrays(50)
        x0 = torch.rand(2, 3, 4, 4, generator=torch.Generator().manual_seed(1))
        eps = torch.randn(2, 3, 4, 4, generator=torch.Generator().manual_seed(2))
        for t in (1, 17, 50):
            got = forward_sample(x0, t, eps, s)
            want = math.sqrt(abar[t]) * x0 + math.sqrt(1 - abar[t]) * eps
            assert torch.allclose(got, want, atol=1e-6)

    def test_batched_matches_scalar(self):
        s = make_schedule(50)
        gen = torch.Generator().manual_seed(3)
        x0 = torch.rand(4, 3, 8, 8, generator=gen)
        eps = torch.randn(4, 3, 8, 8, generator=gen)
        t = torch.tensor([1, 10, 25, 50])
        got = forward_sample_batched(x0, t, eps, s)
        for i in range(4):
            want = forward_sample(x0[i:i + 1], int(t[i]), eps[i:i + 1], s)
            assert torch.equal(got[i:i + 1], want)

    def test_wraps_image_tensor(self):
        s = make_schedule(10)
        img = ImageTensor(torch.rand(1, 3, 4, 4) * 2 - 1, Domain.SIGNED11)
        out = forward_sample(img, 5, torch.randn(1, 3, 4, 4), s)
        assert isinstance(out, ImageTensor)
        assert out.domain is Domain.SIGNED11

    def test_errors(self):
        s = make_schedule(10)
        x0 = torch.rand(1, 3, 4, 4)
        with pytest.raises(ValueError):
            forward_sample(x0, 11, torch.randn(1, 3, 4, 4), s)
        with pytest.raises(ValueError):
            forward_sample(x0, 5, torch.randn(1, 3, 2, 2), s)


class TestPosterior:
    def test_t1_mean_is_x0_exactly(self):
        s = make_schedule(250)
        x0 = torch.rand(1, 3, 8, 8)
        xt = torch.randn(1, 3, 8, 8)
        mean, var = posterior_params(x0, xt, 1, s)
        assert torch.equal(mean, x0)
        assert var == 0.0

    def test_against_gaussian_product_oracle(self):
        # Bayes: q(x_{t-1}|x_t,x_0) comes from multiplying the step kernel
        # N(x_t; sqrt(a_t) x_{t-1}, b_t) with the marginal
        # N(x_{t-1}; sqrt(abar_{t-1}) x0, 1-abar_{t-1}); precision algebra
        # done here directly on scalars.
        s = make_schedule(250)
        beta, alpha, abar = oracle_arrays()
        rng = np.random.default_rng(11)
        for t in (2, 3, 50, 131, 250):
            x0v, xtv = rng.normal(size=2)
            prec = alpha[t] / beta[t] + 1.0 / (1.0 - abar[t - 1])
            nat = (math.sqrt(alpha[t]) / beta[t]) * xtv \
                + (math.sqrt(abar[t - 1]) / (1.0 - abar[t - 1])) * x0v
            mean_o = nat / prec
            var_o = 1.0 / prec

            x0 = torch.full((1, 1, 1, 1), x0v, dtype=torch.float64)
            xt = torch.full((1, 1, 1, 1), xtv, dtype=torch.float64)
            mean, var = posterior_params(x0, xt, t, s)
            assert float(mean) == pytest.approx(mean_o, rel=1e-10)
            assert var == pytest.approx(var_o, rel=1e-10)

    def test_rejects_t0(self):
        s = make_schedule(10)
        x = torch.rand(1, 1, 2, 2)
        with pytest.raises(ValueError):
            posterior_params(x, x, 0, s)


class TestLoss:
    def test_mse_scalar_loop_oracle(self):
        gen = torch.Generator().manual_seed(5)
        eps = torch.randn(2, 3, 4, 4, generator=gen)
        pred = torch.randn(2, 3, 4, 4, generator=gen)
        total = 0.0
        for a, b in zip(eps.reshape(-1).tolist(), pred.reshape(-1).tolist()):
            total += (a - b) ** 2
        want = total / eps.numel()
        assert float(noise_mse(eps, pred)) == pytest.approx(want, rel=1e-6)

    def test_loss_target_uses_sample_noise(self):
        s = make_schedule(10)
        img = ImageTensor(torch.rand(1, 3, 4, 4) * 2 - 1, Domain.SIGNED11)
        eps = torch.randn(1, 3, 4, 4)
        sample = make_loss_sample(img, 4, eps, s)
        assert isinstance(sample, DiffusionLossSample)
        assert float(loss_target(sample, eps)) == 0.0

    def test_loss_keeps_autograd(self):
        eps = torch.randn(1, 1, 2, 2)
        pred = torch.zeros(1, 1, 2, 2, requires_grad=True)
        loss = noise_mse(eps, pred)
        assert loss.dim() == 0
        loss.backward()
        assert pred.grad is not None


class TestReverseStep:
    def test_t1_round_trip_below_1e6(self):
        s = make_schedule(250)
        gen = torch.Generator().manual_seed(9)
        x0 = torch.rand(1, 3, 8, 8, generator=gen) * 2 - 1
        eps = torch.randn(1, 3, 8, 8, generator=gen)
        x1 = forward_sample(x0, 1, eps, s)
        back = reverse_step(x1, eps, 1, None, s)
        assert float((back - x0).abs().max()) < 1e-6

    def test_mean_formula_oracle(self):
        s = make_schedule(100)
        beta, alpha, abar = oracle_arrays(100)
        gen = torch.Generator().manual_seed(13)
        xt = torch.randn(1, 1, 4, 4, generator=gen)
        eps = torch.randn(1, 1, 4, 4, generator=gen)
        z = torch.randn(1, 1, 4, 4, generator=gen)
        t = 40
        got = reverse_step(xt, eps, t, z, s)
        mean = (xt - beta[t] / math.sqrt(1 - abar[t]) * eps) / math.sqrt(alpha[t])
        sigma = math.sqrt(beta[t] * (1 - abar[t - 1]) / (1 - abar[t]))
        assert torch.allclose(got, mean + sigma * z, atol=1e-7)

    def test_z_required_above_t1(self):
        s = make_schedule(10)
        x = torch.randn(1, 1, 2, 2)
        with pytest.raises(ValueError):
            reverse_step(x, x, 5, None, s)

    def test_t_out_of_range(self):
        s = make_schedule(10)
        x = torch.randn(1, 1, 2, 2)
        with pytest.raises(ValueError):
            reverse_step(x, x, 0, x, s)
        with pytest.raises(ValueError):
            reverse_step(x, x, 11, x, s)
