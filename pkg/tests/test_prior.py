import math
from typing import Tuple

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

import quantrbp.errors
import quantrbp.prior


def _posterior_by_quadrature(
    prior: quantrbp.prior.GaussBernoulliPrior, q: float, nu: float
) -> Tuple[float, float]:
    s = prior.nonzero_variance
    rho = prior.rho
    center = s * q / (s + nu)
    width = math.sqrt(s * nu / (s + nu))
    lo, hi = center - 12.0 * width, center + 12.0 * width

    def slab(x: float, power: int, shift: float = 0.0) -> float:
        density = scipy.stats.norm.pdf(x, 0.0, math.sqrt(s))
        likelihood = scipy.stats.norm.pdf(q, x, math.sqrt(nu))
        return float((x - shift) ** power * density * likelihood)

    def integral(power: int, shift: float = 0.0) -> float:
        return float(
            scipy.integrate.quad(
                slab, lo, hi, args=(power, shift), epsabs=0.0, epsrel=1e-12
            )[0]
        )

    spike = (1.0 - rho) * scipy.stats.norm.pdf(q, 0.0, math.sqrt(nu))
    evidence = spike + rho * integral(0)
    mean = rho * integral(1) / evidence
    spread = integral(2, mean)
    var = (spike * mean**2 + rho * spread) / evidence
    return mean, var


def test_prior_should_default_to_unit_variance(
    sparse_prior: quantrbp.prior.GaussBernoulliPrior,
) -> None:
    assert sparse_prior.tau_init == pytest.approx(1.0)
    assert sparse_prior.nonzero_variance == pytest.approx(10.0)
    assert sparse_prior.second_moment == pytest.approx(10.0)


@pytest.mark.parametrize("rho", [0.0, -0.1, 1.5, math.nan])
def test_prior_should_reject_invalid_sparsity(rho: float) -> None:
    with pytest.raises(quantrbp.errors.InvalidParameterError):
        quantrbp.prior.GaussBernoulliPrior(rho=rho)


def test_posterior_should_match_quadrature_on_random_points(
    sparse_prior: quantrbp.prior.GaussBernoulliPrior,
) -> None:
    rng = np.random.default_rng(7)
    for _ in range(100):
        q = float(rng.uniform(-5.0, 5.0))
        nu = float(10.0 ** rng.uniform(-2.0, 1.0))
        mean, var = _posterior_by_quadrature(sparse_prior, q, nu)

        posterior = sparse_prior.posterior(q, nu)

        assert float(posterior.mean) == pytest.approx(mean, rel=1e-8, abs=1e-12)
        assert float(posterior.var) == pytest.approx(var, rel=1e-8, abs=1e-12)


def test_posterior_should_be_gaussian_for_a_dense_prior() -> None:
    prior = quantrbp.prior.GaussBernoulliPrior(rho=1.0, nonzero_variance=2.0)

    posterior = prior.posterior([-1.0, 0.0, 3.0], 0.5)

    np.testing.assert_allclose(posterior.mean, [-0.8, 0.0, 2.4])
    np.testing.assert_allclose(posterior.var, [0.4, 0.4, 0.4])


def test_posterior_should_not_overflow_for_large_inputs(
    sparse_prior: quantrbp.prior.GaussBernoulliPrior,
) -> None:
    posterior = sparse_prior.posterior([1e6, -1e6], 1e-3)

    gain = 10.0 / (10.0 + 1e-3)
    np.testing.assert_allclose(posterior.mean, [gain * 1e6, -gain * 1e6])
    np.testing.assert_allclose(posterior.var, gain * 1e-3, rtol=1e-6)


def test_posterior_should_shrink_small_inputs_to_zero(
    sparse_prior: quantrbp.prior.GaussBernoulliPrior,
) -> None:
    posterior = sparse_prior.posterior(0.0, 1e-4)

    assert float(posterior.mean) == 0.0
    assert float(posterior.var) < 1e-4


@pytest.mark.parametrize("nu", [0.0, -1.0])
def test_posterior_should_reject_non_positive_variance(
    sparse_prior: quantrbp.prior.GaussBernoulliPrior, nu: float
) -> None:
    with pytest.raises(quantrbp.errors.InvalidVarianceError):
        sparse_prior.posterior(1.0, nu)


def test_transition_should_locate_the_even_odds_point(
    sparse_prior: quantrbp.prior.GaussBernoulliPrior,
) -> None:
    nu = 0.05
    q_star, width = sparse_prior.transition(nu)
    gain = sparse_prior.nonzero_variance / (sparse_prior.nonzero_variance + nu)

    assert q_star > 0 and width > 0
    assert float(sparse_prior.input_mean(q_star, nu)) == pytest.approx(
        0.5 * gain * q_star, rel=1e-9
    )


def test_sample_signal_should_be_deterministic_in_the_seed(
    sparse_prior: quantrbp.prior.GaussBernoulliPrior,
) -> None:
    first = sparse_prior.sample_signal(10_000, 5)
    second = sparse_prior.sample_signal(10_000, 5)
    other = sparse_prior.sample_signal(10_000, 6)

    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, other)
    assert np.count_nonzero(first) / first.size == pytest.approx(0.1, abs=0.01)
    assert float(np.mean(first**2)) == pytest.approx(1.0, rel=0.2)


def test_input_mean_derivative_should_equal_the_scaled_variance() -> None:
    rng = np.random.default_rng(31)
    for _ in range(200):
        prior = quantrbp.prior.GaussBernoulliPrior(rho=float(rng.uniform(0.05, 0.5)))
        nu = float(10.0 ** rng.uniform(-3.0, 0.0))
        q = float(rng.normal(0.0, math.sqrt(prior.tau_init + nu)))
        h = 1e-4 * math.sqrt(nu)

        slope = (prior.input_mean(q + h, nu) - prior.input_mean(q - h, nu)) / (2 * h)

        expected = float(prior.input_var(q, nu)) / nu
        assert float(slope) == pytest.approx(expected, rel=1e-5, abs=1e-7)


def test_input_mean_should_be_odd_in_its_input(
    sparse_prior: quantrbp.prior.GaussBernoulliPrior,
) -> None:
    q = np.random.default_rng(4).normal(0.0, 3.0, 1000)
    nu = np.random.default_rng(5).uniform(1e-3, 2.0, 1000)

    np.testing.assert_array_equal(
        sparse_prior.input_mean(-q, nu), -sparse_prior.input_mean(q, nu)
    )
    np.testing.assert_array_equal(
        sparse_prior.input_var(-q, nu), sparse_prior.input_var(q, nu)
    )
    assert float(sparse_prior.input_mean(0.0, 0.3)) == 0.0
