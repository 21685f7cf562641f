import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

import quantrbp.channel
import quantrbp.errors
import quantrbp.quantizer


@pytest.fixture
def channel() -> quantrbp.channel.QuantizedAwgnChannel:
    quantizer = quantrbp.quantizer.RegularScalarQuantizer(
        boundaries=[-1.2, -0.4, 0.0, 0.4, 1.2]
    )
    return quantrbp.channel.QuantizedAwgnChannel(quantizer=quantizer, sigma2=1e-2)


def test_output_moments_should_match_quadrature(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    rng = np.random.default_rng(11)
    edges = channel.quantizer.edges
    for _ in range(200):
        y = int(rng.integers(1, channel.quantizer.num_levels + 1))
        nu = float(10.0 ** rng.uniform(-2.0, 0.5))
        lo, hi = edges[y - 1], edges[y]
        # Keep zhat within a few standard deviations of its cell.
        anchor = lo if math.isfinite(lo) else hi - 0.5
        zhat = float(anchor + rng.uniform(-2.0, 2.0) * math.sqrt(nu))
        dist = scipy.stats.norm(zhat, math.sqrt(nu))
        a, b = max(lo, zhat - 15 * dist.std()), min(hi, zhat + 15 * dist.std())
        prob = dist.cdf(hi) - dist.cdf(lo)
        mean = scipy.integrate.quad(
            lambda t: t * dist.pdf(t), a, b, epsabs=0.0, epsrel=1e-12
        )[0] / prob
        var = scipy.integrate.quad(
            lambda t: (t - mean) ** 2 * dist.pdf(t), a, b, epsabs=0.0, epsrel=1e-12
        )[0] / prob

        moments = channel.output_moments(y, zhat, nu)

        assert float(moments.mean) == pytest.approx(mean, rel=1e-7, abs=1e-12)
        assert float(moments.var) == pytest.approx(var, rel=1e-7)
        scores = channel.scores(y, zhat, nu)
        assert float(scores.d1) == pytest.approx((zhat - mean) / nu, rel=1e-6, abs=1e-9)
        assert float(scores.d2) == pytest.approx((1 - var / nu) / nu, rel=1e-6)


def test_scores_should_stay_finite_far_in_the_tails(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    nu = 0.01
    # Both outer cells lie 12 standard deviations away from zhat = 0.
    zhat = np.zeros(2)
    y = np.array([1, 6])

    scores = channel.scores(y, zhat, nu)

    assert np.all(np.isfinite(scores.d1))
    assert np.all(np.isfinite(scores.d2))
    assert np.all((scores.d2 >= 0) & (scores.d2 <= 1 / nu))
    assert not np.any(scores.saturated)


def test_scores_should_flag_saturated_cells(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    scores = channel.scores([1], [100.0], [1e-2])

    assert scores.saturated.tolist() == [True]
    assert np.isfinite(scores.d1).all()
    assert 0 <= float(scores.d2[0]) <= 100.0


def test_output_mean_should_approach_the_prior_mean_for_unbounded_cells() -> None:
    quantizer = quantrbp.quantizer.RegularScalarQuantizer(boundaries=[-50.0, 50.0])
    channel = quantrbp.channel.QuantizedAwgnChannel(quantizer=quantizer, sigma2=0.0)

    assert float(channel.output_mean(2, 0.3, 1.0)) == pytest.approx(0.3)
    assert float(channel.output_var(2, 0.3, 1.0)) == pytest.approx(1.0)
    assert float(channel.d2(2, 0.3, 1.0)) == pytest.approx(0.0, abs=1e-12)


def test_likelihood_should_integrate_to_one_over_the_cells(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    y = np.arange(1, channel.quantizer.num_levels + 1)

    total = channel.likelihood(y, 0.37).sum()

    assert total == pytest.approx(1.0, rel=1e-12)


def test_likelihood_should_reject_a_noiseless_channel() -> None:
    quantizer = quantrbp.quantizer.RegularScalarQuantizer(boundaries=[0.0])
    channel = quantrbp.channel.QuantizedAwgnChannel(quantizer=quantizer, sigma2=0.0)

    with pytest.raises(quantrbp.errors.InvalidVarianceError):
        channel.likelihood([1], [0.0])


@pytest.mark.parametrize("nu", [0.0, -1.0])
def test_output_moments_should_reject_non_positive_variance(
    channel: quantrbp.channel.QuantizedAwgnChannel, nu: float
) -> None:
    with pytest.raises(quantrbp.errors.InvalidVarianceError):
        channel.output_moments([1], [0.0], [nu])


def test_output_moments_should_reject_invalid_indices(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    with pytest.raises(quantrbp.errors.InvalidInputError):
        channel.output_moments([7], [0.0], [1.0])


def test_measure_should_be_deterministic_in_the_seed(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    z = np.linspace(-2.0, 2.0, 1000)

    first = channel.measure(z, 4)

    np.testing.assert_array_equal(first, channel.measure(z, 4))
    assert set(np.unique(first).tolist()) == set(range(1, 7))
    # The noise only moves values lying close to a boundary.
    assert np.count_nonzero(first != channel.quantizer.quantize(z)) < 200


def test_channel_should_reject_invalid_noise_variance() -> None:
    quantizer = quantrbp.quantizer.RegularScalarQuantizer(boundaries=[0.0])

    with pytest.raises(quantrbp.errors.InvalidVarianceError):
        quantrbp.channel.QuantizedAwgnChannel(quantizer=quantizer, sigma2=-1.0)


def _zhat_near_cell(rng: np.random.Generator, lo: float, hi: float, nu: float) -> float:
    anchor = lo if math.isfinite(lo) else hi - 0.5
    return float(anchor + rng.uniform(-2.0, 2.0) * math.sqrt(nu))


def test_output_mean_derivative_should_equal_the_scaled_variance(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    rng = np.random.default_rng(13)
    edges = channel.quantizer.edges
    for _ in range(200):
        y = int(rng.integers(1, channel.quantizer.num_levels + 1))
        nu = float(10.0 ** rng.uniform(-2.0, 0.5))
        zhat = _zhat_near_cell(rng, edges[y - 1], edges[y], nu)
        h = 1e-4 * math.sqrt(nu)

        slope = (
            channel.output_mean(y, zhat + h, nu) - channel.output_mean(y, zhat - h, nu)
        ) / (2 * h)

        expected = float(channel.output_var(y, zhat, nu)) / nu
        assert float(slope) == pytest.approx(expected, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("nu", [0.01, 0.1, 1.0])
def test_output_mean_should_increase_with_the_prediction(
    channel: quantrbp.channel.QuantizedAwgnChannel, nu: float
) -> None:
    edges = channel.quantizer.edges
    for y in range(1, channel.quantizer.num_levels + 1):
        lo, hi = edges[y - 1], edges[y]
        start = (lo if math.isfinite(lo) else hi - 1.0) - 3.0 * math.sqrt(nu)
        stop = (hi if math.isfinite(hi) else lo + 1.0) + 3.0 * math.sqrt(nu)
        zhat = np.linspace(start, stop, 200)

        means = channel.output_mean(np.full(zhat.shape, y), zhat, nu)

        assert np.all(np.diff(means) > 0)


def test_d2_should_stay_between_zero_and_the_inverse_variance(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    rng = np.random.default_rng(17)
    y = rng.integers(1, channel.quantizer.num_levels + 1, 5000)
    zhat = rng.normal(0.0, 5.0, 5000)
    nu = 10.0 ** rng.uniform(-4.0, 2.0, 5000)

    d2 = channel.d2(y, zhat, nu)

    assert np.all(np.isfinite(d2))
    assert np.all((d2 >= 0) & (d2 <= 1 / nu))


def test_output_moments_should_stay_inside_the_cell_far_in_the_tails(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    nu = 0.01
    # Every cell lies at least 12 standard deviations away from its zhat.
    y = np.array([1, 2, 5, 6, 3])
    zhat = np.array([0.0, 0.8, -0.8, 0.0, 1.6])
    edges = channel.quantizer.edges

    moments = channel.output_moments(y, zhat, nu)

    assert np.all(moments.mean >= edges[y - 1])
    assert np.all(moments.mean <= edges[y])
    assert np.all(np.isfinite(moments.var) & (moments.var >= 0))


def test_measure_should_hit_every_cell_with_its_probability(
    channel: quantrbp.channel.QuantizedAwgnChannel,
) -> None:
    samples = 200_000
    z = 0.15

    y = channel.measure(np.full(samples, z), 9)

    counts = np.bincount(y, minlength=channel.quantizer.num_levels + 1)[1:]
    probabilities = np.diff(
        scipy.stats.norm.cdf(channel.quantizer.edges, z, math.sqrt(channel.sigma2))
    )
    standard_errors = np.sqrt(probabilities * (1 - probabilities) / samples)
    deviations = np.abs(counts / samples - probabilities)
    assert np.all(deviations <= 4 * standard_errors + 1e-12)
