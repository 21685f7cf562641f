"""General helpers that can be used in any tests."""
import concurrent.futures
import json
import unittest.mock
from typing import Any, Callable, Generator, Tuple, TypeVar

import numpy as np
import pytest
import scipy.special

import quantrbp.channel
import quantrbp.prior
import quantrbp.quantizer
import quantrbp.rbp
import quantrbp.truncnorm

__all__ = ["decode_report", "lloyd_max", "tiny_instance"]

T = TypeVar("T")


def decode_report(text: str) -> Any:
    return json.loads(text)


def lloyd_max(
    num_levels: int, iterations: int = 2000
) -> Tuple[quantrbp.truncnorm.FloatArray, quantrbp.truncnorm.FloatArray]:
    """Boundaries and levels of the Lloyd-Max quantizer for N(0, 1)."""
    levels = np.linspace(-2.0, 2.0, num_levels)
    for _ in range(iterations):
        boundaries = 0.5 * (levels[:-1] + levels[1:])
        edges = np.concatenate(([-np.inf], boundaries, [np.inf]))
        pdf = np.exp(-0.5 * edges**2) / np.sqrt(2.0 * np.pi)
        prob = np.diff(scipy.special.ndtr(edges))
        levels = -np.diff(pdf) / prob
    return 0.5 * (levels[:-1] + levels[1:]), levels


def tiny_instance(
    m: int = 5, n: int = 8, seed: int = 3
) -> Tuple[
    quantrbp.rbp.MeasurementEnsemble,
    quantrbp.channel.QuantizedAwgnChannel,
    quantrbp.prior.GaussBernoulliPrior,
    quantrbp.truncnorm.FloatArray,
    quantrbp.quantizer.IndexArray,
]:
    """A small problem with a 4-level quantizer: ensemble, channel, prior, x and y."""
    prior = quantrbp.prior.GaussBernoulliPrior(rho=0.3)
    ensemble = quantrbp.rbp.generate_matrix(m, n, seed)
    quantizer = quantrbp.quantizer.design_uniform(4, np.sqrt(n / m * prior.tau_init))
    channel = quantrbp.channel.QuantizedAwgnChannel(quantizer=quantizer, sigma2=1e-2)
    x = prior.sample_signal(n, seed + 1)
    y = channel.measure(ensemble.measure(x), seed + 2)
    return ensemble, channel, prior, x, y


class _MockedExecutor(concurrent.futures.ThreadPoolExecutor):
    def submit(  # type: ignore[override]
        self, fn: Callable[..., T], *args: Any, **kwargs: Any
    ) -> "concurrent.futures.Future[T]":
        """Overridden to run the task right away, in the calling thread."""
        future: "concurrent.futures.Future[T]" = concurrent.futures.Future()
        try:
            future.set_result(fn(*args, **kwargs))
        except BaseException as e:
            future.set_exception(e)
        return future


@pytest.fixture(scope="session", autouse=True)
def mocked_executor() -> Generator[None, None, None]:
    with unittest.mock.patch(
        "quantrbp.harness.concurrent.futures.ThreadPoolExecutor",
        new=_MockedExecutor,
    ):
        yield


@pytest.fixture
def sparse_prior() -> quantrbp.prior.GaussBernoulliPrior:
    return quantrbp.prior.GaussBernoulliPrior(rho=0.1)
