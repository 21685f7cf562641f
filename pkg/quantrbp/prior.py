import math
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import scipy.special

import quantrbp.errors
import quantrbp.truncnorm

__all__ = ["SeedLike", "Posterior", "GaussBernoulliPrior"]

SeedLike = Union[int, np.random.SeedSequence]


class Posterior(NamedTuple):
    mean: quantrbp.truncnorm.FloatArray
    var: quantrbp.truncnorm.FloatArray


class GaussBernoulliPrior:
    """
    Sparse signal prior: each component is 0 with probability ``1 - rho`` and otherwise
    drawn from ``N(0, nonzero_variance)``.

    The nonzero variance defaults to ``1 / rho``, which gives the prior unit variance.

    Examples:
        >>> prior = GaussBernoulliPrior(rho=0.1)
        >>> prior.tau_init
        1.0
    """

    def __init__(self, *, rho: float, nonzero_variance: Optional[float] = None) -> None:
        """
        Args:
            rho: Sparsity ratio, the probability that a component is nonzero, in (0, 1].
            nonzero_variance: Variance of the nonzero component, ``1 / rho`` if omitted.
        """
        if not 0 < rho <= 1:
            raise quantrbp.errors.InvalidParameterError(
                f"rho must lie in (0, 1], got {rho}"
            )
        if nonzero_variance is None:
            nonzero_variance = 1.0 / rho
        if not (nonzero_variance > 0 and math.isfinite(nonzero_variance)):
            raise quantrbp.errors.InvalidParameterError(
                f"nonzero_variance must be positive and finite, got {nonzero_variance}"
            )
        self._rho = float(rho)
        self._nonzero_variance = float(nonzero_variance)
        # log(rho / (1 - rho)), +inf for a non-sparse prior.
        self._log_odds = math.inf if rho == 1 else math.log(rho) - math.log1p(-rho)

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(rho={self._rho!r}, "
            f"nonzero_variance={self._nonzero_variance!r})"
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GaussBernoulliPrior):
            return NotImplemented
        return (self._rho, self._nonzero_variance) == (
            other._rho,
            other._nonzero_variance,
        )

    def __hash__(self) -> int:
        return hash((self._rho, self._nonzero_variance))

    @property
    def rho(self) -> float:
        return self._rho

    @property
    def nonzero_variance(self) -> float:
        return self._nonzero_variance

    @property
    def tau_init(self) -> float:
        """Prior variance; the prior mean is always 0."""
        return self._rho * self._nonzero_variance

    @property
    def second_moment(self) -> float:
        """``E{x²}`` of a nonzero component, the bound on every posterior variance."""
        return self._nonzero_variance

    def sample_signal(
        self, n: int, seed: SeedLike
    ) -> quantrbp.truncnorm.FloatArray:
        """Draw ``n`` i.i.d. components, deterministically in ``seed``."""
        if n < 1:
            raise quantrbp.errors.InvalidParameterError(f"n must be positive, got {n}")
        rng = np.random.default_rng(seed)
        support = rng.random(n) < self._rho
        values = rng.normal(0.0, math.sqrt(self._nonzero_variance), size=n)
        signal: quantrbp.truncnorm.FloatArray = np.where(support, values, 0.0)
        return signal

    def posterior(self, q: npt.ArrayLike, nu: npt.ArrayLike) -> Posterior:
        """
        Mean and variance of ``x`` given ``q = x + v`` with ``v ~ N(0, nu)``.

        The posterior is a mixture of the point mass at zero and a Gaussian. Its weight
        is evaluated as a logistic function of the log-odds, so large ``|q|`` never
        overflows.

        Raises:
            InvalidVarianceError: If any ``nu`` is not strictly positive.
        """
        q_arr = np.asarray(q, dtype=np.float64)
        nu_arr = np.asarray(nu, dtype=np.float64)
        if not np.all(nu_arr > 0):
            raise quantrbp.errors.InvalidVarianceError("posterior requires nu > 0")

        s = self._nonzero_variance
        total = s + nu_arr
        gain = s / total
        mean_nonzero = gain * q_arr
        var_nonzero = gain * nu_arr
        # Log-likelihood ratio of the Gaussian component against the point mass.
        logit = (
            self._log_odds
            + 0.5 * np.log(nu_arr / total)
            + 0.5 * q_arr * q_arr * gain / nu_arr
        )
        weight = scipy.special.expit(logit)
        mean = weight * mean_nonzero
        var = weight * var_nonzero + weight * (1.0 - weight) * mean_nonzero**2
        return Posterior(mean=mean, var=var)

    def input_mean(
        self, q: npt.ArrayLike, nu: npt.ArrayLike
    ) -> quantrbp.truncnorm.FloatArray:
        """``F_in(q, nu) = E{x | x + v = q}``."""
        return self.posterior(q, nu).mean

    def input_var(
        self, q: npt.ArrayLike, nu: npt.ArrayLike
    ) -> quantrbp.truncnorm.FloatArray:
        """``E_in(q, nu) = var{x | x + v = q}``."""
        return self.posterior(q, nu).var

    def transition(self, nu: float) -> Tuple[float, float]:
        """
        Where and how sharply the posterior weight of the nonzero component switches.

        Returns:
            ``(q_star, width)``: the ``|q|`` at which the weight crosses 1/2 (0 if it
            never does) and the distance over which the log-odds change by one there.
        """
        s = self._nonzero_variance
        curvature = 0.5 * s / (nu * (s + nu))
        if not curvature > 0:
            # nu so large that the weight no longer depends on q.
            return 0.0, math.inf
        offset = self._log_odds + 0.5 * math.log(nu / (s + nu))
        q_star = math.sqrt(max(-offset, 0.0) / curvature)
        width = 1.0 / max(2.0 * curvature * q_star, math.sqrt(curvature))
        return q_star, width
