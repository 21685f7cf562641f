import math
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

import quantrbp.errors
import quantrbp.prior
import quantrbp.quantizer
import quantrbp.truncnorm

__all__ = ["OutputMoments", "Scores", "QuantizedAwgnChannel"]


class OutputMoments(NamedTuple):
    mean: quantrbp.truncnorm.FloatArray
    var: quantrbp.truncnorm.FloatArray
    saturated: npt.NDArray[np.bool_]


class Scores(NamedTuple):
    d1: quantrbp.truncnorm.FloatArray
    d2: quantrbp.truncnorm.FloatArray
    saturated: npt.NDArray[np.bool_]


class QuantizedAwgnChannel:
    """
    Measurement channel ``y = Q(z + eta)`` with ``eta ~ N(0, sigma2)``.

    The output functions take the total variance ``nu_total`` of the Gaussian belief
    about the pre-quantization value explicitly, so callers add ``sigma2`` themselves.
    All methods broadcast over array arguments.

    Examples:
        >>> q = quantrbp.quantizer.RegularScalarQuantizer(boundaries=[0.0])
        >>> channel = QuantizedAwgnChannel(quantizer=q, sigma2=0.0)
        >>> channel.measure([-3.0, 4.0], seed=0).tolist()
        [1, 2]
    """

    def __init__(
        self, *, quantizer: quantrbp.quantizer.RegularScalarQuantizer, sigma2: float
    ) -> None:
        if not (sigma2 >= 0 and math.isfinite(sigma2)):
            raise quantrbp.errors.InvalidVarianceError(
                f"sigma2 must be non-negative and finite, got {sigma2}"
            )
        self._quantizer = quantizer
        self._sigma2 = float(sigma2)

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(quantizer={self._quantizer!r}, "
            f"sigma2={self._sigma2!r})"
        )

    @property
    def quantizer(self) -> quantrbp.quantizer.RegularScalarQuantizer:
        return self._quantizer

    @property
    def sigma2(self) -> float:
        return self._sigma2

    def measure(
        self, z: npt.ArrayLike, seed: quantrbp.prior.SeedLike
    ) -> quantrbp.quantizer.IndexArray:
        """Add channel noise to ``z`` and quantize; deterministic in ``seed``."""
        z_arr = np.asarray(z, dtype=np.float64)
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(z_arr.shape) * math.sqrt(self._sigma2)
        return self._quantizer.quantize(z_arr + noise)

    def likelihood(
        self, y: npt.ArrayLike, z: npt.ArrayLike
    ) -> quantrbp.truncnorm.FloatArray:
        """
        ``p(y | z)``, the probability that ``z + eta`` falls into cell ``y``.

        Raises:
            InvalidVarianceError: If the channel is noiseless, making ``p(y | z)`` a
                point mass in ``z``.
        """
        if self._sigma2 == 0:
            raise quantrbp.errors.InvalidVarianceError(
                "the likelihood of a noiseless channel is not a density"
            )
        moments = quantrbp.truncnorm.truncated_moments(
            self._quantizer.lower_edges(y),
            self._quantizer.upper_edges(y),
            z,
            self._sigma2,
        )
        return moments.prob

    def output_moments(
        self, y: npt.ArrayLike, zhat: npt.ArrayLike, nu_total: npt.ArrayLike
    ) -> OutputMoments:
        """
        Mean and variance of ``N(zhat, nu_total)`` truncated to cell ``y``.

        Entries whose cell probability underflows are flagged in ``saturated``; their
        mean is the cell endpoint nearest to ``zhat`` and their variance is floored at
        ``1e-12 * nu_total``.

        Raises:
            InvalidVarianceError: If any ``nu_total`` is not strictly positive.
        """
        nu_arr = np.asarray(nu_total, dtype=np.float64)
        if not np.all(nu_arr > 0):
            raise quantrbp.errors.InvalidVarianceError(
                "output moments require nu_total > 0"
            )
        moments = quantrbp.truncnorm.truncated_moments(
            self._quantizer.lower_edges(y),
            self._quantizer.upper_edges(y),
            zhat,
            nu_arr,
        )
        return OutputMoments(
            mean=moments.mean, var=moments.var, saturated=moments.saturated
        )

    def output_mean(
        self, y: npt.ArrayLike, zhat: npt.ArrayLike, nu_total: npt.ArrayLike
    ) -> quantrbp.truncnorm.FloatArray:
        """``F_out``."""
        return self.output_moments(y, zhat, nu_total).mean

    def output_var(
        self, y: npt.ArrayLike, zhat: npt.ArrayLike, nu_total: npt.ArrayLike
    ) -> quantrbp.truncnorm.FloatArray:
        """``E_out``."""
        return self.output_moments(y, zhat, nu_total).var

    def scores(
        self, y: npt.ArrayLike, zhat: npt.ArrayLike, nu_total: npt.ArrayLike
    ) -> Scores:
        """
        ``D1 = (zhat - F_out) / nu`` and ``D2 = (1 - E_out / nu) / nu`` in one pass.

        ``D2`` always lies in ``[0, 1 / nu_total]``.
        """
        zhat_arr = np.asarray(zhat, dtype=np.float64)
        nu_arr = np.asarray(nu_total, dtype=np.float64)
        moments = self.output_moments(y, zhat_arr, nu_arr)
        d1 = (zhat_arr - moments.mean) / nu_arr
        d2 = np.clip((1.0 - moments.var / nu_arr) / nu_arr, 0.0, 1.0 / nu_arr)
        return Scores(d1=d1, d2=d2, saturated=moments.saturated)

    def d1(
        self, y: npt.ArrayLike, zhat: npt.ArrayLike, nu_total: npt.ArrayLike
    ) -> quantrbp.truncnorm.FloatArray:
        return self.scores(y, zhat, nu_total).d1

    def d2(
        self, y: npt.ArrayLike, zhat: npt.ArrayLike, nu_total: npt.ArrayLike
    ) -> quantrbp.truncnorm.FloatArray:
        return self.scores(y, zhat, nu_total).d2
