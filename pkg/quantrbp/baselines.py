"""Linear MMSE reconstruction from dequantized measurements."""
import logging
import math
from typing import Optional

import numpy as np
import numpy.typing as npt
import scipy.linalg

import quantrbp.channel
import quantrbp.errors
import quantrbp.prior
import quantrbp.quantizer
import quantrbp.rbp
import quantrbp.truncnorm

__all__ = ["dequantize", "LmmseModel", "lmmse_reconstruct"]

logger = logging.getLogger(__name__)


def dequantize(
    quantizer: quantrbp.quantizer.RegularScalarQuantizer,
    y: npt.ArrayLike,
    input_std: Optional[float] = None,
) -> quantrbp.truncnorm.FloatArray:
    """
    Replace every cell index by a representative value.

    Args:
        quantizer: The quantizer that produced ``y``.
        y: 1-based cell indices.
        input_std: When given, the cell centroids under ``N(0, input_std²)`` are used,
            otherwise the quantizer's own levels.
    """
    if input_std is not None:
        table = quantizer.levels_for_gaussian(input_std)
    elif quantizer.levels is not None:
        table = quantizer.levels
    else:
        raise quantrbp.errors.InvalidParameterError(
            "dequantizing needs either levels on the quantizer or an input_std"
        )
    values: quantrbp.truncnorm.FloatArray = table[quantizer.check_indices(y) - 1]
    return values


class LmmseModel:
    """
    The linear MMSE estimator ``x̂ = tau A^T (tau A A^T + noise I)^-1 ŷ``.

    The quantization error of the dequantized measurements ``ŷ`` is treated as extra
    additive noise, independent of everything else, whose variance is the centroid
    quantizer's MSE on the Gaussian measurement.
    """

    def __init__(
        self,
        *,
        ensemble: quantrbp.rbp.MeasurementEnsemble,
        tau_init: float,
        noise_variance: float,
    ) -> None:
        """
        Args:
            ensemble: The measurement matrix.
            tau_init: Prior variance of every signal component.
            noise_variance: Effective noise variance per measurement, strictly positive.
        """
        if not (noise_variance > 0 and math.isfinite(noise_variance)):
            raise quantrbp.errors.InvalidVarianceError(
                f"the effective noise variance must be positive, got {noise_variance}"
            )
        if not tau_init > 0:
            raise quantrbp.errors.InvalidVarianceError(
                f"tau_init must be positive, got {tau_init}"
            )
        self._ensemble = ensemble
        self._tau_init = float(tau_init)
        self._noise_variance = float(noise_variance)

    @classmethod
    def for_channel(
        cls,
        *,
        ensemble: quantrbp.rbp.MeasurementEnsemble,
        prior: quantrbp.prior.GaussBernoulliPrior,
        channel: quantrbp.channel.QuantizedAwgnChannel,
        input_std: float,
    ) -> "LmmseModel":
        """Model whose noise is the AWGN plus the centroid quantizer's Gaussian MSE."""
        centroid = channel.quantizer.with_levels(None)
        quantization_mse = quantrbp.quantizer.gaussian_quantizer_mse(
            centroid, input_std
        )
        logger.debug(
            "LMMSE noise: %.6g AWGN + %.6g quantization",
            channel.sigma2,
            quantization_mse,
        )
        return cls(
            ensemble=ensemble,
            tau_init=prior.tau_init,
            noise_variance=channel.sigma2 + quantization_mse,
        )

    @property
    def noise_variance(self) -> float:
        return self._noise_variance

    @property
    def tau_init(self) -> float:
        return self._tau_init

    def reconstruct(
        self, y_dequantized: npt.ArrayLike
    ) -> quantrbp.truncnorm.FloatArray:
        """
        Raises:
            ReconstructionError: If the linear solve fails.
        """
        a = self._ensemble.matrix
        y_arr = np.asarray(y_dequantized, dtype=np.float64)
        if y_arr.shape != (self._ensemble.m,):
            raise quantrbp.errors.InvalidInputError(
                f"expected {self._ensemble.m} measurements, got shape {y_arr.shape}"
            )
        gram = self._tau_init * (a @ a.T)
        gram[np.diag_indices_from(gram)] += self._noise_variance
        try:
            weights = scipy.linalg.solve(gram, y_arr, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError) as e:
            raise quantrbp.errors.ReconstructionError(
                f"the LMMSE system could not be solved: {e}",
                diagnostics={"noise_variance": self._noise_variance},
            ) from e
        if not np.all(np.isfinite(weights)):
            raise quantrbp.errors.ReconstructionError(
                "the LMMSE solve produced non-finite values"
            )
        xhat: quantrbp.truncnorm.FloatArray = self._tau_init * (a.T @ weights)
        return xhat

    def predicted_mse(self) -> float:
        """
        Per-component MSE of the estimator if the noise model were exact.

        ``(1 / n) * (sum_k tau * noise / (tau * l_k + noise) + tau * (n - m))`` with
        ``l_k`` the eigenvalues of ``A A^T``.
        """
        a = self._ensemble.matrix
        eigenvalues = np.clip(scipy.linalg.eigvalsh(a @ a.T), 0.0, None)
        tau = self._tau_init
        noise = self._noise_variance
        total = np.sum(tau * noise / (tau * eigenvalues + noise))
        total += tau * (self._ensemble.n - self._ensemble.m)
        return float(total / self._ensemble.n)


def lmmse_reconstruct(
    model: LmmseModel, y_dequantized: npt.ArrayLike
) -> quantrbp.truncnorm.FloatArray:
    return model.reconstruct(y_dequantized)
