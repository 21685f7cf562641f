"""
Moments of a Gaussian variable truncated to an interval.

Cell probabilities are always evaluated on the side of the interval that lies away from
the mean, with the scaled complementary error function, so an interval lying many
standard deviations out keeps full relative precision instead of being lost to
cancellation between two CDF values close to 1.
"""
import math
from typing import NamedTuple, Tuple

import numpy as np
import numpy.typing as npt
import scipy.special

__all__ = [
    "FloatArray",
    "LOG_PROB_FLOOR",
    "VARIANCE_FLOOR",
    "TruncatedMoments",
    "truncated_moments",
]

FloatArray = npt.NDArray[np.float64]

# Below this cell probability the moments are clamped instead of computed.
LOG_PROB_FLOOR = math.log(1e-300)

# Relative to the variance of the untruncated Gaussian.
VARIANCE_FLOOR = 1e-12

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SQRT2 = math.sqrt(2.0)
_LOG_HALF = math.log(0.5)


class TruncatedMoments(NamedTuple):
    prob: FloatArray
    log_prob: FloatArray
    mean: FloatArray
    var: FloatArray
    saturated: npt.NDArray[np.bool_]


def truncated_moments(
    lo: npt.ArrayLike, hi: npt.ArrayLike, loc: npt.ArrayLike, var: npt.ArrayLike
) -> TruncatedMoments:
    """
    Probability, mean and variance of ``N(loc, var)`` restricted to ``[lo, hi)``.

    All arguments broadcast against each other. ``lo`` may be ``-inf`` and ``hi`` may be
    ``+inf``; ``var`` must be strictly positive (callers validate this).

    When the probability of the interval underflows below 1e-300 the entry is flagged in
    ``saturated``, its mean is clamped to the interval endpoint nearest to ``loc`` and
    its variance to ``VARIANCE_FLOOR * var``.

    Returns:
        A ``TruncatedMoments`` tuple of arrays with the broadcast shape.
    """
    loc_arr = np.asarray(loc, dtype=np.float64)
    var_arr = np.asarray(var, dtype=np.float64)
    sd = np.sqrt(var_arr)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        a = (np.asarray(lo, dtype=np.float64) - loc_arr) / sd
        b = (np.asarray(hi, dtype=np.float64) - loc_arr) / sd
        prob, log_prob, mean, std_var, saturated = _standard_moments(a, b)
    return TruncatedMoments(
        prob=prob,
        log_prob=log_prob,
        mean=loc_arr + sd * mean,
        var=var_arr * std_var,
        saturated=saturated,
    )


def _times_pdf(x: FloatArray, pdf: FloatArray) -> FloatArray:
    # x * pdf(x) is 0 at the infinite endpoints.
    result: FloatArray = np.where(np.isfinite(x), x * pdf, 0.0)
    return result


def _standard_moments(
    a: FloatArray, b: FloatArray
) -> Tuple[FloatArray, FloatArray, FloatArray, FloatArray, npt.NDArray[np.bool_]]:
    a, b = np.broadcast_arrays(a, b)

    # Mirror intervals lying entirely above the mean, so that afterwards every interval
    # either contains the mean or lies entirely below it.
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    tail = hi < 0

    pdf_lo = _INV_SQRT_2PI * np.exp(-0.5 * lo * lo)
    pdf_hi = _INV_SQRT_2PI * np.exp(-0.5 * hi * hi)
    prob_c = scipy.special.ndtr(hi) - scipy.special.ndtr(lo)
    mean_c = (pdf_lo - pdf_hi) / prob_c
    second_c = 1.0 + (_times_pdf(lo, pdf_lo) - _times_pdf(hi, pdf_hi)) / prob_c

    # Below the mean: with u = -hi and w = -lo, every density and probability carries
    # the common factor exp(-u²/2), which is divided out analytically.
    u = -hi
    w = -lo
    ratio = np.exp(-0.5 * (w - u) * (w + u))
    denom = scipy.special.erfcx(u / _SQRT2) - ratio * scipy.special.erfcx(w / _SQRT2)
    scaled_pdf = _SQRT_2_OVER_PI / denom
    mean_t = (ratio - 1.0) * scaled_pdf
    second_t = 1.0 + (u - np.where(ratio > 0, w * ratio, 0.0)) * scaled_pdf
    log_prob_t = _LOG_HALF - 0.5 * u * u + np.log(denom)

    log_prob = np.where(tail, log_prob_t, np.log(prob_c))
    prob = np.where(tail, np.exp(log_prob_t), prob_c)
    mean = np.where(tail, mean_t, mean_c)
    var = np.where(tail, second_t - mean_t * mean_t, second_c - mean_c * mean_c)

    saturated = ~(log_prob >= LOG_PROB_FLOOR)
    mean = np.where(saturated, hi, mean)
    var = np.where(saturated, VARIANCE_FLOOR, var)

    # Rounding can push the moments marginally outside what the interval allows.
    mean = np.clip(mean, lo, hi)
    half_width = 0.5 * (hi - lo)
    var = np.clip(
        var, VARIANCE_FLOOR, np.maximum(np.minimum(1.0, half_width**2), VARIANCE_FLOOR)
    )
    mean = np.where(flip, -mean, mean)
    return prob, log_prob, mean, var, saturated
