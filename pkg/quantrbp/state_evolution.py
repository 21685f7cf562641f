"""
State evolution: the scalar recursion that predicts the per-iteration MSE of relaxed BP.

``nu_bar[t + 1] = ein_bar(eout_bar(beta * nu_bar[t]))``, started at the prior variance.
Both expectations are one-dimensional integrals against a Gaussian, evaluated with the
composite rules of ``quantrbp.quadrature`` refined around the places where the
integrands change quickly.
"""
import csv
import dataclasses
import logging
import math
import os
from typing import List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

import quantrbp.errors
import quantrbp.prior
import quantrbp.quadrature
import quantrbp.quantizer
import quantrbp.truncnorm

__all__ = [
    "EOUT_GUARD",
    "QUADRATURE_TOLERANCE",
    "SeConfig",
    "SeTrace",
    "ein_bar",
    "eout_bar",
    "se_recursion",
    "to_db",
]

logger = logging.getLogger(__name__)

# Returned by eout_bar when the measurements carry no information at all.
EOUT_GUARD = 1e300

# Largest relative disagreement the order-escalation check accepts.
QUADRATURE_TOLERANCE = 1e-8

# Relative increase of the trace that counts as a non-monotone step.
_MONOTONE_SLACK = 1e-9

# Elements of the (node x cell) matrix evaluated at once.
_CHUNK_ELEMENTS = 2**18


def to_db(value: float) -> float:
    return 10.0 * math.log10(value)


@dataclasses.dataclass(frozen=True)
class SeConfig:
    """
    Everything the recursion depends on.

    Args:
        beta: Measurement ratio ``n / m``.
        sigma2: Variance of the Gaussian noise added before quantization.
        prior: The signal prior; its variance is the starting point of the trace.
        quantizer: Only its boundaries matter, the levels are ignored.
        t_max: Maximum number of steps.
        fp_tol: The trace stops once a step changes it by less than ``fp_tol`` relative.
        order: Gauss-Legendre order of every quadrature panel.
    """

    beta: float
    sigma2: float
    prior: quantrbp.prior.GaussBernoulliPrior
    quantizer: quantrbp.quantizer.RegularScalarQuantizer
    t_max: int = 100
    fp_tol: float = 1e-8
    order: int = quantrbp.quadrature.DEFAULT_ORDER

    def __post_init__(self) -> None:
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise quantrbp.errors.InvalidParameterError(
                f"beta must be positive, got {self.beta}"
            )
        if not (self.sigma2 >= 0 and math.isfinite(self.sigma2)):
            raise quantrbp.errors.InvalidVarianceError(
                f"sigma2 must be non-negative, got {self.sigma2}"
            )
        if self.t_max < 1:
            raise quantrbp.errors.InvalidParameterError(
                f"t_max must be positive, got {self.t_max}"
            )
        if not self.fp_tol > 0:
            raise quantrbp.errors.InvalidParameterError(
                f"fp_tol must be positive, got {self.fp_tol}"
            )
        if self.order < 2:
            raise quantrbp.errors.InvalidParameterError(
                f"order must be at least 2, got {self.order}"
            )

    def with_quantizer(
        self, quantizer: quantrbp.quantizer.RegularScalarQuantizer
    ) -> "SeConfig":
        return dataclasses.replace(self, quantizer=quantizer)


@dataclasses.dataclass(frozen=True)
class SeTrace:
    """
    The sequence ``nu_bar[0], nu_bar[1], ...`` of predicted MSEs.

    ``nonmonotone_steps`` counts steps that increased the trace beyond numerical slack,
    ``guard_hits`` the steps where ``eout_bar`` returned its overflow guard.
    """

    values: Tuple[float, ...]
    converged: bool
    nonmonotone_steps: int = 0
    guard_hits: int = 0

    @property
    def fixed_point(self) -> float:
        return self.values[-1]

    @property
    def fixed_point_db(self) -> float:
        return to_db(self.fixed_point)

    @property
    def mse_db(self) -> List[float]:
        return [to_db(value) for value in self.values]

    def write_csv(self, file: Union[str, "os.PathLike[str]", TextIO]) -> None:
        """Write the columns ``t, nu_bar, nu_bar_dB`` to a path or an open text file."""
        if isinstance(file, (str, os.PathLike)):
            with open(file, "w", newline="") as f:
                self._write_rows(f)
        else:
            self._write_rows(file)

    def _write_rows(self, f: TextIO) -> None:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "nu_bar", "nu_bar_dB"])
        for t, (value, value_db) in enumerate(zip(self.values, self.mse_db)):
            writer.writerow([t, repr(value), repr(value_db)])


def ein_bar(
    prior: quantrbp.prior.GaussBernoulliPrior,
    nu: float,
    *,
    order: int = quantrbp.quadrature.DEFAULT_ORDER,
    check_quadrature: bool = False,
) -> float:
    """
    ``E{E_in(q, nu)}`` over ``q = x + v``, ``x`` from the prior and ``v ~ N(0, nu)``.

    ``q`` is a mixture of two zero-mean Gaussians with variances ``nu`` and
    ``nonzero_variance + nu``. Each component is integrated separately, with short
    panels around zero and around the ``|q|`` where the posterior switches between them.

    Args:
        prior: The signal prior.
        nu: Variance of the pseudo-observation noise.
        order: Gauss-Legendre order per panel.
        check_quadrature: Also evaluate with twice the order and raise
            ``QuadratureError`` when the two disagree beyond ``QUADRATURE_TOLERANCE``.
    """
    if not (nu > 0 and math.isfinite(nu)):
        raise quantrbp.errors.InvalidVarianceError(f"nu must be positive, got {nu}")
    value = _ein_bar(prior, nu, order)
    if check_quadrature:
        _check_agreement("ein_bar", value, _ein_bar(prior, nu, 2 * order), nu)
    return value


def eout_bar(
    config: SeConfig,
    nu: float,
    *,
    check_quadrature: bool = False,
) -> float:
    """
    ``1 / E{D2(y, zhat, nu + sigma2)}`` with ``(z, zhat)`` jointly Gaussian.

    The pair is written as ``z = zhat + w`` with ``zhat ~ N(0, beta * tau_init - nu)``
    and ``w ~ N(0, nu)`` independent, which leaves one integral over ``zhat`` of the
    sum over cells of ``P(y | zhat) * D2``.

    Raises:
        DomainError: If ``nu`` lies outside ``(0, beta * tau_init]``.
    """
    value, guarded = _eout_bar(config, nu, config.order)
    if check_quadrature and not guarded:
        other, _ = _eout_bar(config, nu, 2 * config.order)
        _check_agreement("eout_bar", value, other, nu)
    return value


def se_recursion(config: SeConfig, *, nu0: Optional[float] = None) -> SeTrace:
    """
    Iterate the recursion until it settles or ``config.t_max`` steps are done.

    Args:
        config: Problem parameters.
        nu0: Starting value, the prior variance if omitted.

    Returns:
        The trace; ``trace.fixed_point`` is its last value.
    """
    tau_init = config.prior.tau_init
    nu_bar = tau_init if nu0 is None else float(nu0)
    if not 0 < nu_bar <= tau_init:
        raise quantrbp.errors.DomainError(
            f"nu0 must lie in (0, {tau_init}], got {nu0}"
        )

    values = [nu_bar]
    converged = False
    nonmonotone = 0
    guard_hits = 0
    for _ in range(config.t_max):
        eout, guarded = _eout_bar(config, config.beta * nu_bar, config.order)
        guard_hits += guarded
        following = min(ein_bar(config.prior, eout, order=config.order), tau_init)
        if following > nu_bar * (1.0 + _MONOTONE_SLACK):
            nonmonotone += 1
            logger.warning(
                "State evolution increased from %.12g to %.12g", nu_bar, following
            )
        values.append(following)
        if abs(following - nu_bar) < config.fp_tol * nu_bar:
            converged = True
            break
        nu_bar = following

    trace = SeTrace(
        values=tuple(values),
        converged=converged,
        nonmonotone_steps=nonmonotone,
        guard_hits=guard_hits,
    )
    if not converged:
        logger.info(
            "State evolution did not settle within %d steps (last %.6g dB)",
            config.t_max,
            trace.fixed_point_db,
        )
    else:
        logger.debug(
            "State evolution settled at %.6g dB after %d steps",
            trace.fixed_point_db,
            len(values) - 1,
        )
    return trace


def _check_agreement(name: str, value: float, other: float, nu: float) -> None:
    disagreement = abs(value - other) / max(abs(other), np.finfo(float).tiny)
    if disagreement > QUADRATURE_TOLERANCE:
        raise quantrbp.errors.QuadratureError(
            f"{name} did not converge at nu={nu!r}",
            diagnostics={
                "nu": nu,
                "value": value,
                "refined_value": other,
                "relative_disagreement": disagreement,
            },
        )


def _ein_bar(
    prior: quantrbp.prior.GaussBernoulliPrior, nu: float, order: int
) -> float:
    q_star, width = prior.transition(nu)
    components: Sequence[Tuple[float, float]] = (
        (1.0 - prior.rho, nu),
        (prior.rho, prior.nonzero_variance + nu),
    )
    total = 0.0
    for weight, variance in components:
        if weight == 0:
            continue
        sd = math.sqrt(variance)
        nodes, weights = quantrbp.quadrature.gaussian_panel_rule(
            (-q_star / sd, 0.0, q_star / sd), width / sd, order=order
        )
        total += weight * float(weights @ prior.input_var(sd * nodes, nu))
    return total


def _eout_bar(config: SeConfig, nu: float, order: int) -> Tuple[float, bool]:
    ceiling = config.beta * config.prior.tau_init
    if not (0 < nu <= ceiling):
        raise quantrbp.errors.DomainError(
            f"eout_bar needs nu in (0, {ceiling}], got {nu}",
            diagnostics={"nu": nu, "beta": config.beta},
        )
    total_var = nu + config.sigma2
    zhat_var = ceiling - nu
    zhat_sd = math.sqrt(zhat_var)
    edges = config.quantizer.edges

    if zhat_sd <= 1e-12 * math.sqrt(total_var):
        nodes = np.zeros(1)
        weights = np.ones(1)
    else:
        nodes, weights = quantrbp.quadrature.gaussian_panel_rule(
            config.quantizer.boundaries / zhat_sd,
            math.sqrt(total_var) / zhat_sd,
            order=order,
        )
    zhat = zhat_sd * nodes

    expected = 0.0
    chunk = max(1, _CHUNK_ELEMENTS // edges.size)
    for start in range(0, zhat.size, chunk):
        block = zhat[start : start + chunk, None]
        moments = quantrbp.truncnorm.truncated_moments(
            edges[None, :-1], edges[None, 1:], block, total_var
        )
        d2 = np.clip((1.0 - moments.var / total_var) / total_var, 0.0, None)
        per_node = np.sum(moments.prob * d2, axis=1)
        expected += float(weights[start : start + chunk] @ per_node)

    if not expected >= 1e-300:
        logger.debug("eout_bar guard at nu=%.6g", nu)
        return EOUT_GUARD, True
    return 1.0 / expected, False
