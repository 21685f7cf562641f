"""
Design of quantizers that minimize the state-evolution fixed point.

The boundaries are searched in an unconstrained parameterization: the first boundary
and the logarithms of the gaps between consecutive ones, all in units of the standard
deviation of the quantizer input. Any parameter vector therefore decodes to a strictly
increasing boundary vector.
"""
import concurrent.futures
import csv
import dataclasses
import logging
import math
import os
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import scipy.optimize

import quantrbp.errors
import quantrbp.prior
import quantrbp.quantizer
import quantrbp.state_evolution
import quantrbp.truncnorm

__all__ = [
    "OptimizerSettings",
    "BoundaryDesign",
    "DesignProblem",
    "DesignRow",
    "DesignResult",
    "encode_boundaries",
    "decode_boundaries",
    "insert_tail_boundaries",
    "symmetry_defect",
    "input_std_for",
    "optimize_boundaries",
    "sweep_beta",
]

logger = logging.getLogger(__name__)

# Clip ranges of the free variables; they keep every decoded gap representable.
_FIRST_LIMIT = 1e3
_LOG_GAP_MIN = -25.0
_LOG_GAP_MAX = 5.0

# Zero-concentrated start: the uniform boundaries shrunk by this factor.
_CONCENTRATION = 0.6

# Distance, in input standard deviations, of the boundaries added by
# insert_tail_boundaries beyond the current last one.
_TAIL_OFFSET = 12.0


@dataclasses.dataclass(frozen=True)
class OptimizerSettings:
    """
    Budget and knobs of the boundary search.

    Args:
        max_evals: Objective evaluations allowed to each simplex search.
        restarts: Extra starts drawn as random perturbations of the uniform design.
        fd_step: Central finite-difference step, relative to the boundary spread.
        polish: Refine every simplex result with a quasi-Newton search.
        polish_iterations: Iteration cap of that refinement.
        se_t_max: Step cap of every state-evolution run.
        se_fp_tol: Fixed-point tolerance of every state-evolution run.
        seed: Seed of the random restarts.
    """

    max_evals: int = 400
    restarts: int = 0
    fd_step: float = 1e-4
    polish: bool = True
    polish_iterations: int = 30
    se_t_max: int = 200
    se_fp_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_evals < 1:
            raise quantrbp.errors.InvalidParameterError(
                f"max_evals must be positive, got {self.max_evals}"
            )
        if self.restarts < 0:
            raise quantrbp.errors.InvalidParameterError(
                f"restarts must not be negative, got {self.restarts}"
            )
        if not self.fd_step > 0:
            raise quantrbp.errors.InvalidParameterError(
                f"fd_step must be positive, got {self.fd_step}"
            )


class BoundaryDesign(NamedTuple):
    quantizer: quantrbp.quantizer.RegularScalarQuantizer
    predicted_mse: float
    uniform_mse: float
    evaluations: int


@dataclasses.dataclass(frozen=True)
class DesignRow:
    beta: float
    num_levels: int
    fixed_point: float
    uniform_fixed_point: float
    boundaries: Tuple[float, ...]

    @property
    def gain_db(self) -> float:
        """Improvement of the designed quantizer over the uniform one."""
        return quantrbp.state_evolution.to_db(
            self.uniform_fixed_point
        ) - quantrbp.state_evolution.to_db(self.fixed_point)


@dataclasses.dataclass(frozen=True)
class DesignResult:
    best_beta: float
    quantizer: quantrbp.quantizer.RegularScalarQuantizer
    predicted_mse: float
    table: Tuple[DesignRow, ...]

    @property
    def best_row(self) -> DesignRow:
        return next(row for row in self.table if row.beta == self.best_beta)

    @property
    def best_uniform(self) -> DesignRow:
        """The row whose uniform design predicts the lowest MSE."""
        return min(self.table, key=lambda row: row.uniform_fixed_point)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "best_beta": self.best_beta,
            "predicted_mse": self.predicted_mse,
            "predicted_mse_db": quantrbp.state_evolution.to_db(self.predicted_mse),
            "quantizer": self.quantizer.to_dict(),
            "table": [
                {
                    "beta": row.beta,
                    "num_levels": row.num_levels,
                    "fixed_point": row.fixed_point,
                    "fixed_point_db": quantrbp.state_evolution.to_db(row.fixed_point),
                    "uniform_fixed_point": row.uniform_fixed_point,
                    "uniform_fixed_point_db": quantrbp.state_evolution.to_db(
                        row.uniform_fixed_point
                    ),
                    "boundaries": list(row.boundaries),
                }
                for row in self.table
            ],
        }

    def write_boundaries_csv(self, path: Union[str, "os.PathLike[str]"]) -> None:
        """One line per boundary: ``beta, num_levels, index, boundary``."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["beta", "num_levels", "index", "boundary"])
            for row in self.table:
                for index, boundary in enumerate(row.boundaries, start=1):
                    writer.writerow([row.beta, row.num_levels, index, repr(boundary)])


@dataclasses.dataclass(frozen=True)
class DesignProblem:
    """
    A rate budget to spend on quantized measurements.

    With ``rate_x`` bits per signal component and ``n / m = beta``, every measurement
    gets ``beta * rate_x`` bits, i.e. ``2^(beta * rate_x)`` levels, unless
    ``num_levels`` overrides it.
    """

    rate_x: float
    beta_grid: Tuple[float, ...]
    prior: quantrbp.prior.GaussBernoulliPrior
    sigma2: float
    num_levels: Optional[int] = None
    settings: OptimizerSettings = OptimizerSettings()

    def __post_init__(self) -> None:
        if not self.rate_x > 0:
            raise quantrbp.errors.InvalidParameterError(
                f"rate_x must be positive, got {self.rate_x}"
            )
        if not self.beta_grid:
            raise quantrbp.errors.ConfigurationError("beta_grid is empty")
        if any(not beta > 0 for beta in self.beta_grid):
            raise quantrbp.errors.InvalidParameterError(
                f"every beta must be positive, got {list(self.beta_grid)}"
            )
        if self.num_levels is not None and self.num_levels < 2:
            raise quantrbp.errors.InvalidParameterError(
                f"num_levels must be at least 2, got {self.num_levels}"
            )

    @classmethod
    def from_rate(
        cls,
        rate_x: float,
        *,
        prior: quantrbp.prior.GaussBernoulliPrior,
        sigma2: float,
        max_bits: int = 3,
        settings: OptimizerSettings = OptimizerSettings(),
    ) -> "DesignProblem":
        """The grid ``beta = k / rate_x``, ``k = 1, ..., max_bits``, so ``N = 2^k``."""
        if max_bits < 1:
            raise quantrbp.errors.InvalidParameterError(
                f"max_bits must be positive, got {max_bits}"
            )
        return cls(
            rate_x=rate_x,
            beta_grid=tuple(k / rate_x for k in range(1, max_bits + 1)),
            prior=prior,
            sigma2=sigma2,
            settings=settings,
        )

    def levels_for(self, beta: float) -> int:
        if self.num_levels is not None:
            return self.num_levels
        return quantrbp.quantizer.levels_for_rate(beta, self.rate_x)

    def se_config(self, beta: float) -> quantrbp.state_evolution.SeConfig:
        """SE parameters for ``beta``; the quantizer is a placeholder to be replaced."""
        return quantrbp.state_evolution.SeConfig(
            beta=beta,
            sigma2=self.sigma2,
            prior=self.prior,
            quantizer=quantrbp.quantizer.RegularScalarQuantizer(boundaries=[0.0]),
            t_max=self.settings.se_t_max,
            fp_tol=self.settings.se_fp_tol,
        )


def input_std_for(config: quantrbp.state_evolution.SeConfig) -> float:
    """Standard deviation of a noisy measurement ``z + eta`` before quantization."""
    return math.sqrt(config.beta * config.prior.tau_init + config.sigma2)


def encode_boundaries(
    boundaries: npt.ArrayLike, input_std: float
) -> quantrbp.truncnorm.FloatArray:
    b = np.asarray(boundaries, dtype=np.float64) / input_std
    theta: quantrbp.truncnorm.FloatArray = np.concatenate(
        ([b[0]], np.log(np.diff(b)))
    )
    return theta


def decode_boundaries(
    theta: npt.ArrayLike, input_std: float
) -> quantrbp.truncnorm.FloatArray:
    """Inverse of ``encode_boundaries``; strictly increasing for every ``theta``."""
    t = np.asarray(theta, dtype=np.float64)
    first = np.clip(t[:1], -_FIRST_LIMIT, _FIRST_LIMIT)
    gaps = np.exp(np.clip(t[1:], _LOG_GAP_MIN, _LOG_GAP_MAX))
    boundaries: quantrbp.truncnorm.FloatArray = (
        np.cumsum(np.concatenate((first, gaps))) * input_std
    )
    return boundaries


def insert_tail_boundaries(
    boundaries: npt.ArrayLike, count: int, input_std: float
) -> quantrbp.truncnorm.FloatArray:
    """
    Append ``count`` boundaries far above the last one.

    The new cells carry negligible probability, so the result quantizes practically
    like the input while having ``count`` more levels. Used to start a finer design
    from a coarser optimum.
    """
    b = np.asarray(boundaries, dtype=np.float64)
    extra = b[-1] + input_std * (_TAIL_OFFSET + np.arange(count))
    result: quantrbp.truncnorm.FloatArray = np.concatenate((b, extra))
    return result


def symmetry_defect(quantizer: quantrbp.quantizer.RegularScalarQuantizer) -> float:
    """``max_i |b_i + b_(N-i)|`` relative to the spread of the boundaries."""
    b = quantizer.boundaries
    spread = float(b[-1] - b[0]) if b.size > 1 else float(abs(b[0]))
    defect = float(np.max(np.abs(b + b[::-1])))
    return defect / spread if spread > 0 else defect


class _Objective:
    """Cached ``theta -> log(fixed point)``; flagged evaluations get a penalty."""

    def __init__(self, config: quantrbp.state_evolution.SeConfig) -> None:
        self._config = config
        self._input_std = input_std_for(config)
        self._penalty = math.log(config.prior.tau_init) + 1.0
        self._cache: Dict[bytes, float] = {}
        self.best_theta: Optional[quantrbp.truncnorm.FloatArray] = None
        self.best_value = math.inf
        self.failures = 0

    @property
    def evaluations(self) -> int:
        return len(self._cache)

    @property
    def input_std(self) -> float:
        return self._input_std

    @property
    def penalty_value(self) -> float:
        return self._penalty

    def __call__(self, theta: quantrbp.truncnorm.FloatArray) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        key = theta.tobytes()
        if key in self._cache:
            return self._cache[key]
        value = self._evaluate(theta)
        self._cache[key] = value
        if value < self.best_value:
            self.best_value = value
            self.best_theta = theta.copy()
        return value

    def _evaluate(self, theta: quantrbp.truncnorm.FloatArray) -> float:
        boundaries = decode_boundaries(theta, self._input_std)
        try:
            quantizer = quantrbp.quantizer.RegularScalarQuantizer(boundaries=boundaries)
            trace = quantrbp.state_evolution.se_recursion(
                self._config.with_quantizer(quantizer)
            )
        except quantrbp.errors.QuantRbpError as e:
            logger.debug("Objective failed at %s: %s", boundaries, e)
            self.failures += 1
            return self._penalty
        if trace.guard_hits:
            self.failures += 1
            return self._penalty
        return math.log(trace.fixed_point)

    def gradient(
        self, theta: quantrbp.truncnorm.FloatArray, fd_step: float
    ) -> quantrbp.truncnorm.FloatArray:
        boundaries = decode_boundaries(theta, self._input_std) / self._input_std
        step = fd_step * max(float(boundaries[-1] - boundaries[0]), 1.0)
        grad = np.empty_like(theta)
        for k in range(theta.size):
            shift = np.zeros_like(theta)
            shift[k] = step
            grad[k] = (self(theta + shift) - self(theta - shift)) / (2.0 * step)
        return grad


def optimize_boundaries(
    num_levels: int,
    config: quantrbp.state_evolution.SeConfig,
    settings: OptimizerSettings = OptimizerSettings(),
    *,
    extra_starts: Sequence[npt.ArrayLike] = (),
) -> BoundaryDesign:
    """
    Find the ``num_levels``-level quantizer with the smallest SE fixed point.

    Every start (the uniform design, the same shrunk towards zero, ``extra_starts`` and
    ``settings.restarts`` random perturbations of the uniform design) is refined by a
    Nelder-Mead search, then optionally by BFGS on central finite differences. The
    best evaluation seen anywhere wins, so the result is never worse than the uniform
    design.

    Args:
        num_levels: Number of cells N, at least 2.
        config: SE parameters; its quantizer is ignored.
        settings: Search budget.
        extra_starts: Further boundary vectors with ``num_levels - 1`` entries.

    Returns:
        The designed quantizer, with centroid levels for its Gaussian input, its
        predicted MSE and that of the uniform design.

    Raises:
        DesignFailureError: If no evaluation produced a usable fixed point.
    """
    if num_levels < 2:
        raise quantrbp.errors.InvalidParameterError(
            f"num_levels must be at least 2, got {num_levels}"
        )
    config = dataclasses.replace(
        config, t_max=settings.se_t_max, fp_tol=settings.se_fp_tol
    )
    objective = _Objective(config)
    input_std = objective.input_std
    uniform = quantrbp.quantizer.design_uniform(num_levels, input_std)

    starts = [
        encode_boundaries(uniform.boundaries, input_std),
        encode_boundaries(uniform.boundaries * _CONCENTRATION, input_std),
    ]
    for start in extra_starts:
        b = np.asarray(start, dtype=np.float64)
        if b.shape != (num_levels - 1,):
            raise quantrbp.errors.InvalidParameterError(
                f"a start needs {num_levels - 1} boundaries, got shape {b.shape}"
            )
        starts.append(encode_boundaries(b, input_std))
    rng = np.random.default_rng(settings.seed)
    for _ in range(settings.restarts):
        starts.append(starts[0] + rng.normal(0.0, 0.3, size=starts[0].size))

    uniform_value = objective(starts[0])
    for index, start in enumerate(starts):
        before = objective.best_value
        _search(objective, start, settings)
        logger.debug(
            "Start %d of %d for %d levels: %.6g -> %.6g",
            index + 1,
            len(starts),
            num_levels,
            before,
            objective.best_value,
        )

    best_theta = objective.best_theta
    if best_theta is None or objective.best_value >= objective.penalty_value:
        raise quantrbp.errors.DesignFailureError(
            f"no usable {num_levels}-level design was found",
            diagnostics={
                "num_levels": num_levels,
                "beta": config.beta,
                "evaluations": objective.evaluations,
                "failures": objective.failures,
            },
        )

    boundaries = decode_boundaries(best_theta, input_std)
    quantizer = quantrbp.quantizer.RegularScalarQuantizer(boundaries=boundaries)
    quantizer = quantizer.with_levels(quantizer.levels_for_gaussian(input_std))
    design = BoundaryDesign(
        quantizer=quantizer,
        predicted_mse=math.exp(objective.best_value),
        uniform_mse=math.exp(uniform_value),
        evaluations=objective.evaluations,
    )
    logger.info(
        "Designed %d levels at beta=%g: %.4f dB (uniform %.4f dB) in %d evaluations",
        num_levels,
        config.beta,
        quantrbp.state_evolution.to_db(design.predicted_mse),
        quantrbp.state_evolution.to_db(design.uniform_mse),
        design.evaluations,
    )
    return design


def sweep_beta(
    problem: DesignProblem,
    *,
    workers: int = 1,
) -> DesignResult:
    """
    Design a quantizer for every feasible ``beta`` and keep the best one.

    Grid points are designed in waves of increasing level count. The designs of one
    wave run concurrently on up to ``workers`` threads, and every design of the next
    wave also starts from the previous optima padded with tail boundaries. The table
    keeps the order of ``problem.beta_grid``.

    Raises:
        ConfigurationError: If no ``beta`` gives a whole number of levels.
        DesignFailureError: If every feasible ``beta`` failed.
    """
    feasible: List[Tuple[float, int]] = []
    for beta in problem.beta_grid:
        try:
            feasible.append((beta, problem.levels_for(beta)))
        except quantrbp.errors.InvalidParameterError as e:
            logger.warning("Skipping beta=%g: %s", beta, e)
    if not feasible:
        raise quantrbp.errors.ConfigurationError(
            "no beta in the grid gives a whole number of levels",
            diagnostics={
                "beta_grid": list(problem.beta_grid),
                "rate_x": problem.rate_x,
            },
        )

    waves: Dict[int, List[float]] = {}
    for beta, num_levels in feasible:
        waves.setdefault(num_levels, []).append(beta)

    designs: Dict[float, BoundaryDesign] = {}
    coarser: List[Tuple[quantrbp.quantizer.RegularScalarQuantizer, float]] = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        for num_levels in sorted(waves):
            configs = [problem.se_config(beta) for beta in waves[num_levels]]
            futures = [
                executor.submit(
                    optimize_boundaries,
                    num_levels,
                    config,
                    problem.settings,
                    extra_starts=_nested_starts(coarser, num_levels, config),
                )
                for config in configs
            ]
            finished: List[Tuple[quantrbp.quantizer.RegularScalarQuantizer, float]] = []
            for config, future in zip(configs, futures):
                try:
                    design = future.result()
                except quantrbp.errors.DesignFailureError as e:
                    logger.warning("Design failed for beta=%g: %s", config.beta, e)
                    continue
                designs[config.beta] = design
                finished.append((design.quantizer, input_std_for(config)))
            if finished:
                coarser = finished

    rows = [
        DesignRow(
            beta=beta,
            num_levels=num_levels,
            fixed_point=designs[beta].predicted_mse,
            uniform_fixed_point=designs[beta].uniform_mse,
            boundaries=tuple(designs[beta].quantizer.boundaries.tolist()),
        )
        for beta, num_levels in feasible
        if beta in designs
    ]
    if not rows:
        raise quantrbp.errors.DesignFailureError(
            "the design failed for every beta",
            diagnostics={"beta_grid": [beta for beta, _ in feasible]},
        )

    best = min(rows, key=lambda row: row.fixed_point)
    return DesignResult(
        best_beta=best.beta,
        quantizer=designs[best.beta].quantizer,
        predicted_mse=best.fixed_point,
        table=tuple(rows),
    )


def _nested_starts(
    coarser: Sequence[Tuple[quantrbp.quantizer.RegularScalarQuantizer, float]],
    num_levels: int,
    config: quantrbp.state_evolution.SeConfig,
) -> List[quantrbp.truncnorm.FloatArray]:
    input_std = input_std_for(config)
    return [
        insert_tail_boundaries(
            quantizer.boundaries * (input_std / coarse_std),
            num_levels - quantizer.num_levels,
            input_std,
        )
        for quantizer, coarse_std in coarser
        if quantizer.num_levels < num_levels
    ]


def _search(
    objective: _Objective,
    start: quantrbp.truncnorm.FloatArray,
    settings: OptimizerSettings,
) -> None:
    result = scipy.optimize.minimize(
        objective,
        start,
        method="Nelder-Mead",
        options={
            "maxfev": settings.max_evals,
            "xatol": 1e-7,
            "fatol": 1e-12,
            "adaptive": start.size > 4,
        },
    )
    if not settings.polish:
        return
    scipy.optimize.minimize(
        objective,
        result.x,
        method="BFGS",
        jac=lambda theta: objective.gradient(theta, settings.fd_step),
        options={"maxiter": settings.polish_iterations, "gtol": 1e-9},
    )
