"""
Configuration files.

A configuration is a YAML mapping (JSON works too, being a subset of YAML) whose keys
are the fields of one of the dataclasses below; nested blocks map to nested dataclasses.
Unknown keys and values of the wrong type are rejected with ``ConfigurationError``.

Examples:
    experiment.yaml::

        n: 2000
        beta: 2
        rho: 0.1
        sigma2: 1.0e-5
        num_levels: 4
        quantizer: uniform
        method: rbp
        trials: 20
        rbp:
          damping: 1.0
"""
import dataclasses
import math
import os
import typing
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar, Union

import yaml

import quantrbp.designer
import quantrbp.errors
import quantrbp.prior
import quantrbp.quantizer

__all__ = [
    "METHODS",
    "QUANTIZER_KINDS",
    "RbpSettings",
    "SeSettings",
    "ExperimentConfig",
    "DesignConfig",
    "SweepConfig",
    "from_dict",
    "load",
]

METHODS = ("rbp", "lmmse")
QUANTIZER_KINDS = ("uniform", "optimal")

PathLike = Union[str, "os.PathLike[str]"]
T = TypeVar("T")


@dataclasses.dataclass(frozen=True)
class RbpSettings:
    damping: float = 1.0
    early_stop_tol: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0 < self.damping <= 1:
            raise quantrbp.errors.ConfigurationError(
                f"rbp.damping must lie in (0, 1], got {self.damping}"
            )
        if self.early_stop_tol is not None and not self.early_stop_tol > 0:
            raise quantrbp.errors.ConfigurationError(
                f"rbp.early_stop_tol must be positive, got {self.early_stop_tol}"
            )


@dataclasses.dataclass(frozen=True)
class SeSettings:
    t_max: int = 100
    fp_tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.t_max < 1 or not self.fp_tol > 0:
            raise quantrbp.errors.ConfigurationError(
                f"se needs t_max >= 1 and fp_tol > 0, got {self.t_max}, {self.fp_tol}"
            )


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """
    A reconstruction experiment.

    Args:
        n: Signal length.
        beta: Measurement ratio ``n / m``; ignored when ``m`` is given.
        m: Number of measurements, ``round(n / beta)`` if omitted.
        rho: Sparsity ratio of the prior.
        sigma2: Variance of the noise added before quantization.
        rate_x: Bits per signal component, giving ``2^(beta * rate_x)`` levels.
        num_levels: Number of quantizer levels, overrides ``rate_x``.
        quantizer: ``"uniform"``, ``"optimal"`` or the path of a quantizer JSON file.
        method: ``"rbp"`` or ``"lmmse"``.
        trials: Number of independent trials.
        t_max: Relaxed BP rounds per trial.
        seed: Master seed; trial ``k`` derives its own seeds from ``(seed, k)``.
        workers: Trials run concurrently on this many threads.
    """

    n: int = 2000
    beta: float = 2.0
    m: Optional[int] = None
    rho: float = 0.1
    sigma2: float = 1e-5
    rate_x: Optional[float] = 1.0
    num_levels: Optional[int] = None
    quantizer: str = "uniform"
    method: str = "rbp"
    trials: int = 20
    t_max: int = 20
    seed: int = 0
    workers: int = 1
    rbp: RbpSettings = RbpSettings()
    se: SeSettings = SeSettings()
    optimizer: quantrbp.designer.OptimizerSettings = (
        quantrbp.designer.OptimizerSettings()
    )

    def __post_init__(self) -> None:
        _positive_int(self.n, "n")
        _positive_int(self.trials, "trials")
        _positive_int(self.t_max, "t_max")
        _positive_int(self.workers, "workers")
        _non_negative_int(self.seed, "seed")
        if self.m is not None:
            _positive_int(self.m, "m")
        elif not (self.beta > 0 and math.isfinite(self.beta)):
            raise quantrbp.errors.ConfigurationError(
                f"beta must be positive, got {self.beta}"
            )
        if self.num_measurements < 1:
            raise quantrbp.errors.ConfigurationError(
                f"n={self.n} and beta={self.beta} leave no measurements"
            )
        _check_model(self.rho, self.sigma2)
        if self.method not in METHODS:
            raise quantrbp.errors.ConfigurationError(
                f"method must be one of {list(METHODS)}, got {self.method!r}"
            )
        if self.quantizer not in QUANTIZER_KINDS and not os.path.isfile(
            self.quantizer
        ):
            raise quantrbp.errors.ConfigurationError(
                f"quantizer must be one of {list(QUANTIZER_KINDS)} or an existing "
                f"file, got {self.quantizer!r}"
            )
        if self.quantizer in QUANTIZER_KINDS:
            # Raises when the rate gives a fractional number of levels.
            _ = self.levels

    @property
    def num_measurements(self) -> int:
        if self.m is not None:
            return self.m
        return int(round(self.n / self.beta))

    @property
    def effective_beta(self) -> float:
        """``n / m`` after rounding ``m``."""
        if self.m is not None:
            return self.n / self.m
        return self.n / max(1, int(round(self.n / self.beta)))

    @property
    def levels(self) -> int:
        if self.num_levels is not None:
            if self.num_levels < 2:
                raise quantrbp.errors.ConfigurationError(
                    f"num_levels must be at least 2, got {self.num_levels}"
                )
            return self.num_levels
        if self.rate_x is None:
            raise quantrbp.errors.ConfigurationError(
                "one of num_levels and rate_x must be set"
            )
        try:
            return quantrbp.quantizer.levels_for_rate(self.effective_beta, self.rate_x)
        except quantrbp.errors.InvalidParameterError as e:
            raise quantrbp.errors.ConfigurationError(
                str(e), diagnostics=e.diagnostics
            ) from e

    def prior(self) -> quantrbp.prior.GaussBernoulliPrior:
        return quantrbp.prior.GaussBernoulliPrior(rho=self.rho)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class DesignConfig:
    """
    A quantizer design over a grid of measurement ratios.

    ``beta_grid`` defaults to ``k / rate_x`` for ``k = 1, ..., max_bits``.
    """

    rho: float = 0.1
    sigma2: float = 1e-5
    rate_x: float = 1.0
    beta_grid: Optional[Tuple[float, ...]] = None
    max_bits: int = 3
    num_levels: Optional[int] = None
    seed: int = 0
    workers: int = 1
    optimizer: quantrbp.designer.OptimizerSettings = (
        quantrbp.designer.OptimizerSettings()
    )

    def __post_init__(self) -> None:
        _check_model(self.rho, self.sigma2)
        _positive_int(self.max_bits, "max_bits")
        _positive_int(self.workers, "workers")
        _non_negative_int(self.seed, "seed")
        if not self.rate_x > 0:
            raise quantrbp.errors.ConfigurationError(
                f"rate_x must be positive, got {self.rate_x}"
            )
        if self.beta_grid is not None and not self.beta_grid:
            raise quantrbp.errors.ConfigurationError("beta_grid is empty")

    def problem(self) -> quantrbp.designer.DesignProblem:
        prior = quantrbp.prior.GaussBernoulliPrior(rho=self.rho)
        settings = dataclasses.replace(self.optimizer, seed=self.seed)
        try:
            if self.beta_grid is None:
                problem = quantrbp.designer.DesignProblem.from_rate(
                    self.rate_x,
                    prior=prior,
                    sigma2=self.sigma2,
                    max_bits=self.max_bits,
                    settings=settings,
                )
                return dataclasses.replace(problem, num_levels=self.num_levels)
            return quantrbp.designer.DesignProblem(
                rate_x=self.rate_x,
                beta_grid=self.beta_grid,
                prior=prior,
                sigma2=self.sigma2,
                num_levels=self.num_levels,
                settings=settings,
            )
        except quantrbp.errors.InvalidParameterError as e:
            raise quantrbp.errors.ConfigurationError(
                str(e), diagnostics=e.diagnostics
            ) from e

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class SweepConfig:
    """
    Predicted and empirical MSE over a range of rates.

    Every entry of ``combos`` is ``"<method>:<quantizer kind>"``. For every rate the
    measurement ratios ``k / rate`` for ``k = 1, ..., max_bits`` are tried and the best
    predicted one is kept.
    """

    rates: Tuple[float, ...] = (1.0, 1.25, 1.5, 1.75, 2.0)
    combos: Tuple[str, ...] = ("rbp:optimal", "rbp:uniform", "lmmse:uniform")
    max_bits: int = 3
    empirical: bool = True
    n: int = 2000
    rho: float = 0.1
    sigma2: float = 1e-5
    trials: int = 5
    t_max: int = 20
    seed: int = 0
    workers: int = 1
    rbp: RbpSettings = RbpSettings()
    se: SeSettings = SeSettings()
    optimizer: quantrbp.designer.OptimizerSettings = (
        quantrbp.designer.OptimizerSettings()
    )

    def __post_init__(self) -> None:
        if not self.rates or any(not rate > 0 for rate in self.rates):
            raise quantrbp.errors.ConfigurationError(
                f"rates must be a non-empty list of positive numbers, got {self.rates}"
            )
        for combo in self.combos:
            method, _, kind = combo.partition(":")
            if method not in METHODS or kind not in QUANTIZER_KINDS:
                raise quantrbp.errors.ConfigurationError(
                    f"combo must look like 'rbp:optimal', got {combo!r}"
                )
        if not self.combos:
            raise quantrbp.errors.ConfigurationError("combos is empty")
        _positive_int(self.max_bits, "max_bits")
        _positive_int(self.n, "n")
        _positive_int(self.trials, "trials")
        _positive_int(self.t_max, "t_max")
        _positive_int(self.workers, "workers")
        _non_negative_int(self.seed, "seed")
        _check_model(self.rho, self.sigma2)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def from_dict(cls: Type[T], data: Any, *, where: str = "configuration") -> T:
    """
    Build the dataclass ``cls`` from a parsed configuration mapping.

    Raises:
        ConfigurationError: On unknown keys, wrong types or invalid values.
    """
    if not isinstance(data, Mapping):
        raise quantrbp.errors.ConfigurationError(
            f"{where} must be a mapping, got {type(data).__name__}"
        )
    fields = {field.name: field for field in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise quantrbp.errors.ConfigurationError(
            f"unknown keys in {where}: {sorted(map(str, unknown))}"
        )
    hints = typing.get_type_hints(cls)
    kwargs = {
        name: _coerce(value, hints[name], f"{where}.{name}")
        for name, value in data.items()
    }
    try:
        return cls(**kwargs)
    except quantrbp.errors.ConfigurationError:
        raise
    except quantrbp.errors.QuantRbpError as e:
        raise quantrbp.errors.ConfigurationError(
            f"invalid {where}: {e}", diagnostics=e.diagnostics
        ) from e


def load(cls: Type[T], path: PathLike) -> T:
    """Read a YAML (or JSON) configuration file into the dataclass ``cls``."""
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise quantrbp.errors.ConfigurationError(
            f"cannot read configuration file {os.fspath(path)!r}: {e.strerror}"
        ) from e
    except yaml.YAMLError as e:
        raise quantrbp.errors.ConfigurationError(
            f"configuration file {os.fspath(path)!r} is not valid YAML: {e}"
        ) from e
    return from_dict(cls, {} if data is None else data, where=os.fspath(path))


def _coerce(value: Any, tp: Any, where: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        (inner,) = [arg for arg in args if arg is not type(None)]
        return _coerce(value, inner, where)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where=where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise quantrbp.errors.ConfigurationError(f"{where} must be a list")
        return tuple(
            _coerce(item, args[0], f"{where}[{i}]") for i, item in enumerate(value)
        )
    if tp is bool:
        if not isinstance(value, bool):
            raise quantrbp.errors.ConfigurationError(f"{where} must be true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise quantrbp.errors.ConfigurationError(f"{where} must be an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise quantrbp.errors.ConfigurationError(f"{where} must be a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise quantrbp.errors.ConfigurationError(f"{where} must be a string")
        return value
    raise TypeError(f"unsupported configuration type {tp!r} at {where}")


def _positive_int(value: int, name: str) -> None:
    if value < 1:
        raise quantrbp.errors.ConfigurationError(
            f"{name} must be positive, got {value}"
        )


def _non_negative_int(value: int, name: str) -> None:
    if value < 0:
        raise quantrbp.errors.ConfigurationError(
            f"{name} must not be negative, got {value}"
        )


def _check_model(rho: float, sigma2: float) -> None:
    if not 0 < rho <= 1:
        raise quantrbp.errors.ConfigurationError(f"rho must lie in (0, 1], got {rho}")
    if not (sigma2 >= 0 and math.isfinite(sigma2)):
        raise quantrbp.errors.ConfigurationError(
            f"sigma2 must be non-negative, got {sigma2}"
        )
