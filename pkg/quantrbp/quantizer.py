import json
import logging
import math
import os
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import scipy.optimize

import quantrbp.errors
import quantrbp.truncnorm

__all__ = [
    "IndexArray",
    "RegularScalarQuantizer",
    "gaussian_quantizer_mse",
    "design_uniform",
    "levels_for_rate",
]

logger = logging.getLogger(__name__)

IndexArray = npt.NDArray[np.int64]

# Grid resolution of the step-size search before the golden-section refinement.
_GRID_POINTS = 400


class RegularScalarQuantizer:
    """
    N-level regular scalar quantizer.

    The cells are ``[b_{i-1}, b_i)`` for ``i = 1, ..., N`` with ``b_0 = -inf`` and
    ``b_N = +inf``, so a value lying exactly on a boundary belongs to the upper cell.
    Cell indices are 1-based throughout the package.

    Instances are immutable.

    Examples:
        >>> q = RegularScalarQuantizer(boundaries=[-1.0, 1.0])
        >>> q.num_levels
        3
        >>> int(q.quantize(1.0))
        3
        >>> q.cell_bounds(1)
        (-inf, -1.0)
    """

    def __init__(
        self,
        *,
        boundaries: npt.ArrayLike,
        levels: Optional[npt.ArrayLike] = None,
    ) -> None:
        """
        Args:
            boundaries: The ``N - 1`` interior boundaries, finite, strictly increasing.
            levels: Optional representative point per cell, each inside its own cell.
        """
        bounds = _as_vector(boundaries, "boundaries")
        if bounds.size < 1:
            raise quantrbp.errors.InvalidParameterError(
                "a quantizer needs at least one boundary"
            )
        if not np.all(np.isfinite(bounds)):
            raise quantrbp.errors.InvalidParameterError("boundaries must be finite")
        if not np.all(np.diff(bounds) > 0):
            raise quantrbp.errors.InvalidParameterError(
                "boundaries must be strictly increasing",
                diagnostics={"boundaries": bounds.tolist()},
            )
        bounds.setflags(write=False)
        self._boundaries = bounds

        edges = np.concatenate(([-np.inf], bounds, [np.inf]))
        edges.setflags(write=False)
        self._edges = edges

        self._levels: Optional[quantrbp.truncnorm.FloatArray] = None
        if levels is not None:
            levels_arr = _as_vector(levels, "levels")
            if levels_arr.size != bounds.size + 1:
                raise quantrbp.errors.InvalidParameterError(
                    f"expected {bounds.size + 1} levels, got {levels_arr.size}"
                )
            outside = ~((edges[:-1] <= levels_arr) & (levels_arr <= edges[1:]))
            if np.any(outside):
                raise quantrbp.errors.InvalidParameterError(
                    "every level must lie inside its own cell",
                    diagnostics={"cells": (np.flatnonzero(outside) + 1).tolist()},
                )
            levels_arr.setflags(write=False)
            self._levels = levels_arr

    def __repr__(self) -> str:
        levels = None if self._levels is None else self._levels.tolist()
        return (
            f"{self.__class__.__name__}(boundaries={self._boundaries.tolist()!r}, "
            f"levels={levels!r})"
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RegularScalarQuantizer):
            return NotImplemented
        if self._levels is None or other._levels is None:
            same_levels = self._levels is None and other._levels is None
        else:
            same_levels = bool(np.array_equal(self._levels, other._levels))
        return same_levels and bool(np.array_equal(self._boundaries, other._boundaries))

    @property
    def boundaries(self) -> quantrbp.truncnorm.FloatArray:
        return self._boundaries

    @property
    def edges(self) -> quantrbp.truncnorm.FloatArray:
        """All ``N + 1`` cell edges, infinite ends included."""
        return self._edges

    @property
    def levels(self) -> Optional[quantrbp.truncnorm.FloatArray]:
        return self._levels

    @property
    def num_levels(self) -> int:
        return int(self._boundaries.size + 1)

    def quantize(self, s: npt.ArrayLike) -> IndexArray:
        """
        Map values to their 1-based cell indices.

        Raises:
            InvalidInputError: If any value is not finite.
        """
        s_arr = np.asarray(s, dtype=np.float64)
        if not np.all(np.isfinite(s_arr)):
            raise quantrbp.errors.InvalidInputError("cannot quantize non-finite values")
        indices: IndexArray = (
            np.searchsorted(self._boundaries, s_arr, side="right").astype(np.int64) + 1
        )
        return indices

    def cell_bounds(self, i: int) -> Tuple[float, float]:
        """Return ``(b_{i-1}, b_i)`` for the 1-based cell index ``i``."""
        if not 1 <= i <= self.num_levels:
            raise quantrbp.errors.InvalidInputError(
                f"cell index must lie in [1, {self.num_levels}], got {i}"
            )
        return float(self._edges[i - 1]), float(self._edges[i])

    def lower_edges(self, y: npt.ArrayLike) -> quantrbp.truncnorm.FloatArray:
        """Lower edges of the cells with the given 1-based indices."""
        lower: quantrbp.truncnorm.FloatArray = self._edges[self.check_indices(y) - 1]
        return lower

    def upper_edges(self, y: npt.ArrayLike) -> quantrbp.truncnorm.FloatArray:
        upper: quantrbp.truncnorm.FloatArray = self._edges[self.check_indices(y)]
        return upper

    def check_indices(self, y: npt.ArrayLike) -> IndexArray:
        """Validate 1-based cell indices and return them as an integer array."""
        y_arr = np.asarray(y)
        if not np.issubdtype(y_arr.dtype, np.integer):
            raise quantrbp.errors.InvalidInputError("cell indices must be integers")
        if y_arr.size and (y_arr.min() < 1 or y_arr.max() > self.num_levels):
            raise quantrbp.errors.InvalidInputError(
                f"cell indices must lie in [1, {self.num_levels}]"
            )
        return y_arr.astype(np.int64)

    def levels_for_gaussian(self, input_std: float) -> quantrbp.truncnorm.FloatArray:
        """Cell centroids under ``N(0, input_std²)``, the MSE-optimal levels."""
        _check_std(input_std)
        moments = quantrbp.truncnorm.truncated_moments(
            self._edges[:-1], self._edges[1:], 0.0, input_std**2
        )
        return moments.mean

    def with_levels(
        self, levels: Optional[npt.ArrayLike]
    ) -> "RegularScalarQuantizer":
        return RegularScalarQuantizer(boundaries=self._boundaries, levels=levels)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"boundaries": self._boundaries.tolist()}
        if self._levels is not None:
            data["levels"] = self._levels.tolist()
        return data

    @classmethod
    def from_dict(cls, data: object) -> "RegularScalarQuantizer":
        """
        Build a quantizer from its JSON form ``{"boundaries": [...], "levels": [...]}``.

        The ``levels`` key is optional and may be ``null``.
        """
        if not isinstance(data, Mapping):
            raise quantrbp.errors.InvalidParameterError(
                f"quantizer data must be a mapping, got {type(data).__name__}"
            )
        if "boundaries" not in data:
            raise quantrbp.errors.InvalidParameterError(
                "quantizer data has no 'boundaries' key"
            )
        unknown = set(data) - {"boundaries", "levels"}
        if unknown:
            raise quantrbp.errors.InvalidParameterError(
                f"unknown quantizer keys: {sorted(unknown)}"
            )
        return cls(boundaries=data["boundaries"], levels=data.get("levels"))

    @classmethod
    def load(cls, path: Union[str, "os.PathLike[str]"]) -> "RegularScalarQuantizer":
        with open(path) as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise quantrbp.errors.InvalidParameterError(
                    f"quantizer file {os.fspath(path)!r} is not valid JSON: {e}"
                ) from e
        return cls.from_dict(data)

    def save(self, path: Union[str, "os.PathLike[str]"]) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def gaussian_quantizer_mse(
    quantizer: RegularScalarQuantizer, input_std: float
) -> float:
    """
    Mean squared error ``E{(s - Q(s))²}`` for ``s ~ N(0, input_std²)``.

    Uses the quantizer's own levels when it has them, else the cell centroids.
    """
    _check_std(input_std)
    edges = quantizer.edges
    moments = quantrbp.truncnorm.truncated_moments(
        edges[:-1], edges[1:], 0.0, input_std**2
    )
    per_cell = moments.var
    if quantizer.levels is not None:
        per_cell = per_cell + (moments.mean - quantizer.levels) ** 2
    return float(np.sum(moments.prob * per_cell))


def design_uniform(num_levels: int, input_std: float) -> RegularScalarQuantizer:
    """
    Design the quantizer with equally spaced levels that is MSE-optimal for a Gaussian.

    The levels are ``(k - (N + 1) / 2) * step`` for ``k = 1, ..., N`` and the boundaries
    lie halfway between neighbouring levels. The step is found by a grid search,
    refined with a golden-section search, on the unit-variance problem and then scaled
    by ``input_std``.

    Args:
        num_levels: Number of cells N, at least 2.
        input_std: Standard deviation of the Gaussian input.

    Returns:
        The designed quantizer, levels included.
    """
    if num_levels < 2:
        raise quantrbp.errors.InvalidParameterError(
            f"a uniform quantizer needs at least 2 levels, got {num_levels}"
        )
    _check_std(input_std)
    step = _optimal_unit_step(num_levels)
    offsets = np.arange(1, num_levels + 1) - 0.5 * (num_levels + 1)
    levels = offsets * step * input_std
    boundaries = 0.5 * (levels[:-1] + levels[1:])
    logger.debug(
        "Uniform %d-level design: step %.6g at input std %.6g",
        num_levels,
        step * input_std,
        input_std,
    )
    return RegularScalarQuantizer(boundaries=boundaries, levels=levels)


def levels_for_rate(beta: float, rate_x: float) -> int:
    """
    Number of quantizer levels ``N = 2^(beta * rate_x)``.

    Raises:
        InvalidParameterError: If ``beta * rate_x`` is not a positive whole number.
    """
    bits = beta * rate_x
    whole = round(bits)
    if whole < 1 or not math.isclose(bits, whole, rel_tol=0.0, abs_tol=1e-9):
        raise quantrbp.errors.InvalidParameterError(
            f"beta * rate_x must be a positive whole number of bits, got {bits}",
            diagnostics={"beta": beta, "rate_x": rate_x},
        )
    return int(2**whole)


def _as_vector(values: npt.ArrayLike, name: str) -> quantrbp.truncnorm.FloatArray:
    try:
        return np.array(values, dtype=np.float64).ravel()
    except (TypeError, ValueError) as e:
        raise quantrbp.errors.InvalidParameterError(
            f"{name} must be a list of numbers: {e}"
        ) from e


def _check_std(input_std: float) -> None:
    if not (input_std > 0 and math.isfinite(input_std)):
        raise quantrbp.errors.InvalidParameterError(
            f"input_std must be positive and finite, got {input_std}"
        )


def _uniform_unit_mse(step: float, num_levels: int) -> float:
    offsets = np.arange(1, num_levels + 1) - 0.5 * (num_levels + 1)
    levels = offsets * step
    edges = np.concatenate(([-np.inf], 0.5 * (levels[:-1] + levels[1:]), [np.inf]))
    moments = quantrbp.truncnorm.truncated_moments(edges[:-1], edges[1:], 0.0, 1.0)
    return float(np.sum(moments.prob * (moments.var + (moments.mean - levels) ** 2)))


def _optimal_unit_step(num_levels: int) -> float:
    hi = 12.0 / (num_levels - 1)
    while True:
        grid = np.linspace(hi / _GRID_POINTS, hi, _GRID_POINTS)
        values = np.array([_uniform_unit_mse(step, num_levels) for step in grid])
        best = int(np.argmin(values))
        if best < _GRID_POINTS - 1:
            break
        # The minimum sits on the edge of the grid, widen it.
        hi *= 2.0

    if best == 0:
        bracket = (0.5 * grid[0], grid[0], grid[1])
    else:
        bracket = (grid[best - 1], grid[best], grid[best + 1])
    try:
        result = scipy.optimize.minimize_scalar(
            _uniform_unit_mse,
            bracket=bracket,
            args=(num_levels,),
            method="golden",
            tol=1e-8,
        )
    except ValueError:
        logger.warning(
            "Golden-section search failed for %d levels, using the grid optimum",
            num_levels,
        )
        return float(grid[best])
    if result.fun <= values[best]:
        return float(result.x)
    return float(grid[best])
