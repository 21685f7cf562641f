"""Composite Gauss-Legendre rules for expectations over a standard Gaussian variable."""
import functools
from typing import Sequence, Tuple

import numpy as np

import quantrbp.truncnorm

__all__ = ["DEFAULT_ORDER", "DEFAULT_LIMIT", "gaussian_panel_rule"]

DEFAULT_ORDER = 12
DEFAULT_LIMIT = 10.0

# Breakpoint offsets around a feature, in units of its length scale.
_GRADING = np.array((0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0))


@functools.lru_cache(maxsize=None)
def _legendre(
    order: int,
) -> Tuple[quantrbp.truncnorm.FloatArray, quantrbp.truncnorm.FloatArray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gaussian_panel_rule(
    centers: Sequence[float],
    scale: float,
    *,
    order: int = DEFAULT_ORDER,
    limit: float = DEFAULT_LIMIT,
) -> Tuple[quantrbp.truncnorm.FloatArray, quantrbp.truncnorm.FloatArray]:
    """
    Nodes and weights approximating ``E{f(t)}`` for ``t ~ N(0, 1)``.

    The range ``[-limit, limit]`` is split into unit panels. Around every center further
    breakpoints are placed at geometrically growing distances, starting at
    ``scale / 4``, so integrands that change on the length ``scale`` near the centers
    are resolved by panels of matching size. Each panel carries a Gauss-Legendre rule
    of ``order`` nodes.

    Args:
        centers: Locations of the short-scale features, in standard deviations.
        scale: Length scale of the features, in standard deviations. Features are
            ignored when ``scale`` is not positive and finite or not below ``limit``.
        order: Gauss-Legendre order per panel.
        limit: Half-width of the integration range; the mass outside is dropped.

    Returns:
        A tuple ``(nodes, weights)`` of 1-D arrays; ``weights`` already include the
        standard normal density, so ``weights @ f(nodes)`` is the expectation.
    """
    breaks = [np.arange(-limit, limit + 0.5, 1.0)]
    centers_arr = np.asarray(centers, dtype=np.float64).ravel()
    if centers_arr.size and np.isfinite(scale) and 0 < scale < limit:
        offsets = np.concatenate((-_GRADING[::-1], [0.0], _GRADING)) * scale
        points = (centers_arr[:, None] + offsets[None, :]).ravel()
        resolution = 0.25 * scale
        points = np.round(points / resolution) * resolution
        breaks.append(points[np.abs(points) < limit])
    edges = np.unique(np.clip(np.concatenate(breaks), -limit, limit))

    legendre_nodes, legendre_weights = _legendre(order)
    left = edges[:-1, None]
    half_width = 0.5 * np.diff(edges)[:, None]
    nodes = left + half_width * (legendre_nodes[None, :] + 1.0)
    weights = half_width * legendre_weights[None, :]
    weights = weights * np.exp(-0.5 * nodes * nodes) / np.sqrt(2.0 * np.pi)
    return nodes.ravel(), weights.ravel()
