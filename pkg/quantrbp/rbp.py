"""
Relaxed belief propagation on a dense measurement matrix.

Every message lives on an edge ``(a, i)`` between measurement ``a`` and signal component
``i`` and is stored in an ``m x n`` array indexed ``[a, i]``, whatever its direction.
Leave-one-out sums are computed as full sums over a node minus the excluded edge term.
"""
import dataclasses
import logging
import math
from typing import List, NamedTuple, Optional

import numpy as np
import numpy.typing as npt

import quantrbp.channel
import quantrbp.errors
import quantrbp.prior
import quantrbp.quantizer
import quantrbp.truncnorm

__all__ = [
    "VARIANCE_FLOOR",
    "MeasurementEnsemble",
    "RbpDiagnostics",
    "RbpState",
    "RbpResult",
    "RbpSolver",
    "generate_matrix",
    "init_state",
    "squared_error",
]

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12


class MeasurementEnsemble:
    """A dense ``m x n`` measurement matrix ``A``, with ``beta = n / m``."""

    def __init__(self, matrix: npt.ArrayLike) -> None:
        a = np.array(matrix, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise quantrbp.errors.InvalidParameterError(
                f"the measurement matrix must be a non-empty 2-D array, got {a.shape}"
            )
        if not np.all(np.isfinite(a)):
            raise quantrbp.errors.InvalidParameterError(
                "the measurement matrix has non-finite entries"
            )
        a.setflags(write=False)
        squared = a * a
        squared.setflags(write=False)
        self._matrix = a
        self._squared = squared

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(m={self.m}, n={self.n})"

    @property
    def matrix(self) -> quantrbp.truncnorm.FloatArray:
        return self._matrix

    @property
    def squared(self) -> quantrbp.truncnorm.FloatArray:
        """Element-wise square of the matrix."""
        return self._squared

    @property
    def m(self) -> int:
        return int(self._matrix.shape[0])

    @property
    def n(self) -> int:
        return int(self._matrix.shape[1])

    @property
    def beta(self) -> float:
        return self.n / self.m

    def measure(self, x: npt.ArrayLike) -> quantrbp.truncnorm.FloatArray:
        """Noiseless measurements ``z = A x``."""
        z: quantrbp.truncnorm.FloatArray = self._matrix @ np.asarray(x, np.float64)
        return z


def generate_matrix(
    m: int, n: int, seed: quantrbp.prior.SeedLike
) -> MeasurementEnsemble:
    """Draw ``A`` with i.i.d. ``N(0, 1 / m)`` entries, deterministically in ``seed``."""
    if m < 1 or n < 1:
        raise quantrbp.errors.InvalidParameterError(
            f"matrix dimensions must be positive, got {m} x {n}"
        )
    rng = np.random.default_rng(seed)
    return MeasurementEnsemble(rng.standard_normal((m, n)) / math.sqrt(m))


@dataclasses.dataclass
class RbpDiagnostics:
    """Counts of the numerical guards that fired, summed over all edges and rounds."""

    iterations: int = 0
    floor_hits: int = 0
    ceiling_hits: int = 0
    tail_saturations: int = 0
    early_stopped: bool = False


@dataclasses.dataclass
class RbpState:
    """
    Per-edge messages, all ``m x n`` arrays indexed ``[a, i]``.

    ``xhat_edges`` and ``tau_edges`` travel from signal components to measurements,
    ``u_edges`` and ``tauout_edges`` from measurements to signal components.
    """

    xhat_edges: quantrbp.truncnorm.FloatArray
    tau_edges: quantrbp.truncnorm.FloatArray
    u_edges: quantrbp.truncnorm.FloatArray
    tauout_edges: quantrbp.truncnorm.FloatArray
    iteration: int = 0
    diagnostics: RbpDiagnostics = dataclasses.field(default_factory=RbpDiagnostics)


class RbpResult(NamedTuple):
    estimate: quantrbp.truncnorm.FloatArray
    mse_trace: Optional[List[float]]
    diagnostics: RbpDiagnostics


def init_state(
    ensemble: MeasurementEnsemble, prior: quantrbp.prior.GaussBernoulliPrior
) -> RbpState:
    """Start every edge at the prior mean 0 and the prior variance ``tau_init``."""
    shape = (ensemble.m, ensemble.n)
    return RbpState(
        xhat_edges=np.zeros(shape),
        tau_edges=np.full(shape, prior.tau_init),
        u_edges=np.zeros(shape),
        tauout_edges=np.zeros(shape),
    )


def squared_error(x: npt.ArrayLike, xhat: npt.ArrayLike) -> float:
    """Per-component squared error ``|x - xhat|² / n``."""
    diff = np.asarray(x, np.float64) - np.asarray(xhat, np.float64)
    return float(np.mean(diff * diff))


class RbpSolver:
    """
    Relaxed belief propagation for ``y = Q(A x + eta)`` under a Gauss-Bernoulli prior.

    Examples:
        ::

            solver = RbpSolver(ensemble=ensemble, channel=channel, prior=prior)
            result = solver.run(y, t_max=20, x_true=x)
            print(result.mse_trace[-1])
    """

    def __init__(
        self,
        *,
        ensemble: MeasurementEnsemble,
        channel: quantrbp.channel.QuantizedAwgnChannel,
        prior: quantrbp.prior.GaussBernoulliPrior,
        damping: float = 1.0,
    ) -> None:
        """
        Args:
            ensemble: The measurement matrix.
            channel: The quantized AWGN channel the measurements went through.
            prior: The signal prior.
            damping: Weight of the new message in the convex combination with the old
                one, in ``(0, 1]``. 1 disables damping. The first round is never damped.
        """
        if not 0 < damping <= 1:
            raise quantrbp.errors.InvalidParameterError(
                f"damping must lie in (0, 1], got {damping}"
            )
        self._ensemble = ensemble
        self._channel = channel
        self._prior = prior
        self._damping = float(damping)

    @property
    def ensemble(self) -> MeasurementEnsemble:
        return self._ensemble

    def init_state(self) -> RbpState:
        return init_state(self._ensemble, self._prior)

    def iterate(self, state: RbpState, y: npt.ArrayLike) -> RbpState:
        """
        Run one round: the measurement updates followed by the variable updates.

        The state is updated in place and returned.
        """
        y_arr = self._check_measurements(y)
        a = self._ensemble.matrix
        a2 = self._ensemble.squared
        diagnostics = state.diagnostics
        damp = self._damping < 1 and state.iteration > 0

        # Measurement updates.
        zhat_full = np.sum(a * state.xhat_edges, axis=1, keepdims=True)
        nu_full = np.sum(a2 * state.tau_edges, axis=1, keepdims=True)
        zhat = zhat_full - a * state.xhat_edges
        nu = nu_full - a2 * state.tau_edges
        low = nu < VARIANCE_FLOOR
        diagnostics.floor_hits += int(np.count_nonzero(low))
        nu = np.where(low, VARIANCE_FLOOR, nu)
        scores = self._channel.scores(y_arr[:, None], zhat, nu + self._channel.sigma2)
        diagnostics.tail_saturations += int(np.count_nonzero(scores.saturated))
        u = -scores.d1
        tauout = scores.d2
        if damp:
            u = self._damping * u + (1.0 - self._damping) * state.u_edges
            tauout = self._damping * tauout + (1.0 - self._damping) * state.tauout_edges
        state.u_edges = u
        state.tauout_edges = tauout

        # Variable updates.
        num_full = np.sum(a * u, axis=0, keepdims=True)
        den_full = np.sum(a2 * tauout, axis=0, keepdims=True)
        num = num_full - a * u
        den = den_full - a2 * tauout
        low = den < VARIANCE_FLOOR
        diagnostics.floor_hits += int(np.count_nonzero(low))
        den = np.where(low, VARIANCE_FLOOR, den)
        nu_in = 1.0 / den
        posterior = self._prior.posterior(num / den, nu_in)
        # A posterior variance never exceeds the nonzero-component variance plus nu.
        ceiling = self._prior.second_moment + nu_in
        diagnostics.floor_hits += int(np.count_nonzero(posterior.var < VARIANCE_FLOOR))
        diagnostics.ceiling_hits += int(np.count_nonzero(posterior.var > ceiling))
        xhat = posterior.mean
        tau = np.clip(posterior.var, VARIANCE_FLOOR, ceiling)
        if damp:
            xhat = self._damping * xhat + (1.0 - self._damping) * state.xhat_edges
            tau = self._damping * tau + (1.0 - self._damping) * state.tau_edges
        state.xhat_edges = xhat
        state.tau_edges = tau

        state.iteration += 1
        diagnostics.iterations = state.iteration
        return state

    def estimate(self, state: RbpState) -> quantrbp.truncnorm.FloatArray:
        """
        Signal estimate from the full sums over all measurements of each component.

        Raises:
            InvalidStateError: If no round has been run on ``state`` yet.
        """
        if state.iteration < 1:
            raise quantrbp.errors.InvalidStateError(
                "the estimate needs at least one completed round"
            )
        a = self._ensemble.matrix
        a2 = self._ensemble.squared
        num = np.sum(a * state.u_edges, axis=0)
        den = np.maximum(np.sum(a2 * state.tauout_edges, axis=0), VARIANCE_FLOOR)
        return self._prior.input_mean(num / den, 1.0 / den)

    def run(
        self,
        y: npt.ArrayLike,
        *,
        t_max: int = 20,
        x_true: Optional[npt.ArrayLike] = None,
        early_stop_tol: Optional[float] = None,
    ) -> RbpResult:
        """
        Reconstruct the signal from the measurement indices ``y``.

        Args:
            y: 1-based cell index of every measurement.
            t_max: Maximum number of rounds.
            x_true: The true signal. When given, the result carries the squared error
                after every round, preceded by the error of the all-zero start.
            early_stop_tol: Stop once consecutive estimates differ by less than this in
                squared distance per component, relative to the prior variance.
                ``None`` always runs ``t_max`` rounds.

        Returns:
            An ``RbpResult`` with the final estimate, the optional trace and the
            diagnostics.
        """
        if t_max < 1:
            raise quantrbp.errors.InvalidParameterError(
                f"t_max must be positive, got {t_max}"
            )
        state = self.init_state()
        trace: Optional[List[float]] = None
        if x_true is not None:
            x_arr = np.asarray(x_true, dtype=np.float64)
            trace = [squared_error(x_arr, np.zeros(self._ensemble.n))]

        previous: Optional[quantrbp.truncnorm.FloatArray] = None
        xhat = np.zeros(self._ensemble.n)
        for _ in range(t_max):
            self.iterate(state, y)
            xhat = self.estimate(state)
            if trace is not None:
                trace.append(squared_error(x_arr, xhat))
            if early_stop_tol is not None and previous is not None:
                change = squared_error(previous, xhat) / self._prior.tau_init
                if change < early_stop_tol:
                    state.diagnostics.early_stopped = True
                    break
            previous = xhat

        logger.debug("Relaxed BP finished: %s", state.diagnostics)
        return RbpResult(estimate=xhat, mse_trace=trace, diagnostics=state.diagnostics)

    def _check_measurements(self, y: npt.ArrayLike) -> quantrbp.quantizer.IndexArray:
        y_arr = np.asarray(y)
        if y_arr.shape != (self._ensemble.m,):
            raise quantrbp.errors.InvalidInputError(
                f"expected {self._ensemble.m} measurements, got shape {y_arr.shape}"
            )
        return y_arr
