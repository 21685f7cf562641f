"""
Seeded experiments: sample a signal, measure, quantize, reconstruct and score.

Trial ``k`` of an experiment with master seed ``s`` draws everything from
``numpy.random.SeedSequence(entropy=s, spawn_key=(k,))``, so a report is fully
determined by its configuration and trials do not depend on each other or on their
order.
"""
import concurrent.futures
import csv
import dataclasses
import json
import logging
import math
import os
import time
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

import quantrbp
import quantrbp.baselines
import quantrbp.channel
import quantrbp.config
import quantrbp.designer
import quantrbp.errors
import quantrbp.prior
import quantrbp.quantizer
import quantrbp.rbp
import quantrbp.state_evolution
import quantrbp.truncnorm

__all__ = [
    "SCHEMA_VERSION",
    "SWEEP_COLUMNS",
    "TrialRecord",
    "RunReport",
    "SweepRow",
    "SweepResult",
    "trial_seeds",
    "prepare",
    "run_experiment",
    "emit_rate_sweep",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SWEEP_COLUMNS = (
    "rate_x",
    "method",
    "quantizer_kind",
    "beta",
    "mse_db_predicted",
    "mse_db_empirical",
)

PathLike = Union[str, "os.PathLike[str]"]


def _db(value: Optional[float]) -> Optional[float]:
    if value is None or not value > 0:
        return None
    return quantrbp.state_evolution.to_db(value)


@dataclasses.dataclass(frozen=True)
class TrialRecord:
    """
    Outcome of one trial. A failed trial has ``error`` set and no MSE.

    ``predicted_mse`` is only filled for LMMSE trials, whose prediction depends on the
    drawn matrix.
    """

    index: int
    seed: int
    mse: Optional[float] = None
    iterations: int = 0
    floor_hits: int = 0
    ceiling_hits: int = 0
    tail_saturations: int = 0
    early_stopped: bool = False
    predicted_mse: Optional[float] = None
    mse_trace: Optional[Tuple[float, ...]] = None
    error: Optional[Dict[str, str]] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def mse_db(self) -> Optional[float]:
        return _db(self.mse)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "seed": {"entropy": self.seed, "spawn_key": [self.index]},
            "mse": self.mse,
            "mse_db": self.mse_db,
            "iterations": self.iterations,
            "floor_hits": self.floor_hits,
            "ceiling_hits": self.ceiling_hits,
            "tail_saturations": self.tail_saturations,
            "early_stopped": self.early_stopped,
            "predicted_mse": self.predicted_mse,
            "mse_trace": None if self.mse_trace is None else list(self.mse_trace),
            "error": self.error,
        }


@dataclasses.dataclass(frozen=True)
class RunReport:
    """
    Everything an experiment produced.

    The JSON form carries the schema and code versions, the configuration echo, the
    quantizer, every trial and the aggregates. Wall-clock timings are only logged, so
    ``to_json`` is byte-identical for identical configurations.
    """

    config: quantrbp.config.ExperimentConfig
    quantizer: quantrbp.quantizer.RegularScalarQuantizer
    num_measurements: int
    beta: float
    input_std: float
    trials: Tuple[TrialRecord, ...]
    se_trace: Optional[quantrbp.state_evolution.SeTrace] = None

    @property
    def completed(self) -> Tuple[TrialRecord, ...]:
        return tuple(trial for trial in self.trials if not trial.failed)

    @property
    def partial(self) -> bool:
        return len(self.completed) < len(self.trials)

    @property
    def median_mse(self) -> Optional[float]:
        mses = [trial.mse for trial in self.completed if trial.mse is not None]
        return float(np.median(mses)) if mses else None

    @property
    def mean_mse(self) -> Optional[float]:
        mses = [trial.mse for trial in self.completed if trial.mse is not None]
        return float(np.mean(mses)) if mses else None

    @property
    def median_mse_db(self) -> Optional[float]:
        return _db(self.median_mse)

    @property
    def mean_mse_db(self) -> Optional[float]:
        return _db(self.mean_mse)

    @property
    def predicted_mse(self) -> Optional[float]:
        """The SE fixed point for relaxed BP, the mean LMMSE prediction otherwise."""
        if self.se_trace is not None:
            return self.se_trace.fixed_point
        predictions = [
            trial.predicted_mse
            for trial in self.completed
            if trial.predicted_mse is not None
        ]
        return float(np.mean(predictions)) if predictions else None

    @property
    def predicted_mse_db(self) -> Optional[float]:
        return _db(self.predicted_mse)

    @property
    def gap_db(self) -> Optional[float]:
        """Median empirical MSE minus the prediction, in dB."""
        median = self.median_mse_db
        predicted = self.predicted_mse_db
        if median is None or predicted is None:
            return None
        return median - predicted

    def to_dict(self) -> Dict[str, Any]:
        se_trace = None
        if self.se_trace is not None:
            se_trace = {
                "values": list(self.se_trace.values),
                "mse_db": self.se_trace.mse_db,
                "converged": self.se_trace.converged,
                "nonmonotone_steps": self.se_trace.nonmonotone_steps,
                "guard_hits": self.se_trace.guard_hits,
            }
        return {
            "schema_version": SCHEMA_VERSION,
            "code_version": quantrbp.__version__,
            "config": self.config.to_dict(),
            "resolved": {
                "num_measurements": self.num_measurements,
                "beta": self.beta,
                "num_levels": self.quantizer.num_levels,
                "input_std": self.input_std,
            },
            "quantizer": self.quantizer.to_dict(),
            "summary": {
                "trials": len(self.trials),
                "completed": len(self.completed),
                "partial": self.partial,
                "median_mse": self.median_mse,
                "median_mse_db": self.median_mse_db,
                "mean_mse": self.mean_mse,
                "mean_mse_db": self.mean_mse_db,
                "predicted_mse": self.predicted_mse,
                "predicted_mse_db": self.predicted_mse_db,
                "gap_db": self.gap_db,
            },
            "se_trace": se_trace,
            "trials": [trial.to_dict() for trial in self.trials],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write_json(self, path: PathLike) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())


class _Setup(NamedTuple):
    prior: quantrbp.prior.GaussBernoulliPrior
    channel: quantrbp.channel.QuantizedAwgnChannel
    num_measurements: int
    beta: float
    input_std: float


def trial_seeds(
    master_seed: int, index: int
) -> Tuple[np.random.SeedSequence, np.random.SeedSequence, np.random.SeedSequence]:
    """The seeds of the signal, the matrix and the channel noise of trial ``index``."""
    signal, matrix, noise = np.random.SeedSequence(
        entropy=master_seed, spawn_key=(index,)
    ).spawn(3)
    return signal, matrix, noise


def prepare(
    config: quantrbp.config.ExperimentConfig,
    quantizer: Optional[quantrbp.quantizer.RegularScalarQuantizer] = None,
) -> Tuple[_Setup, Optional[quantrbp.state_evolution.SeTrace]]:
    """
    Resolve the quantizer and the channel of ``config``, plus the SE trace for RBP.

    Args:
        config: The experiment.
        quantizer: Use this quantizer instead of the one ``config.quantizer`` names.
    """
    prior = config.prior()
    beta = config.effective_beta
    input_std = math.sqrt(beta * prior.tau_init + config.sigma2)
    if quantizer is None:
        quantizer = _resolve_quantizer(config, prior, beta, input_std)
    channel = quantrbp.channel.QuantizedAwgnChannel(
        quantizer=quantizer, sigma2=config.sigma2
    )
    setup = _Setup(
        prior=prior,
        channel=channel,
        num_measurements=config.num_measurements,
        beta=beta,
        input_std=input_std,
    )
    se_trace = None
    if config.method == "rbp":
        se_trace = quantrbp.state_evolution.se_recursion(
            quantrbp.state_evolution.SeConfig(
                beta=beta,
                sigma2=config.sigma2,
                prior=prior,
                quantizer=quantizer,
                t_max=config.se.t_max,
                fp_tol=config.se.fp_tol,
            )
        )
    return setup, se_trace


def run_experiment(
    config: quantrbp.config.ExperimentConfig,
    *,
    quantizer: Optional[quantrbp.quantizer.RegularScalarQuantizer] = None,
) -> RunReport:
    """
    Run ``config.trials`` independent trials and aggregate them.

    A trial that raises a ``QuantRbpError`` is recorded with its error and the report
    is marked partial; the other trials are unaffected.

    Args:
        config: The experiment.
        quantizer: Use this quantizer instead of the one ``config.quantizer`` names.
    """
    start = time.perf_counter()
    setup, se_trace = prepare(config, quantizer)
    with concurrent.futures.ThreadPoolExecutor(
        max_workers=config.workers
    ) as executor:
        futures = [
            executor.submit(_run_trial, config, setup, index)
            for index in range(config.trials)
        ]
        records = tuple(future.result() for future in futures)

    report = RunReport(
        config=config,
        quantizer=setup.channel.quantizer,
        num_measurements=setup.num_measurements,
        beta=setup.beta,
        input_std=setup.input_std,
        trials=records,
        se_trace=se_trace,
    )
    if report.partial:
        logger.warning(
            "%d of %d trials failed", len(records) - len(report.completed), len(records)
        )
    logger.info(
        "%s with %d levels at beta=%.4g: median %s dB, predicted %s dB (%.1f s)",
        config.method,
        setup.channel.quantizer.num_levels,
        setup.beta,
        _format_db(report.median_mse_db),
        _format_db(report.predicted_mse_db),
        time.perf_counter() - start,
    )
    return report


def _format_db(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def _resolve_quantizer(
    config: quantrbp.config.ExperimentConfig,
    prior: quantrbp.prior.GaussBernoulliPrior,
    beta: float,
    input_std: float,
) -> quantrbp.quantizer.RegularScalarQuantizer:
    if config.quantizer == "uniform":
        return quantrbp.quantizer.design_uniform(config.levels, input_std)
    if config.quantizer == "optimal":
        uniform = quantrbp.quantizer.design_uniform(config.levels, input_std)
        se_config = quantrbp.state_evolution.SeConfig(
            beta=beta, sigma2=config.sigma2, prior=prior, quantizer=uniform
        )
        settings = dataclasses.replace(config.optimizer, seed=config.seed)
        return quantrbp.designer.optimize_boundaries(
            config.levels, se_config, settings
        ).quantizer
    return quantrbp.quantizer.RegularScalarQuantizer.load(config.quantizer)


def _run_trial(
    config: quantrbp.config.ExperimentConfig, setup: _Setup, index: int
) -> TrialRecord:
    start = time.perf_counter()
    signal_seed, matrix_seed, noise_seed = trial_seeds(config.seed, index)
    try:
        x = setup.prior.sample_signal(config.n, signal_seed)
        ensemble = quantrbp.rbp.generate_matrix(
            setup.num_measurements, config.n, matrix_seed
        )
        y = setup.channel.measure(ensemble.measure(x), noise_seed)
        if config.method == "rbp":
            record = _reconstruct_rbp(config, setup, ensemble, x, y, index)
        else:
            record = _reconstruct_lmmse(config, setup, ensemble, x, y, index)
    except quantrbp.errors.QuantRbpError as e:
        logger.warning("Trial %d failed: %s", index, e)
        return TrialRecord(
            index=index,
            seed=config.seed,
            error={"error": e.__class__.__name__, "message": str(e)},
        )
    logger.debug(
        "Trial %d: %.4f dB in %.2f s",
        index,
        quantrbp.state_evolution.to_db(record.mse) if record.mse else -math.inf,
        time.perf_counter() - start,
    )
    return record


def _reconstruct_rbp(
    config: quantrbp.config.ExperimentConfig,
    setup: _Setup,
    ensemble: quantrbp.rbp.MeasurementEnsemble,
    x: quantrbp.truncnorm.FloatArray,
    y: quantrbp.quantizer.IndexArray,
    index: int,
) -> TrialRecord:
    solver = quantrbp.rbp.RbpSolver(
        ensemble=ensemble,
        channel=setup.channel,
        prior=setup.prior,
        damping=config.rbp.damping,
    )
    result = solver.run(
        y, t_max=config.t_max, x_true=x, early_stop_tol=config.rbp.early_stop_tol
    )
    diagnostics = result.diagnostics
    return TrialRecord(
        index=index,
        seed=config.seed,
        mse=quantrbp.rbp.squared_error(x, result.estimate),
        iterations=diagnostics.iterations,
        floor_hits=diagnostics.floor_hits,
        ceiling_hits=diagnostics.ceiling_hits,
        tail_saturations=diagnostics.tail_saturations,
        early_stopped=diagnostics.early_stopped,
        mse_trace=None if result.mse_trace is None else tuple(result.mse_trace),
    )


def _reconstruct_lmmse(
    config: quantrbp.config.ExperimentConfig,
    setup: _Setup,
    ensemble: quantrbp.rbp.MeasurementEnsemble,
    x: quantrbp.truncnorm.FloatArray,
    y: quantrbp.quantizer.IndexArray,
    index: int,
) -> TrialRecord:
    model = quantrbp.baselines.LmmseModel.for_channel(
        ensemble=ensemble,
        prior=setup.prior,
        channel=setup.channel,
        input_std=setup.input_std,
    )
    y_dequantized = quantrbp.baselines.dequantize(
        setup.channel.quantizer, y, setup.input_std
    )
    xhat = quantrbp.baselines.lmmse_reconstruct(model, y_dequantized)
    return TrialRecord(
        index=index,
        seed=config.seed,
        mse=quantrbp.rbp.squared_error(x, xhat),
        predicted_mse=model.predicted_mse(),
    )


@dataclasses.dataclass(frozen=True)
class SweepRow:
    rate_x: float
    method: str
    quantizer_kind: str
    beta: float
    num_levels: int
    mse_db_predicted: float
    mse_db_empirical: Optional[float] = None


@dataclasses.dataclass(frozen=True)
class SweepResult:
    rows: Tuple[SweepRow, ...]
    csv_path: str
    plot_script_path: str


_PLOT_SCRIPT = '''\
"""Plot the MSE of every method and quantizer against the rate.

Usage: python {script_name} [{csv_name}]
Needs matplotlib. Solid lines are predictions, markers are simulations.
"""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
curves = defaultdict(list)
with open(path, newline="") as f:
    for row in csv.DictReader(f):
        curves[(row["method"], row["quantizer_kind"])].append(row)

fig, ax = plt.subplots(figsize=(6, 4.5))
for (method, kind), rows in sorted(curves.items()):
    rows.sort(key=lambda row: float(row["rate_x"]))
    label = f"{{method.upper()}}, {{kind}} quantizer"
    rates = [float(row["rate_x"]) for row in rows]
    predicted = [float(row["mse_db_predicted"]) for row in rows]
    (line,) = ax.plot(rates, predicted, label=label)
    measured = [
        (float(row["rate_x"]), float(row["mse_db_empirical"]))
        for row in rows
        if row["mse_db_empirical"]
    ]
    if measured:
        ax.plot(*zip(*measured), "o", color=line.get_color())

ax.set_xlabel("Rate (bits / component)")
ax.set_ylabel("MSE (dB)")
ax.grid(True, alpha=0.3)
ax.legend()
fig.tight_layout()
fig.savefig("{figure_name}")
plt.show()
'''


def emit_rate_sweep(
    config: quantrbp.config.SweepConfig, out_dir: PathLike
) -> SweepResult:
    """
    Pick the best measurement ratio of every (rate, method, quantizer) cell and
    optionally simulate it.

    Writes ``rate_sweep.csv`` with the columns of ``SWEEP_COLUMNS`` and a matplotlib
    script ``plot_rate_sweep.py`` that draws it. A cell whose prediction fails is left
    out; a cell whose simulation fails keeps an empty ``mse_db_empirical``.
    """
    os.makedirs(out_dir, exist_ok=True)
    prior = quantrbp.prior.GaussBernoulliPrior(rho=config.rho)
    settings = dataclasses.replace(config.optimizer, seed=config.seed)
    combos = [tuple(combo.split(":", 1)) for combo in config.combos]

    rows: List[SweepRow] = []
    for rate in config.rates:
        candidates = _sweep_candidates(config, prior, settings, rate, combos)
        for method, kind in combos:
            options = candidates.get((method, kind), [])
            if not options:
                logger.warning(
                    "No prediction for %s with %s quantizer at rate %g",
                    method,
                    kind,
                    rate,
                )
                continue
            beta, num_levels, predicted, quantizer = min(
                options, key=lambda option: option[2]
            )
            empirical = None
            if config.empirical:
                empirical = _sweep_empirical(
                    config, rate, method, kind, beta, num_levels, quantizer
                )
            rows.append(
                SweepRow(
                    rate_x=rate,
                    method=method,
                    quantizer_kind=kind,
                    beta=beta,
                    num_levels=num_levels,
                    mse_db_predicted=quantrbp.state_evolution.to_db(predicted),
                    mse_db_empirical=empirical,
                )
            )

    csv_path = os.path.join(out_dir, "rate_sweep.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.rate_x,
                    row.method,
                    row.quantizer_kind,
                    repr(row.beta),
                    repr(row.mse_db_predicted),
                    "" if row.mse_db_empirical is None else repr(row.mse_db_empirical),
                ]
            )
    script_path = os.path.join(out_dir, "plot_rate_sweep.py")
    with open(script_path, "w") as f:
        f.write(
            _PLOT_SCRIPT.format(
                script_name="plot_rate_sweep.py",
                csv_name="rate_sweep.csv",
                figure_name="rate_sweep.pdf",
            )
        )
    logger.info("Wrote %d sweep rows to %s", len(rows), csv_path)
    return SweepResult(
        rows=tuple(rows), csv_path=csv_path, plot_script_path=script_path
    )


# (beta, num_levels, predicted MSE, quantizer)
_Candidate = Tuple[float, int, float, quantrbp.quantizer.RegularScalarQuantizer]


def _sweep_candidates(
    config: quantrbp.config.SweepConfig,
    prior: quantrbp.prior.GaussBernoulliPrior,
    settings: quantrbp.designer.OptimizerSettings,
    rate: float,
    combos: Sequence[Tuple[str, ...]],
) -> Dict[Tuple[str, ...], List[_Candidate]]:
    problem = quantrbp.designer.DesignProblem.from_rate(
        rate,
        prior=prior,
        sigma2=config.sigma2,
        max_bits=config.max_bits,
        settings=settings,
    )
    kinds = {kind for _, kind in combos}
    methods = {method for method, _ in combos}

    quantizers: Dict[Tuple[str, float], quantrbp.quantizer.RegularScalarQuantizer] = {}
    se_predictions: Dict[Tuple[str, float], float] = {}
    levels: Dict[float, int] = {}
    for beta in problem.beta_grid:
        try:
            levels[beta] = problem.levels_for(beta)
        except quantrbp.errors.InvalidParameterError as e:
            logger.warning("Skipping beta=%g at rate %g: %s", beta, rate, e)

    if "optimal" in kinds:
        try:
            design = quantrbp.designer.sweep_beta(problem, workers=config.workers)
        except quantrbp.errors.QuantRbpError as e:
            logger.warning("Design failed at rate %g: %s", rate, e)
        else:
            for row in design.table:
                std = quantrbp.designer.input_std_for(problem.se_config(row.beta))
                optimal = quantrbp.quantizer.RegularScalarQuantizer(
                    boundaries=row.boundaries
                )
                quantizers["optimal", row.beta] = optimal.with_levels(
                    optimal.levels_for_gaussian(std)
                )
                se_predictions["optimal", row.beta] = row.fixed_point
                se_predictions["uniform", row.beta] = row.uniform_fixed_point

    for beta, num_levels in levels.items():
        se_config = problem.se_config(beta)
        uniform = quantrbp.quantizer.design_uniform(
            num_levels, quantrbp.designer.input_std_for(se_config)
        )
        quantizers["uniform", beta] = uniform
        if "rbp" in methods and ("uniform", beta) not in se_predictions:
            try:
                trace = quantrbp.state_evolution.se_recursion(
                    se_config.with_quantizer(uniform)
                )
            except quantrbp.errors.QuantRbpError as e:
                logger.warning("SE failed at beta=%g: %s", beta, e)
            else:
                se_predictions["uniform", beta] = trace.fixed_point

    candidates: Dict[Tuple[str, ...], List[_Candidate]] = {}
    for method, kind in combos:
        options: List[_Candidate] = []
        for beta, num_levels in levels.items():
            quantizer = quantizers.get((kind, beta))
            if quantizer is None:
                continue
            if method == "rbp":
                predicted = se_predictions.get((kind, beta))
            else:
                predicted = _lmmse_prediction(config, prior, beta, quantizer)
            if predicted is not None:
                options.append((beta, num_levels, predicted, quantizer))
        candidates[method, kind] = options
    return candidates


def _lmmse_prediction(
    config: quantrbp.config.SweepConfig,
    prior: quantrbp.prior.GaussBernoulliPrior,
    beta: float,
    quantizer: quantrbp.quantizer.RegularScalarQuantizer,
) -> Optional[float]:
    """The LMMSE prediction on the matrix the first simulated trial would draw."""
    m = max(1, int(round(config.n / beta)))
    input_std = math.sqrt(config.n / m * prior.tau_init + config.sigma2)
    _, matrix_seed, _ = trial_seeds(config.seed, 0)
    try:
        model = quantrbp.baselines.LmmseModel.for_channel(
            ensemble=quantrbp.rbp.generate_matrix(m, config.n, matrix_seed),
            prior=prior,
            channel=quantrbp.channel.QuantizedAwgnChannel(
                quantizer=quantizer, sigma2=config.sigma2
            ),
            input_std=input_std,
        )
        return model.predicted_mse()
    except quantrbp.errors.QuantRbpError as e:
        logger.warning("LMMSE prediction failed at beta=%g: %s", beta, e)
        return None


def _sweep_empirical(
    config: quantrbp.config.SweepConfig,
    rate: float,
    method: str,
    kind: str,
    beta: float,
    num_levels: int,
    quantizer: quantrbp.quantizer.RegularScalarQuantizer,
) -> Optional[float]:
    experiment = quantrbp.config.ExperimentConfig(
        n=config.n,
        beta=beta,
        rho=config.rho,
        sigma2=config.sigma2,
        rate_x=rate,
        num_levels=num_levels,
        quantizer=kind,
        method=method,
        trials=config.trials,
        t_max=config.t_max,
        seed=config.seed,
        workers=config.workers,
        rbp=config.rbp,
        se=config.se,
        optimizer=config.optimizer,
    )
    try:
        report = run_experiment(experiment, quantizer=quantizer)
    except quantrbp.errors.QuantRbpError as e:
        logger.warning(
            "Simulation of %s with %s quantizer at rate %g failed: %s",
            method,
            kind,
            rate,
            e,
        )
        return None
    return report.median_mse_db
