"""Two-phase minibatch training loop: Adam preconditioning, then L-BFGS epochs.

Random draws come from one generator seeded with ``config.seed`` in a fixed
order: network initialization, test split, then per epoch the k samples and
batch permutations (see ``pinnflow.geometry.pipeline``).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from pinnflow.config import Phase, TerminationReason, TrainConfig
from pinnflow.errors import (
    ConfigurationError,
    ContractViolationError,
    DimensionMismatchError,
    NonFiniteGradientError,
    NonFiniteLossError,
)
from pinnflow.evaluation.field import nearest_reference_interpolation, network_fields
from pinnflow.evaluation.metrics import test_loss
from pinnflow.geometry.pipeline import EpochSampler, SampledBatch
from pinnflow.geometry.points import CollocationSet, ReferenceSolution, load_point_sets, load_reference, split_test_set
from pinnflow.geometry.sampler import DomainSampler
from pinnflow.geometry.scenarios import ScenarioRegistry, ScenarioSpec
from pinnflow.network.checkpoint import Checkpoint, CheckpointHeader, save_checkpoint
from pinnflow.network.layout import OutputLayout
from pinnflow.network.params import NetworkParams, init_params
from pinnflow.optim.adam import AdamState, adam_step
from pinnflow.optim.lbfgs import LbfgsState, minimize_lbfgs
from pinnflow.optim.linesearch import LineSearchFailure
from pinnflow.physics.objective import PhysicsObjective, TrainingBatch, loss_breakdown
from pinnflow.physics.scales import nondimensionalize
from pinnflow.training.log import ConvergenceLog, IterationRecord

console = Console()
logger = logging.getLogger(__name__)

# Consecutive epochs without a single retained point before training gives up
MAX_EMPTY_EPOCHS = 10

DESCENT_FAILURES = (LineSearchFailure.NOT_DESCENT, LineSearchFailure.STEP_UNDERFLOW)


@dataclass
class TrainResult:
    """Everything a training run produces."""

    config: TrainConfig
    checkpoint: Checkpoint
    log: ConvergenceLog
    adam_checkpoint: Checkpoint | None = None
    elapsed_seconds: float = 0.0
    step_seconds: list[float] = field(default_factory=list)
    test_points: int = 0
    error: str | None = None

    @property
    def aborted(self) -> bool:
        return self.log.termination is TerminationReason.NON_FINITE_ABORT

    @property
    def mean_step_seconds(self) -> float:
        return float(np.mean(self.step_seconds)) if self.step_seconds else 0.0


def layer_widths(config: TrainConfig) -> tuple[int, ...]:
    """Network widths a config asks for, input to output."""
    net = config.network
    layout = OutputLayout.for_formulation(net.n_sd, net.formulation)
    return (net.n_sd + (1 if net.parametric else 0),) + (net.width,) * net.hidden_layers + (layout.size,)


def load_scenario(config: TrainConfig) -> ScenarioSpec:
    registry = ScenarioRegistry()
    if config.scenario.file:
        registry.load_file(config.scenario.file)
    return registry.build(
        config.scenario.name,
        n_sd=config.network.n_sd,
        k_range=config.scenario.k_range,
        **config.scenario.constants,
    )


def load_points(config: TrainConfig) -> CollocationSet:
    """Point file from the config, or a generated set when only a sampler is named."""
    if config.data.points:
        return load_point_sets(config.data.points)
    if config.data.sampler:
        return DomainSampler.build(config.data.sampler, config.data.sample_volume, seed=config.seed)
    raise ConfigurationError("data.points or data.sampler must be set")


def load_reference_for(config: TrainConfig, points: CollocationSet) -> ReferenceSolution | None:
    if config.data.reference:
        return load_reference(config.data.reference)
    if config.data.sampler == "channel":
        return DomainSampler.channel_reference(points.volume.positions, mu=config.scales.mu)
    return None


def prepare_run_directory(path: str | Path, overwrite: bool = False) -> Path:
    """Create the run directory; an existing nonempty one is only reused with ``overwrite``."""
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise ConfigurationError(f"run directory {out} already exists; pass --overwrite to replace it")
    out.mkdir(parents=True, exist_ok=True)
    return out


class Trainer:
    """Owns the generator, parameters, optimizer states and convergence log of one run."""

    def __init__(
        self,
        config: TrainConfig,
        points: CollocationSet,
        reference: ReferenceSolution | None = None,
        scenario: ScenarioSpec | None = None,
        params: NetworkParams | None = None,
        log: ConvergenceLog | None = None,
        output_dir: str | Path | None = None,
    ) -> None:
        net = config.network
        if points.size == 0:
            raise ContractViolationError("point set is empty; nothing to train on")
        if points.n_sd != net.n_sd:
            raise DimensionMismatchError(f"points are {points.n_sd}D but the network is configured for {net.n_sd}D")
        self.config = config
        self.scenario = scenario or load_scenario(config)
        if self.scenario.parametric and not net.parametric:
            raise ConfigurationError(
                f"scenario '{self.scenario.name}' varies k; set network.parametric to true"
            )
        self.layout = OutputLayout.for_formulation(net.n_sd, net.formulation)
        self.re = config.reynolds
        self.workers = config.worker_count
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.rng = np.random.default_rng(config.seed)

        if params is None:
            params = init_params(
                net.hidden_layers,
                net.width,
                net.n_sd,
                net.parametric,
                config.seed,
                formulation=net.formulation,
                activation=net.activation,
                rng=self.rng,
            )
        self.params = params
        self.header = CheckpointHeader.from_config(
            config,
            params.layer_widths,
            self.scenario.k_range if net.parametric else None,
        )
        self.log = log if log is not None else ConvergenceLog()
        self.iteration = self.log.last_iteration
        self.step_seconds: list[float] = []
        self.adam_checkpoint: Checkpoint | None = None
        # last parameters whose loss evaluated finite
        self.good = params

        self.train_points, test = split_test_set(points, config.data.test_fraction, self.rng)
        self._prepare_test(test, reference)
        self.sampler = EpochSampler(self.train_points, self.scenario, config.optim.max_batch_size, self.rng)
        self.epoch = -1

    # ── test set ───────────────────────────────────────────────────────

    def _network_inputs(self, positions: np.ndarray, k: float) -> np.ndarray:
        x = nondimensionalize(self.config.scales, position=positions).position
        if self.config.network.parametric:
            x = np.column_stack([x, np.full(len(x), k / self.config.scales.l_ref)])
        return x

    def _prepare_test(self, test: CollocationSet, reference: ReferenceSolution | None) -> None:
        positions = test.volume.positions
        k_ref = self.scenario.k_ref
        inside = self.scenario.inside_fdn.evaluate(positions, np.full(len(positions), k_ref))
        positions = positions[inside]
        self.test_points = len(positions)
        self.test_inputs = self._network_inputs(positions, k_ref)
        self.test_reference: tuple[np.ndarray, np.ndarray] | None = None
        if reference is not None and self.test_points:
            matched = nearest_reference_interpolation(reference, positions)
            scaled = nondimensionalize(self.config.scales, velocity=matched.velocity, pressure=matched.pressure)
            self.test_reference = (scaled.velocity, scaled.pressure)

    def evaluate_test(self) -> tuple[float | None, float | None]:
        """(L_test, None) against the reference, or (None, held-out L_f) without one."""
        if not self.test_points:
            return None, None
        if self.test_reference is not None:
            velocity, pressure = network_fields(self.params, self.layout, self.test_inputs, self.workers)
            return test_loss(velocity, pressure, *self.test_reference), None
        n_in = self.test_inputs.shape[1]
        held_out = TrainingBatch(
            volume=self.test_inputs,
            dirichlet=np.zeros((0, n_in)),
            dirichlet_velocity=np.zeros((0, self.layout.n_sd)),
            neumann=np.zeros((0, n_in)),
            neumann_pressure=np.zeros(0),
        )
        loss = loss_breakdown(
            self.params, held_out, self.layout, self.re, self.config.loss.f_bc, self.config.loss.f_sigma, self.workers
        )
        return None, loss.l_f

    # ── bookkeeping ────────────────────────────────────────────────────

    def _objective(self, batch: SampledBatch) -> PhysicsObjective:
        loss = self.config.loss
        return PhysicsObjective(
            self.params,
            batch.to_training_batch(self.config.scales, self.config.network.parametric),
            self.layout,
            self.re,
            loss.f_bc,
            loss.f_sigma,
            self.workers,
        )

    def _record(self, phase: Phase, batch: int, breakdown) -> IterationRecord:
        self.iteration += 1
        entry = self.log.record(IterationRecord.from_breakdown(self.iteration, phase, batch, self.epoch, breakdown))
        if self.iteration % self.config.data.test_interval == 0:
            self.log.attach_test(*self.evaluate_test())
        return entry

    def _next_epoch(self) -> list[SampledBatch]:
        empty = 0
        while True:
            batches = self.sampler.next_epoch()
            self.epoch = self.sampler.epoch - 1
            if batches:
                return batches
            empty += 1
            logger.warning("epoch %d retained no training points; skipped", self.epoch)
            if empty >= MAX_EMPTY_EPOCHS or not self.scenario.parametric:
                raise ContractViolationError("scenario filter excludes every training point")

    def _checkpoint(self, name: str) -> Checkpoint:
        checkpoint = Checkpoint(header=self.header, params=self.params)
        if self.output_dir is not None:
            save_checkpoint(checkpoint, self.output_dir / f"checkpoint_{name}.json")
            if self.config.output.write_binary:
                save_checkpoint(checkpoint, self.output_dir / f"checkpoint_{name}.npz")
        return checkpoint

    # ── phases ─────────────────────────────────────────────────────────

    def _adam_phase(self, progress, task) -> None:
        optim = self.config.optim
        state = AdamState.create(
            self.params.n_params, lr=optim.adam_lr, beta1=optim.adam_beta1, beta2=optim.adam_beta2, eps=optim.adam_eps
        )
        vector = self.params.to_vector()
        queue: list[SampledBatch] = []
        for step in range(optim.adam_iters):
            if not queue:
                queue = self._next_epoch()
            batch = queue.pop(0)
            started = time.perf_counter()
            objective = self._objective(batch)
            _, grad, breakdown = objective.evaluate(self.params)
            self.good = self.params
            self._record(Phase.ADAM, batch.index, breakdown)
            state, vector = adam_step(state, grad, vector)
            self.params = self.params.with_vector(vector)
            self.step_seconds.append(time.perf_counter() - started)
            progress.update(task, advance=1)
            if step % max(1, optim.adam_iters // 20) == 0:
                self._log_iteration(Phase.ADAM)

    def _lbfgs_phase(self, progress, task) -> TerminationReason:
        optim = self.config.optim
        for _ in range(optim.max_epochs):
            batches = self._next_epoch()
            stalled = 0
            for batch in batches:
                objective = self._objective(batch)
                template = self.params
                started = time.perf_counter()

                def accepted(it: int, f: float, x: np.ndarray) -> None:
                    self.params = self.good = template.with_vector(x)
                    self._record(Phase.LBFGS, batch.index, objective.breakdown)

                run = minimize_lbfgs(
                    objective,
                    template.to_vector(),
                    LbfgsState(capacity=optim.lbfgs_history),
                    optim.lbfgs_inner,
                    c1=optim.wolfe_c1,
                    c2=optim.wolfe_c2,
                    max_evals=optim.max_line_evals,
                    callback=accepted,
                )
                if run.iterations:
                    self.step_seconds.append((time.perf_counter() - started) / run.iterations)
                if run.failure in DESCENT_FAILURES and run.iterations == 0:
                    stalled += 1
                elif run.failure is not None:
                    logger.debug("batch %d stopped early: %s", batch.index, run.failure.value)
            progress.update(task, advance=1)
            self._log_iteration(Phase.LBFGS)
            if stalled == len(batches):
                logger.info("no batch found a descent direction in epoch %d", self.epoch)
                return TerminationReason.DESCENT_FAILURE
        return TerminationReason.MAX_EPOCHS

    def run(self, quiet: bool = False) -> TrainResult:
        """Execute both phases.

        A non-finite loss or gradient ends the run with the last parameters
        whose loss was finite and termination reason ``non-finite-abort``.
        """
        start_time = time.time()
        optim = self.config.optim
        error = None

        if not quiet:
            console.print(
                f"[bold green]pinnflow training[/bold green] | "
                f"scenario: {self.scenario.name} | Re: {self.re:.4g} | "
                f"widths: {'x'.join(str(w) for w in self.params.layer_widths)} | "
                f"seed: {self.config.seed}"
            )

        progress_ctx = Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
            TimeElapsedColumn(),
            console=console,
            disable=quiet,
        )
        self.good = self.params
        with progress_ctx as progress:
            adam_task = progress.add_task("Adam", total=optim.adam_iters)
            lbfgs_task = progress.add_task("L-BFGS epochs", total=optim.max_epochs)
            try:
                self._adam_phase(progress, adam_task)
                self.adam_checkpoint = self._checkpoint("adam")
                self.log.termination = self._lbfgs_phase(progress, lbfgs_task)
            except (NonFiniteLossError, NonFiniteGradientError) as exc:
                error = str(exc)
                logger.error("training aborted at iteration %d: %s", self.iteration, exc)
                self.log.termination = TerminationReason.NON_FINITE_ABORT
                self.params = self.good

        self.log.attach_test(*self.evaluate_test())
        self.log.epochs = list(self.sampler.history)
        final = self._checkpoint("final")
        elapsed = time.time() - start_time

        if not quiet:
            console.print(f"\n[bold green]Training finished[/bold green] ({elapsed:.1f}s): {self.log.termination.value}")
            if self.log.history:
                console.print(f"  Final L_total: {self.log.history[-1].l_total:.4e}")
            final_test = self.log.final_test()
            if final_test is not None:
                label = "L_test" if self.test_reference is not None else "held-out L_f"
                console.print(f"  {label}: {final_test:.4e}")

        return TrainResult(
            config=self.config,
            checkpoint=final,
            log=self.log,
            adam_checkpoint=self.adam_checkpoint,
            elapsed_seconds=elapsed,
            step_seconds=self.step_seconds,
            test_points=self.test_points,
            error=error,
        )

    def _log_iteration(self, phase: Phase) -> None:
        if not self.log.history:
            return
        r = self.log.history[-1]
        logger.info(
            "%s it %06d | epoch %d | L_total=%.4e L_D=%.3e L_N=%.3e L_v=%.3e L_sigma=%.3e L_p=%.3e",
            phase.value,
            r.iteration,
            r.epoch,
            r.l_total,
            r.l_d,
            r.l_n,
            r.l_v,
            r.l_sigma,
            r.l_p,
        )


def train(
    config: TrainConfig,
    points: CollocationSet | None = None,
    reference: ReferenceSolution | None = None,
    output_dir: str | Path | None = None,
    quiet: bool = False,
) -> TrainResult:
    """Train a network from scratch; point and reference files come from the config when not given."""
    if points is None:
        points = load_points(config)
    if reference is None:
        reference = load_reference_for(config, points)
    trainer = Trainer(config, points, reference, output_dir=output_dir)
    result = trainer.run(quiet=quiet)
    if output_dir is not None:
        save_results(result, output_dir)
    return result


def resume(
    checkpoint: Checkpoint,
    config: TrainConfig,
    points: CollocationSet | None = None,
    reference: ReferenceSolution | None = None,
    overrides: dict[str, dict] | None = None,
    previous_log: ConvergenceLog | None = None,
    output_dir: str | Path | None = None,
    quiet: bool = False,
) -> TrainResult:
    """Continue from a checkpoint with fresh optimizer states; the log is appended to."""
    if overrides:
        config = config.updated(**overrides)
    requested = CheckpointHeader.from_config(config, layer_widths(config), checkpoint.header.k_range)
    checkpoint.require_compatible(requested)
    for key in ("f_bc", "f_sigma"):
        old, new = getattr(checkpoint.header, key), getattr(requested, key)
        if old != new:
            logger.warning("loss weight %s changed on resume: %g -> %g", key, old, new)
    if points is None:
        points = load_points(config)
    if reference is None:
        reference = load_reference_for(config, points)
    trainer = Trainer(config, points, reference, params=checkpoint.params, log=previous_log, output_dir=output_dir)
    result = trainer.run(quiet=quiet)
    if output_dir is not None:
        save_results(result, output_dir)
    return result


def save_results(result: TrainResult, output_dir: str | Path) -> Path:
    """Save config, checkpoints, convergence log and run summary."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    binary = result.config.output.write_binary

    with open(out / "config.json", "w") as f:
        json.dump(result.config.model_dump(mode="json"), f, indent=2)

    for name, checkpoint in (("adam", result.adam_checkpoint), ("final", result.checkpoint)):
        if checkpoint is None:
            continue
        save_checkpoint(checkpoint, out / f"checkpoint_{name}.json")
        if binary:
            save_checkpoint(checkpoint, out / f"checkpoint_{name}.npz")

    result.log.to_csv(out / "convergence.csv")

    summary = result.log.summary()
    summary.update(
        checkpoint_id=result.checkpoint.checkpoint_id,
        seed=result.config.seed,
        reynolds=result.config.reynolds,
        wall_time_seconds=result.elapsed_seconds,
        mean_step_seconds=result.mean_step_seconds,
        test_points=result.test_points,
        error=result.error,
    )
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return out
