"""Training loop tests: convergence log, two-phase schedule, resume and abort handling."""

import json
from pathlib import Path

import numpy as np
import pytest

import pinnflow.training.trainer as trainer_module
from pinnflow.autodiff.core import workspace_bytes
from pinnflow.config import (
    DataSection,
    Formulation,
    NetworkSection,
    OptimSection,
    Phase,
    TerminationReason,
    TrainConfig,
)
from pinnflow.errors import (
    CheckpointMismatchError,
    ConfigurationError,
    ContractViolationError,
    DimensionMismatchError,
    NonFiniteGradientError,
)
from pinnflow.evaluation.field import predict_field
from pinnflow.geometry.points import CollocationSet
from pinnflow.geometry.sampler import DomainSampler
from pinnflow.geometry.scenarios import Always, Not, ScenarioRegistry, ScenarioSpec
from pinnflow.network.checkpoint import load_checkpoint
from pinnflow.physics.loss import LossBreakdown
from pinnflow.physics.objective import loss_breakdown
from pinnflow.physics.scales import ReferenceScales
from pinnflow.training.log import ConvergenceLog, IterationRecord
from pinnflow.training.trainer import Trainer, load_points, prepare_run_directory, resume, train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def setup_function():
    ScenarioRegistry.reset()


def _config(**sections) -> TrainConfig:
    base = TrainConfig(
        network=NetworkSection(hidden_layers=2, width=8, n_sd=2),
        scales=ReferenceScales(l_ref=1.0, v_ref=1.0, mu=0.02),
        optim=OptimSection(adam_iters=5, max_epochs=2, lbfgs_inner=3, max_batch_size=1000),
        data=DataSection(test_fraction=0.1, test_interval=2),
        deterministic=True,
    )
    return base.updated(**sections) if sections else base


def _channel(n_volume: int = 120) -> CollocationSet:
    return DomainSampler.channel(n_volume=n_volume, n_boundary=40, seed=0)


def _record(iteration: int, l_total: float = 1.0, phase: Phase = Phase.ADAM) -> IterationRecord:
    return IterationRecord(iteration=iteration, phase=phase, batch=0, epoch=0, l_total=l_total)


# ── convergence log ────────────────────────────────────────────────────


def test_log_requires_increasing_iterations():
    """Iteration numbers must increase strictly."""
    log = ConvergenceLog()
    log.record(_record(1))
    log.record(_record(3))
    with pytest.raises(ContractViolationError):
        log.record(_record(3))


def test_log_rejects_negative_loss():
    """A negative loss cannot be recorded."""
    with pytest.raises(ContractViolationError):
        ConvergenceLog().record(_record(1, l_total=-1.0))


def test_record_from_breakdown():
    """A record carries L_total and every loss term."""
    breakdown = LossBreakdown(l_d=0.5, l_v=0.25, f_bc=10.0)
    record = IterationRecord.from_breakdown(4, Phase.LBFGS, 1, 2, breakdown)
    assert record.l_total == pytest.approx(5.25)
    assert record.l_d == 0.5


def test_final_test_prefers_latest():
    """The final test value is the most recent one, reference or proxy."""
    log = ConvergenceLog()
    log.record(_record(1))
    log.attach_test(l_test=0.5)
    log.record(_record(2))
    log.attach_test(proxy=0.1)
    log.record(_record(3))
    assert log.final_test() == 0.1


def test_log_csv_round_trip(tmp_path):
    """CSV export keeps the losses, the phase and the empty test cells."""
    log = ConvergenceLog()
    log.record(_record(1, 2.0))
    log.attach_test(l_test=0.25)
    log.record(_record(2, 1.0, Phase.LBFGS))
    log.to_csv(tmp_path / "log.csv")
    loaded = ConvergenceLog.from_csv(tmp_path / "log.csv")
    assert [r.l_total for r in loaded.history] == [2.0, 1.0]
    assert loaded.history[0].l_test == 0.25
    assert loaded.history[1].l_test is None
    assert loaded.history[1].phase is Phase.LBFGS


def test_log_json_keeps_termination(tmp_path):
    """JSON export keeps the termination reason."""
    log = ConvergenceLog()
    log.record(_record(1))
    log.termination = TerminationReason.MAX_EPOCHS
    log.to_json(tmp_path / "log.json")
    loaded = ConvergenceLog.from_json(tmp_path / "log.json")
    assert loaded.termination is TerminationReason.MAX_EPOCHS
    assert len(loaded) == 1


# ── trainer ────────────────────────────────────────────────────────────


def test_two_phase_schedule():
    """Adam records come first, then L-BFGS, with increasing iteration numbers."""
    result = Trainer(_config(), _channel()).run(quiet=True)
    log = result.log
    adam = log.phase(Phase.ADAM)
    assert [r.iteration for r in adam] == [1, 2, 3, 4, 5]
    iterations = [r.iteration for r in log.history]
    assert iterations == sorted(set(iterations))
    assert all(r.phase is Phase.LBFGS for r in log.history[5:])
    assert log.termination in (TerminationReason.MAX_EPOCHS, TerminationReason.DESCENT_FAILURE)
    assert all(r.l_total >= 0.0 for r in log.history)
    assert len(log.epochs) >= 1
    assert result.adam_checkpoint is not None


def test_lbfgs_only_without_adam():
    """adam_iters = 0 starts straight with L-BFGS."""
    result = Trainer(_config(optim={"adam_iters": 0}), _channel()).run(quiet=True)
    assert result.log.history
    assert all(r.phase is Phase.LBFGS for r in result.log.history)


def test_deterministic_runs_match():
    """Two deterministic runs give identical logs and parameters."""
    a = Trainer(_config(), _channel()).run(quiet=True)
    b = Trainer(_config(), _channel()).run(quiet=True)
    assert [r.l_total for r in a.log.history] == [r.l_total for r in b.log.history]
    np.testing.assert_array_equal(a.checkpoint.params.to_vector(), b.checkpoint.params.to_vector())


def test_test_loss_against_reference():
    """With a reference the log carries L_test on the held-out points."""
    points = _channel()
    reference = DomainSampler.channel_reference(points.volume.positions)
    result = Trainer(_config(), points, reference).run(quiet=True)
    assert result.test_points == 12
    assert any(r.l_test is not None for r in result.log.history)
    assert result.log.final_test() > 0.0


def test_proxy_without_reference():
    """Without a reference the log carries the held-out physics loss."""
    result = Trainer(_config(), _channel()).run(quiet=True)
    assert all(r.l_test is None for r in result.log.history)
    assert result.log.history[-1].l_test_proxy is not None


def test_resume_without_iterations_keeps_params():
    """Resuming with nothing to do returns the checkpoint parameters."""
    points = _channel()
    first = Trainer(_config(), points).run(quiet=True)
    idle = _config(optim={"adam_iters": 0, "max_epochs": 0})
    again = resume(first.checkpoint, idle, points=points, quiet=True)
    np.testing.assert_array_equal(again.checkpoint.params.to_vector(), first.checkpoint.params.to_vector())


def test_resume_appends_to_log():
    """A resumed run continues the iteration count."""
    points = _channel()
    first = Trainer(_config(), points).run(quiet=True)
    last = first.log.last_iteration
    more = _config(optim={"adam_iters": 2, "max_epochs": 0})
    again = resume(first.checkpoint, more, points=points, previous_log=first.log, quiet=True)
    assert [r.iteration for r in again.log.history[-2:]] == [last + 1, last + 2]


def test_resume_rejects_other_widths():
    """A checkpoint cannot resume into a different architecture."""
    points = _channel()
    first = Trainer(_config(), points).run(quiet=True)
    with pytest.raises(CheckpointMismatchError):
        resume(first.checkpoint, _config(network={"width": 9}), points=points, quiet=True)


def test_non_finite_gradient_aborts_with_last_good_params(monkeypatch):
    """A non-finite gradient stops the run with the last finite parameters."""
    real_step = trainer_module.adam_step
    seen = {"calls": 0, "params": None}

    def flaky(state, grad, params):
        seen["calls"] += 1
        if seen["calls"] == 3:
            seen["params"] = params.copy()
            raise NonFiniteGradientError(0)
        return real_step(state, grad, params)

    monkeypatch.setattr(trainer_module, "adam_step", flaky)
    result = Trainer(_config(), _channel()).run(quiet=True)
    assert result.aborted
    assert result.log.termination is TerminationReason.NON_FINITE_ABORT
    assert "parameter index 0" in result.error
    assert len(result.log.phase(Phase.ADAM)) == 3
    assert not result.log.phase(Phase.LBFGS)
    np.testing.assert_array_equal(result.checkpoint.params.to_vector(), seen["params"])


def test_empty_point_set_rejected():
    """Training needs at least one point."""
    with pytest.raises(ContractViolationError):
        Trainer(_config(), CollocationSet(n_sd=2))


def test_dimension_mismatch_rejected():
    """Points and network must agree on the dimension."""
    with pytest.raises(DimensionMismatchError):
        Trainer(_config(network={"n_sd": 3}), _channel())


def test_parametric_scenario_needs_parametric_network():
    """A scenario that varies k needs k as a network input."""
    points = DomainSampler.build("cylinder-parametric", 100, seed=0)
    config = _config(network={"n_sd": 3}, scenario={"name": "cylinder-translate"})
    with pytest.raises(ConfigurationError):
        Trainer(config, points)


def test_filter_excluding_everything():
    """A filter that keeps nothing stops the run."""
    void = ScenarioSpec(name="void", inside_fdn=Not(term=Always()), inside_m=Not(term=Always()))
    trainer = Trainer(_config(), _channel(), scenario=void)
    with pytest.raises(ContractViolationError):
        trainer.run(quiet=True)


def test_parametric_cylinder_smoke():
    """A short parametric cylinder run records k metadata and excluded points."""
    points = DomainSampler.build("cylinder-parametric", 600, seed=0)
    config = _config(
        network={"n_sd": 3, "parametric": True, "hidden_layers": 1, "width": 6},
        scenario={"name": "cylinder-translate"},
        optim={"adam_iters": 3, "max_epochs": 1, "lbfgs_inner": 2},
    )
    result = Trainer(config, points).run(quiet=True)
    header = result.checkpoint.header
    assert header.parametric
    assert header.k_range == (-0.05, 0.05)
    assert header.k_scale == 1.0
    assert result.checkpoint.params.input_width == 4
    assert result.log.epochs[0].excluded > 0


def test_train_writes_run_directory(tmp_path):
    """A run directory holds config, checkpoints, log and summary."""
    result = train(_config(), points=_channel(), output_dir=tmp_path / "run", quiet=True)
    run = tmp_path / "run"
    for name in (
        "config.json",
        "checkpoint_adam.json",
        "checkpoint_adam.npz",
        "checkpoint_final.json",
        "checkpoint_final.npz",
        "convergence.csv",
        "summary.json",
    ):
        assert (run / name).exists(), name
    summary = json.loads((run / "summary.json").read_text())
    assert summary["checkpoint_id"] == result.checkpoint.checkpoint_id
    assert summary["termination"] == result.log.termination.value
    assert summary["iterations"] == len(result.log)


def test_run_directory_guard(tmp_path):
    """A nonempty run directory is only reused with overwrite."""
    (tmp_path / "old.txt").write_text("x")
    with pytest.raises(ConfigurationError):
        prepare_run_directory(tmp_path)
    assert prepare_run_directory(tmp_path, overwrite=True) == tmp_path


@pytest.mark.slow
def test_channel_flow_reaches_poiseuille():
    """The bundled channel config learns the analytic profile to within 5 %."""
    config = TrainConfig.from_yaml(CONFIGS / "channel.yaml")
    result = train(config, quiet=True)
    assert not result.aborted
    assert result.log.final_test() < 0.05


def test_final_checkpoint_reproduces_logged_loss(tmp_path):
    """Reloading the final checkpoint recomputes the last logged L_total on the full batch."""
    config = _config(optim={"adam_iters": 0, "max_epochs": 2})
    trainer = Trainer(config, _channel(), output_dir=tmp_path)
    result = trainer.run(quiet=True)
    last = result.log.history[-1]
    assert last.phase is Phase.LBFGS
    checkpoint = load_checkpoint(tmp_path / "checkpoint_final.json")
    (batch,) = trainer.sampler.next_epoch()
    loss = loss_breakdown(
        checkpoint.params,
        batch.to_training_batch(config.scales, False),
        trainer.layout,
        trainer.re,
        config.loss.f_bc,
        config.loss.f_sigma,
    )
    assert loss.l_total == pytest.approx(last.l_total, rel=1e-12)


def test_lbfgs_descends_within_each_batch_block():
    """In 2-batch mode the L-BFGS loss never rises between accepted steps on the same batch."""
    config = _config(optim={"adam_iters": 0, "max_epochs": 3, "lbfgs_inner": 5, "max_batch_size": 80})
    result = Trainer(config, _channel()).run(quiet=True)
    assert all(e.batches == 2 for e in result.log.epochs)
    blocks: list[list[float]] = []
    previous = None
    for r in result.log.phase(Phase.LBFGS):
        if (r.epoch, r.batch) != previous:
            blocks.append([])
            previous = (r.epoch, r.batch)
        blocks[-1].append(r.l_total)
    assert len(blocks) >= 2
    for losses in blocks:
        assert all(b <= a for a, b in zip(losses, losses[1:]))


# ── acceptance runs ────────────────────────────────────────────────────


def _peak_workspace(trainer: Trainer) -> int:
    widths = trainer.params.layer_widths
    return max(
        workspace_bytes(len(b.volume), widths, 2) + workspace_bytes(len(b.dirichlet), widths, 1)
        for b in trainer.sampler.next_epoch()
    )


@pytest.mark.slow
def test_cylinder_stagnation_pressure():
    """The coarse static 3D cylinder keeps its held-out physics loss bounded and builds overpressure at the front."""
    config = TrainConfig.from_yaml(CONFIGS / "cylinder_static.yaml")
    trainer = Trainer(config, load_points(config))
    _, initial = trainer.evaluate_test()
    result = trainer.run(quiet=True)
    assert not result.aborted
    assert result.log.final_test() < 10.0 * initial
    centerline = np.array([[-0.07, 0.0, 0.2], [0.08, 0.0, 0.2]])
    upstream, wake = predict_field(result.checkpoint, centerline).pressure
    assert upstream > 0.0
    assert wake < 0.0


@pytest.mark.slow
def test_two_batches_match_full_batch():
    """Splitting the channel into two batches keeps the test error within 1.5x and cuts the workspace."""
    full = TrainConfig.from_yaml(CONFIGS / "channel.yaml")
    points = load_points(full)
    split = full.updated(optim={"max_batch_size": points.size // 2 + 50})
    assert _peak_workspace(Trainer(split, points)) <= 0.6 * _peak_workspace(Trainer(full, points))
    errors = []
    for config in (full, split):
        result = train(config, points=points, quiet=True)
        assert not result.aborted
        errors.append(result.log.final_test())
    assert result.log.epochs[0].batches == 2
    assert max(errors) <= 1.5 * min(errors)


@pytest.mark.slow
@pytest.mark.parametrize("formulation", [Formulation.NO_STREAM_FUNCTION, Formulation.NO_STRESS])
def test_ablations_do_not_learn_the_channel(formulation):
    """Without the stream function or the stress outputs the channel error stays above 0.5."""
    config = TrainConfig.from_yaml(CONFIGS / "channel.yaml").updated(network={"formulation": formulation})
    result = train(config, quiet=True)
    assert result.log.final_test() > 0.5
