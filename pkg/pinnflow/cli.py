"""Command-line entry point: ``pinnflow <command> ...``.

Exit codes: 0 success, 1 user error (configuration, files, mismatched
checkpoints), 2 numerical abort (non-finite loss or gradient, failed
derivative check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from pinnflow import __version__
from pinnflow.autodiff.checking import finite_difference_check
from pinnflow.config import Activation, TrainConfig
from pinnflow.errors import (
    ConfigurationError,
    NonFiniteGradientError,
    NonFiniteLossError,
    PinnflowError,
    PointSetError,
)
from pinnflow.evaluation.field import (
    export_field,
    header_scales,
    nearest_reference_interpolation,
    outlet_mass_flow_ratio,
    predict_field,
    read_field,
)
from pinnflow.evaluation.metrics import error_report, test_loss
from pinnflow.geometry.points import (
    ReferenceSolution,
    load_point_sets,
    load_positions,
    load_reference,
    write_point_sets,
    write_reference,
)
from pinnflow.geometry.sampler import DomainSampler
from pinnflow.geometry.scenarios import ScenarioRegistry
from pinnflow.network.checkpoint import load_checkpoint
from pinnflow.network.layout import OutputLayout
from pinnflow.network.params import init_params
from pinnflow.physics.objective import VolumeLoss
from pinnflow.physics.scales import nondimensionalize
from pinnflow.training.log import ConvergenceLog
from pinnflow.training.trainer import load_scenario, prepare_run_directory, resume, train

console = Console()
logger = logging.getLogger("pinnflow")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2

GRID_COLUMNS = ("n", "m", "L_test", "iterations", "mean_step_time")


def _setup_logging(quiet: bool) -> None:
    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from exc


def _config(args: argparse.Namespace) -> TrainConfig:
    """Run config from file (or defaults) with command-line overrides."""
    config = TrainConfig.from_yaml(args.config) if getattr(args, "config", None) else TrainConfig.from_defaults()
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "deterministic", False):
        overrides["deterministic"] = True
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    return config.updated(**overrides) if overrides else config


def _guard_file(path: Path, overwrite: bool) -> Path:
    if path.exists() and not overwrite:
        raise ConfigurationError(f"{path} already exists; pass --overwrite to replace it")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_reference_any(path: str | Path) -> ReferenceSolution:
    """Reference CSV, or a field export written by ``predict``."""
    path = Path(path)
    if not path.exists():
        raise PointSetError(f"file not found: {path}")
    columns = [c.strip() for c in pd.read_csv(path, comment="#", nrows=0).columns]
    if "k" in columns:
        field = read_field(path)
        return ReferenceSolution(positions=field.positions, velocity=field.velocity, pressure=field.pressure)
    return load_reference(path)


# ── commands ───────────────────────────────────────────────────────────


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    out = prepare_run_directory(args.output or config.output.directory, args.overwrite or config.output.overwrite)
    if args.resume:
        checkpoint = load_checkpoint(args.resume)
        previous = Path(args.resume).parent / "convergence.csv"
        log = ConvergenceLog.from_csv(previous) if previous.exists() else None
        result = resume(checkpoint, config, previous_log=log, output_dir=out, quiet=args.quiet)
    else:
        result = train(config, output_dir=out, quiet=args.quiet)
    console.print(f"run directory: {out} (checkpoint {result.checkpoint.checkpoint_id})")
    if result.aborted:
        console.print(f"[bold red]aborted:[/bold red] {result.error}")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    reference = _load_reference_any(args.reference)
    if args.points:
        points = load_point_sets(args.points)
        positions = points.volume.positions if len(points.volume) else np.concatenate(
            [p.positions for p in points.populations.values()]
        )
    else:
        positions = reference.positions
    k = args.k
    # parametric checkpoints default to the middle of the trained range
    if checkpoint.header.parametric and k is None:
        lo, hi = checkpoint.header.k_range
        k = 0.5 * (lo + hi)
    prediction = predict_field(checkpoint, positions, k, workers=args.threads or 1)
    matched = nearest_reference_interpolation(reference, positions)

    scales = header_scales(checkpoint.header)
    pred = nondimensionalize(scales, velocity=prediction.velocity, pressure=prediction.pressure)
    ref = nondimensionalize(scales, velocity=matched.velocity, pressure=matched.pressure)
    l_test = test_loss(pred.velocity, pred.pressure, ref.velocity, ref.pressure)
    report = error_report(positions, prediction.velocity, prediction.pressure, matched.velocity, matched.pressure, l_test)

    out = Path(args.output) if args.output else Path(args.checkpoint).parent / "evaluation"
    out.mkdir(parents=True, exist_ok=True)
    _guard_file(out / "error_report.txt", args.overwrite).write_text(report.render_text() + "\n")
    _guard_file(out / "error_report.csv", args.overwrite).write_text(report.csv_header() + "\n" + report.to_csv_row() + "\n")

    table = Table(title=f"Error report ({report.points} points)")
    table.add_column("Quantity")
    table.add_column("Value", justify="right")
    table.add_row("L_test", f"{report.l_test:.6e}")
    table.add_row("max |dv| [m/s]", f"{report.max_velocity_error:.6e}")
    table.add_row("max |dp| [Pa]", f"{report.max_pressure_error:.6e}")
    for name, value in report.rms.items():
        table.add_row(f"rms {name}", f"{value:.6e}")
    table.add_row("mean match distance [m]", f"{matched.mean_distance:.3e}")
    console.print(table)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    positions = load_positions(args.points)
    prediction = predict_field(checkpoint, positions, args.k, workers=args.threads or 1)
    path = _guard_file(Path(args.output), args.overwrite)
    export_field(prediction, path, checkpoint.header)
    console.print(f"wrote {len(prediction)} predictions to {path}" + (" (extrapolated k)" if prediction.extrapolated else ""))
    return EXIT_OK


def cmd_checkgrad(args: argparse.Namespace) -> int:
    config = _config(args)
    net = config.network
    hidden = args.depth if args.depth is not None else (net.hidden_layers if args.config else 3)
    width = args.width if args.width is not None else (net.width if args.config else 20)
    activation = Activation.LINEAR if args.linear else net.activation
    rng = np.random.default_rng(config.seed)
    params = init_params(hidden, width, net.n_sd, net.parametric, config.seed, net.formulation, activation, rng=rng)
    points = rng.uniform(-1.0, 1.0, size=(args.points, params.input_width))

    layout = OutputLayout.for_formulation(net.n_sd, net.formulation)
    evaluator = VolumeLoss(layout, config.reynolds, config.loss.f_sigma)
    report = finite_difference_check(
        params,
        points,
        args.step,
        orders=(1, 2),
        loss_evaluator=evaluator,
        loss_order=layout.derivative_order,
        parameter_step=args.parameter_step,
        corrupt=args.corrupt,
    )
    table = Table(title=f"Derivative check ({hidden}x{width} {activation.value}, {args.points} points, step {args.step:g})")
    table.add_column("Derivative")
    table.add_column("Max relative error", justify="right")
    table.add_column("Status")
    for kind, error in report.errors.items():
        ok = error <= args.tolerance
        table.add_row(kind, f"{error:.3e}", "[green]ok[/green]" if ok else "[red]FAIL[/red]")
    console.print(table)
    return EXIT_OK if report.passed(args.tolerance) else EXIT_NUMERIC


def cmd_gridsearch(args: argparse.Namespace) -> int:
    base = _config(args)
    path = _guard_file(Path(args.output), args.overwrite)
    rows = []
    status = EXIT_OK
    for n in args.depths:
        for m in args.widths:
            config = base.updated(network={"hidden_layers": n, "width": m})
            logger.info("grid point n=%d m=%d", n, m)
            result = train(config, quiet=True)
            final = result.log.final_test()
            rows.append(
                {
                    "n": n,
                    "m": m,
                    "L_test": np.nan if final is None else final,
                    "iterations": len(result.log),
                    "mean_step_time": result.mean_step_seconds,
                }
            )
            if result.aborted:
                status = EXIT_NUMERIC
    frame = pd.DataFrame(rows, columns=list(GRID_COLUMNS))
    frame.to_csv(path, index=False, float_format="%.17g")

    table = Table(title="Grid search")
    for column in GRID_COLUMNS:
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(str(row["n"]), str(row["m"]), f"{row['L_test']:.4e}", str(row["iterations"]), f"{row['mean_step_time']:.3e}")
    console.print(table)
    return status


def cmd_sample(args: argparse.Namespace) -> int:
    points = DomainSampler.build(args.kind, args.volume, seed=args.seed)
    path = _guard_file(Path(args.output), args.overwrite)
    write_point_sets(points, path, comments=[f"{args.kind} sampled with seed {args.seed}", f"counts {points.counts()}"])
    console.print(f"wrote {points.size} points {points.counts()} to {path}")
    if args.reference:
        if args.kind != "channel":
            raise ConfigurationError("an analytic reference exists only for the channel")
        reference = DomainSampler.channel_reference(points.volume.positions)
        write_reference(reference, _guard_file(Path(args.reference), args.overwrite), comments=["analytic Poiseuille solution"])
    return EXIT_OK


def cmd_massflow(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    points = load_point_sets(args.points)
    header = checkpoint.header
    if args.config:
        scenario = load_scenario(TrainConfig.from_yaml(args.config))
    else:
        scenario = ScenarioRegistry().build(header.scenario, n_sd=header.n_sd, k_range=header.k_range)
    ks = args.k if args.k else [scenario.k_ref]
    table = Table(title=f"Outlet mass-flow ratio {args.left}/{args.right}")
    table.add_column("k [m]", justify="right")
    table.add_column("r_m", justify="right")
    rows = []
    for k in ks:
        ratio = outlet_mass_flow_ratio(checkpoint, points, scenario, k, args.left, args.right, workers=args.threads or 1)
        rows.append({"k": k, "r_m": ratio})
        table.add_row(f"{k:.4g}", f"{ratio:.4f}")
    console.print(table)
    if args.output:
        pd.DataFrame(rows).to_csv(_guard_file(Path(args.output), args.overwrite), index=False, float_format="%.17g")
    return EXIT_OK


# ── parser ─────────────────────────────────────────────────────────────


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as ``ConfigurationError``."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigurationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pinnflow", description="Physics-informed networks for steady incompressible flow")
    parser.add_argument("--version", action="version", version=f"pinnflow {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (0 = all cores)")
    common.add_argument("--overwrite", action="store_true", help="replace existing outputs")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a network from a run config")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--output", help="run directory (default: output.directory of the config)")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="compare a checkpoint against a reference solution")
    p.add_argument("checkpoint")
    p.add_argument("--reference", required=True)
    p.add_argument("--points", help="point file whose volume points are evaluated (default: reference points)")
    p.add_argument("--k", type=float)
    p.add_argument("--output", help="report directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="export the predicted field at query points")
    p.add_argument("checkpoint")
    p.add_argument("points")
    p.add_argument("--k", type=float)
    p.add_argument("--output", default="field.csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("checkgrad", parents=[common], help="verify analytic derivatives by finite differences")
    p.add_argument("config", nargs="?")
    p.add_argument("--seed", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--points", type=int, default=16)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--parameter-step", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--linear", action="store_true", help="use the identity activation")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_checkgrad)

    p = sub.add_parser("gridsearch", parents=[common], help="train over depths x widths")
    p.add_argument("config")
    p.add_argument("--widths", type=_int_list, required=True)
    p.add_argument("--depths", type=_int_list, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--output", default="gridsearch.csv")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("sample", parents=[common], help="generate a bundled example point set")
    p.add_argument("kind", choices=DomainSampler.KINDS)
    p.add_argument("--volume", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="points.csv")
    p.add_argument("--reference", help="also write the analytic reference (channel only)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("massflow", parents=[common], help="outlet mass-flow ratio over k")
    p.add_argument("checkpoint")
    p.add_argument("points")
    p.add_argument("--k", type=float, nargs="*")
    p.add_argument("--config", help="run config defining the scenario")
    p.add_argument("--left", default="left")
    p.add_argument("--right", default="right")
    p.add_argument("--output")
    p.set_defaults(func=cmd_massflow)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigurationError as exc:
        console.print(f"[bold red]usage error:[/bold red] {exc}")
        return EXIT_USER
    _setup_logging(args.quiet)
    try:
        return args.func(args)
    except (NonFiniteLossError, NonFiniteGradientError) as exc:
        console.print(f"[bold red]numerical abort:[/bold red] {exc}")
        return EXIT_NUMERIC
    except PinnflowError as exc:
        console.print(f"[bold red]error:[/bold red] {exc}")
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
