"""Command-line entry point for spiking-par.

Usage::

    snnpar gen-data --out data/desk --seed 0         # synthetic dataset
    snnpar train-teacher --dataset data/desk --out data/desk/teacher.snta
    snnpar train --config configs/desk.conf --dataset data/desk --teacher data/desk/teacher.snta
    snnpar train --config configs/desk.conf --dataset data/desk --resume runs/desk/checkpoint.snpk
    snnpar eval --checkpoint runs/desk/checkpoint.snpk --dataset data/desk
    snnpar grad-check                                # soft-mode finite differences
    snnpar energy-report --checkpoint runs/desk/checkpoint.snpk --dataset data/desk
    snnpar ablate --config configs/desk.conf --dataset data/desk --teacher data/desk/teacher.snta --seeds 3

Exit codes: 0 success, 1 usage or config error, 2 data or integrity error,
3 failed gradient check.
"""

import functools
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click

from .config import RunConfig, apply_overrides, get_log_level, load_config, load_synthetic_spec
from .data import IMAGE_SIZES, generate_synthetic, load_split
from .energy import EnergyModel, measure_energy
from .errors import SpikingParError, ValidationError
from .gradcheck import ABS_TOLERANCE, TOLERANCE, run_grad_check
from .log_config import setup_logging
from .metrics import METRIC_MODES, write_report
from .mock_teacher import TeacherOptions, train_mock_teacher
from .tensor_io import write_tensor
from .trainer import EVAL_BATCH, evaluate, load_checkpoint, run_ablation, train

logger = logging.getLogger(__name__)

GRAD_CHECK_FAILED = 3
IO_ERROR = 2


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _guarded[**P, T](fn: Callable[P, T]) -> Callable[P, T]:
    """Turn package errors into their exit codes instead of tracebacks."""

    @functools.wraps(fn)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> T:
        try:
            return fn(*args, **kwargs)
        except SpikingParError as exc:
            logger.error("%s", exc)  # noqa: TRY400
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except OSError as exc:
            logger.error("%s", exc)  # noqa: TRY400
            click.echo(f"error: {exc}", err=True)
            sys.exit(IO_ERROR)

    return wrapper


def _run_config(config: Path | None, overrides: dict[str, Any]) -> RunConfig:
    cfg = load_config(config) if config is not None else RunConfig()
    return apply_overrides(cfg, overrides)


class _SnnparGroup(click.Group):
    """Click group whose usage errors exit with 1 like config errors."""

    def invoke(self, ctx: click.Context) -> Any:  # noqa: ANN401
        try:
            return super().invoke(ctx)
        except click.UsageError as exc:
            exc.exit_code = 1
            raise


_existing_dir = click.Path(exists=True, file_okay=False, path_type=Path)
_existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)
_out_path = click.Path(path_type=Path)


# ---------------------------------------------------------------------------
# Top-level group
# ---------------------------------------------------------------------------


@click.group(cls=_SnnparGroup, invoke_without_command=True)
@click.pass_context
def main(ctx: click.Context) -> None:
    """Spiking transformer attribute recognition with distillation."""
    setup_logging(get_log_level())
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@main.command("gen-data")
@click.option("--out", type=_out_path, required=True, help="Dataset directory to create.")
@click.option("--seed", type=int, default=None, help="Generator seed (default 0).")
@click.option("--config", type=_existing_file, default=None, help="File with synthetic.* settings.")
@click.option(
    "--image-size",
    type=click.Choice(sorted(IMAGE_SIZES)),
    default=None,
    help="Named image size; overrides synthetic.height/width.",
)
@_guarded
def gen_data(out: Path, seed: int | None, config: Path | None, image_size: str | None) -> None:
    """Write a synthetic attribute dataset."""
    height, width = IMAGE_SIZES[image_size] if image_size else (None, None)
    spec = load_synthetic_spec(config, seed=seed, height=height, width=width)
    counts = generate_synthetic(spec, out)
    click.echo(" ".join(f"{split}={n}" for split, n in counts.items()))


@main.command("train-teacher")
@click.option("--dataset", type=_existing_dir, required=True)
@click.option("--out", type=_out_path, required=True, help="Teacher artifact to write.")
@click.option("--epochs", type=int, default=TeacherOptions.epochs, show_default=True)
@click.option("--batch-size", type=int, default=TeacherOptions.batch_size, show_default=True)
@click.option("--lr", type=float, default=TeacherOptions.lr, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_guarded
def train_teacher(dataset: Path, out: Path, epochs: int, batch_size: int, lr: float, seed: int) -> None:
    """Train the dense mock teacher and export its artifact."""
    result = train_mock_teacher(dataset, out, TeacherOptions(epochs, batch_size, lr, seed))
    click.echo(f"teacher artifact: {result.path} ({result.artifact.num_samples} samples, test mA {result.test_mA:.5f})")


@main.command("train")
@click.option("--config", type=_existing_file, default=None)
@click.option("--dataset", type=_existing_dir, required=True)
@click.option("--teacher", type=_existing_file, default=None, help="Teacher artifact for distillation.")
@click.option("--out", type=_out_path, default=None, help="Run directory.")
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--alpha", type=float, default=None, help="Response distillation weight.")
@click.option("--beta", type=float, default=None, help="Feature distillation weight.")
@click.option(
    "--resume", "--checkpoint", "resume", type=_existing_file, default=None, help="Checkpoint to continue from."
)
@_guarded
def train_cmd(  # noqa: PLR0913
    config: Path | None,
    dataset: Path,
    teacher: Path | None,
    out: Path | None,
    seed: int | None,
    epochs: int | None,
    alpha: float | None,
    beta: float | None,
    resume: Path | None,
) -> None:
    """Train the spiking student."""
    cfg = _run_config(
        config,
        {
            "teacher": teacher,
            "out": out,
            "seed": seed,
            "epochs": epochs,
            "distill.alpha": alpha,
            "distill.beta": beta,
        },
    )
    result = train(cfg, dataset, resume=resume)
    click.echo(f"checkpoint: {result.checkpoint}")
    if result.final_report is not None:
        click.echo(result.final_report.format_text(), nl=False)


@main.command("eval")
@click.option("--checkpoint", type=_existing_file, required=True)
@click.option("--dataset", type=_existing_dir, required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--mode", type=click.Choice(METRIC_MODES), default=None, help="Instance or count scores.")
@click.option("--threshold", type=float, default=None, help="Sigmoid threshold (default from the run).")
@click.option("--strict", is_flag=True, help="Fail when an attribute has no positives or negatives.")
@click.option("--out", type=_out_path, default=None, help="Report directory (default: next to the checkpoint).")
@_guarded
def eval_cmd(  # noqa: PLR0913
    checkpoint: Path,
    dataset: Path,
    split: str,
    mode: str | None,
    threshold: float | None,
    strict: bool,
    out: Path | None,
) -> None:
    """Score a checkpoint on a dataset split."""
    ckpt = load_checkpoint(checkpoint)
    data = load_split(dataset, split)
    if data.attributes != ckpt.attributes:
        msg = f"checkpoint attributes {ckpt.attributes} do not match dataset attributes {data.attributes}"
        raise ValidationError(msg)
    model = ckpt.build_model()
    result = evaluate(
        model,
        data,
        threshold=threshold if threshold is not None else ckpt.config.threshold,
        mode=mode or ckpt.config.eval_mode,  # type: ignore[arg-type]
        strict=strict,
    )
    out_dir = out or checkpoint.parent
    write_report(result.report, out_dir)
    write_tensor(out_dir / f"predictions.{split}.sntf", result.predictions.astype("float32"))
    click.echo(result.report.format_text(), nl=False)


@main.command("grad-check")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--samples", type=int, default=256, show_default=True, help="Parameter coordinates to check.")
@click.option("--eps", type=float, default=1e-4, show_default=True)
@click.option("--tolerance", type=float, default=TOLERANCE, show_default=True, help="Relative error bound.")
@click.option("--atol", type=float, default=ABS_TOLERANCE, show_default=True, help="Absolute error that always passes.")
@_guarded
def grad_check(seed: int, samples: int, eps: float, tolerance: float, atol: float) -> None:
    """Finite-difference check of the tiny soft-mode network."""
    report = run_grad_check(seed=seed, samples=samples, eps=eps, tolerance=tolerance, atol=atol)
    for line in report.lines():
        click.echo(line)
    if not report.passed:
        sys.exit(GRAD_CHECK_FAILED)


@main.command("energy-report")
@click.option("--checkpoint", type=_existing_file, required=True)
@click.option("--dataset", type=_existing_dir, required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--out", type=_out_path, default=None, help="JSON file (default: energy.json next to the checkpoint).")
@click.option("--e-mac", type=float, default=EnergyModel.e_mac, show_default=True, help="pJ per MAC.")
@click.option("--e-ac", type=float, default=EnergyModel.e_ac, show_default=True, help="pJ per accumulate.")
@_guarded
def energy_report(  # noqa: PLR0913
    checkpoint: Path,
    dataset: Path,
    split: str,
    out: Path | None,
    e_mac: float,
    e_ac: float,
) -> None:
    """Count synaptic operations over a split and estimate energy."""
    ckpt = load_checkpoint(checkpoint)
    data = load_split(dataset, split)
    model = ckpt.build_model()
    batches = (data.images[i : i + EVAL_BATCH] for i in range(0, len(data), EVAL_BATCH))
    report = measure_energy(model, batches, EnergyModel(e_mac, e_ac))
    path = out or checkpoint.parent / "energy.json"
    report.write(path)
    click.echo(
        f"snn {report.estimate.snn_pj:.6g} pJ  ann {report.estimate.ann_pj:.6g} pJ  "
        f"ratio {report.estimate.ratio:.5f}  -> {path}"
    )


@main.command("ablate")
@click.option("--config", type=_existing_file, default=None)
@click.option("--dataset", type=_existing_dir, required=True)
@click.option("--teacher", type=_existing_file, required=True)
@click.option("--out", type=_out_path, default=None)
@click.option("--seed", type=int, default=None, help="First seed.")
@click.option("--seeds", type=int, default=3, show_default=True, help="Seeds per row.")
@_guarded
def ablate(  # noqa: PLR0913
    config: Path | None,
    dataset: Path,
    teacher: Path,
    out: Path | None,
    seed: int | None,
    seeds: int,
) -> None:
    """Train every distillation row and tabulate mean test scores."""
    cfg = _run_config(config, {"teacher": teacher, "out": out, "seed": seed})
    rows = run_ablation(cfg, dataset, seeds)
    for row in rows:
        click.echo(f"{row.name:<18} mA {row.mean_mA:.5f}  F1 {row.mean_F1:.5f}")
