"""Command-line interface for the dehazing toolkit."""

import logging
from pathlib import Path
from typing import Annotated, Optional

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from perceptual_dehaze.config import RunConfig, load_config, option_help
from perceptual_dehaze.models.schemas import LossKind
from perceptual_dehaze.pipeline import ExperimentPipeline
from perceptual_dehaze.utils.report import eval_table, summary_line, sweep_table

app = typer.Typer(
    name="perceptual-dehaze",
    help="Single-image dehazing with perceptually motivated training losses",
    no_args_is_help=True,
)
console = Console()

ConfigOpt = Annotated[Optional[Path], typer.Option("--config", "-c", help="Run-config file of key = value lines")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help=option_help("seed"))]
ThreadsOpt = Annotated[Optional[int], typer.Option("--threads", help=option_help("threads"))]
OutOpt = Annotated[
    Optional[Path], typer.Option("--out", "-o", help="Output directory (default: timestamped under output_dir)")
]


def _fail(e: Exception) -> typer.Exit:
    if isinstance(e, ValidationError):
        console.print(f"[red]Error: invalid configuration[/red]\n{escape(str(e))}")
    else:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
    return typer.Exit(1)


def _config(path: Optional[Path], **overrides) -> RunConfig:
    try:
        return load_config(path, **overrides)
    except (ValidationError, FileNotFoundError) as e:
        raise _fail(e) from e


def _spinner() -> Progress:
    return Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console)


@app.callback()
def main(
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log progress at INFO level")] = False,
):
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


@app.command()
def synthesize(
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    threads: ThreadsOpt = None,
    out: OutOpt = None,
    clean_source: Annotated[Optional[str], typer.Option(help=option_help("clean_source"))] = None,
    n_train: Annotated[Optional[int], typer.Option(help=option_help("n_train"))] = None,
    n_val: Annotated[Optional[int], typer.Option(help=option_help("n_val"))] = None,
    n_test: Annotated[Optional[int], typer.Option(help=option_help("n_test"))] = None,
    beta_range: Annotated[Optional[str], typer.Option(help=option_help("beta_range"))] = None,
    a_range: Annotated[Optional[str], typer.Option(help=option_help("a_range"))] = None,
    depth_kinds: Annotated[Optional[str], typer.Option(help=option_help("depth_kinds"))] = None,
    patch_size: Annotated[Optional[int], typer.Option(help=option_help("patch_size"))] = None,
    d_max: Annotated[Optional[float], typer.Option(help=option_help("d_max"))] = None,
):
    """Generate a synthetic hazy/clean dataset with train/val/test manifests."""
    cfg = _config(
        config,
        seed=seed,
        threads=threads,
        clean_source=clean_source,
        n_train=n_train,
        n_val=n_val,
        n_test=n_test,
        beta_range=beta_range,
        a_range=a_range,
        depth_kinds=depth_kinds,
        patch_size=patch_size,
        d_max=d_max,
    )
    with _spinner() as progress:
        task = progress.add_task("Starting...", total=None)
        pipeline = ExperimentPipeline(cfg, lambda m: progress.update(task, description=m))
        try:
            manifests = pipeline.synthesize(out)
        except Exception as e:
            progress.update(task, description=f"[red]Failed: {escape(str(e))}")
            raise _fail(e) from e

    for split, path in zip(("train", "val", "test"), manifests):
        console.print(f"[bold]{split}:[/bold] {path}")


@app.command()
def train(
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    threads: ThreadsOpt = None,
    out: OutOpt = None,
    train_manifest: Annotated[Optional[Path], typer.Option(help=option_help("train_manifest"))] = None,
    val_manifest: Annotated[Optional[Path], typer.Option(help=option_help("val_manifest"))] = None,
    loss: Annotated[Optional[LossKind], typer.Option(help=option_help("loss"))] = None,
    alpha: Annotated[Optional[float], typer.Option(help=option_help("alpha"))] = None,
    sigma_g: Annotated[Optional[float], typer.Option(help=option_help("sigma_g"))] = None,
    sigmas: Annotated[Optional[str], typer.Option(help=option_help("sigmas"))] = None,
    luminance: Annotated[Optional[bool], typer.Option("--luminance/--per-channel", help=option_help("luminance"))] = None,
    epochs: Annotated[Optional[int], typer.Option(help=option_help("epochs"))] = None,
    base_lr: Annotated[Optional[float], typer.Option(help=option_help("base_lr"))] = None,
    batch_size: Annotated[Optional[int], typer.Option(help=option_help("batch_size"))] = None,
    clip_norm: Annotated[Optional[float], typer.Option(help=option_help("clip_norm"))] = None,
    clip_mode: Annotated[Optional[str], typer.Option(help=option_help("clip_mode"))] = None,
    momentum: Annotated[Optional[float], typer.Option(help=option_help("momentum"))] = None,
    weight_decay: Annotated[Optional[float], typer.Option(help=option_help("weight_decay"))] = None,
    c1: Annotated[Optional[float], typer.Option(help=option_help("c1"))] = None,
    c2: Annotated[Optional[float], typer.Option(help=option_help("c2"))] = None,
    init_std: Annotated[Optional[float], typer.Option(help=option_help("init_std"))] = None,
    unscaled_pixel_grads: Annotated[
        Optional[bool],
        typer.Option("--unscaled-pixel-grads/--scaled-pixel-grads", help=option_help("unscaled_pixel_grads")),
    ] = None,
    log_every: Annotated[Optional[int], typer.Option(help=option_help("log_every"))] = None,
    fine_tune: Annotated[Optional[bool], typer.Option("--fine-tune/--no-fine-tune", help=option_help("fine_tune"))] = None,
    init_checkpoint: Annotated[Optional[Path], typer.Option(help=option_help("init_checkpoint"))] = None,
):
    """Train the K-estimation network with the selected loss."""
    cfg = _config(
        config,
        seed=seed,
        threads=threads,
        train_manifest=train_manifest,
        val_manifest=val_manifest,
        loss=loss,
        alpha=alpha,
        sigma_g=sigma_g,
        sigmas=sigmas,
        luminance=luminance,
        epochs=epochs,
        base_lr=base_lr,
        batch_size=batch_size,
        clip_norm=clip_norm,
        clip_mode=clip_mode,
        momentum=momentum,
        weight_decay=weight_decay,
        c1=c1,
        c2=c2,
        init_std=init_std,
        unscaled_pixel_grads=unscaled_pixel_grads,
        log_every=log_every,
        fine_tune=fine_tune,
        init_checkpoint=init_checkpoint,
    )
    console.print(f"\n[bold]Training[/bold] loss [cyan]{cfg.loss}[/cyan], {cfg.epochs} epochs")
    with _spinner() as progress:
        task = progress.add_task("Starting...", total=None)
        pipeline = ExperimentPipeline(cfg, lambda m: progress.update(task, description=m))
        try:
            outcome = pipeline.train(out)
        except Exception as e:
            progress.update(task, description=f"[red]Failed: {escape(str(e))}")
            raise _fail(e) from e

    console.print(f"\n[green]Training complete![/green] Run: [cyan]{outcome.run_dir}[/cyan]")
    final = outcome.final_epoch
    if final is not None:
        console.print(f"Final train loss: {final.train_loss:.6f}")
        if final.val_psnr_db is not None:
            console.print(f"Validation PSNR: {final.val_psnr_db:.2f} dB  SSIM: {final.val_ssim:.4f}")


@app.command()
def dehaze(
    input_path: Annotated[Path, typer.Argument(help="Hazy PNG/PPM/PGM image")],
    output_path: Annotated[Path, typer.Argument(help="Where to save the dehazed image")],
    checkpoint: Annotated[Optional[Path], typer.Option(help=option_help("checkpoint"))] = None,
    config: ConfigOpt = None,
    seed: Annotated[Optional[int], typer.Option("--seed", help="Unused: dehazing draws no random numbers")] = None,
):
    """Dehaze a single image."""
    cfg = _config(config, seed=seed, checkpoint=checkpoint)
    if cfg.checkpoint is None:
        console.print("[red]Error: a checkpoint is required[/red]")
        raise typer.Exit(1)

    pipeline = ExperimentPipeline(cfg)
    try:
        pipeline.dehaze(cfg.checkpoint, input_path, output_path)
    except Exception as e:
        raise _fail(e) from e


@app.command(name="eval")
def evaluate(
    config: ConfigOpt = None,
    threads: ThreadsOpt = None,
    out: OutOpt = None,
    checkpoint: Annotated[Optional[Path], typer.Option(help=option_help("checkpoint"))] = None,
    manifest: Annotated[Optional[Path], typer.Option(help=option_help("test_manifest"))] = None,
):
    """Report PSNR and SSIM of a checkpoint over a manifest."""
    cfg = _config(config, threads=threads, checkpoint=checkpoint, test_manifest=manifest)
    if cfg.checkpoint is None or cfg.test_manifest is None:
        console.print("[red]Error: both a checkpoint and a manifest are required[/red]")
        raise typer.Exit(1)

    with _spinner() as progress:
        task = progress.add_task("Starting...", total=None)
        pipeline = ExperimentPipeline(cfg, lambda m: progress.update(task, description=m))
        try:
            report, csv_path = pipeline.evaluate(cfg.checkpoint, cfg.test_manifest, out)
        except Exception as e:
            progress.update(task, description=f"[red]Failed: {escape(str(e))}")
            raise _fail(e) from e

    console.print(eval_table(report))
    console.print(summary_line(report))
    for failure in report.failures:
        console.print(f"[yellow]Skipped {failure.image_id}: {failure.reason}[/yellow]")
    console.print(f"\n[bold]Report:[/bold] {csv_path}")


@app.command()
def gradcheck(
    kind: Annotated[LossKind, typer.Argument(help="Loss to check")],
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    size: Annotated[int, typer.Option(help="Side of the random loss-check images")] = 17,
):
    """Compare analytic gradients with central finite differences."""
    pipeline = ExperimentPipeline(_config(config, seed=seed))
    try:
        results = pipeline.gradcheck(kind, size=size)
    except Exception as e:
        raise _fail(e) from e

    table = Table(title=f"Gradient check: {kind}")
    table.add_column("check")
    table.add_column("max rel. error", justify="right")
    table.add_column("tolerance", justify="right")
    table.add_column("entries", justify="right")
    table.add_column("result")
    for r in results:
        status = "[green]pass[/green]" if r.passed else "[red]FAIL[/red]"
        table.add_row(r.name, f"{r.max_rel_error:.3e}", f"{r.tolerance:.0e}", str(r.n_checked), status)
    console.print(table)

    if not all(r.passed for r in results):
        raise typer.Exit(1)


@app.command()
def sweep(
    alphas: Annotated[str, typer.Option(help="Comma-separated alpha values, e.g. 0,0.1,0.5,1")],
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    threads: ThreadsOpt = None,
    out: OutOpt = None,
    train_manifest: Annotated[Optional[Path], typer.Option(help=option_help("train_manifest"))] = None,
    val_manifest: Annotated[Optional[Path], typer.Option(help=option_help("val_manifest"))] = None,
    loss: Annotated[Optional[LossKind], typer.Option(help=option_help("loss"))] = None,
    epochs: Annotated[Optional[int], typer.Option(help=option_help("epochs"))] = None,
    init_checkpoint: Annotated[Optional[Path], typer.Option(help=option_help("init_checkpoint"))] = None,
):
    """Fine-tune once per alpha and tabulate validation PSNR/SSIM."""
    try:
        alpha_values = [float(a) for a in alphas.split(",") if a.strip()]
    except ValueError as e:
        raise _fail(ValueError(f"alphas must be numbers: {alphas}")) from e

    cfg = _config(
        config,
        seed=seed,
        threads=threads,
        train_manifest=train_manifest,
        val_manifest=val_manifest,
        loss=loss,
        epochs=epochs,
        init_checkpoint=init_checkpoint,
    )
    with _spinner() as progress:
        task = progress.add_task("Starting...", total=None)
        pipeline = ExperimentPipeline(cfg, lambda m: progress.update(task, description=m))
        try:
            rows, csv_path = pipeline.sweep(alpha_values, out)
        except Exception as e:
            progress.update(task, description=f"[red]Failed: {escape(str(e))}")
            raise _fail(e) from e

    console.print(sweep_table(rows))
    console.print(f"\n[bold]Sweep table:[/bold] {csv_path}")


if __name__ == "__main__":
    app()
