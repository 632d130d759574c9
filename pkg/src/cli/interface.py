"""CLI interface for the nowcasting pipeline."""

import math
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, NoReturn, Optional

import numpy as np
import typer
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TaskID, TextColumn, TimeElapsedColumn
from rich.table import Table

from src.core.bands import ThresholdSpec, decompose_sequence
from src.core.pipeline import NowcastPipeline
from src.data.export import export_pgm, write_forecast, write_manifest
from src.data.rgrd import read_rgrd, write_rgrd
from src.data.synth import generate, random_spec
from src.utils.config import Config, config
from src.utils.error_handler import exit_code_for, format_cli_error
from src.utils.logger import logger

app = typer.Typer(help="Multi-task latent diffusion precipitation nowcasting", no_args_is_help=True)
console = Console()
err_console = Console(stderr=True)

_state: Dict[str, Config] = {"config": config}


def _fail(e: Exception) -> NoReturn:
    """Report an error as one machine-parsable line on stderr and exit."""
    logger.error(f"Command failed: {e}")
    err_console.print(format_cli_error(e), markup=False, highlight=False, soft_wrap=True)
    sys.exit(exit_code_for(e))


def _pipeline() -> NowcastPipeline:
    return NowcastPipeline(_state["config"])


@contextmanager
def _training_pipeline() -> Iterator[NowcastPipeline]:
    """Pipeline whose training loops drive one rich progress bar per stage or decoder."""
    with Progress(
        TextColumn("[bold blue]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TextColumn("loss={task.fields[loss]}"),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    ) as progress:
        tasks: Dict[str, TaskID] = {}

        def on_step(label: str, step: int, total: int, loss: float) -> None:
            if label not in tasks:
                tasks[label] = progress.add_task(label, total=total, loss="-")
            progress.update(tasks[label], completed=step, loss=f"{loss:.4g}")

        yield NowcastPipeline(_state["config"], on_step=on_step)


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.4f}"


@app.callback()
def main_options(
    config_file: Optional[Path] = typer.Option(None, "--config", "-c", help="KEY=VALUE configuration file"),
) -> None:
    """Load the run configuration before any command."""
    try:
        _state["config"] = Config.from_file(config_file) if config_file else config
        if config_file is None:
            config.validate()
    except Exception as e:
        _fail(e)


@app.command()
def synth(
    out_dir: Path = typer.Argument(..., help="Output directory"),
    sequences: int = typer.Option(8, "--sequences", "-k", help="Number of sequences"),
    frames: int = typer.Option(24, "--frames", "-f", help="Frames per sequence"),
) -> None:
    """Generate synthetic storm sequences as RGRD files."""
    try:
        cfg = _state["config"]
        lines = []
        for i in range(sequences):
            seed = cfg.seed + i
            spec = random_spec(seed, frames=frames, size=cfg.image_size, step_minutes=cfg.step_minutes)
            path = out_dir / f"seq_{i:03d}.rgrd"
            write_rgrd(generate(spec), path)
            lines.append(f"{path.name} {frames} {seed}")
        write_manifest(out_dir / "manifest.txt", lines)
        console.print(f"[bold green]✓[/bold green] {sequences} sequences written to {out_dir}")
    except Exception as e:
        _fail(e)


@app.command()
def decompose(
    input_path: Path = typer.Argument(..., help="Input RGRD file"),
    out_dir: Path = typer.Argument(..., help="Output directory"),
) -> None:
    """Split a sequence into band<k>.rgrd by the configured thresholds."""
    try:
        spec = ThresholdSpec(_state["config"].thresholds)
        bands = decompose_sequence(read_rgrd(input_path), spec)
        for k, band in enumerate(bands):
            write_rgrd(band, out_dir / f"band{k}.rgrd")
        console.print(f"[bold green]✓[/bold green] {len(bands)} bands written to {out_dir}")
    except Exception as e:
        _fail(e)


@app.command("train-ae")
def train_ae(
    data_dir: Optional[Path] = typer.Option(None, "--data-dir", help="Directory of RGRD sequences (default DATA_DIR)"),
) -> None:
    """Stage 1: train the autoencoder."""
    try:
        with _training_pipeline() as pipeline:
            pipeline.train_autoencoder(pipeline.load_dataset(data_dir))
        console.print(f"[bold green]✓[/bold green] autoencoder saved to {pipeline.ae_path}")
    except Exception as e:
        _fail(e)


@app.command("train-diffusion")
def train_diffusion(
    data_dir: Optional[Path] = typer.Option(None, "--data-dir", help="Directory of RGRD sequences (default DATA_DIR)"),
) -> None:
    """Stage 2: train the condition encoder and denoiser (needs ae.ckpt)."""
    try:
        with _training_pipeline() as pipeline:
            model = pipeline.train_diffusion(pipeline.load_dataset(data_dir))
        console.print(
            f"[bold green]✓[/bold green] denoiser saved to {pipeline.denoiser_path} "
            f"(latent scale {model.latent_scale:.4g})"
        )
    except Exception as e:
        _fail(e)


@app.command("train-decoders")
def train_decoders(
    data_dir: Optional[Path] = typer.Option(None, "--data-dir", help="Directory of RGRD sequences (default DATA_DIR)"),
) -> None:
    """Stage 3: train the band decoders and the overall decoder (needs ae.ckpt)."""
    try:
        with _training_pipeline() as pipeline:
            bank = pipeline.train_decoders(pipeline.load_dataset(data_dir))
        console.print(f"[bold green]✓[/bold green] {len(bank)} decoders saved to {pipeline.bank_dir}")
    except Exception as e:
        _fail(e)


@app.command()
def sample(
    input_path: Path = typer.Argument(..., help="Input RGRD sequence"),
    out_dir: Path = typer.Argument(..., help="Forecast output directory"),
    start: int = typer.Option(0, "--start", help="Index of the first context frame"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Sampling seed (default SEED)"),
    members: Optional[int] = typer.Option(None, "--members", help="Ensemble size (default ENSEMBLE_SIZE)"),
) -> None:
    """Forecast the frames following [start, start + CONTEXT_FRAMES)."""
    try:
        pipeline = _pipeline()
        cfg = pipeline.cfg
        seq = read_rgrd(input_path)
        context = seq.slice(start, start + cfg.context_frames)
        forecast = pipeline.sample(context, members=members, seed=seed)
        systems: Dict[str, np.ndarray] = {"mtldm": forecast.recomposed, "oa": forecast.overall}
        systems.update(forecast.bands)
        end = start + cfg.context_frames + cfg.horizon_frames
        truth = seq.slice(start + cfg.context_frames, end) if len(seq) >= end else None
        write_forecast(systems, out_dir, forecast.step_minutes, truth)
        console.print(
            f"[bold green]✓[/bold green] {forecast.members} member(s) x {forecast.horizon} frames "
            f"written to {out_dir}"
        )
    except Exception as e:
        _fail(e)


@app.command("eval")
def evaluate(
    forecast_dir: Path = typer.Argument(..., help="Forecast directory written by 'sample'"),
    obs_path: Path = typer.Argument(..., help="Observed RGRD sequence"),
    out_csv: Path = typer.Argument(..., help="Metrics CSV path"),
    offset: int = typer.Option(0, "--offset", help="Observation index matching lead 1"),
    system: str = typer.Option("mtldm", "--system", help="mtldm (recomposed) or oa (overall decoder)"),
) -> None:
    """Score a forecast and write the metrics CSV."""
    try:
        series = _pipeline().evaluate(forecast_dir, obs_path, out_csv, offset, system)
        table = Table(title=f"{system} mean over leads")
        table.add_column("metric")
        table.add_column("descriptor")
        table.add_column("value", justify="right")
        for s in series:
            table.add_row(s.metric, s.descriptor, _fmt(s.mean()))
        console.print(table)
        console.print(f"[bold green]✓[/bold green] metrics written to {out_csv}")
    except Exception as e:
        _fail(e)


@app.command("export-pgm")
def export(
    input_path: Path = typer.Argument(..., help="Input RGRD sequence"),
    out_dir: Path = typer.Argument(..., help="Output directory"),
) -> None:
    """Write one 8-bit PGM per frame."""
    try:
        paths = export_pgm(read_rgrd(input_path), out_dir, _state["config"].rate_ceiling, stem=input_path.stem)
        console.print(f"[bold green]✓[/bold green] {len(paths)} images written to {out_dir}")
    except Exception as e:
        _fail(e)


@app.command()
def benchmark(
    windows: int = typer.Option(20, "--windows", "-w", help="Held-out windows"),
) -> None:
    """Compare recomposed vs overall forecasts and trained vs untrained sampling."""
    try:
        report = _pipeline().benchmark(windows)
        table = Table(title=f"Benchmark over {report.windows} windows")
        table.add_column("score")
        table.add_column("value", justify="right")
        table.add_row("top-band CSI mtldm", _fmt(report.csi_mtldm))
        table.add_row("top-band CSI oa", _fmt(report.csi_oa))
        table.add_row("CSI improvement", _fmt(report.csi_gain))
        table.add_row("CRPS trained", _fmt(report.crps_trained))
        table.add_row("CRPS untrained", _fmt(report.crps_untrained))
        table.add_row("CRPS reduction", _fmt(report.crps_gain))
        console.print(table)
    except Exception as e:
        _fail(e)


@app.command()
def status() -> None:
    """Show configuration and which stage artifacts exist."""
    try:
        pipeline = _pipeline()
        cfg = pipeline.cfg
        console.print(Panel.fit("[bold]Pipeline status[/bold]", title="mtldm-nowcast"))
        console.print("\n[bold]Configuration:[/bold]")
        console.print(f"  Image size: {cfg.image_size} (latent {cfg.latent_size}x{cfg.latent_size}x{cfg.latent_channels})")
        console.print(f"  Thresholds: {', '.join(f'{t:g}' for t in cfg.thresholds)}")
        console.print(f"  Diffusion steps: {cfg.t_max} ({cfg.schedule})")
        console.print(f"  Precision: {cfg.precision}  Seed: {cfg.seed}")
        console.print(f"  Checkpoints: {cfg.checkpoint_dir}")
        console.print("\n[bold]Stages:[/bold]")
        for artifact, ready in pipeline.status().items():
            mark = "[green]ready[/green]" if ready else "[yellow]missing[/yellow]"
            console.print(f"  {artifact}: {mark}")
    except Exception as e:
        _fail(e)


def main() -> None:
    """Main entry point."""
    app()


if __name__ == "__main__":
    main()
