"""Command-line interface for the shift-register simulator."""

import sys
from pathlib import Path
from typing import Optional

import click

from . import __version__
from .config import ExperimentConfig
from .errors import ShiftRegisterError
from .experiments import ExperimentRunner, list_recipes, resolve_config, run_calibration
from .logger import LogLevel, create_logger
from .report import build_report

LOG_LEVELS = [level.value for level in LogLevel]


def _load(config: str, **overrides) -> ExperimentConfig:
    """Resolve ``config`` (file or recipe name) and apply CLI overrides, exiting with 2 on failure."""
    try:
        loaded, recipe = resolve_config(config)
    except ShiftRegisterError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(e.exit_code)
    loaded.apply_overrides(**overrides)
    loaded.name = loaded.name if loaded.name != "unnamed" else recipe
    return loaded


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Monte Carlo digital twin of a microlens-array atom shift register.

    Examples:
        # List the bundled recipes
        shiftreg list-recipes

        # Run a recipe with a different seed
        shiftreg run --config transport_scan --seed 7 --out results/transport_scan

        # Summarize a finished run
        shiftreg report results/transport_scan
    """


@main.command()
@click.option("--config", "-c", "config_source", required=True,
              help="Config file or bundled recipe name")
@click.option("--seed", type=int, help="Override the master seed")
@click.option("--out", "-o", "output", type=click.Path(path_type=Path),
              help="Output directory (default: ./results/<name>)")
@click.option("--threads", type=click.IntRange(min=1), help="Worker processes for propagation")
@click.option("--atoms", type=click.IntRange(min=1), help="Override the simulated ensemble size")
@click.option("--log-level", type=click.Choice(LOG_LEVELS), help="Logging level")
def run(config_source: str, seed: Optional[int], output: Optional[Path], threads: Optional[int],
        atoms: Optional[int], log_level: Optional[str]) -> None:
    """Run an experiment and write its result bundle."""
    config = _load(config_source, seed=seed, threads=threads, output_dir=output,
                   log_level=log_level, atoms=atoms)
    logger = create_logger(level=config.logging.level, component="cli")

    errors = config.validate()
    if errors:
        logger.error("Configuration validation failed", errors=errors)
        for error in errors:
            click.echo(f"Error: {error}", err=True)
        sys.exit(2)

    logger.info(
        "Starting shiftreg run",
        recipe=config.name,
        kind=config.experiment.kind.value,
        seed=config.dynamics.seed,
        workers=config.dynamics.workers,
    )

    try:
        result = ExperimentRunner(config, recipe=config.name).run()

        if result.success:
            click.echo("✓ Run completed successfully!")
            click.echo(f"  Output directory: {result.output_dir}")
            click.echo(f"  Output files: {len(result.output_files)}")
            click.echo(f"  Processing time: {result.processing_time:.2f}s")
            for warning in result.warnings:
                click.echo(f"  Warning: {warning}")
        else:
            click.echo("✗ Run failed:", err=True)
            for error in result.errors:
                click.echo(f"  {error}", err=True)
            sys.exit(result.exit_code)

    except KeyboardInterrupt:
        logger.info("Run interrupted by user")
        click.echo("\nRun interrupted by user")
        sys.exit(130)
    except Exception as e:
        logger.error("Unexpected error during run", error=str(e), type=type(e).__name__)
        click.echo(f"✗ Unexpected error: {e}", err=True)
        if config.logging.level == LogLevel.DEBUG:
            import traceback
            traceback.print_exc()
        sys.exit(1)


@main.command()
@click.option("--config", "-c", "config_source", required=True,
              help="Config file or bundled recipe name")
def validate(config_source: str) -> None:
    """Check a config against the schema and cross-field rules."""
    config = _load(config_source)
    errors = config.validate()
    if errors:
        for error in errors:
            click.echo(f"Error: {error}", err=True)
        sys.exit(2)
    click.echo(f"✓ {config_source} is valid ({config.experiment.kind.value})")


@main.command()
@click.argument("bundle", type=click.Path(path_type=Path))
@click.option("--output", "-o", type=click.Path(path_type=Path), help="Also write the report to a file")
@click.option("--strict", is_flag=True, help="Exit with 1 when an acceptance check fails")
def report(bundle: Path, output: Optional[Path], strict: bool) -> None:
    """Summarize a result bundle and flag acceptance checks."""
    try:
        text, checks = build_report(bundle)
    except ShiftRegisterError as e:
        click.echo(f"✗ {e}", err=True)
        sys.exit(e.exit_code)
    click.echo(text, nl=False)
    if output is not None:
        output.write_text(text, encoding="utf-8")
    if strict and not all(check.passed for check in checks):
        sys.exit(1)


@main.command("list-recipes")
def list_recipes_command() -> None:
    """List the bundled recipes."""
    for recipe in list_recipes():
        click.echo(f"{recipe['name']:<16} {recipe['kind']:<15} {recipe['description']}")


@main.command()
@click.argument("target", type=click.Choice(["handover", "heating"]))
@click.option("--config", "-c", "config_source", required=True,
              help="Config file or bundled recipe name")
@click.option("--seed", type=int, help="Override the master seed")
@click.option("--out", "-o", "output", type=click.Path(path_type=Path),
              help="Calibration report path (default: ./calibration_<target>.json)")
@click.option("--threads", type=click.IntRange(min=1), help="Worker processes for propagation")
@click.option("--log-level", type=click.Choice(LOG_LEVELS), help="Logging level")
def calibrate(target: str, config_source: str, seed: Optional[int], output: Optional[Path],
              threads: Optional[int], log_level: Optional[str]) -> None:
    """Calibrate the handover focal shift or the heating rate."""
    config = _load(config_source, seed=seed, threads=threads, log_level=log_level)
    output = output or Path(f"calibration_{target}.json")
    try:
        result = run_calibration(config, target, output)
    except ShiftRegisterError as e:
        click.echo(f"✗ Calibration failed: {e}", err=True)
        sys.exit(e.exit_code)
    except OSError as e:
        click.echo(f"✗ Calibration failed: {e}", err=True)
        sys.exit(2)
    click.echo(f"✓ {result['parameter']} = {result['value']:.6g}")
    click.echo(f"  Report: {output}")


if __name__ == "__main__":
    main()
