import logging
from functools import wraps
from pathlib import Path
from typing import Optional

import typer

from . import pipeline
from .config import load_run_config
from .exceptions import ConfigError, HierSsdError
from .schemas import HyperParams, RunConfig
from .synthesize import DIURON_THETA

logger = logging.getLogger("hierssd")

app = typer.Typer(
    name="hierssd",
    help="Classical and hierarchical species sensitivity distributions from bioassay data.",
    add_completion=False,
    no_args_is_help=True,
)

ConfigOption = typer.Option(None, "--config", "-c", help="Flat key = value configuration file.")
InputOption = typer.Option(None, "--input", "-i", help="Bioassay CSV.")
OutputOption = typer.Option(None, "--output-dir", "-o", help="Directory for every artifact of the run.")
ContaminantOption = typer.Option(None, "--contaminant", help="Only use rows of this contaminant.")
SeedOption = typer.Option(None, "--seed", help="Master seed.")
ProfileOption = typer.Option(None, "--profile", help="full (alias paper) or test.")
JobsOption = typer.Option(None, "--n-jobs", help="Worker processes/threads.")
VerboseOption = typer.Option(False, "--verbose", "-v", help="Debug logging.")
UnconvergedOption = typer.Option(
    False, "--allow-unconverged", help="Simulate from a posterior that failed the Gelman-Rubin gate."
)


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def handle_errors(command):
    """Turn HierSsdError into a logged message and the error's exit code."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except HierSsdError as exc:
            logger.error("%s: %s", type(exc).__name__, exc.detail)
            raise typer.Exit(code=exc.exit_code)

    return wrapper


def _config(
    config: Optional[Path],
    verbose: bool,
    **overrides,
) -> RunConfig:
    _setup_logging(verbose)
    if overrides.get("input_path") is not None:
        overrides["input_path"] = str(overrides["input_path"])
    if overrides.get("output_dir") is not None:
        overrides["output_dir"] = str(overrides["output_dir"])
    return load_run_config(str(config) if config else None, **overrides)


def _interval(point: float, lo: Optional[float], hi: Optional[float]) -> str:
    if lo is None or hi is None:
        return f"{point:.4g}"
    return f"{point:.4g} [{lo:.4g}, {hi:.4g}]"


@app.command("synthesize", help="Write a synthetic dataset and its ground-truth sidecar.")
@handle_errors
def synthesize(
    output: Path = typer.Option(..., "--output", help="Dataset CSV to write."),
    n_species: int = typer.Option(10, "--n-species"),
    n_replicates: int = typer.Option(3, "--n-replicates"),
    concentrations: Optional[str] = typer.Option(
        None, "--concentrations", help="Comma separated design; default spans mu_loge +/- 2 sigma_loge."
    ),
    sigma_err: Optional[float] = typer.Option(None, "--sigma-err"),
    theta: Optional[str] = typer.Option(
        None, "--theta", help="mu_logb,sigma_logb,mu_loge,sigma_loge,rho,sigma_err; default diuron-like."
    ),
    contaminant: str = typer.Option("diuron", "--contaminant"),
    seed: int = typer.Option(0, "--seed"),
    verbose: bool = VerboseOption,
):
    _setup_logging(verbose)
    try:
        hyper = HyperParams.from_array([float(v) for v in theta.split(",")]) if theta else DIURON_THETA
        design = [float(v) for v in concentrations.split(",")] if concentrations else None
    except ValueError as exc:
        raise ConfigError(f"invalid --theta or --concentrations: {exc}") from exc
    csv_path, truth = pipeline.cmd_synthesize(
        output,
        theta=hyper,
        concentrations=design,
        n_replicates=n_replicates,
        n_species=n_species,
        sigma_err=sigma_err,
        seed=seed,
        contaminant=contaminant,
    )
    typer.echo(f"dataset: {csv_path}\nground truth: {truth}")


@app.command("fit-curves", help="Fit one loglogistic curve per species and contaminant.")
@handle_errors
def fit_curves(
    config: Optional[Path] = ConfigOption,
    input_path: Optional[Path] = InputOption,
    output_dir: Optional[Path] = OutputOption,
    contaminant: Optional[str] = ContaminantOption,
    seed: Optional[int] = SeedOption,
    profile: Optional[str] = ProfileOption,
    n_jobs: Optional[int] = JobsOption,
    verbose: bool = VerboseOption,
):
    run = _config(
        config, verbose, input_path=input_path, output_dir=output_dir, contaminant=contaminant,
        seed=seed, profile=profile, n_jobs=n_jobs,
    )
    for row in pipeline.cmd_fit_curves(run):
        ec10 = _interval(row.ec10, row.ec10_lo, row.ec10_hi) if row.ec10 else "-"
        ec50 = _interval(row.ec50, row.ec50_lo, row.ec50_hi) if row.ec50 else "-"
        status = "" if row.converged else "  (not converged)"
        typer.echo(f"{row.species}/{row.contaminant}: EC10 {ec10}  EC50 {ec50}{status}")


@app.command("classical-ssd", help="Lognormal SSD and HC_p from point EC_x values.")
@handle_errors
def classical(
    config: Optional[Path] = ConfigOption,
    input_path: Optional[Path] = InputOption,
    output_dir: Optional[Path] = OutputOption,
    contaminant: Optional[str] = ContaminantOption,
    seed: Optional[int] = SeedOption,
    profile: Optional[str] = ProfileOption,
    n_jobs: Optional[int] = JobsOption,
    verbose: bool = VerboseOption,
):
    run = _config(
        config, verbose, input_path=input_path, output_dir=output_dir, contaminant=contaminant,
        seed=seed, profile=profile, n_jobs=n_jobs,
    )
    for s in pipeline.cmd_classical_ssd(run):
        typer.echo(f"{s.contaminant} EC{s.x:g}: HC{s.p:g} = {_interval(s.hc5, s.hc5_lo, s.hc5_hi)} (n={s.n})")


@app.command("fit-hier", help="Sample the hierarchical posterior per contaminant.")
@handle_errors
def fit_hier(
    config: Optional[Path] = ConfigOption,
    input_path: Optional[Path] = InputOption,
    output_dir: Optional[Path] = OutputOption,
    contaminant: Optional[str] = ContaminantOption,
    seed: Optional[int] = SeedOption,
    profile: Optional[str] = ProfileOption,
    n_jobs: Optional[int] = JobsOption,
    verbose: bool = VerboseOption,
):
    run = _config(
        config, verbose, input_path=input_path, output_dir=output_dir, contaminant=contaminant,
        seed=seed, profile=profile, n_jobs=n_jobs,
    )
    for name, sample in pipeline.cmd_fit_hier(run).items():
        rhat = ", ".join(f"{k}={v:.3f}" for k, v in sample.gelman_rubin.items())
        typer.echo(f"{name}: {len(sample)} draws; Gelman-Rubin {rhat}")


@app.command("simulate", help="Community simulations from a stored posterior.")
@handle_errors
def simulate(
    posterior: Optional[Path] = typer.Option(None, "--posterior", help="Posterior CSV written by fit-hier."),
    config: Optional[Path] = ConfigOption,
    output_dir: Optional[Path] = OutputOption,
    contaminant: Optional[str] = ContaminantOption,
    seed: Optional[int] = SeedOption,
    profile: Optional[str] = ProfileOption,
    allow_unconverged: bool = UnconvergedOption,
    verbose: bool = VerboseOption,
):
    run = _config(
        config, verbose, output_dir=output_dir, contaminant=contaminant, seed=seed,
        profile=profile, allow_unconverged=allow_unconverged or None,
    )
    _echo_report(pipeline.cmd_simulate(run, str(posterior) if posterior else None))


@app.command("report", help="Run the whole pipeline and write one report per contaminant.")
@handle_errors
def report(
    config: Optional[Path] = ConfigOption,
    input_path: Optional[Path] = InputOption,
    output_dir: Optional[Path] = OutputOption,
    contaminant: Optional[str] = ContaminantOption,
    seed: Optional[int] = SeedOption,
    profile: Optional[str] = ProfileOption,
    n_jobs: Optional[int] = JobsOption,
    allow_unconverged: bool = UnconvergedOption,
    verbose: bool = VerboseOption,
):
    run = _config(
        config, verbose, input_path=input_path, output_dir=output_dir, contaminant=contaminant,
        seed=seed, profile=profile, n_jobs=n_jobs, allow_unconverged=allow_unconverged or None,
    )
    for r in pipeline.cmd_report(run):
        _echo_report(r)


def _echo_report(r) -> None:
    typer.echo(f"== {r.contaminant}")
    for s in r.classical_hc:
        typer.echo(f"classical HC{s.p:g}(EC{s.x:g}) = {_interval(s.hc5, s.hc5_lo, s.hc5_hi)}")
    for h in r.hierarchical_hc:
        typer.echo(f"hierarchical HC{h.p:g}(EC{h.x:g}) = {_interval(h.point, h.ci_low, h.ci_high)}")
    for g in r.gec:
        typer.echo(f"GEC{g.x:g} = {_interval(g.point, g.ci_low, g.ci_high)}")
    for g in r.global_response_at_hc:
        typer.echo(f"global response reduction at {g.label}: {_interval(g.reduction, g.ci_low, g.ci_high)} %")
    typer.echo(f"report: {r.files.get('report')}")
