"""The pipeline stages behind each command.

Every stage writes its artifacts into ``config.output_dir`` and returns the
values it wrote, so ``cmd_report`` can chain the stages in one process.
"""
import logging
import os
import time
from pathlib import Path
from typing import Optional, Sequence

from pydantic import BaseModel

from . import classical_ssd, community, diagnostics, dose_response, posterior, sampler, storage
from .config import flat_config
from .dependencies import (
    derive_seed,
    get_contaminants,
    get_controls,
    get_dataset,
    get_output_dir,
    get_posterior,
    get_responses,
)
from .exceptions import InsufficientDataError, UnstableFitError
from .schemas import (
    ClassicalSsdSummary,
    ColumnMapping,
    CurveBand,
    CurveFit,
    CurveFitRow,
    EcEstimate,
    HyperParams,
    PosteriorSample,
    PriorSpec,
    RunConfig,
    RunReport,
)
from .synthesize import DIURON_THETA, synthesize_dataset, write_synthetic

logger = logging.getLogger(__name__)

CURVE_FITS_FILE = "curve_fits.csv"
# effect levels carried by the curve-fit table
TABLE_X = (10.0, 50.0)


class ReportContext(BaseModel):
    """Outputs of earlier stages of the same run, folded into the report."""

    curve_fits: list[CurveFitRow] = []
    classical: list[ClassicalSsdSummary] = []
    files: dict[str, str] = {}
    timings: dict[str, float] = {}
    notes: list[str] = []


def _relative(path, output_dir) -> str:
    return Path(os.path.relpath(path, output_dir)).as_posix()


def cmd_synthesize(
    output_path,
    theta: HyperParams = DIURON_THETA,
    concentrations: Optional[Sequence[float]] = None,
    n_replicates: int = 3,
    n_species: int = 10,
    sigma_err: Optional[float] = None,
    seed: int = 0,
    contaminant: str = "diuron",
    columns: Optional[ColumnMapping] = None,
) -> tuple[Path, Path]:
    ds, truth = synthesize_dataset(
        theta,
        concentrations=concentrations,
        n_replicates=n_replicates,
        n_species=n_species,
        sigma_err=sigma_err,
        seed=seed,
        contaminant=contaminant,
    )
    Path(output_path).parent.mkdir(parents=True, exist_ok=True)
    return write_synthetic(ds, truth, output_path, columns)


def _curve_row(fit: CurveFit, ecs: dict[float, EcEstimate]) -> CurveFitRow:
    values = {}
    for x in TABLE_X:
        name = f"ec{x:g}"
        if x in ecs:
            values.update({name: ecs[x].point, f"{name}_lo": ecs[x].ci_low, f"{name}_hi": ecs[x].ci_high})
        elif fit.converged:
            values[name] = dose_response.ec_x(fit, x)
    return CurveFitRow(
        species=fit.species_id,
        contaminant=fit.contaminant_id,
        b=fit.b,
        e=fit.e,
        d=fit.d,
        sigma=fit.sigma,
        converged=fit.converged,
        **values,
    )


def cmd_fit_curves(config: RunConfig) -> list[CurveFitRow]:
    """One loglogistic fit with bootstrap EC10/EC50 intervals per (species, contaminant)."""
    ds = get_dataset(config)
    points = get_responses(ds, config)
    controls = get_controls(ds, config)
    out = get_output_dir(config)

    rows = []
    for (species_id, contaminant_id), pts in points.items():
        control = controls.get((species_id, contaminant_id))
        if control is None:
            continue
        try:
            fit = dose_response.fit_curve(pts, control.d)
        except InsufficientDataError as exc:
            logger.warning("%s/%s not fitted: %s", species_id, contaminant_id, exc.detail)
            continue
        ecs = {}
        if fit.converged:
            try:
                boot = dose_response.bootstrap_fits(
                    pts,
                    control.d,
                    n_boot=config.n_boot_ec,
                    seed=derive_seed(config.seed, "bootstrap", species_id, contaminant_id),
                    n_jobs=config.n_jobs,
                )
                ecs = {x: dose_response.ec_from_bootstrap(boot, x) for x in TABLE_X}
            except UnstableFitError as exc:
                logger.warning("%s/%s: %s; intervals left empty", species_id, contaminant_id, exc.detail)
        rows.append(_curve_row(fit, ecs))

    if not rows:
        raise InsufficientDataError("no dose-response curve could be fitted")
    failed = [f"{r.species}/{r.contaminant}" for r in rows if not r.converged]
    if failed:
        logger.warning("non-converged curves: %s", ", ".join(failed))
    path = storage.write_curve_fits(rows, out / CURVE_FITS_FILE)
    logger.info("wrote %d curve fits to %s", len(rows), path)
    return rows


def cmd_classical_ssd(
    config: RunConfig, rows: Optional[list[CurveFitRow]] = None
) -> list[ClassicalSsdSummary]:
    """Lognormal SSD on the point EC_x values of the converged curves, per contaminant and x."""
    rows = cmd_fit_curves(config) if rows is None else rows
    out = get_output_dir(config)
    summaries = []
    for contaminant in sorted({r.contaminant for r in rows}):
        converged = [r for r in rows if r.contaminant == contaminant and r.converged]
        if len(converged) < classical_ssd.MIN_SPECIES:
            raise InsufficientDataError(
                f"classical SSD of {contaminant} needs >= {classical_ssd.MIN_SPECIES} "
                f"converged curves, got {len(converged)}"
            )
        for x in config.x_levels:
            ecs = [dose_response.ec_x((r.b, r.e), x) for r in converged]
            ssd = classical_ssd.fit_lognormal(ecs)
            hc = classical_ssd.bootstrap_hc(
                ecs, config.p, n_boot=config.n_boot_hc, seed=derive_seed(config.seed, "hc", contaminant, x)
            )
            summary = ClassicalSsdSummary(
                contaminant=contaminant,
                x=x,
                p=config.p,
                mu_log10=ssd.mu_log10,
                sigma_log10=ssd.sigma_log10,
                n=ssd.n_species,
                hc5=hc.point,
                hc5_lo=hc.ci_low,
                hc5_hi=hc.ci_high,
            )
            curve = classical_ssd.ssd_curve(ssd, classical_ssd.default_grid(ssd, config.grid_points))
            storage.write_classical_ssd(summary, curve, out)
            summaries.append(summary)
    return summaries


def cmd_fit_hier(config: RunConfig) -> dict[str, PosteriorSample]:
    """Hierarchical posterior per contaminant, with its diagnostics and prior/posterior table."""
    ds = get_dataset(config)
    points = get_responses(ds, config)
    controls = get_controls(ds, config)
    out = get_output_dir(config)

    samples = {}
    for contaminant in get_contaminants(points):
        data = posterior.build_hier_data(points, controls, contaminant)
        priors = PriorSpec.from_concentrations(data.concentrations())
        sample = sampler.run_mcmc(data, priors, config.mcmc)
        storage.write_posterior(sample, out)
        storage.write_hyperparameters(diagnostics.summarize_hyperparameters(sample), out, contaminant)
        storage.write_prior_posterior(
            diagnostics.prior_posterior_report(sample),
            diagnostics.prior_posterior_densities(sample),
            out,
            contaminant,
        )
        failing = {
            k: v for k, v in sample.gelman_rubin.items() if not v < config.gelman_rubin_threshold
        }
        if failing:
            logger.warning(
                "%s has not converged (%s); simulation will refuse it without --allow-unconverged",
                contaminant, ", ".join(f"{k}={v:.3f}" for k, v in failing.items()),
            )
        samples[contaminant] = sample
    return samples


def _write_band(band: CurveBand, out: Path, contaminant: str, files: dict, key: str) -> None:
    path = storage.write_band(band, storage.band_path(out, contaminant, band))
    files[key] = _relative(path, out)


def cmd_simulate(
    config: RunConfig,
    posterior_path: Optional[str] = None,
    context: Optional[ReportContext] = None,
) -> RunReport:
    """Community simulations from a stored posterior, composed into the run report."""
    context = context or ReportContext()
    timings = dict(context.timings)
    started = time.perf_counter()

    sample = get_posterior(config, posterior_path)
    contaminant = sample.contaminant_id
    gate = {"threshold": config.gelman_rubin_threshold, "allow_unconverged": config.allow_unconverged}
    diagnostics.require_converged(sample, **gate)
    out = get_output_dir(config)
    files = dict(context.files)
    csv_path, json_path = storage.posterior_paths(out, contaminant)
    if posterior_path is not None:
        csv_path = Path(posterior_path)
        json_path = storage.diagnostics_path(csv_path)
    files["posterior"] = _relative(csv_path, out)
    files["posterior_diagnostics"] = _relative(json_path, out)
    notes = list(context.notes)
    n_needed = max(config.n_theta_gec, config.n_theta_ssd)
    if len(sample) < n_needed:
        notes.append(f"posterior holds {len(sample)} draws; theta sets resampled with replacement")

    gec = []
    for x in config.gec_x:
        estimate, band = community.gec_x(
            sample,
            x,
            n_theta=config.n_theta_gec,
            n_species=config.n_species_community,
            seed=config.seed,
            grid_points=config.grid_points,
            **gate,
        )
        gec.append(estimate)
    if config.gec_x:
        _write_band(band, out, contaminant, files, "band_global_response")
    timings["gec"] = time.perf_counter() - started

    step = time.perf_counter()
    hierarchical = []
    for x in config.x_levels:
        band, estimate = community.hierarchical_ssd(
            sample,
            x,
            p=config.p,
            n_theta=config.n_theta_ssd,
            n_species_large=config.n_species_large,
            seed=config.seed,
            grid_points=config.grid_points,
            **gate,
        )
        hierarchical.append(estimate)
        _write_band(band, out, contaminant, files, f"band_ssd_ec{x:g}")

    hc_band = community.hc5_vs_x(
        sample,
        config.hc_x_grid,
        p=config.p,
        n_theta=config.n_theta_ssd,
        n_species_large=config.n_species_large,
        seed=config.seed,
        **gate,
    )
    _write_band(hc_band, out, contaminant, files, "band_hc5_vs_x")
    hc_table = [
        {"x": float(x), "median": float(m), "lo": float(lo), "hi": float(hi)}
        for x, m, lo, hi in zip(hc_band.grid, hc_band.median, hc_band.lo, hc_band.hi)
    ]
    timings["hierarchical_ssd"] = time.perf_counter() - step

    grid = community.concentration_grid(sample.priors, config.grid_points)
    for band in community.species_curve_bands(sample, grid):
        _write_band(band, out, contaminant, files, f"band_species_curve_{band.label}")

    classical = [s for s in context.classical if s.contaminant == contaminant]
    at_hc = [
        community.global_response_at(
            sample,
            s.hc5,
            n_theta=config.n_theta_gec,
            n_species=config.n_species_community,
            seed=config.seed,
            label=f"classical HC{s.p:g} of EC{s.x:g}",
            **gate,
        )
        for s in classical
    ]

    hyper = diagnostics.prior_posterior_report(sample)
    notes += [
        f"{row.parameter} is data-weak (posterior/prior sd {row.ratio:.2f})"
        for row in hyper
        if row.data_weak and not row.exempt
    ]
    notes += [
        f"curve {r.species}/{r.contaminant} did not converge"
        for r in context.curve_fits
        if r.contaminant == contaminant and not r.converged
    ]

    report = RunReport(
        contaminant=contaminant,
        config=flat_config(config),
        curve_fits=[r for r in context.curve_fits if r.contaminant == contaminant],
        classical_hc=classical,
        hyperparameters=hyper,
        gec=gec,
        hierarchical_hc=hierarchical,
        hc5_vs_x=hc_table,
        global_response_at_hc=at_hc,
        diagnostics={
            "gelman_rubin": sample.gelman_rubin,
            "acceptance": sample.acceptance,
            "n_draws": len(sample),
            "draws_per_chain": sample.config.draws_per_chain,
            "seed": sample.config.seed,
        },
        notes=notes,
    )
    report_path, timings_path = storage.report_paths(out, contaminant)
    files["report"] = _relative(report_path, out)
    files["timings"] = _relative(timings_path, out)
    report = report.model_copy(update={"files": dict(sorted(files.items()))})
    timings["simulate_total"] = time.perf_counter() - started
    storage.write_report(report, timings, out)
    logger.info("wrote report for %s to %s", contaminant, report_path)
    return report


def cmd_report(config: RunConfig) -> list[RunReport]:
    """Full pipeline: curve fits, classical SSD, hierarchical fit, simulations."""
    out = get_output_dir(config)
    timings = {}

    started = time.perf_counter()
    rows = cmd_fit_curves(config)
    timings["fit_curves"] = time.perf_counter() - started

    started = time.perf_counter()
    classical = cmd_classical_ssd(config, rows)
    timings["classical_ssd"] = time.perf_counter() - started

    started = time.perf_counter()
    samples = cmd_fit_hier(config)
    timings["fit_hier"] = time.perf_counter() - started

    reports = []
    for contaminant in samples:
        files = {"curve_fits": CURVE_FITS_FILE}
        for s in classical:
            if s.contaminant != contaminant:
                continue
            json_path, curve_path = storage.classical_paths(out, contaminant, s.x)
            files[f"ssd_ec{s.x:g}"] = _relative(json_path, out)
            files[f"ssd_ec{s.x:g}_curve"] = _relative(curve_path, out)
        table_path, density_path = storage.prior_posterior_paths(out, contaminant)
        files["prior_posterior"] = _relative(table_path, out)
        files["prior_posterior_density"] = _relative(density_path, out)
        files["hyperparameters"] = _relative(storage.hyperparameters_path(out, contaminant), out)

        context = ReportContext(
            curve_fits=rows, classical=classical, files=files, timings=timings
        )
        posterior_csv, _ = storage.posterior_paths(out, contaminant)
        scoped = config.model_copy(update={"contaminant": contaminant})
        reports.append(cmd_simulate(scoped, str(posterior_csv), context))
    return reports
