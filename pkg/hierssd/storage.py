"""Reading and writing run artifacts. Files are never rounded."""
import json
import logging
import re
from pathlib import Path
from typing import Iterable, Optional

import pandas as pd
from pydantic import BaseModel

from .exceptions import SchemaError
from .sampler import draw_columns
from .schemas import (
    HYPER_NAMES,
    ClassicalSsdSummary,
    CurveBand,
    CurveFitRow,
    McmcConfig,
    PosteriorSample,
    PriorPosteriorRow,
    PriorSpec,
    RunReport,
)

logger = logging.getLogger(__name__)

CURVE_FIT_COLUMNS = list(CurveFitRow.model_fields)


def slug(value: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", value.strip()) or "unnamed"


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(data, path) -> Path:
    path = Path(path)
    if isinstance(data, BaseModel):
        text = data.model_dump_json(indent=2)
    else:
        text = json.dumps(data, indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# --- curve fits ---------------------------------------------------------------

def write_curve_fits(rows: Iterable[CurveFitRow], path) -> Path:
    frame = pd.DataFrame([r.model_dump() for r in rows], columns=CURVE_FIT_COLUMNS)
    frame.to_csv(path, index=False)
    return Path(path)


# --- classical SSD ------------------------------------------------------------

def classical_paths(output_dir, contaminant: str, x: float) -> tuple[Path, Path]:
    stem = Path(output_dir) / f"ssd_{slug(contaminant)}_ec{x:g}"
    return stem.with_suffix(".json"), Path(f"{stem}_curve.csv")


def write_classical_ssd(summary: ClassicalSsdSummary, curve: pd.DataFrame, output_dir) -> tuple[Path, Path]:
    json_path, csv_path = classical_paths(output_dir, summary.contaminant, summary.x)
    write_json(summary, json_path)
    curve.to_csv(csv_path, index=False)
    return json_path, csv_path


# --- posterior ----------------------------------------------------------------

def posterior_paths(output_dir, contaminant: str) -> tuple[Path, Path]:
    csv_path = Path(output_dir) / f"posterior_{slug(contaminant)}.csv"
    return csv_path, diagnostics_path(csv_path)


def diagnostics_path(posterior_csv) -> Path:
    posterior_csv = Path(posterior_csv)
    return posterior_csv.with_name(f"{posterior_csv.stem}.diagnostics.json")


def write_posterior(sample: PosteriorSample, output_dir) -> tuple[Path, Path]:
    csv_path, json_path = posterior_paths(output_dir, sample.contaminant_id)
    sample.draws.to_csv(csv_path, index=False)
    write_json(
        {
            "contaminant": sample.contaminant_id,
            "species": sample.species_ids,
            "acceptance": sample.acceptance,
            "gelman_rubin": sample.gelman_rubin,
            "config": sample.config.model_dump(),
            "seed": sample.config.seed,
            "priors": sample.priors.model_dump(),
            "draws_per_chain": sample.config.draws_per_chain,
        },
        json_path,
    )
    logger.info("wrote %d posterior draws to %s", len(sample.draws), csv_path)
    return csv_path, json_path


def read_posterior(csv_path, json_path: Optional[Path] = None) -> PosteriorSample:
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else diagnostics_path(csv_path)
    if not csv_path.is_file():
        raise SchemaError(f"posterior file not found: {csv_path}")
    if not json_path.is_file():
        raise SchemaError(f"diagnostics sidecar not found: {json_path}")
    meta = read_json(json_path)
    draws = pd.read_csv(csv_path, float_precision="round_trip")

    expected = ["chain", "iter"] + draw_columns(meta["species"])
    species_columns = [c for c in draws.columns if c.startswith(("log_b[", "log_e["))]
    if len(species_columns) != 2 * len(meta["species"]) or list(draws.columns) != expected:
        raise SchemaError(
            f"{csv_path} has {len(species_columns) // 2} species columns but "
            f"{json_path.name} lists {len(meta['species'])} species"
        )
    for name in HYPER_NAMES:
        if name not in draws.columns:
            raise SchemaError(f"{csv_path} lacks column {name}", column=name)
    return PosteriorSample(
        contaminant_id=meta["contaminant"],
        species_ids=meta["species"],
        draws=draws,
        priors=PriorSpec(**meta["priors"]),
        config=McmcConfig(**meta["config"]),
        acceptance=meta.get("acceptance", {}),
        gelman_rubin={k: float(v) if v is not None else float("nan") for k, v in meta.get("gelman_rubin", {}).items()},
    )


# --- bands ----------------------------------------------------------------------

def band_path(output_dir, contaminant: str, band: CurveBand) -> Path:
    suffix = f"_{slug(band.label)}" if band.label else ""
    return Path(output_dir) / f"band_{slug(contaminant)}_{band.kind}{suffix}.csv"


def write_band(band: CurveBand, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"# kind={band.kind} units={band.units}\n")
        band.to_frame().to_csv(handle, index=False)
    return path


def read_band(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


# --- prior / posterior comparison ---------------------------------------------

def prior_posterior_paths(output_dir, contaminant: str) -> tuple[Path, Path]:
    stem = Path(output_dir) / f"prior_posterior_{slug(contaminant)}"
    return stem.with_suffix(".csv"), Path(f"{stem}_density.csv")


def write_prior_posterior(
    rows: Iterable[PriorPosteriorRow], densities: pd.DataFrame, output_dir, contaminant: str
) -> tuple[Path, Path]:
    table_path, density_path = prior_posterior_paths(output_dir, contaminant)
    table = pd.DataFrame([r.model_dump() for r in rows], columns=list(PriorPosteriorRow.model_fields))
    table.to_csv(table_path, index=False)
    densities.to_csv(density_path, index=False)
    return table_path, density_path


def hyperparameters_path(output_dir, contaminant: str) -> Path:
    return Path(output_dir) / f"hyperparameters_{slug(contaminant)}.csv"


def write_hyperparameters(table: pd.DataFrame, output_dir, contaminant: str) -> Path:
    path = hyperparameters_path(output_dir, contaminant)
    table.to_csv(path, index=False)
    return path


# --- report -------------------------------------------------------------------

def report_paths(output_dir, contaminant: str) -> tuple[Path, Path]:
    name = slug(contaminant)
    return Path(output_dir) / f"report_{name}.json", Path(output_dir) / f"timings_{name}.json"


def write_report(report: RunReport, timings: dict, output_dir) -> tuple[Path, Path]:
    report_path, timings_path = report_paths(output_dir, report.contaminant)
    write_json(report, report_path)
    write_json(timings, timings_path)
    return report_path, timings_path
