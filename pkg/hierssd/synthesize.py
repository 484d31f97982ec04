"""Synthetic bioassay datasets drawn from the hierarchical model itself.

Used to build benchmarks with a known ground truth: species parameters come
from the community bivariate normal, responses from the loglogistic curve with
lognormal residuals, and the exact inputs are written next to the dataset.
"""
import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .bioassay import save_dataset
from .exceptions import DomainError
from .schemas import BioassayDataset, ColumnMapping, HyperParams, Observation, SpeciesParams

logger = logging.getLogger(__name__)

# community estimates reported for diuron on freshwater diatoms
DIURON_THETA = HyperParams(
    mu_logb=0.16, sigma_logb=0.46, mu_loge=2.49, sigma_loge=1.07, rho=0.83, sigma_err=0.3
)
FLUO_INITIAL_RANGE = (50.0, 150.0)


class GroundTruth(BaseModel):
    contaminant_id: str
    theta: HyperParams
    sigma_err: float
    seed: int
    concentrations: list[float]
    n_replicates: int
    n_controls: int
    species: list[SpeciesParams]
    d: dict[str, float]


def default_design(theta: HyperParams, n_levels: int = 8) -> np.ndarray:
    """Log-spaced concentrations covering mu_loge +/- 2 sigma_loge."""
    return np.logspace(
        theta.mu_loge - 2 * theta.sigma_loge, theta.mu_loge + 2 * theta.sigma_loge, n_levels
    )


def synthesize_dataset(
    theta: HyperParams = DIURON_THETA,
    concentrations: Optional[Sequence[float]] = None,
    n_replicates: int = 3,
    n_species: int = 10,
    sigma_err: Optional[float] = None,
    seed: int = 0,
    contaminant: str = "diuron",
    d_range: tuple[float, float] = (2.0, 6.0),
    n_controls: int = 3,
) -> tuple[BioassayDataset, GroundTruth]:
    sigma_err = theta.sigma_err if sigma_err is None else sigma_err
    if sigma_err < 0:
        raise DomainError("sigma_err must be >= 0")
    if n_species < 1 or n_replicates < 1 or n_controls < 1:
        raise DomainError("n_species, n_replicates and n_controls must be >= 1")
    conc = default_design(theta) if concentrations is None else np.asarray(concentrations, dtype=float)
    if np.any(conc <= 0):
        raise DomainError("design concentrations must be positive")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    logs = rng.multivariate_normal([theta.mu_logb, theta.mu_loge], theta.covariance(), size=n_species)
    d = rng.uniform(*d_range, size=n_species)

    observations, species, d_map = [], [], {}
    for j in range(n_species):
        species_id = f"sp{j + 1:02d}"
        b, e = 10 ** logs[j, 0], 10 ** logs[j, 1]
        species.append(SpeciesParams(species_id=species_id, log_b=logs[j, 0], log_e=logs[j, 1]))
        d_map[species_id] = float(d[j])

        levels = [0.0] * n_controls + [c for c in conc for _ in range(n_replicates)]
        replicates = list(range(1, n_controls + 1)) + [r for _ in conc for r in range(1, n_replicates + 1)]
        fluo_initial = rng.uniform(*FLUO_INITIAL_RANGE, size=len(levels))
        noise = rng.normal(0.0, sigma_err, size=len(levels)) if sigma_err > 0 else np.zeros(len(levels))
        for c, rep, fi, eps in zip(levels, replicates, fluo_initial, noise):
            y = math.log(d[j]) - math.log1p((c / e) ** b) + eps
            observations.append(
                Observation(
                    species_id=species_id,
                    contaminant_id=contaminant,
                    concentration=float(c),
                    replicate=rep,
                    fluo_initial=float(fi),
                    fluo_final=float(fi * math.exp(y)),
                )
            )

    truth = GroundTruth(
        contaminant_id=contaminant,
        theta=theta,
        sigma_err=sigma_err,
        seed=seed,
        concentrations=conc.tolist(),
        n_replicates=n_replicates,
        n_controls=n_controls,
        species=species,
        d=d_map,
    )
    logger.info(
        "synthesized %d observations for %d species of %s", len(observations), n_species, contaminant
    )
    return BioassayDataset(observations=observations), truth


def truth_path(dataset_path) -> Path:
    dataset_path = Path(dataset_path)
    return dataset_path.with_name(f"{dataset_path.stem}.truth.json")


def write_synthetic(
    ds: BioassayDataset, truth: GroundTruth, path, columns: Optional[ColumnMapping] = None
) -> tuple[Path, Path]:
    csv_path = save_dataset(ds, path, columns)
    sidecar = truth_path(csv_path)
    sidecar.write_text(truth.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return csv_path, sidecar


def read_truth(path) -> GroundTruth:
    return GroundTruth.model_validate_json(Path(path).read_text(encoding="utf-8"))
