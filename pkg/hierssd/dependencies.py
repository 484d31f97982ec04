"""Loaders shared by the commands: dataset selection, controls, posteriors, seeds."""
import logging
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from . import bioassay, storage
from .exceptions import ConfigError, EmptySelectionError
from .schemas import BioassayDataset, ControlSummary, PosteriorSample, ResponsePoint, RunConfig

logger = logging.getLogger(__name__)


def derive_seed(seed: int, *keys) -> int:
    """Independent, reproducible seed for one unit of work named by ``keys``."""
    entropy = [int(seed)] + [zlib.crc32(str(k).encode("utf-8")) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def get_dataset(config: RunConfig) -> BioassayDataset:
    """The whole dataset; the contaminant filter is applied by the loaders below."""
    if not config.input_path:
        raise ConfigError("no input dataset given (--input or input_path)")
    path = Path(config.input_path)
    if not path.is_file():
        raise ConfigError(f"input dataset not found: {path}")
    ds = bioassay.load_dataset(path, config.columns)
    if not len(ds):
        raise EmptySelectionError(f"{path} holds no observations")
    # fail early on an unknown contaminant
    bioassay.filter_contaminant(ds, config.contaminant)
    return ds


def get_contaminants(points: dict[tuple[str, str], list[ResponsePoint]]) -> list[str]:
    """Contaminants with fit points; those holding controls only are left out."""
    return sorted({contaminant for _, contaminant in points})


def get_responses(ds: BioassayDataset, config: RunConfig) -> dict[tuple[str, str], list[ResponsePoint]]:
    points = bioassay.make_responses(bioassay.filter_contaminant(ds, config.contaminant))
    if not points:
        raise EmptySelectionError("selection holds control observations only")
    return points


def get_controls(ds: BioassayDataset, config: RunConfig) -> dict[tuple[str, str], ControlSummary]:
    """Controls of the unfiltered dataset, so d does not depend on ``--contaminant``."""
    return bioassay.control_summaries(ds, config.control_pooling, config.contaminant)


def get_output_dir(config: RunConfig) -> Path:
    return storage.ensure_dir(config.output_dir)


def get_posterior(config: RunConfig, posterior_path: Optional[str] = None) -> PosteriorSample:
    if posterior_path is None:
        if not config.contaminant:
            raise ConfigError("simulate needs --posterior or --contaminant")
        posterior_path, _ = storage.posterior_paths(config.output_dir, config.contaminant)
    sample = storage.read_posterior(posterior_path)
    logger.info("loaded %d draws of %s from %s", len(sample), sample.contaminant_id, posterior_path)
    return sample
