"""Ingestion of raw bioassay measurements.

Fluorescence is only ever used as the ratio final/initial, so its units
are passed through untouched. Responses are ``ln(final / initial)`` and are
never divided by the exposure duration.
"""
import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Literal, Optional

import pandas as pd

from .exceptions import (
    DataValidationError,
    EmptySelectionError,
    NoControlError,
    ParseError,
    SchemaError,
)
from .schemas import BioassayDataset, ColumnMapping, ControlSummary, Observation, ResponsePoint

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("species", "contaminant", "concentration", "replicate", "fluo_initial", "fluo_final")
CONTROL_LABELS = {"1", "true", "yes", "y", "control"}

# header is line 1
FIRST_DATA_LINE = 2

Pooling = Literal["species", "species_contaminant"]


def _parse_float(raw: str, field: str, line: int) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"non-numeric {field} {raw!r}", row=line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {field} {raw!r}", row=line)
    return value


def _parse_replicate(raw: str, line: int) -> int:
    value = _parse_float(raw, "replicate", line)
    if value != int(value):
        raise ParseError(f"replicate {raw!r} is not an integer", row=line)
    return int(value)


def _parse_row(row: dict, columns: ColumnMapping, line: int) -> Observation:
    concentration = _parse_float(row[columns.concentration], "concentration", line)
    fluo_initial = _parse_float(row[columns.fluo_initial], "fluo_initial", line)
    fluo_final = _parse_float(row[columns.fluo_final], "fluo_final", line)
    if concentration < 0:
        raise DataValidationError(f"negative concentration {concentration}", row=line)
    if fluo_initial <= 0 or fluo_final <= 0:
        raise DataValidationError(
            f"fluorescence must be positive (initial={fluo_initial}, final={fluo_final})", row=line
        )
    species_id = str(row[columns.species]).strip()
    contaminant_id = str(row[columns.contaminant]).strip()
    if not species_id or not contaminant_id:
        raise DataValidationError("empty species or contaminant", row=line)
    control = None
    if columns.control:
        control = str(row[columns.control]).strip().lower() in CONTROL_LABELS
    return Observation(
        species_id=species_id,
        contaminant_id=contaminant_id,
        concentration=concentration,
        replicate=_parse_replicate(row[columns.replicate], line),
        fluo_initial=fluo_initial,
        fluo_final=fluo_final,
        control=control,
    )


def load_dataset(path, columns: Optional[ColumnMapping] = None) -> BioassayDataset:
    columns = columns or ColumnMapping()
    path = Path(path)
    frame = pd.read_csv(
        path,
        sep=columns.delimiter,
        dtype=str,
        keep_default_na=False,
        encoding="utf-8",
        skipinitialspace=True,
    )
    frame.columns = [c.strip() for c in frame.columns]

    required = [getattr(columns, name) for name in REQUIRED_FIELDS]
    if columns.control:
        required.append(columns.control)
    for name in required:
        if name not in frame.columns:
            raise SchemaError(f"missing required column {name!r} in {path}", column=name)

    if frame.empty:
        logger.warning("dataset %s has a header but no observations", path)
        return BioassayDataset()

    observations, problems = [], []
    for offset, row in enumerate(frame.to_dict(orient="records")):
        line = FIRST_DATA_LINE + offset
        try:
            observations.append(_parse_row(row, columns, line))
        except (ParseError, DataValidationError) as exc:
            logger.error("%s: %s", path, exc.detail)
            problems.append(exc)
    if problems:
        first = problems[0]
        if len(problems) > 1:
            lines = ", ".join(str(p.row) for p in problems)
            first.detail = f"{first.detail} ({len(problems)} malformed rows at lines {lines})"
            first.args = (first.detail,)
        raise first

    logger.info("loaded %d observations from %s", len(observations), path)
    return BioassayDataset(observations=observations)


def save_dataset(ds: BioassayDataset, path, columns: Optional[ColumnMapping] = None) -> Path:
    columns = columns or ColumnMapping()
    frame = ds.to_frame()
    if columns.control:
        frame["control"] = frame["control"].fillna(False).astype(bool).astype(int)
    else:
        frame = frame.drop(columns="control")
    rename = {name: getattr(columns, name) for name in REQUIRED_FIELDS}
    if columns.control:
        rename["control"] = columns.control
    frame = frame.rename(columns=rename)
    path = Path(path)
    frame.to_csv(path, sep=columns.delimiter, index=False)
    return path


def filter_contaminant(ds: BioassayDataset, contaminant_id: Optional[str]) -> BioassayDataset:
    if contaminant_id is None:
        return ds
    kept = [o for o in ds.observations if o.contaminant_id == contaminant_id]
    if not kept:
        raise EmptySelectionError(
            f"no observations for contaminant {contaminant_id!r} "
            f"(available: {', '.join(ds.contaminant_ids) or 'none'})"
        )
    return BioassayDataset(observations=kept, units=ds.units)


def make_responses(ds: BioassayDataset) -> dict[tuple[str, str], list[ResponsePoint]]:
    """Fit points per (species, contaminant); controls are left out."""
    grouped: dict[tuple[str, str], list[ResponsePoint]] = defaultdict(list)
    for obs in ds.observations:
        if obs.is_control:
            continue
        grouped[(obs.species_id, obs.contaminant_id)].append(
            ResponsePoint(
                species_id=obs.species_id,
                contaminant_id=obs.contaminant_id,
                concentration=obs.concentration,
                y=math.log(obs.fluo_final / obs.fluo_initial),
            )
        )
    return {key: grouped[key] for key in sorted(grouped)}


def estimate_control(
    ds: BioassayDataset,
    species_id: str,
    contaminant_id: Optional[str] = None,
    pooling: Pooling = "species",
) -> ControlSummary:
    """Mean control response ratio d.

    With ``pooling="species"`` every control of the species counts,
    whatever the contaminant; ``"species_contaminant"`` restricts to one pair.
    """
    if pooling == "species_contaminant" and contaminant_id is None:
        raise ValueError("contaminant_id is required when pooling per (species, contaminant)")
    ratios = [
        o.ratio
        for o in ds.observations
        if o.is_control
        and o.species_id == species_id
        and (pooling == "species" or o.contaminant_id == contaminant_id)
    ]
    if not ratios:
        where = species_id if pooling == "species" else f"{species_id}/{contaminant_id}"
        raise NoControlError(f"no control observations for {where}; cannot fit")
    return ControlSummary(
        species_id=species_id,
        d=math.fsum(ratios) / len(ratios),
        n_controls=len(ratios),
        contaminant_id=contaminant_id if pooling == "species_contaminant" else None,
    )


def control_summaries(
    ds: BioassayDataset, pooling: Pooling = "species", contaminant_id: Optional[str] = None
) -> dict[tuple[str, str], ControlSummary]:
    """Control level per (species, contaminant) pair that has fit points.

    ``contaminant_id`` narrows the pairs, never the controls: with species
    pooling every control of the species counts. Pairs whose species has no
    usable controls are left out with a warning.
    """
    out = {}
    pairs = sorted(
        {
            (o.species_id, o.contaminant_id)
            for o in ds.observations
            if not o.is_control and contaminant_id in (None, o.contaminant_id)
        }
    )
    by_species: dict[str, ControlSummary] = {}
    for species_id, contaminant in pairs:
        try:
            if pooling == "species":
                if species_id not in by_species:
                    by_species[species_id] = estimate_control(ds, species_id)
                out[(species_id, contaminant)] = by_species[species_id]
            else:
                out[(species_id, contaminant)] = estimate_control(
                    ds, species_id, contaminant, pooling=pooling
                )
        except NoControlError as exc:
            logger.warning("%s; skipping %s/%s", exc.detail, species_id, contaminant)
    return out
