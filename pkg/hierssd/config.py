import logging
import os
from pathlib import Path
from typing import Any, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from .exceptions import ConfigError
from .schemas import ColumnMapping, McmcConfig, RunConfig

logger = logging.getLogger(__name__)

load_dotenv()

ENV_PREFIX = "HIERSSD_"

PROFILE_DEFAULTS = {
    "full": {"n_iter": 500_000, "thin": 40, "n_species_large": 4_000_000},
    "test": {"n_iter": 20_000, "thin": 10, "n_species_large": 100_000},
}
# other names accepted for a profile
PROFILE_ALIASES = {"paper": "full"}

MCMC_KEYS = {"n_iter", "thin", "n_chains", "burn_in_fraction", "adapt_window"}
LIST_KEYS = {"x_levels", "gec_x", "hc_x_grid"}
COLUMN_PREFIX = "column_"


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def read_environment() -> dict[str, str]:
    return {
        key[len(ENV_PREFIX):].lower(): value
        for key, value in os.environ.items()
        if key.startswith(ENV_PREFIX)
    }


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


def build_run_config(values: dict[str, Any]) -> RunConfig:
    """Turn flat key/values into a validated RunConfig."""
    flat = {k.strip().lower(): v for k, v in values.items() if v is not None}
    profile = str(flat.get("profile", "full")).strip().lower()
    profile = PROFILE_ALIASES.get(profile, profile)
    if profile not in PROFILE_DEFAULTS:
        expected = sorted([*PROFILE_DEFAULTS, *PROFILE_ALIASES])
        raise ConfigError(f"unknown profile {profile!r}; expected one of {expected}")
    flat["profile"] = profile
    merged = {**PROFILE_DEFAULTS[profile], **flat}

    mcmc, columns, top = {}, {}, {}
    for key, value in merged.items():
        if key in MCMC_KEYS:
            mcmc[key] = value
        elif key.startswith(COLUMN_PREFIX):
            columns[key[len(COLUMN_PREFIX):]] = value
        elif key in LIST_KEYS:
            top[key] = _split_list(value)
        elif key in RunConfig.model_fields:
            top[key] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")

    try:
        top["columns"] = ColumnMapping(**columns)
        mcmc["seed"] = top.get("seed", 0)
        mcmc["n_jobs"] = top.get("n_jobs", 1)
        top["mcmc"] = McmcConfig(**mcmc)
        return RunConfig(**top)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_run_config(config_path: Optional[str] = None, **overrides: Any) -> RunConfig:
    """Environment < config file < explicit overrides (command-line flags)."""
    values: dict[str, Any] = read_environment()
    if config_path:
        values.update(read_config_file(config_path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    config = build_run_config(values)
    logger.debug("run config: %s", config.model_dump())
    return config


def flat_config(config: RunConfig) -> dict[str, Any]:
    """Inverse of build_run_config, used for the config echo in reports."""
    out = config.model_dump(exclude={"mcmc", "columns"})
    out.update({k: v for k, v in config.mcmc.model_dump().items() if k in MCMC_KEYS})
    out.update({f"{COLUMN_PREFIX}{k}": v for k, v in config.columns.model_dump().items()})
    return out
