"""Lognormal SSD on point EC_x values, fitted by maximum likelihood.

The variance uses the 1/n (MLE) form, not the unbiased 1/(n-1) one.
"""
import logging
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from .exceptions import DegenerateSampleError, DomainError, InsufficientDataError
from .schemas import HcEstimate, LognormalSsd

logger = logging.getLogger(__name__)

MIN_SPECIES = 3
MIN_BOOT = 1000
MAX_DROPPED = 0.2
# below this sigma_log10 a sample is treated as a point mass
DEGENERATE_SIGMA = 1e-12


def _log10_sample(ecs: Sequence[float]) -> np.ndarray:
    values = np.asarray(ecs, dtype=float)
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise DomainError("EC values must be finite and positive")
    if values.size < MIN_SPECIES:
        raise InsufficientDataError(f"need >= {MIN_SPECIES} EC values, got {values.size}")
    return np.log10(values)


def _mle(logs: np.ndarray) -> tuple[float, float]:
    return float(logs.mean()), float(logs.std(ddof=0))


def fit_lognormal(ecs: Sequence[float]) -> LognormalSsd:
    mu, sigma = _mle(_log10_sample(ecs))
    if sigma <= DEGENERATE_SIGMA:
        raise DegenerateSampleError(f"all {len(ecs)} EC values are identical (sigma_log10 = 0)")
    return LognormalSsd(mu_log10=mu, sigma_log10=sigma, n_species=len(ecs))


def _z(p: float) -> float:
    if not 0 < p < 100:
        raise DomainError(f"p={p} outside (0, 100)")
    return float(norm.ppf(p / 100))


def hc_p(ssd: LognormalSsd, p: float) -> float:
    return float(10 ** (ssd.mu_log10 + _z(p) * ssd.sigma_log10))


def bootstrap_hc(ecs: Sequence[float], p: float, n_boot: int = 2000, seed: int = 0) -> HcEstimate:
    """Species-level case resampling of the EC values."""
    if n_boot < MIN_BOOT:
        raise DomainError(f"n_boot must be >= {MIN_BOOT}, got {n_boot}")
    ssd = fit_lognormal(ecs)
    z = _z(p)
    logs = _log10_sample(ecs)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    samples = logs[rng.integers(0, logs.size, size=(n_boot, logs.size))]
    mu = samples.mean(axis=1)
    sigma = samples.std(axis=1, ddof=0)
    ok = sigma > DEGENERATE_SIGMA
    n_dropped = int(n_boot - ok.sum())
    if n_dropped / n_boot > MAX_DROPPED:
        raise DegenerateSampleError(
            f"{n_dropped} of {n_boot} bootstrap resamples have zero variance"
        )
    if n_dropped:
        logger.info("dropped %d degenerate bootstrap resamples", n_dropped)
    hc = 10 ** (mu[ok] + z * sigma[ok])
    lo, hi = np.percentile(hc, [2.5, 97.5])
    point = hc_p(ssd, p)
    return HcEstimate(
        p=p,
        point=point,
        ci_low=min(float(lo), point),
        ci_high=max(float(hi), point),
        n_boot=n_boot,
        n_dropped=n_dropped,
    )


def ssd_curve(ssd: LognormalSsd, grid: Sequence[float]) -> pd.DataFrame:
    grid = np.asarray(grid, dtype=float)
    fraction = norm.cdf((np.log10(grid) - ssd.mu_log10) / ssd.sigma_log10)
    return pd.DataFrame({"concentration": grid, "fraction_affected": fraction})


def default_grid(ssd: LognormalSsd, n_points: int = 200) -> np.ndarray:
    half_width = 4 * ssd.sigma_log10
    return np.logspace(ssd.mu_log10 - half_width, ssd.mu_log10 + half_width, n_points)
