"""Posterior-predictive community simulation.

Every posterior draw theta_k gets its own RNG stream (``SeedSequence(seed)``
children in theta order), so results do not depend on how draws are scheduled.
"""
import logging
import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .diagnostics import require_converged
from .exceptions import DomainError, NumericalError
from .schemas import (
    CommunityDraw,
    CurveBand,
    GecEstimate,
    GlobalResponseEstimate,
    HcEstimate,
    HyperParams,
    PosteriorSample,
    PriorSpec,
)

logger = logging.getLogger(__name__)

LN10 = math.log(10)
BAND_PERCENTILES = (2.5, 50, 97.5)
MAX_BRACKET_DECADES = 20
BISECTION_TOL = 1e-9  # log10 units
MAX_BISECTIONS = 200


def concentration_grid(priors: PriorSpec, n_points: int = 200) -> np.ndarray:
    """Log-spaced grid from min tested C / 100 to max tested C * 100."""
    return np.logspace(math.log10(priors.c_min) - 2, math.log10(priors.c_max) + 2, n_points)


def _check_x(x: float) -> None:
    if not 0 < x < 100:
        raise DomainError(f"effect level x={x} outside (0, 100)")


def _cholesky(thetas: np.ndarray) -> np.ndarray:
    s_b, s_e, rho = thetas[:, 1], thetas[:, 3], thetas[:, 4]
    cov = np.empty((len(thetas), 2, 2))
    cov[:, 0, 0] = s_b * s_b
    cov[:, 1, 1] = s_e * s_e
    cov[:, 0, 1] = cov[:, 1, 0] = rho * s_b * s_e
    return np.linalg.cholesky(cov)


def _species_logs(theta: np.ndarray, chol: np.ndarray, n_species: int, rng) -> tuple[np.ndarray, np.ndarray]:
    z = rng.standard_normal((n_species, 2))
    logs = np.array([theta[0], theta[2]]) + z @ chol.T
    return logs[:, 0], logs[:, 1]


def draw_community(theta: HyperParams, n_species: int, rng: np.random.Generator) -> CommunityDraw:
    if n_species < 1:
        raise DomainError("n_species must be >= 1")
    values = theta.as_array()
    chol = np.linalg.cholesky(theta.covariance())
    log_b, log_e = _species_logs(values, chol, n_species, rng)
    return CommunityDraw(theta=theta, b=10 ** log_b, e=10 ** log_e)


def r_tot(community: CommunityDraw, concentration):
    """Mean over species of R_i / R_i^0 = 1 / (1 + (C/e_i)^b_i)."""
    c = np.asarray(concentration, dtype=float)
    with np.errstate(divide="ignore"):
        ln_c = np.expand_dims(np.log(c), -1)
    value = expit(-community.b * (ln_c - np.log(community.e))).mean(axis=-1)
    return float(value) if value.ndim == 0 else value


def _global_response(b: np.ndarray, log_e: np.ndarray, log10_c: np.ndarray) -> np.ndarray:
    """r_tot per row of (b, log_e) at the per-row log10 concentration."""
    return expit(-b * LN10 * (log10_c[:, None] - log_e)).mean(axis=1)


def solve_global_effect(b: np.ndarray, log_e: np.ndarray, x: float) -> np.ndarray:
    """log10 C where each row's r_tot drops to 1 - x/100, by bisection on log10 C."""
    _check_x(x)
    b, log_e = np.atleast_2d(b), np.atleast_2d(log_e)
    target = 1 - x / 100
    lo = log_e.min(axis=1) - 1
    hi = log_e.max(axis=1) + 1
    for _ in range(MAX_BRACKET_DECADES):
        low_bad = _global_response(b, log_e, lo) <= target
        high_bad = _global_response(b, log_e, hi) >= target
        if not (low_bad.any() or high_bad.any()):
            break
        lo[low_bad] -= 1
        hi[high_bad] += 1
    unbracketed = (_global_response(b, log_e, lo) <= target) | (_global_response(b, log_e, hi) >= target)
    if unbracketed.any():
        k = int(np.flatnonzero(unbracketed)[0])
        raise NumericalError(
            f"r_tot = {target} not bracketed within 1e{MAX_BRACKET_DECADES}-fold expansion", theta_index=k
        )
    for _ in range(MAX_BISECTIONS):
        if np.max(hi - lo) <= BISECTION_TOL:
            break
        mid = 0.5 * (lo + hi)
        above = _global_response(b, log_e, mid) > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def select_draws(posterior: PosteriorSample, n_theta: int, seed_seq) -> tuple[np.ndarray, bool]:
    """Posterior rows to simulate from; with replacement only when too few are kept."""
    n = len(posterior)
    if n == 0:
        raise DomainError("posterior sample is empty")
    rng = np.random.default_rng(seed_seq)
    replace = n < n_theta
    if replace:
        logger.warning(
            "posterior has %d draws for %d theta sets; resampling with replacement", n, n_theta
        )
    return rng.choice(n, size=n_theta, replace=replace), replace


def _streams(seed: int, n_theta: int):
    select, per_theta = np.random.SeedSequence(seed).spawn(2)
    return select, per_theta.spawn(n_theta)


def simulate_communities(
    posterior: PosteriorSample, n_theta: int, n_species: int, seed: int
) -> tuple[np.ndarray, np.ndarray, bool]:
    """(b, log10 e) arrays of shape (n_theta, n_species), one community per theta draw."""
    select, children = _streams(seed, n_theta)
    rows, replaced = select_draws(posterior, n_theta, select)
    thetas = posterior.hyper_matrix()[rows]
    chol = _cholesky(thetas)
    b = np.empty((n_theta, n_species))
    log_e = np.empty((n_theta, n_species))
    for k in range(n_theta):
        log_b_k, log_e[k] = _species_logs(thetas[k], chol[k], n_species, np.random.default_rng(children[k]))
        b[k] = 10 ** log_b_k
    return b, log_e, replaced


def _band(kind, grid, values, units, label=None) -> CurveBand:
    lo, median, hi = np.percentile(values, BAND_PERCENTILES, axis=0)
    return CurveBand(kind=kind, grid=np.asarray(grid), median=median, lo=lo, hi=hi, units=units, label=label)


def gec_x(
    posterior: PosteriorSample,
    x: float,
    n_theta: int = 10_000,
    n_species: int = 30,
    seed: int = 0,
    grid_points: int = 200,
    threshold: float = 1.05,
    allow_unconverged: bool = False,
) -> tuple[GecEstimate, CurveBand]:
    """Global effect concentration with its band of r_tot over concentration."""
    _check_x(x)
    require_converged(posterior, threshold, allow_unconverged)
    b, log_e, _ = simulate_communities(posterior, n_theta, n_species, seed)
    solutions = 10 ** solve_global_effect(b, log_e, x)
    lo, point, hi = np.percentile(solutions, BAND_PERCENTILES)

    grid = concentration_grid(posterior.priors, grid_points)
    response = np.empty((n_theta, grid_points))
    for g, log_c in enumerate(np.log10(grid)):
        response[:, g] = expit(-b * LN10 * (log_c - log_e)).mean(axis=1)
    band = _band("global_response", grid, response, units="fraction of control")
    estimate = GecEstimate(
        x=x, point=float(point), ci_low=float(lo), ci_high=float(hi), n_theta=n_theta, n_species=n_species
    )
    logger.info("GEC%g = %.4g [%.4g, %.4g]", x, point, lo, hi)
    return estimate, band


def global_response_at(
    posterior: PosteriorSample,
    concentration: float,
    n_theta: int = 10_000,
    n_species: int = 30,
    seed: int = 0,
    label: Optional[str] = None,
    threshold: float = 1.05,
    allow_unconverged: bool = False,
) -> GlobalResponseEstimate:
    """Percent reduction of r_tot at a fixed concentration."""
    if concentration <= 0:
        raise DomainError("concentration must be positive")
    require_converged(posterior, threshold, allow_unconverged)
    b, log_e, _ = simulate_communities(posterior, n_theta, n_species, seed)
    log_c = np.full(n_theta, math.log10(concentration))
    reduction = 100 * (1 - _global_response(b, log_e, log_c))
    lo, median, hi = np.percentile(reduction, BAND_PERCENTILES)
    return GlobalResponseEstimate(
        concentration=concentration, reduction=float(median), ci_low=float(lo), ci_high=float(hi), label=label
    )


def hc_by_draw(
    posterior: PosteriorSample,
    x_values: Sequence[float],
    p: float = 5.0,
    n_theta: int = 2000,
    n_species_large: int = 4_000_000,
    seed: int = 0,
    grid: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """log10 HC_p per (theta draw, x) from large simulated communities.

    Each theta's community is drawn once and re-transformed for every x. When
    ``grid`` is given, also returns the fraction of species with EC_x <= C for
    the first x, shape (n_theta, len(grid)).
    """
    for x in x_values:
        _check_x(x)
    if not 0 < p < 100:
        raise DomainError(f"p={p} outside (0, 100)")
    select, children = _streams(seed, n_theta)
    rows, _ = select_draws(posterior, n_theta, select)
    thetas = posterior.hyper_matrix()[rows]
    chol = _cholesky(thetas)
    log_odds = np.log10([x / (100 - x) for x in x_values])
    log_grid = None if grid is None else np.log10(grid)

    hc = np.empty((n_theta, len(x_values)))
    fraction = None if grid is None else np.empty((n_theta, len(grid)))
    for k in range(n_theta):
        log_b, log_e = _species_logs(thetas[k], chol[k], n_species_large, np.random.default_rng(children[k]))
        inv_b = 10 ** -log_b
        for i, shift in enumerate(log_odds):
            log_ec = log_e + shift * inv_b
            hc[k, i] = np.percentile(log_ec, p)
            if i == 0 and fraction is not None:
                idx = np.searchsorted(log_grid, log_ec, side="left")
                counts = np.bincount(idx, minlength=len(grid) + 1)[: len(grid)].cumsum()
                fraction[k] = counts / n_species_large
    return hc, fraction


def hierarchical_ssd(
    posterior: PosteriorSample,
    x: float,
    p: float = 5.0,
    n_theta: int = 2000,
    n_species_large: int = 4_000_000,
    seed: int = 0,
    grid_points: int = 200,
    threshold: float = 1.05,
    allow_unconverged: bool = False,
) -> tuple[CurveBand, HcEstimate]:
    require_converged(posterior, threshold, allow_unconverged)
    grid = concentration_grid(posterior.priors, grid_points)
    hc, fraction = hc_by_draw(posterior, [x], p, n_theta, n_species_large, seed, grid=grid)
    lo, point, hi = np.percentile(10 ** hc[:, 0], BAND_PERCENTILES)
    band = _band("ssd_fraction_affected", grid, fraction, units="fraction of species", label=f"ec{x:g}")
    estimate = HcEstimate(p=p, point=float(point), ci_low=float(lo), ci_high=float(hi), n_boot=n_theta, x=x)
    logger.info("hierarchical HC%g(EC%g) = %.4g [%.4g, %.4g]", p, x, point, lo, hi)
    return band, estimate


def hc5_vs_x(
    posterior: PosteriorSample,
    x_grid: Sequence[float],
    p: float = 5.0,
    n_theta: int = 2000,
    n_species_large: int = 4_000_000,
    seed: int = 0,
    threshold: float = 1.05,
    allow_unconverged: bool = False,
) -> CurveBand:
    require_converged(posterior, threshold, allow_unconverged)
    x_grid = sorted(x_grid)
    hc, _ = hc_by_draw(posterior, x_grid, p, n_theta, n_species_large, seed)
    return _band("hc5_vs_x", np.asarray(x_grid, dtype=float), 10 ** hc, units="concentration")


def species_curve_bands(posterior: PosteriorSample, grid: Optional[np.ndarray] = None) -> list[CurveBand]:
    """Band of the fitted ratio R/d over concentration for every species."""
    grid = concentration_grid(posterior.priors) if grid is None else np.asarray(grid)
    log_grid = np.log10(grid)
    bands = []
    for species_id in posterior.species_ids:
        log_b, log_e = posterior.species_draws(species_id)
        ratio = expit(-(10 ** log_b)[:, None] * LN10 * (log_grid[None, :] - log_e[:, None]))
        bands.append(_band("species_curve", grid, ratio, units="fraction of control", label=species_id))
    return bands
