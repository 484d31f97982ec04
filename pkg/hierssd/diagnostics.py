import logging
import math
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import ConvergenceError, DomainError, UndefinedDiagnosticError
from .posterior import prior_distributions
from .schemas import HYPER_NAMES, PosteriorSample, PriorPosteriorRow, PriorSpec

logger = logging.getLogger(__name__)

MIN_CHAIN_LENGTH = 10
DATA_WEAK_RATIO = 0.75
# a U(-1, 1) prior always looks constraining for a correlation
EXEMPT_FROM_DATA_WEAK = {"rho"}


def gelman_rubin(chains: Sequence[Sequence[float]]) -> float:
    """Potential scale reduction factor of one scalar (Brooks-Gelman form).

    ``chains`` is (n_chains, n_draws). With within-chain variance W and
    between-chain variance B:
    R = sqrt(((n - 1)/n * W + (m + 1)/m * B/n) / W).
    """
    data = np.asarray(chains, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DomainError("Gelman-Rubin needs >= 2 chains of equal length")
    m, n = data.shape
    if n < MIN_CHAIN_LENGTH:
        raise DomainError(f"Gelman-Rubin needs chains of >= {MIN_CHAIN_LENGTH} draws, got {n}")

    w = data.var(axis=1, ddof=1).mean()
    if w <= 0:
        raise UndefinedDiagnosticError("within-chain variance is zero; Gelman-Rubin undefined")
    b_over_n = data.mean(axis=1).var(ddof=1)
    v = (n - 1) / n * w + (m + 1) / m * b_over_n
    return float(math.sqrt(v / w))


def chain_rhat(sample: PosteriorSample) -> dict[str, float]:
    """R-hat per hyperparameter; NaN where undefined."""
    out = {}
    for name in HYPER_NAMES:
        try:
            out[name] = gelman_rubin(sample.chain_matrix(name))
        except (DomainError, UndefinedDiagnosticError) as exc:
            logger.warning("Gelman-Rubin for %s: %s", name, exc.detail)
            out[name] = math.nan
    return out


def require_converged(
    sample: PosteriorSample,
    threshold: float = 1.05,
    allow_unconverged: bool = False,
) -> None:
    failing = {
        name: value
        for name, value in sample.gelman_rubin.items()
        if not (math.isfinite(value) and value < threshold)
    }
    if not sample.gelman_rubin:
        failing = {name: math.nan for name in HYPER_NAMES}
    if not failing:
        return
    if allow_unconverged:
        logger.warning(
            "convergence gate overridden for %s: %s",
            sample.contaminant_id, ", ".join(f"{k}={v:.3f}" for k, v in failing.items()),
        )
        return
    raise ConvergenceError(failing, threshold)


def summarize_hyperparameters(sample: PosteriorSample) -> pd.DataFrame:
    values = sample.draws[list(HYPER_NAMES)]
    q = values.quantile([0.025, 0.5, 0.975])
    return pd.DataFrame(
        {
            "parameter": list(HYPER_NAMES),
            "median": q.loc[0.5].to_numpy(),
            "q025": q.loc[0.025].to_numpy(),
            "q975": q.loc[0.975].to_numpy(),
        }
    )


def prior_posterior_report(
    sample: PosteriorSample,
    priors: Optional[PriorSpec] = None,
) -> list[PriorPosteriorRow]:
    """Compare marginal posterior spread with the prior spread.

    A parameter whose posterior sd exceeds 75% of its prior sd is flagged as
    data-weak; rho is reported but exempt.
    """
    dists = prior_distributions(priors or sample.priors)
    rows = []
    for name in HYPER_NAMES:
        draws = sample.draws[name].to_numpy(dtype=float)
        prior_sd = float(dists[name].std())
        post_sd = float(draws.std(ddof=1)) if draws.size > 1 else 0.0
        ratio = post_sd / prior_sd
        q025, q50, q975 = np.percentile(draws, [2.5, 50, 97.5])
        rows.append(
            PriorPosteriorRow(
                parameter=name,
                prior_sd=prior_sd,
                posterior_sd=post_sd,
                ratio=ratio,
                q025=float(q025),
                q50=float(q50),
                q975=float(q975),
                data_weak=ratio > DATA_WEAK_RATIO,
                exempt=name in EXEMPT_FROM_DATA_WEAK,
            )
        )
        if ratio > DATA_WEAK_RATIO and name not in EXEMPT_FROM_DATA_WEAK:
            logger.warning("%s is data-weak (posterior/prior sd = %.2f)", name, ratio)
    return rows


def prior_posterior_densities(
    sample: PosteriorSample,
    priors: Optional[PriorSpec] = None,
    n_points: int = 100,
) -> pd.DataFrame:
    """Prior density and histogram posterior density on a common grid per hyperparameter."""
    dists = prior_distributions(priors or sample.priors)
    frames = []
    for name in HYPER_NAMES:
        draws = sample.draws[name].to_numpy(dtype=float)
        lo, hi = np.percentile(draws, [0.5, 99.5])
        pad = 0.5 * (hi - lo) if hi > lo else 1.0
        edges = np.linspace(lo - pad, hi + pad, n_points + 1)
        density, _ = np.histogram(draws, bins=edges, density=True)
        centres = 0.5 * (edges[:-1] + edges[1:])
        frames.append(
            pd.DataFrame(
                {
                    "parameter": name,
                    "value": centres,
                    "prior_density": dists[name].pdf(centres),
                    "posterior_density": density,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)
