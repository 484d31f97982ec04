"""Unnormalised log-posterior of the hierarchical model.

Species curve parameters are on the base-10 log scale:
``(log10 b_j, log10 e_j) ~ N2(mu, Sigma)``; the residuals are on the natural
log scale: ``y_ij ~ N(ln(d_j / (1 + (C_i/e_j)^b_j)), sigma_err)``.
All normalising constants are kept.
"""
import logging
import math
from typing import Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import stats

from .exceptions import InsufficientDataError
from .schemas import HYPER_NAMES, ControlSummary, HyperParams, PriorSpec, ResponsePoint, SpeciesParams

logger = logging.getLogger(__name__)

LN10 = math.log(10)
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
LOG_2PI = math.log(2 * math.pi)
MIN_SPECIES = 2
MIN_LEVELS = 3


class HierData(BaseModel):
    """Fit points of one contaminant, arranged per species."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    contaminant_id: str
    species_ids: list[str]
    log10_c: list[np.ndarray]
    y: list[np.ndarray]
    ln_d: np.ndarray

    @property
    def n_species(self) -> int:
        return len(self.species_ids)

    @property
    def n_points(self) -> int:
        return int(sum(len(v) for v in self.y))

    def concentrations(self) -> np.ndarray:
        return 10 ** np.concatenate(self.log10_c)

    def shifted(self, delta_log10: float) -> "HierData":
        """Same data with every concentration multiplied by 10**delta_log10."""
        return self.model_copy(update={"log10_c": [c + delta_log10 for c in self.log10_c]})


def build_hier_data(
    points: Mapping[tuple[str, str], Sequence[ResponsePoint]],
    controls: Mapping[tuple[str, str], ControlSummary],
    contaminant_id: str,
) -> HierData:
    species_ids, log10_c, ys, ln_d = [], [], [], []
    for (species_id, contaminant), pts in sorted(points.items()):
        if contaminant != contaminant_id or (species_id, contaminant) not in controls:
            continue
        conc = np.array([p.concentration for p in pts], dtype=float)
        if len(np.unique(conc)) < MIN_LEVELS:
            logger.warning(
                "species %s has %d concentration levels for %s; left out of the hierarchical fit",
                species_id, len(np.unique(conc)), contaminant_id,
            )
            continue
        species_ids.append(species_id)
        log10_c.append(np.log10(conc))
        ys.append(np.array([p.y for p in pts], dtype=float))
        ln_d.append(math.log(controls[(species_id, contaminant)].d))
    if len(species_ids) < MIN_SPECIES:
        raise InsufficientDataError(
            f"hierarchical fit of {contaminant_id} needs >= {MIN_SPECIES} species with "
            f">= {MIN_LEVELS} concentrations, got {len(species_ids)}"
        )
    return HierData(
        contaminant_id=contaminant_id,
        species_ids=species_ids,
        log10_c=log10_c,
        y=ys,
        ln_d=np.array(ln_d),
    )


def prior_distributions(priors: PriorSpec) -> dict:
    """Frozen scipy distributions of the hyperparameter priors."""
    return {
        "mu_logb": stats.norm(priors.mu_logb_mean, priors.mu_logb_sd),
        "sigma_logb": stats.halfnorm(scale=priors.sigma_logb_sd),
        "mu_loge": stats.norm(priors.mu_loge_mean, priors.mu_loge_sd),
        "sigma_loge": stats.uniform(0, priors.sigma_loge_upper),
        "rho": stats.uniform(-1, 2),
        "sigma_err": stats.uniform(0, priors.sigma_err_upper),
    }


def _normal_logpdf(x: float, mean: float, sd: float) -> float:
    z = (x - mean) / sd
    return -HALF_LOG_2PI - math.log(sd) - 0.5 * z * z


def in_support(theta: np.ndarray, priors: PriorSpec) -> bool:
    _, s_b, _, s_e, rho, s_err = theta
    return (
        bool(np.all(np.isfinite(theta)))
        and s_b > 0
        and 0 < s_e <= priors.sigma_loge_upper
        and -1 < rho < 1
        and 0 < s_err <= priors.sigma_err_upper
    )


def hyper_logprior(theta: np.ndarray, priors: PriorSpec) -> float:
    if not in_support(theta, priors):
        return -math.inf
    mu_b, s_b, mu_e, _, _, _ = theta
    return (
        _normal_logpdf(mu_b, priors.mu_logb_mean, priors.mu_logb_sd)
        + math.log(2) + _normal_logpdf(s_b, 0.0, priors.sigma_logb_sd)
        + _normal_logpdf(mu_e, priors.mu_loge_mean, priors.mu_loge_sd)
        - math.log(priors.sigma_loge_upper)
        - math.log(2)
        - math.log(priors.sigma_err_upper)
    )


def species_logpdf(log_b, log_e, theta: np.ndarray) -> np.ndarray:
    """Bivariate normal log-density of each species pair under theta."""
    mu_b, s_b, mu_e, s_e, rho, _ = theta
    z1 = (np.asarray(log_b) - mu_b) / s_b
    z2 = (np.asarray(log_e) - mu_e) / s_e
    one_minus = 1 - rho * rho
    q = (z1 * z1 - 2 * rho * z1 * z2 + z2 * z2) / one_minus
    return -LOG_2PI - math.log(s_b) - math.log(s_e) - 0.5 * math.log(one_minus) - 0.5 * q


def log_prediction(log10_c: np.ndarray, log_b: float, log_e: float, ln_d: float) -> np.ndarray:
    """ln(d / (1 + (C/e)^b)) from base-10 log parameters."""
    b = 10.0 ** log_b
    return ln_d - np.logaddexp(0.0, b * LN10 * (log10_c - log_e))


def species_sse(data: HierData, j: int, log_b: float, log_e: float) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        resid = data.y[j] - log_prediction(data.log10_c[j], log_b, log_e, data.ln_d[j])
        value = float(resid @ resid)
    return value if math.isfinite(value) else math.inf


def loglik_from_sse(sse_total: float, n_points: int, sigma_err: float) -> float:
    return -n_points * (math.log(sigma_err) + HALF_LOG_2PI) - sse_total / (2 * sigma_err * sigma_err)


def log_posterior(
    theta: HyperParams,
    species: Sequence[SpeciesParams],
    data: HierData,
    priors: PriorSpec,
) -> float:
    """Sum of hyperprior, species and likelihood terms; -inf outside the support."""
    values = np.array([getattr(theta, name) for name in HYPER_NAMES], dtype=float)
    if not in_support(values, priors):
        return -math.inf
    by_id = {s.species_id: s for s in species}
    try:
        log_b = np.array([by_id[s].log_b for s in data.species_ids])
        log_e = np.array([by_id[s].log_e for s in data.species_ids])
    except KeyError as exc:
        raise ValueError(f"missing species parameters for {exc.args[0]}") from None
    if not (np.all(np.isfinite(log_b)) and np.all(np.isfinite(log_e))):
        return -math.inf
    sse = sum(species_sse(data, j, log_b[j], log_e[j]) for j in range(data.n_species))
    total = (
        hyper_logprior(values, priors)
        + float(species_logpdf(log_b, log_e, values).sum())
        + loglik_from_sse(sse, data.n_points, values[5])
    )
    return total if not math.isnan(total) else -math.inf


# --- unbounded parameterisation used by the sampler --------------------------

def to_unbounded(theta: np.ndarray) -> np.ndarray:
    mu_b, s_b, mu_e, s_e, rho, s_err = theta
    return np.array([mu_b, math.log(s_b), mu_e, math.log(s_e), math.atanh(rho), math.log(s_err)])


def from_unbounded(u: np.ndarray) -> np.ndarray:
    return np.array([u[0], math.exp(u[1]), u[2], math.exp(u[3]), math.tanh(u[4]), math.exp(u[5])])


def log_jacobian(u: np.ndarray) -> float:
    """log |d theta / d u| of from_unbounded."""
    rho = math.tanh(u[4])
    one_minus = 1 - rho * rho
    if one_minus <= 0:
        return -math.inf
    return u[1] + u[3] + math.log(one_minus) + u[5]


def unbounded_hyper_target(
    u: np.ndarray,
    log_b: np.ndarray,
    log_e: np.ndarray,
    sse_total: float,
    n_points: int,
    priors: PriorSpec,
) -> float:
    """Log target of the hyperparameters in the unbounded space, species fixed."""
    try:
        theta = from_unbounded(u)
    except OverflowError:
        return -math.inf
    prior = hyper_logprior(theta, priors)
    if prior == -math.inf:
        return prior
    value = (
        prior
        + float(species_logpdf(log_b, log_e, theta).sum())
        + loglik_from_sse(sse_total, n_points, theta[5])
        + log_jacobian(u)
    )
    return value if math.isfinite(value) else -math.inf


def start_values(priors: PriorSpec, offset: float) -> np.ndarray:
    """Prior medians shifted by ``offset`` prior sds, pulled inside the support."""
    dists = prior_distributions(priors)
    theta = np.array([dists[n].median() + offset * dists[n].std() for n in HYPER_NAMES], dtype=float)
    theta[1] = max(theta[1], 1e-2)
    theta[3] = min(max(theta[3], 1e-2), priors.sigma_loge_upper * 0.99)
    theta[4] = min(max(theta[4], -0.95), 0.95)
    theta[5] = min(max(theta[5], 1e-2), priors.sigma_err_upper * 0.99)
    return theta


def species_from_arrays(species_ids: Sequence[str], log_b, log_e) -> list[SpeciesParams]:
    return [
        SpeciesParams(species_id=s, log_b=float(b), log_e=float(e))
        for s, b, e in zip(species_ids, log_b, log_e)
    ]
