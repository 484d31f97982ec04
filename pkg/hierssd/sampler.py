"""Adaptive Metropolis-within-Gibbs sampler for the hierarchical model.

Blocks per iteration: one joint random-walk update of ``(log10 b_j, log10 e_j)``
per species, then one scalar update per hyperparameter in the unbounded
parameterisation. Proposal scales follow a Robbins-Monro recursion towards the
target acceptance rates during burn-in only; species proposals also take the
covariance of the previous adaptation window. Everything is frozen after burn-in.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np
import pandas as pd

from . import dose_response
from .diagnostics import chain_rhat
from .exceptions import InitializationError
from .posterior import (
    HierData,
    hyper_logprior,
    loglik_from_sse,
    species_logpdf,
    species_sse,
    start_values,
    to_unbounded,
    unbounded_hyper_target,
)
from .schemas import HYPER_NAMES, McmcConfig, PosteriorSample, PriorSpec

logger = logging.getLogger(__name__)

ROBBINS_MONRO_EXPONENT = 0.6
INITIAL_SPECIES_SD = 0.1
INITIAL_HYPER_SD = 0.2
JITTER = 1e-10


def chain_offset(chain: int) -> float:
    """0, +1, -1, +2, -2, ... prior sds for chains 0, 1, 2, 3, 4, ..."""
    return 0.0 if chain == 0 else ((chain + 1) // 2) * (1.0 if chain % 2 else -1.0)


def initial_species(data: HierData, priors: PriorSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-species least-squares fits, falling back on the prior centres."""
    log_b = np.full(data.n_species, priors.mu_logb_mean)
    log_e = np.full(data.n_species, priors.mu_loge_mean)
    for j in range(data.n_species):
        conc = 10 ** data.log10_c[j]
        fit = dose_response._fit_arrays(conc, data.y[j], math.exp(data.ln_d[j]))
        if fit is not None and fit.converged:
            log_b[j], log_e[j] = math.log10(fit.b), math.log10(fit.e)
        else:
            logger.info("species %s starts at the prior centre", data.species_ids[j])
    return log_b, log_e


def _check_start(data, priors, theta, log_b, log_e, sse):
    if not math.isfinite(hyper_logprior(theta, priors)):
        raise InitializationError("chain start outside prior support", component="hyperprior")
    if not np.all(np.isfinite(species_logpdf(log_b, log_e, theta))):
        raise InitializationError("chain start", component="species density")
    for j, value in enumerate(sse):
        if not math.isfinite(value):
            raise InitializationError("chain start", component=f"likelihood of species {data.species_ids[j]}")
    if not math.isfinite(loglik_from_sse(float(sse.sum()), data.n_points, theta[5])):
        raise InitializationError("chain start", component="likelihood")


def _run_chain(
    chain: int,
    data: HierData,
    priors: PriorSpec,
    config: McmcConfig,
    log_b0: np.ndarray,
    log_e0: np.ndarray,
) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, chain]))
    n_species, n_points = data.n_species, data.n_points
    n_burn, thin, window = config.n_burn, config.thin, config.adapt_window

    theta = start_values(priors, chain_offset(chain))
    u = to_unbounded(theta)
    log_b, log_e = log_b0.copy(), log_e0.copy()
    sse = np.array([species_sse(data, j, log_b[j], log_e[j]) for j in range(n_species)])
    _check_start(data, priors, theta, log_b, log_e, sse)

    sp_log_scale = np.zeros(n_species)
    sp_chol = np.tile(np.eye(2) * INITIAL_SPECIES_SD, (n_species, 1, 1))
    hy_log_scale = np.full(6, math.log(INITIAL_HYPER_SD))
    sp_window = np.zeros((n_species, window, 2))
    sp_acc_window = np.zeros(n_species, dtype=int)
    hy_acc_window = np.zeros(6, dtype=int)
    sp_acc = np.zeros(n_species, dtype=int)
    hy_acc = np.zeros(6, dtype=int)

    n_keep = config.draws_per_chain
    rows = np.empty((n_keep, 6 + 2 * n_species))
    iters = np.empty(n_keep, dtype=int)
    kept = 0

    for t in range(config.n_iter):
        adapting = t < n_burn
        gamma = (t + 1) ** -ROBBINS_MONRO_EXPONENT
        sigma2 = theta[5] * theta[5]

        # species blocks
        z_sp = rng.standard_normal((n_species, 2))
        log_u_sp = np.log(rng.random(n_species))
        current_sp = species_logpdf(log_b, log_e, theta)
        for j in range(n_species):
            step = math.exp(sp_log_scale[j]) * (sp_chol[j] @ z_sp[j])
            prop_b, prop_e = log_b[j] + step[0], log_e[j] + step[1]
            new_sse = species_sse(data, j, prop_b, prop_e)
            log_ratio = (
                float(species_logpdf(prop_b, prop_e, theta)) - current_sp[j]
                - (new_sse - sse[j]) / (2 * sigma2)
            )
            accepted = math.isfinite(log_ratio) and log_u_sp[j] < log_ratio
            if accepted:
                log_b[j], log_e[j], sse[j] = prop_b, prop_e, new_sse
                if not adapting:
                    sp_acc[j] += 1
                sp_acc_window[j] += 1
            if adapting:
                sp_log_scale[j] += gamma * (float(accepted) - config.target_accept_block)
                sp_window[j, t % window] = (log_b[j], log_e[j])

        # hyperparameters, one at a time
        sse_total = float(sse.sum())
        z_hy = rng.standard_normal(6)
        log_u_hy = np.log(rng.random(6))
        current = unbounded_hyper_target(u, log_b, log_e, sse_total, n_points, priors)
        for k in range(6):
            proposal = u.copy()
            proposal[k] += math.exp(hy_log_scale[k]) * z_hy[k]
            value = unbounded_hyper_target(proposal, log_b, log_e, sse_total, n_points, priors)
            accepted = value > -math.inf and log_u_hy[k] < value - current
            if accepted:
                u, current = proposal, value
                if not adapting:
                    hy_acc[k] += 1
                hy_acc_window[k] += 1
            if adapting:
                hy_log_scale[k] += gamma * (float(accepted) - config.target_accept_scalar)
        theta = np.array(
            [u[0], math.exp(u[1]), u[2], math.exp(u[3]), math.tanh(u[4]), math.exp(u[5])]
        )

        if (t + 1) % window == 0:
            stuck = [data.species_ids[j] for j in np.flatnonzero(sp_acc_window == 0)]
            stuck += [HYPER_NAMES[k] for k in np.flatnonzero(hy_acc_window == 0)]
            if stuck:
                logger.warning(
                    "chain %d: no proposal accepted in iterations %d-%d for %s",
                    chain, t + 2 - window, t + 1, ", ".join(stuck),
                )
            if adapting:
                for j in range(n_species):
                    if sp_acc_window[j] > 1:
                        cov = np.cov(sp_window[j].T) + JITTER * np.eye(2)
                        try:
                            sp_chol[j] = np.linalg.cholesky(cov)
                        except np.linalg.LinAlgError:
                            pass
            sp_acc_window[:] = 0
            hy_acc_window[:] = 0

        if t >= n_burn and (t - n_burn + 1) % thin == 0 and kept < n_keep:
            rows[kept, :6] = theta
            rows[kept, 6:6 + n_species] = log_b
            rows[kept, 6 + n_species:] = log_e
            iters[kept] = t + 1
            kept += 1

    n_post = max(config.n_iter - n_burn, 1)
    acceptance = {f"species:{s}": float(sp_acc[j] / n_post) for j, s in enumerate(data.species_ids)}
    acceptance.update({name: float(hy_acc[k] / n_post) for k, name in enumerate(HYPER_NAMES)})
    logger.info(
        "chain %d done: %d draws kept, acceptance %s",
        chain, kept, ", ".join(f"{k}={v:.2f}" for k, v in acceptance.items()),
    )
    return {"chain": chain, "rows": rows[:kept], "iters": iters[:kept], "acceptance": acceptance}


def draw_columns(species_ids) -> list[str]:
    return (
        list(HYPER_NAMES)
        + [f"log_b[{s}]" for s in species_ids]
        + [f"log_e[{s}]" for s in species_ids]
    )


def run_mcmc(
    data: HierData,
    priors: PriorSpec,
    config: McmcConfig,
    init_species: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> PosteriorSample:
    """Run ``config.n_chains`` independent chains; chain c uses SeedSequence([seed, c])."""
    log_b0, log_e0 = init_species or initial_species(data, priors)
    logger.info(
        "sampling %s: %d species, %d points, %d chains x %d iterations",
        data.contaminant_id, data.n_species, data.n_points, config.n_chains, config.n_iter,
    )
    args = [(c, data, priors, config, log_b0, log_e0) for c in range(config.n_chains)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=min(config.n_jobs, config.n_chains)) as pool:
            results = list(pool.map(_run_chain, *zip(*args)))
    else:
        results = [_run_chain(*a) for a in args]

    frames = []
    for res in results:
        frame = pd.DataFrame(res["rows"], columns=draw_columns(data.species_ids))
        frame.insert(0, "iter", res["iters"])
        frame.insert(0, "chain", res["chain"])
        frames.append(frame)
    draws = pd.concat(frames, ignore_index=True)

    sample = PosteriorSample(
        contaminant_id=data.contaminant_id,
        species_ids=list(data.species_ids),
        draws=draws,
        priors=priors,
        config=config,
        acceptance={str(res["chain"]): res["acceptance"] for res in results},
    )
    sample.gelman_rubin = chain_rhat(sample)
    return sample
