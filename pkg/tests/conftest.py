import numpy as np
import pandas as pd
import pytest

from hierssd.bioassay import make_responses
from hierssd.sampler import draw_columns
from hierssd.schemas import HYPER_NAMES, HyperParams, McmcConfig, PosteriorSample, PriorSpec, ResponsePoint
from hierssd.synthesize import synthesize_dataset, write_synthetic


def responses(conc, b, e, d=1.0, noise=0.0, n_rep=3, seed=0, species="sp01", contaminant="tox"):
    """Replicated ln-responses on a loglogistic curve."""
    rng = np.random.default_rng(seed)
    points = []
    for c in conc:
        for _ in range(n_rep):
            y = np.log(d) - np.log1p((c / e) ** b) + (rng.normal(0, noise) if noise else 0.0)
            points.append(ResponsePoint(species_id=species, contaminant_id=contaminant, concentration=c, y=y))
    return points


def point_mass_posterior(theta: HyperParams, species_ids=("sp01", "sp02"), n_draws=100, n_chains=2):
    """PosteriorSample whose every draw is ``theta``; marked as converged."""
    n = n_draws * n_chains
    frame = pd.DataFrame(
        np.tile(np.concatenate([theta.as_array(), np.full(2 * len(species_ids), theta.mu_logb)]), (n, 1)),
        columns=draw_columns(species_ids),
    )
    for sp in species_ids:
        frame[f"log_e[{sp}]"] = theta.mu_loge
    frame.insert(0, "iter", np.tile(np.arange(1, n_draws + 1), n_chains))
    frame.insert(0, "chain", np.repeat(np.arange(n_chains), n_draws))
    priors = PriorSpec(
        mu_loge_mean=theta.mu_loge, mu_loge_sd=1.0, c_min=10 ** (theta.mu_loge - 2), c_max=10 ** (theta.mu_loge + 2)
    )
    return PosteriorSample(
        contaminant_id="tox",
        species_ids=list(species_ids),
        draws=frame,
        priors=priors,
        config=McmcConfig(n_iter=2 * n_draws, thin=1, burn_in_fraction=0.5),
        gelman_rubin={name: 1.0 for name in HYPER_NAMES},
    )


@pytest.fixture
def theta():
    return HyperParams(mu_logb=0.2, sigma_logb=0.3, mu_loge=1.5, sigma_loge=0.5, rho=0.5, sigma_err=0.2)


@pytest.fixture
def synthetic(theta):
    ds, truth = synthesize_dataset(theta, n_species=6, n_replicates=3, seed=11, contaminant="tox")
    return ds, truth


@pytest.fixture
def synthetic_points(synthetic):
    ds, _ = synthetic
    return make_responses(ds)


@pytest.fixture
def synthetic_csv(tmp_path, synthetic):
    ds, truth = synthetic
    csv_path, _ = write_synthetic(ds, truth, tmp_path / "bioassay.csv")
    return csv_path


@pytest.fixture
def sharp_posterior():
    """Point-mass posterior with near-identical species: every community has r_tot(10^mu_loge) = 0.5."""
    return point_mass_posterior(
        HyperParams(mu_logb=0.3, sigma_logb=0.4, mu_loge=1.7, sigma_loge=1e-9, rho=0.0, sigma_err=0.2)
    )


@pytest.fixture
def spread_posterior():
    return point_mass_posterior(
        HyperParams(mu_logb=0.1, sigma_logb=0.3, mu_loge=2.0, sigma_loge=0.5, rho=0.4, sigma_err=0.2)
    )
