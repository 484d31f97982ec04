import math

import numpy as np
import pytest
from scipy import stats

from conftest import responses
from hierssd.exceptions import InsufficientDataError
from hierssd.posterior import (
    build_hier_data,
    from_unbounded,
    hyper_logprior,
    log_posterior,
    species_from_arrays,
    species_logpdf,
    start_values,
    to_unbounded,
)
from hierssd.schemas import ControlSummary, HyperParams, PriorSpec

PRIORS = PriorSpec(mu_loge_mean=1.0, mu_loge_sd=0.5, c_min=0.1, c_max=100.0)
THETA = HyperParams(mu_logb=0.1, sigma_logb=0.4, mu_loge=1.2, sigma_loge=0.7, rho=0.3, sigma_err=0.25)


def _data(n_species=3, conc=(0.1, 1.0, 10.0, 100.0)):
    points, controls = {}, {}
    for j in range(n_species):
        sp = f"sp{j}"
        points[(sp, "tox")] = responses(conc, 1.0 + j, 5.0 * (j + 1), d=2.0, noise=0.1, seed=j, species=sp)
        controls[(sp, "tox")] = ControlSummary(species_id=sp, d=2.0, n_controls=3)
    return build_hier_data(points, controls, "tox")


def _oracle(theta, log_b, log_e, data, priors):
    """log posterior from scipy densities, written independently of the implementation."""
    cov = [
        [theta.sigma_logb ** 2, theta.rho * theta.sigma_logb * theta.sigma_loge],
        [theta.rho * theta.sigma_logb * theta.sigma_loge, theta.sigma_loge ** 2],
    ]
    total = (
        stats.norm(priors.mu_logb_mean, priors.mu_logb_sd).logpdf(theta.mu_logb)
        + stats.halfnorm(scale=priors.sigma_logb_sd).logpdf(theta.sigma_logb)
        + stats.norm(priors.mu_loge_mean, priors.mu_loge_sd).logpdf(theta.mu_loge)
        + stats.uniform(0, priors.sigma_loge_upper).logpdf(theta.sigma_loge)
        + stats.uniform(-1, 2).logpdf(theta.rho)
        + stats.uniform(0, priors.sigma_err_upper).logpdf(theta.sigma_err)
    )
    mvn = stats.multivariate_normal([theta.mu_logb, theta.mu_loge], cov)
    for j in range(data.n_species):
        total += mvn.logpdf([log_b[j], log_e[j]])
        c = 10 ** data.log10_c[j]
        b, e = 10 ** log_b[j], 10 ** log_e[j]
        pred = data.ln_d[j] - np.log(1 + (c / e) ** b)
        total += stats.norm(pred, theta.sigma_err).logpdf(data.y[j]).sum()
    return total


def test_log_posterior_matches_scipy_oracle():
    data = _data()
    log_b, log_e = np.array([0.0, 0.3, 0.5]), np.array([0.7, 1.0, 1.2])
    species = species_from_arrays(data.species_ids, log_b, log_e)
    assert log_posterior(THETA, species, data, PRIORS) == pytest.approx(
        _oracle(THETA, log_b, log_e, data, PRIORS), rel=1e-10
    )


def test_species_density_factorises_without_correlation():
    theta = THETA.model_copy(update={"rho": 0.0}).as_array()
    log_b, log_e = np.array([0.2, -0.4]), np.array([1.5, 0.3])
    expected = stats.norm(theta[0], theta[1]).logpdf(log_b) + stats.norm(theta[2], theta[3]).logpdf(log_e)
    np.testing.assert_allclose(species_logpdf(log_b, log_e, theta), expected, rtol=1e-12)


@pytest.mark.parametrize(
    "update",
    [{"sigma_loge": 0.0}, {"sigma_loge": 11.0}, {"rho": 1.0}, {"rho": -1.5}, {"sigma_err": 2.5}, {"sigma_logb": -1.0}],
)
def test_outside_support_is_minus_infinity(update):
    data = _data()
    theta = HyperParams.model_construct(**{**THETA.model_dump(), **update})
    species = species_from_arrays(data.species_ids, [0.0] * 3, [1.0] * 3)
    assert log_posterior(theta, species, data, PRIORS) == -math.inf


def test_non_finite_species_value_is_minus_infinity():
    data = _data()
    species = species_from_arrays(data.species_ids, [0.0] * 3, [1.0] * 3)
    species[0] = species[0].model_construct(species_id=species[0].species_id, log_b=math.inf, log_e=1.0)
    assert log_posterior(THETA, species, data, PRIORS) == -math.inf


def test_hyper_logprior_keeps_normalising_constants():
    theta = THETA.as_array()
    expected = (
        stats.norm(-6, 6).logpdf(theta[0])
        + stats.halfnorm(scale=10).logpdf(theta[1])
        + stats.norm(1.0, 0.5).logpdf(theta[2])
        - math.log(10) - math.log(2) - math.log(2)
    )
    assert hyper_logprior(theta, PRIORS) == pytest.approx(expected, rel=1e-12)


def test_unbounded_round_trip():
    theta = THETA.as_array()
    np.testing.assert_allclose(from_unbounded(to_unbounded(theta)), theta, rtol=1e-12)


@pytest.mark.parametrize("offset", [0.0, 1.0, -1.0, 2.0, -2.0])
def test_start_values_inside_support(offset):
    assert math.isfinite(hyper_logprior(start_values(PRIORS, offset), PRIORS))


def test_build_hier_data_needs_two_species():
    with pytest.raises(InsufficientDataError):
        _data(n_species=1)


def test_build_hier_data_skips_species_with_too_few_levels(caplog):
    points = {
        ("a", "tox"): responses([1.0, 10.0, 100.0], 1.0, 10.0, species="a"),
        ("b", "tox"): responses([1.0, 10.0, 100.0], 1.0, 20.0, species="b"),
        ("c", "tox"): responses([1.0, 10.0], 1.0, 20.0, species="c"),
    }
    controls = {key: ControlSummary(species_id=key[0], d=1.0, n_controls=1) for key in points}
    data = build_hier_data(points, controls, "tox")
    assert data.species_ids == ["a", "b"]
    assert data.n_points == 18
    assert "species c" in caplog.text


def test_prior_centres_come_from_tested_range():
    priors = PriorSpec.from_concentrations([0.0, 1.0, 10.0, 1000.0])
    assert priors.mu_logC == pytest.approx(1.5)
    assert priors.sigma_logC == pytest.approx(0.75)
    assert (priors.c_min, priors.c_max) == (1.0, 1000.0)


@pytest.mark.parametrize("delta", [-3.0, 0.5, 2.0])
def test_log_posterior_is_translation_equivariant(delta):
    data = _data()
    log_b, log_e = np.array([0.0, 0.3, 0.5]), np.array([0.7, 1.0, 1.2])
    priors = PriorSpec.from_concentrations(data.concentrations())
    base = log_posterior(THETA, species_from_arrays(data.species_ids, log_b, log_e), data, priors)

    moved = data.shifted(delta)
    moved_priors = PriorSpec.from_concentrations(moved.concentrations())
    assert moved_priors.mu_loge_mean == pytest.approx(priors.mu_loge_mean + delta)
    assert moved_priors.mu_loge_sd == pytest.approx(priors.mu_loge_sd)
    moved_theta = THETA.model_copy(update={"mu_loge": THETA.mu_loge + delta})
    value = log_posterior(moved_theta, species_from_arrays(data.species_ids, log_b, log_e + delta), moved, moved_priors)
    assert value == pytest.approx(base, rel=1e-9)
