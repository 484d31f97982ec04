import math

import numpy as np
import pytest

from hierssd.diagnostics import (
    chain_rhat,
    gelman_rubin,
    prior_posterior_densities,
    prior_posterior_report,
    require_converged,
    summarize_hyperparameters,
)
from hierssd.exceptions import ConvergenceError, DomainError, UndefinedDiagnosticError
from hierssd.schemas import HYPER_NAMES


def test_gelman_rubin_matches_formula():
    rng = np.random.default_rng(0)
    chains = rng.normal(size=(3, 200)) + np.array([[0.0], [0.2], [-0.1]])
    m, n = chains.shape
    w = chains.var(axis=1, ddof=1).mean()
    b_over_n = chains.mean(axis=1).var(ddof=1)
    expected = math.sqrt(((n - 1) / n * w + (m + 1) / m * b_over_n) / w)
    assert gelman_rubin(chains) == pytest.approx(expected, rel=1e-12)


def test_gelman_rubin_near_one_for_mixed_chains():
    rng = np.random.default_rng(1)
    assert gelman_rubin(rng.normal(size=(4, 5000))) == pytest.approx(1.0, abs=0.01)


def test_gelman_rubin_flags_separated_chains():
    rng = np.random.default_rng(2)
    chains = rng.normal(size=(3, 500)) + np.array([[0.0], [5.0], [10.0]])
    assert gelman_rubin(chains) > 1.5


def test_gelman_rubin_zero_within_variance():
    with pytest.raises(UndefinedDiagnosticError):
        gelman_rubin(np.ones((3, 50)))


@pytest.mark.parametrize("shape", [(1, 100), (3, 5)])
def test_gelman_rubin_needs_chains_and_draws(shape):
    with pytest.raises(DomainError):
        gelman_rubin(np.zeros(shape))


def test_chain_rhat_is_nan_for_constant_chains(spread_posterior, caplog):
    values = chain_rhat(spread_posterior)
    assert set(values) == set(HYPER_NAMES)
    assert all(math.isnan(v) for v in values.values())
    assert "Gelman-Rubin" in caplog.text


def test_require_converged_names_failing_parameters(spread_posterior):
    bad = spread_posterior.model_copy(update={"gelman_rubin": {**spread_posterior.gelman_rubin, "rho": 1.2}})
    with pytest.raises(ConvergenceError) as err:
        require_converged(bad)
    assert "rho" in str(err.value)
    require_converged(spread_posterior)


def test_require_converged_override_warns(spread_posterior, caplog):
    bad = spread_posterior.model_copy(update={"gelman_rubin": {"mu_logb": math.nan}})
    require_converged(bad, allow_unconverged=True)
    assert "overridden" in caplog.text


def test_summaries_of_point_mass(spread_posterior):
    table = summarize_hyperparameters(spread_posterior)
    assert list(table["parameter"]) == list(HYPER_NAMES)
    row = table.set_index("parameter").loc["mu_loge"]
    assert row["median"] == row["q025"] == row["q975"] == pytest.approx(2.0)


def test_prior_posterior_report_flags_nothing_for_point_mass(spread_posterior):
    rows = prior_posterior_report(spread_posterior)
    assert [r.parameter for r in rows] == list(HYPER_NAMES)
    assert not any(r.data_weak for r in rows)
    assert next(r for r in rows if r.parameter == "rho").exempt


def test_prior_posterior_report_flags_wide_posterior(spread_posterior):
    rng = np.random.default_rng(0)
    draws = spread_posterior.draws.copy()
    # as wide as the U(0, 2) prior itself
    draws["sigma_err"] = rng.uniform(0, 2, size=len(draws))
    rows = prior_posterior_report(spread_posterior.model_copy(update={"draws": draws}))
    assert next(r for r in rows if r.parameter == "sigma_err").data_weak


def test_prior_posterior_densities_long_format(spread_posterior):
    frame = prior_posterior_densities(spread_posterior, n_points=20)
    assert list(frame.columns) == ["parameter", "value", "prior_density", "posterior_density"]
    assert len(frame) == 20 * len(HYPER_NAMES)
    assert (frame["prior_density"] >= 0).all()
