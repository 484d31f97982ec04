import math

import numpy as np
import pytest

from hierssd.community import (
    concentration_grid,
    draw_community,
    gec_x,
    global_response_at,
    hc5_vs_x,
    hierarchical_ssd,
    r_tot,
    simulate_communities,
    solve_global_effect,
    species_curve_bands,
)
from hierssd.exceptions import ConvergenceError, DomainError
from hierssd.schemas import CommunityDraw, HyperParams

Z05 = -1.6448536269514722


def _community(b, e):
    theta = HyperParams(mu_logb=0.0, sigma_logb=1.0, mu_loge=0.0, sigma_loge=1.0, rho=0.0, sigma_err=0.1)
    return CommunityDraw(theta=theta, b=np.asarray(b, dtype=float), e=np.asarray(e, dtype=float))


@pytest.mark.parametrize(
    "b, e, c",
    [
        ([1.0], [10.0], 10.0),
        ([1.0, 2.0], [10.0, 100.0], 30.0),
        ([0.5, 1.5, 3.0], [1.0, 5.0, 50.0], 7.0),
        ([2.0, 2.0, 2.0, 2.0], [1.0, 10.0, 100.0, 1000.0], 0.3),
    ],
)
def test_r_tot_closed_form(b, e, c):
    expected = np.mean([1 / (1 + (c / ei) ** bi) for bi, ei in zip(b, e)])
    assert r_tot(_community(b, e), c) == pytest.approx(expected, rel=1e-12)


def test_r_tot_limits_and_vector_input():
    community = _community([1.0, 2.0], [10.0, 100.0])
    assert r_tot(community, 0.0) == 1.0
    values = r_tot(community, np.array([1e-6, 1e12]))
    assert values[0] == pytest.approx(1.0)
    assert values[1] == pytest.approx(0.0, abs=1e-9)


def test_draw_community_is_seeded(theta):
    first = draw_community(theta, 50, np.random.default_rng(3))
    second = draw_community(theta, 50, np.random.default_rng(3))
    np.testing.assert_array_equal(first.b, second.b)
    assert len(first) == 50
    assert np.all(first.b > 0) and np.all(first.e > 0)


def test_draw_community_rejects_empty(theta):
    with pytest.raises(DomainError):
        draw_community(theta, 0, np.random.default_rng(0))


def test_solve_global_effect_single_species_is_ec_x():
    b, log_e = np.array([[2.0]]), np.array([[1.0]])
    for x in (10, 50, 90):
        expected = 1.0 + math.log10(x / (100 - x)) / 2.0
        assert solve_global_effect(b, log_e, x)[0] == pytest.approx(expected, abs=1e-8)


def test_solve_global_effect_hits_target():
    rng = np.random.default_rng(4)
    b = 10 ** rng.normal(0, 0.3, size=(5, 30))
    log_e = rng.normal(1.0, 0.8, size=(5, 30))
    roots = solve_global_effect(b, log_e, 20)
    for k in range(5):
        community = _community(b[k], 10 ** log_e[k])
        assert r_tot(community, 10 ** roots[k]) == pytest.approx(0.8, abs=1e-7)


def test_simulate_communities_is_reproducible(spread_posterior):
    b1, e1, _ = simulate_communities(spread_posterior, 20, 30, seed=9)
    b2, e2, _ = simulate_communities(spread_posterior, 20, 30, seed=9)
    np.testing.assert_array_equal(b1, b2)
    np.testing.assert_array_equal(e1, e2)
    assert b1.shape == (20, 30)


def test_short_posterior_resamples_with_replacement(spread_posterior, caplog):
    _, _, replaced = simulate_communities(spread_posterior, 500, 5, seed=0)
    assert replaced
    assert "with replacement" in caplog.text


def test_gec50_of_degenerate_posterior(sharp_posterior):
    estimate, band = gec_x(sharp_posterior, 50, n_theta=200, n_species=30, seed=1, grid_points=60)
    assert estimate.point == pytest.approx(10 ** 1.7, rel=1e-3)
    assert band.kind == "global_response"
    assert np.all(np.diff(band.median) <= 0)
    assert band.median[0] == pytest.approx(1.0, abs=0.02)


def test_gec_x_is_reproducible(spread_posterior):
    first, _ = gec_x(spread_posterior, 10, n_theta=100, seed=2)
    second, _ = gec_x(spread_posterior, 10, n_theta=100, seed=2)
    assert first == second


def test_gec_rejects_bad_level(spread_posterior):
    with pytest.raises(DomainError):
        gec_x(spread_posterior, 100, n_theta=10)


def test_unconverged_posterior_is_refused(spread_posterior, caplog):
    bad = spread_posterior.model_copy(update={"gelman_rubin": {"mu_loge": 1.3}})
    with pytest.raises(ConvergenceError):
        gec_x(bad, 50, n_theta=10)
    gec_x(bad, 50, n_theta=10, allow_unconverged=True)
    assert "overridden" in caplog.text


def test_hierarchical_hc5_of_point_mass_matches_lognormal_quantile(spread_posterior):
    _, estimate = hierarchical_ssd(spread_posterior, 50, p=5, n_theta=200, n_species_large=100_000, seed=0)
    expected = 10 ** (2.0 + Z05 * 0.5)
    assert estimate.point == pytest.approx(expected, rel=5e-3)
    assert estimate.x == 50


def test_hc5_vs_x_matches_hierarchical_ssd(spread_posterior):
    kwargs = dict(p=5, n_theta=50, n_species_large=20_000, seed=3)
    _, at_50 = hierarchical_ssd(spread_posterior, 50, **kwargs)
    band = hc5_vs_x(spread_posterior, [10, 50, 90], **kwargs)
    assert band.kind == "hc5_vs_x"
    assert band.median[1] == at_50.point
    assert band.lo[1] == at_50.ci_low
    assert band.hi[1] == at_50.ci_high
    assert np.all(np.diff(band.median) >= 0)


def test_hc5_vs_x_band_wider_at_low_effect(spread_posterior):
    band = hc5_vs_x(spread_posterior, [10, 50], n_theta=200, n_species_large=20_000, seed=4)
    width = np.log10(band.hi) - np.log10(band.lo)
    assert width[0] > width[1]


def test_ssd_band_is_a_cdf(spread_posterior):
    band, _ = hierarchical_ssd(spread_posterior, 10, n_theta=50, n_species_large=20_000, seed=0, grid_points=40)
    assert band.kind == "ssd_fraction_affected"
    assert band.label == "ec10"
    assert np.all(np.diff(band.median) >= 0)
    assert 0 <= band.lo[0] and band.hi[-1] <= 1


def test_global_response_at_gec50_is_half(sharp_posterior):
    result = global_response_at(sharp_posterior, 10 ** 1.7, n_theta=100, seed=0, label="check")
    assert result.reduction == pytest.approx(50.0, abs=0.1)
    assert result.label == "check"


def test_species_curve_bands(spread_posterior):
    grid = concentration_grid(spread_posterior.priors, 30)
    bands = species_curve_bands(spread_posterior, grid)
    assert [b.label for b in bands] == spread_posterior.species_ids
    assert all(b.kind == "species_curve" for b in bands)
    assert bands[0].median[0] > bands[0].median[-1]


def test_uncorrelated_draws_have_no_sample_correlation():
    theta = HyperParams(mu_logb=0.3, sigma_logb=0.4, mu_loge=1.0, sigma_loge=0.8, rho=0.0, sigma_err=0.1)
    community = draw_community(theta, 1_000_000, np.random.default_rng(12))
    corr = np.corrcoef(np.log10(community.b), np.log10(community.e))[0, 1]
    assert abs(corr) < 0.005


def test_degenerate_spread_collapses_on_the_means():
    theta = HyperParams(mu_logb=0.3, sigma_logb=1e-8, mu_loge=1.7, sigma_loge=1e-8, rho=0.5, sigma_err=0.1)
    community = draw_community(theta, 100, np.random.default_rng(0))
    np.testing.assert_allclose(community.b, 10 ** 0.3, rtol=1e-6)
    np.testing.assert_allclose(community.e, 10 ** 1.7, rtol=1e-6)


def test_two_species_global_response():
    assert r_tot(_community([1.0, 1.0], [10.0, 1000.0]), 10.0) == pytest.approx((0.5 + 100 / 101) / 2, rel=1e-12)


def test_r_tot_ignores_species_order():
    rng = np.random.default_rng(6)
    b, e = 10 ** rng.normal(0, 0.3, 40), 10 ** rng.normal(1, 1, 40)
    grid = np.logspace(-2, 4, 25)
    base = r_tot(_community(b, e), grid)
    for _ in range(3):
        order = rng.permutation(40)
        np.testing.assert_allclose(r_tot(_community(b[order], e[order]), grid), base, rtol=1e-12)


def test_hc5_stable_when_community_doubles(spread_posterior):
    kwargs = dict(p=5, n_theta=100, seed=8)
    _, single = hierarchical_ssd(spread_posterior, 50, n_species_large=100_000, **kwargs)
    _, double = hierarchical_ssd(spread_posterior, 50, n_species_large=200_000, **kwargs)
    assert double.point == pytest.approx(single.point, rel=5e-3)
