import math

import numpy as np
import pytest

from hierssd.bioassay import control_summaries, load_dataset, make_responses
from hierssd.dose_response import loglogistic
from hierssd.exceptions import DomainError
from hierssd.synthesize import DIURON_THETA, default_design, read_truth, synthesize_dataset, write_synthetic


def test_noiseless_responses_lie_on_the_curves(theta):
    ds, truth = synthesize_dataset(theta, n_species=4, sigma_err=0.0, seed=2)
    controls = control_summaries(ds)
    species = {s.species_id: s for s in truth.species}
    for (sp, _), points in make_responses(ds).items():
        b, e, d = 10 ** species[sp].log_b, 10 ** species[sp].log_e, truth.d[sp]
        assert controls[(sp, "diuron")].d == pytest.approx(d, rel=1e-12)
        for p in points:
            assert p.y == pytest.approx(math.log(loglogistic(p.concentration, b, e, d)), rel=1e-9, abs=1e-12)


def test_design_and_layout(theta):
    ds, truth = synthesize_dataset(theta, n_species=3, n_replicates=2, n_controls=4, seed=0)
    assert len(ds) == 3 * (4 + 8 * 2)
    assert ds.species_ids == ["sp01", "sp02", "sp03"]
    np.testing.assert_allclose(truth.concentrations, default_design(theta))
    assert truth.concentrations[0] == pytest.approx(10 ** (theta.mu_loge - 2 * theta.sigma_loge))


def test_seed_reproducible(theta):
    first, _ = synthesize_dataset(theta, seed=5)
    second, _ = synthesize_dataset(theta, seed=5)
    assert first == second


def test_ground_truth_sidecar_echoes_theta(tmp_path):
    ds, truth = synthesize_dataset(DIURON_THETA, seed=1)
    csv_path, sidecar = write_synthetic(ds, truth, tmp_path / "diuron.csv")
    again = read_truth(sidecar)
    assert again.theta == DIURON_THETA
    assert again.theta.rho == 0.83
    assert len(load_dataset(csv_path)) == len(ds)


def test_rejects_negative_noise(theta):
    with pytest.raises(DomainError):
        synthesize_dataset(theta, sigma_err=-0.1)
