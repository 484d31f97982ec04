import os

import pytest

from hierssd.config import build_run_config, flat_config, load_run_config
from hierssd.exceptions import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("HIERSSD_"):
            monkeypatch.delenv(key)


def test_defaults_follow_full_profile():
    config = build_run_config({})
    assert config.mcmc.n_iter == 500_000
    assert config.mcmc.thin == 40
    assert config.mcmc.n_chains == 3
    assert config.n_species_large == 4_000_000
    assert config.x_levels == [10.0, 50.0]
    assert config.p == 5.0


def test_test_profile():
    config = build_run_config({"profile": "test"})
    assert (config.mcmc.n_iter, config.mcmc.thin, config.n_species_large) == (20_000, 10, 100_000)


def test_precedence_env_file_flags(tmp_path, monkeypatch):
    path = tmp_path / "run.cfg"
    path.write_text("# run settings\nthin = 20\nseed = 3\nx_levels = 5, 50\n", encoding="utf-8")
    monkeypatch.setenv("HIERSSD_THIN", "7")
    monkeypatch.setenv("HIERSSD_N_CHAINS", "4")
    config = load_run_config(str(path), seed=11)
    assert config.mcmc.n_chains == 4
    assert config.mcmc.thin == 20
    assert config.seed == 11
    assert config.mcmc.seed == 11
    assert config.x_levels == [5.0, 50.0]


def test_column_mapping_keys():
    config = build_run_config({"column_species": "taxon", "column_delimiter": ";"})
    assert config.columns.species == "taxon"
    assert config.columns.delimiter == ";"


@pytest.mark.parametrize(
    "values",
    [
        {"n_chains": "1"},
        {"profile": "fast"},
        {"colour": "blue"},
        {"x_levels": "0, 50"},
        {"n_boot_hc": "10"},
        {"n_iter": "5", "thin": "10"},
    ],
)
def test_invalid_values_are_config_errors(values):
    with pytest.raises(ConfigError) as err:
        build_run_config(values)
    assert err.value.exit_code == 2


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "absent.cfg"))


def test_flat_config_round_trips():
    config = build_run_config({"profile": "test", "seed": "4", "column_species": "taxon", "gec_x": "5,10"})
    again = build_run_config(flat_config(config))
    assert again == config


@pytest.mark.parametrize("name", ["paper", "Paper", "full"])
def test_paper_is_the_full_profile(name):
    config = build_run_config({"profile": name})
    assert config.profile == "full"
    assert config == build_run_config({})
