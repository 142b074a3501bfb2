import numpy as np
import pandas as pd
import pytest
from test_data import two_groups

from affine_dpm.dataio import (
    RunManifest,
    config_affine,
    config_alpha,
    config_base_measure,
    config_grid,
    config_hash,
    config_hyperprior,
    config_sampler,
    load_config,
    read_data,
    read_table,
    write_data,
    write_json,
)
from affine_dpm.model import BaseMeasure, EmpiricalBayesRule


@pytest.mark.dataio
def test_read_data_with_and_without_header(tmp_path):
    with_header = tmp_path / "with_header.csv"
    without_header = tmp_path / "without_header.csv"
    with_header.write_text("a,b\n1.5,2\n-3,4e-1\n")
    without_header.write_text("1.5,2\n-3,4e-1\n")
    expected = np.array([[1.5, 2.0], [-3.0, 0.4]])
    np.testing.assert_array_equal(read_data(str(with_header)), expected)
    np.testing.assert_array_equal(read_data(str(without_header)), expected)
    assert read_table(str(without_header)).columns.tolist() == ["x1", "x2"]


@pytest.mark.dataio
def test_read_data_label_column(tmp_path):
    path = tmp_path / "labelled.csv"
    path.write_text("x,group,y\n1,a,2\n3,b,4\n")
    data, labels = read_data(str(path), label_column="group")
    np.testing.assert_array_equal(data, [[1.0, 2.0], [3.0, 4.0]])
    assert labels.tolist() == ["a", "b"]
    with pytest.raises(KeyError, match="cluster"):
        read_data(str(path), label_column="cluster")


@pytest.mark.dataio
def test_read_data_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_data(str(tmp_path / "missing.csv"))
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(ValueError, match="non-numeric"):
        read_data(str(path))


@pytest.mark.dataio
def test_write_data_is_lossless(tmp_path):
    data = np.random.default_rng(0).standard_normal((20, 3)) * 1e3
    path = tmp_path / "data.csv"
    write_data(data, str(path))
    np.testing.assert_array_equal(read_data(str(path)), data)
    assert pd.read_csv(path).columns.tolist() == ["x1", "x2", "x3"]


@pytest.mark.dataio
def test_load_config(tmp_path):
    assert load_config(None) == {}
    path = tmp_path / "config.json"
    write_json({"alpha": {"mode": "fixed", "value": 2.0}, "colours": "red"}, str(path))
    with pytest.warns(UserWarning, match="colours"):
        config = load_config(str(path))
    assert config["alpha"]["value"] == 2.0
    write_json([1, 2, 3], str(path))
    with pytest.raises(ValueError, match="JSON object"):
        load_config(str(path))


@pytest.mark.dataio
def test_config_hash_ignores_key_order():
    a = {"alpha": {"mode": "fixed", "value": 1.0}, "sampler": {"seed": 3}}
    b = {"sampler": {"seed": 3}, "alpha": {"value": 1.0, "mode": "fixed"}}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "sampler": {"seed": 4}})


@pytest.mark.dataio
def test_config_sections():
    config = {
        "base_measure": {"m0": [0.0], "B0": [[2.0]], "nu0": 4.0, "S0": [[1.0]]},
        "hyperprior": {"b0_df": 4.0, "b0_scale": [[2.0]], "m0_mean": [0.0]},
        "alpha": {"mode": "gamma", "shape": 2.0, "rate": 4.0},
        "affine": {"C": [[3.0]], "b": [1.0]},
        "sampler": {"n_iter": 50, "burn_in": 10},
        "grid": {"axes": [[-1.0, 1.0, 21]]},
    }
    assert isinstance(config_base_measure(config), BaseMeasure)
    assert config_hyperprior(config).b0_df == 4.0
    assert config_alpha(config).prior_mean == 0.5
    assert config_affine(config).C[0, 0] == 3.0
    assert config_grid(config).shape == (21,)
    sampler = config_sampler(config, n_iter=None, burn_in=20, seed=7)
    assert (sampler.n_iter, sampler.burn_in, sampler.seed) == (50, 20, 7)


@pytest.mark.dataio
def test_config_section_defaults():
    assert config_base_measure({}) is None
    assert config_hyperprior({}) is None
    assert config_affine({}) is None
    assert config_alpha({}).value == 1.0
    assert config_sampler({}).n_iter == 5000
    assert config_grid({}, two_groups).dim == 2
    with pytest.raises(KeyError):
        config_grid({})
    rule = config_base_measure({"empirical_bayes": {"gamma1": 1.0, "gamma2": 2.0, "nu0": 5.0}})
    assert isinstance(rule, EmpiricalBayesRule)


@pytest.mark.dataio
def test_run_manifest_round_trip(tmp_path):
    manifest = RunManifest(
        "fit",
        {"data": "data.csv", "argv": ["fit", "data.csv"]},
        {"sampler": {"seed": 2}},
        2,
        outputs={"draws": "draws.jsonl"},
    )
    assert manifest.config_hash == config_hash({"sampler": {"seed": 2}})
    assert set(manifest.versions) == {"affine_dpm", "numpy", "scipy", "pandas"}
    path = manifest.write(str(tmp_path))
    again = RunManifest.read(path)
    assert again == manifest
