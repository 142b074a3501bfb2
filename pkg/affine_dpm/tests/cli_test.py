import json

import numpy as np
import pandas as pd
import pytest
from test_data import two_groups

from affine_dpm import _cli
from affine_dpm._cli import build_parser, main
from affine_dpm.dataio import RunManifest, read_data, read_json, write_data, write_json
from affine_dpm.sampler import SamplerError, read_draws

short_chain = ["--n-iter", "12", "--burn-in", "6"]


def simulated(tmp_path, n=30, c=1.0, name="data.csv"):
    out = tmp_path / "sim"
    assert main(["simulate", "mog2d", "--n", str(n), "--c", str(c), "--output", name, "-o", str(out), "--seed", "3"]) == 0
    return out / name


def fitted(tmp_path, data, name, *extra):
    out = tmp_path / name
    assert main(["fit", str(data), "-o", str(out), "--seed", "1", *short_chain, *extra]) == 0
    return out


@pytest.mark.cli
def test_simulate_command(tmp_path):
    path = simulated(tmp_path, n=40, c=5.0)
    data = read_data(str(path))
    assert data.shape == (40, 2)
    manifest = RunManifest.read(str(path.parent / "manifest.json"))
    assert manifest.command == "simulate"
    assert manifest.seed == 3
    assert manifest.summary["scenario"]["c"] == 5.0
    assert manifest.outputs["data"] == str(path)
    assert len(manifest.config_hash) == 64


@pytest.mark.cli
def test_simulate_command_rescales(tmp_path):
    x1 = read_data(str(simulated(tmp_path, c=1.0, name="x1.csv")))
    x2 = read_data(str(simulated(tmp_path, c=2.0, name="x2.csv")))
    np.testing.assert_allclose(x2, 2.0 * x1, rtol=1e-15)


@pytest.mark.cli
def test_fit_command(tmp_path):
    out = fitted(tmp_path, simulated(tmp_path), "fit")
    draws = read_draws(str(out / "draws.jsonl"))
    assert len(draws) == 6
    assert [d.iteration for d in draws] == list(range(7, 13))
    trace = pd.read_csv(out / "traces.csv")
    assert trace["iteration"].tolist() == list(range(7, 13))
    assert read_json(str(out / "manifest.json"))["summary"]["n_draws"] == 6


@pytest.mark.cli
def test_fit_command_reads_sampler_seed_from_config(tmp_path):
    data = simulated(tmp_path)
    config = tmp_path / "config.json"
    write_json({"sampler": {"n_iter": 8, "burn_in": 4, "seed": 11}}, str(config))
    out = tmp_path / "fit"
    assert main(["fit", str(data), "-o", str(out), "-c", str(config)]) == 0
    manifest = RunManifest.read(str(out / "manifest.json"))
    assert manifest.seed == 11
    assert manifest.summary["chain"]["n_iter"] == 8


@pytest.mark.cli
def test_fit_command_with_affine_section(tmp_path):
    data = simulated(tmp_path)
    config = tmp_path / "config.json"
    write_json({"affine": {"C": [[2.0, 0.0], [0.0, 0.5]], "b": [1.0, -1.0]}}, str(config))
    plain = fitted(tmp_path, data, "plain")
    mapped = fitted(tmp_path, data, "mapped", "-c", str(config))
    a = read_draws(str(plain / "draws.jsonl"))
    b = read_draws(str(mapped / "draws.jsonl"))
    for da, db in zip(a, b):
        np.testing.assert_array_equal(da.allocations, db.allocations)
        np.testing.assert_allclose(db.pi.m0, [2.0, 0.5] * da.pi.m0 + [1.0, -1.0], atol=1e-9)


@pytest.mark.cli
def test_fit_command_with_empirical_bayes_and_affine_sections(tmp_path):
    data = simulated(tmp_path)
    rule = {"empirical_bayes": {"gamma1": 1.0, "gamma2": 1.0, "nu0": 6.0}}
    plain_config = tmp_path / "plain.json"
    mapped_config = tmp_path / "mapped.json"
    write_json(rule, str(plain_config))
    write_json({**rule, "affine": {"C": [[2.0, 0.0], [0.0, 3.0]], "b": [0.0, 0.0]}}, str(mapped_config))
    plain = fitted(tmp_path, data, "plain", "-c", str(plain_config))
    mapped = fitted(tmp_path, data, "mapped", "-c", str(mapped_config))
    a = read_draws(str(plain / "draws.jsonl"))
    b = read_draws(str(mapped / "draws.jsonl"))
    assert len(a) == len(b) == 6
    for da, db in zip(a, b):
        np.testing.assert_array_equal(da.allocations, db.allocations)
        np.testing.assert_allclose(db.pi.m0, [2.0, 3.0] * da.pi.m0, atol=1e-9)


@pytest.mark.cli
def test_density_command(tmp_path):
    data = simulated(tmp_path)
    out = fitted(tmp_path, data, "fit")
    config = tmp_path / "grid.json"
    write_json({"grid": {"axes": [[-12, 12, 40], [-12, 12, 40]]}}, str(config))
    assert main(["density", str(out / "draws.jsonl"), "-o", str(tmp_path / "dens"), "-c", str(config)]) == 0
    density = pd.read_csv(tmp_path / "dens" / "density.csv")
    assert len(density) == 1600
    mass = read_json(str(tmp_path / "dens" / "manifest.json"))["summary"]["mass"]
    assert 0.8 <= mass <= 1.2


@pytest.mark.cli
def test_density_command_without_grid_or_data(tmp_path):
    out = fitted(tmp_path, simulated(tmp_path), "fit")
    assert main(["density", str(out / "draws.jsonl"), "-o", str(tmp_path / "dens")]) == 2


@pytest.mark.cli
def test_compare_command(tmp_path):
    x1 = simulated(tmp_path, c=1.0, name="x1.csv")
    x2 = simulated(tmp_path, c=2.0, name="x2.csv")
    fit1 = fitted(tmp_path, x1, "fit1")
    fit2 = fitted(tmp_path, x2, "fit2")
    identity = tmp_path / "identity.json"
    doubling = tmp_path / "doubling.json"
    write_json({"C": [[1.0, 0.0], [0.0, 1.0]], "b": [0.0, 0.0]}, str(identity))
    write_json({"C": [[2.0, 0.0], [0.0, 2.0]], "b": [0.0, 0.0]}, str(doubling))
    config = tmp_path / "grid.json"
    write_json({"grid": {"axes": [[-8, 8, 30], [-8, 8, 30]]}}, str(config))
    out = tmp_path / "cmp"
    argv = ["compare", str(fit1 / "draws.jsonl"), str(fit2 / "draws.jsonl"), "--maps", str(identity), str(doubling)]
    assert main([*argv, "-o", str(out), "-c", str(config)]) == 0
    raw = np.loadtxt(out / "distances.csv", delimiter=",")
    normalized = np.loadtxt(out / "normalized_distances.csv", delimiter=",")
    assert raw.shape == (2, 2)
    np.testing.assert_array_equal(np.diag(raw), 0.0)
    assert 0.0 < raw[0, 1] == raw[1, 0] <= 2.0
    np.testing.assert_allclose(normalized, raw / raw.max())
    assert main([*argv[:3], "--maps", str(identity), "-o", str(out), "-c", str(config)]) == 2


@pytest.mark.cli
def test_cluster_command(tmp_path):
    out = fitted(tmp_path, simulated(tmp_path), "fit")
    assert main(["cluster", str(out / "draws.jsonl"), "-o", str(tmp_path / "cl"), "--level", "0.9"]) == 0
    partition = read_json(str(tmp_path / "cl" / "partition.json"))
    ball = read_json(str(tmp_path / "cl" / "credible_ball.json"))
    similarity = np.loadtxt(tmp_path / "cl" / "psm.csv", delimiter=",")
    assert len(partition["labels"]) == 30
    assert ball["level"] == 0.9
    assert ball["vi_log_base"] == "e"
    assert ball["center"] == partition
    assert similarity.shape == (30, 30)
    assert main(["cluster", str(out / "draws.jsonl"), "-o", str(tmp_path / "cl"), "--level", "1.5"]) == 2


@pytest.mark.cli
def test_experiment_command(tmp_path):
    argv = ["experiment", "table1", "--replicates", "1", "--sample-sizes", "12", "--n-iter", "6", "--burn-in", "3"]
    assert main([*argv, "-o", str(tmp_path / "exp")]) == 0
    aggregate = pd.read_csv(tmp_path / "exp" / "table1_aggregate.csv")
    assert aggregate.columns.tolist() == ["n", "c=0.2", "c=0.5", "c=1", "c=2", "c=5"]
    manifest = read_json(str(tmp_path / "exp" / "manifest.json"))
    assert manifest["summary"]["settings"]["replicates"] == 1


@pytest.mark.cli
def test_analyze_command(tmp_path):
    path = tmp_path / "groups.csv"
    df = pd.DataFrame(two_groups, columns=["u", "v"])
    df["group"] = np.repeat(["left", "right"], 5)
    df.to_csv(path, index=False)
    out = tmp_path / "analysis"
    assert main(["analyze", str(path), "--label-column", "group", "-o", str(out), *short_chain]) == 0
    summary = read_json(str(out / "summary.json"))
    assert summary["n"] == 10
    assert summary["robustness_satisfied"]
    confusion = pd.read_csv(out / "confusion.csv", index_col=0)
    assert confusion.to_numpy().sum() == 10
    standardized = read_data(str(out / "standardized.csv"))
    np.testing.assert_allclose(standardized.std(axis=0, ddof=1), 1.0)
    manifest = read_json(str(out / "manifest.json"))
    assert manifest["summary"]["alpha_prior_mean"] == pytest.approx(1 / 5.26)


@pytest.mark.cli
def test_replay_reproduces_outputs(tmp_path):
    data = simulated(tmp_path)
    out = fitted(tmp_path, data, "fit")
    before = (out / "draws.jsonl").read_bytes()
    (out / "draws.jsonl").unlink()
    assert main(["replay", str(out / "manifest.json"), "-o", str(tmp_path / "replay")]) == 0
    assert (out / "draws.jsonl").read_bytes() == before


@pytest.mark.cli
def test_missing_data_file_is_a_validation_error(tmp_path):
    assert main(["fit", str(tmp_path / "missing.csv"), "-o", str(tmp_path)]) == 2


@pytest.mark.cli
def test_invalid_config_is_a_validation_error(tmp_path):
    data = tmp_path / "data.csv"
    write_data(two_groups, str(data))
    config = tmp_path / "config.json"
    write_json({"base_measure": {"m0": [0, 0], "B0": [[1, 0], [0, 1]], "nu0": 2.5, "S0": [[1, 0], [0, 1]]}}, str(config))
    assert main(["fit", str(data), "-o", str(tmp_path), "-c", str(config)]) == 2
    write_json({"base_measure": {"m0": [0, 0], "B0": [[1, 2], [2, 1]], "nu0": 5, "S0": [[1, 0], [0, 1]]}}, str(config))
    assert main(["fit", str(data), "-o", str(tmp_path), "-c", str(config)]) == 2


@pytest.mark.cli
def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    def failing_chain(*args, **kwargs):
        raise SamplerError("iteration 2: covariance is not positive definite")

    monkeypatch.setattr(_cli, "run_chain", failing_chain)
    data = tmp_path / "data.csv"
    write_data(two_groups, str(data))
    assert main(["fit", str(data), "-o", str(tmp_path)]) == 3
    assert not (tmp_path / "manifest.json").exists()


@pytest.mark.cli
def test_unknown_config_section_warns(tmp_path):
    data = tmp_path / "data.csv"
    write_data(two_groups, str(data))
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"sampler": {"n_iter": 4, "burn_in": 2}, "plotting": {}}))
    with pytest.warns(UserWarning, match="plotting"):
        assert main(["fit", str(data), "-o", str(tmp_path), "-c", str(config)]) == 0


parser_test_data = [
    ["simulate", "gaussian"],
    ["experiment", "table7"],
    ["compare", "a.jsonl", "--metric", "kl"],
    ["fit", "data.csv", "--verbose", "--quiet"],
]


@pytest.mark.cli
@pytest.mark.parametrize("argv", parser_test_data)
def test_parser_rejects_bad_arguments(argv):
    with pytest.raises(SystemExit) as exc_info:
        build_parser().parse_args(argv)
    assert exc_info.value.code == 2
