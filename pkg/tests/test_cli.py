import json

import pytest

from adamfield.cli import EXIT_OK, EXIT_USAGE, main
from adamfield.experiments import ExperimentConfig
from adamfield.io import config_hash, read_csv


def _small_config(path, **options):
    cfg = ExperimentConfig(batch_sizes=[4], replicas=5, horizon=300, seeds=[2],
                           options={"stride": 50, "export_replicas": 2, **options})
    cfg.save(path)
    return cfg


def test_partition_command(capsys, tmp_path):
    assert main(["partition", "--schedule", "inv_n", "--n0", "0", "--rho", "1", "--count", "4",
                 "--out", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out.split() == ["1", "2", "3", "5"]
    header, rows = read_csv(tmp_path / "partition.csv")
    assert header == ["ell", "n_ell", "t_n_ell"]
    assert [r[1] for r in rows] == ["0", "1", "2", "3", "5"]
    assert float(rows[2][2]) == 1.5


@pytest.mark.parametrize("argv", [[], ["simulate"], ["simulate", "--config", "/nonexistent.toml"],
                                  ["simulate", "--bogus"], ["nope"], ["rerun", "/nonexistent.json", "--out", "x"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_bad_config_is_usage_error(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[run]\nreplica = 3\n")
    assert main(["simulate", "--config", str(p)]) == EXIT_USAGE


def test_simulate_and_rerun_are_identical(tmp_path):
    cfg = _small_config(tmp_path / "c.toml")
    out = tmp_path / "a"
    assert main(["simulate", "--config", str(tmp_path / "c.toml"), "--out", str(out), "--dat"]) == EXIT_OK
    files = sorted(p.name for p in out.iterdir() if p.suffix in (".csv", ".dat"))
    assert "simulate_summary.csv" in files and "trajectory_s2_r1.csv" in files and "trajectory_s2_r0.dat" in files
    side = json.loads((out / "simulate_summary.csv.json").read_text())
    assert side == {"command": "simulate", "config_hash": config_hash(cfg.to_dict()), "seed": 2}
    again = tmp_path / "b"
    assert main(["rerun", str(out / "simulate.manifest.json"), "--out", str(again)]) == EXIT_OK
    for name in files:
        assert (out / name).read_bytes() == (again / name).read_bytes(), name
    header, rows = read_csv(out / "simulate_summary.csv")
    assert header == ["seed", "n", "t_n", "theta_mean", "theta_std"] and len(rows) == 7
