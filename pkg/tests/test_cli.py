import json

import pytest

from metafed import cli

FAST_DOC = {
    "maml": {"rounds": 2, "inner_lr": 0.001, "meta_lr": 0.0005},
    "fl": {"nu": 0.9, "local_lr": 0.001, "batch_size": 8, "max_rounds": 4,
           "epsilon": 0.2},
    "monte_carlo_runs": 2,
    "t0_candidates": [0, 2],
    "master_seed": 7,
}


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(FAST_DOC))
    return path


def test_simulate_writes_outputs(config_path, tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["simulate", "--config", str(config_path), "--seed", "3",
                     "--out", str(out)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["t0"] == 2
    assert (out / "config.json").exists()
    assert (out / "records" / "run_2_3.json").exists()


def test_simulate_strict_flags_nonconvergence(config_path, capsys):
    code = cli.main(["simulate", "--config", str(config_path), "--seed", "3",
                     "--strict"])
    captured = capsys.readouterr()
    summary = json.loads(captured.out)
    expected = 0 if summary["converged"] else 2
    assert code == expected


def test_simulate_rejects_t0_list(config_path):
    assert cli.main(["simulate", "--config", str(config_path),
                     "--t0", "1,2"]) == 1


def test_montecarlo_aggregates(config_path, tmp_path, capsys):
    out = tmp_path / "mc"
    code = cli.main(["montecarlo", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["runs"] == 2
    assert len(list((out / "records").glob("*.json"))) == 2


def test_sweep_writes_tables(config_path, tmp_path, capsys):
    out = tmp_path / "sweep"
    code = cli.main(["sweep", "--config", str(config_path), "--out", str(out),
                     "--format", "csv"])
    assert code == 0
    tradeoff = (out / "tables" / "tradeoff.csv").read_text().strip().splitlines()
    assert tradeoff[0].split(",")[0] == "schema"
    assert len(tradeoff) == 1 + 2 * 2   # two candidates x two settings
    assert (out / "tables" / "rounds.csv").exists()
    assert (out / "tables" / "bars.csv").exists()
    matrix = (out / "tables" / "rounds_matrix.csv").read_text().splitlines()
    assert matrix[0] == "schema,t0," + ",".join(f"task_{t}" for t in range(1, 7))
    assert len(matrix) == 3   # header + one row per candidate


def test_energy_subcommand_uses_fixtures(tmp_path, capsys):
    out = tmp_path / "energy"
    code = cli.main(["energy", "--profile", "table1", "--response", "table2",
                     "--out", str(out), "--format", "json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["rows"]) == 7 * 2
    assert set(payload["argmin"]) == {"sidelink_fast", "uplink_fast"}
    assert (out / "tables" / "tradeoff.csv").exists()


def test_energy_rejects_unknown_t0(capsys):
    assert cli.main(["energy", "--response", "table2", "--t0", "7"]) == 1


def test_fixtures_dump(tmp_path, capsys):
    code = cli.main(["fixtures", "--out", str(tmp_path)])
    assert code == 0
    table1 = json.loads((tmp_path / "table1.json").read_text())
    assert table1["uplink_bit_per_joule"] == 200e3
    table2 = json.loads((tmp_path / "table2.json").read_text())
    assert set(table2) == {"0", "42", "66", "90", "132", "210", "240"}


def test_validation_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"t0_candidates": []}))
    assert cli.main(["simulate", "--config", str(bad)]) == 1
