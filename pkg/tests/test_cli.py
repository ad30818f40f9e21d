import csv
import json
from importlib import resources

import pytest

from intensity_lasso import __version__
from intensity_lasso.cli import ConfigError, main, parse_config

EXAMPLE = str(resources.files("intensity_lasso") / "data" / "example_cohort.csv")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---- configuration ------------------------------------------------------------------------

def test_parse_fit_flags():
    cfg = parse_config(["fit", "--data", "c.csv", "--time-bins", "8", "--x", "3.0"])
    assert cfg.subcommand == "fit" and cfg.data == "c.csv"
    assert cfg.time_bins == 8 and cfg.x == 3.0
    assert cfg.y == parse_config(["fit", "--data", "c.csv"]).y
    assert cfg.sim is None


def test_missing_data_source_is_exit_2(capsys):
    with pytest.raises(ConfigError, match="data"):
        parse_config(["fit"])
    assert main(["fit"]) == 2
    assert "data" in capsys.readouterr().err


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"x": 1.0, "time_bins": 3}))
    cfg = parse_config(["fit", "--data", "c.csv", "--config", str(path), "--x", "2"])
    assert cfg.x == 2.0 and cfg.time_bins == 3


@pytest.mark.parametrize("content,key", [({"bogus": 1}, "bogus"), ({"x": "big"}, "x"),
                                         ({"time_bins": 2.5}, "time_bins"), ({"subcommand": "simulate"},
                                                                             "subcommand")])
def test_bad_config_keys_named(tmp_path, content, key):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(content))
    with pytest.raises(ConfigError, match=key):
        parse_config(["fit", "--data", "c.csv", "--config", str(path)])


def test_data_and_sim_exclusive(tmp_path):
    sim = tmp_path / "d.json"
    sim.write_text(json.dumps({"n": 20, "p": 2, "beta0": [1, 0]}))
    with pytest.raises(ConfigError, match="exclusive"):
        parse_config(["fit", "--data", "c.csv", "--sim", str(sim), "--seed", "1"])


def test_seed_required_for_simulation(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        parse_config(["verify-bernstein", "--out", str(tmp_path)])


@pytest.mark.parametrize("argv", [["fit", "--data", "c.csv", "--nu", "3"],
                                  ["fit", "--data", "c.csv", "--scale", "0"],
                                  ["verify-oracle", "--seed", "1", "--out", "o", "--claim", "medium"],
                                  ["fit", "--data", "c.csv", "--threads", "0"],
                                  ["fit", "--data", "c.csv", "--x", "abc"]])
def test_invalid_values_exit_2(argv):
    assert main(argv) == 2


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("INTENSITY_LASSO_THREADS", "3")
    assert parse_config(["fit", "--data", "c.csv"]).threads == 3
    assert parse_config(["fit", "--data", "c.csv", "--threads", "2"]).threads == 2
    monkeypatch.setenv("INTENSITY_LASSO_THREADS", "many")
    assert main(["fit", "--data", EXAMPLE]) == 2


# ---- fit and friends ----------------------------------------------------------------------

def test_fit_bundled_example(tmp_path):
    out = tmp_path / "fit.json"
    assert main(["fit", "--data", EXAMPLE, "--out", str(out)]) == 0
    doc = read_json(out)
    assert doc["tool"] == "intensity-lasso" and doc["version"] == __version__
    res = doc["result"]
    assert res["n"] == 20
    assert len(res["active_beta"]) + len(res["active_gamma"]) <= 20
    assert res["converged"] and res["kkt_residual"] <= 1e-7


def test_report_round_trip(tmp_path):
    out = tmp_path / "fit.json"
    assert main(["fit", "--data", EXAMPLE, "--x", "2.5", "--time-bins", "3", "--out", str(out)]) == 0
    first = read_json(out)
    again = tmp_path / "again.json"
    assert main(["fit", "--config", str(out), "--out", str(again)]) == 0
    second = read_json(again)
    second["config"]["out"] = first["config"]["out"]
    assert second["config"] == first["config"]
    assert second["result"] == first["result"]


def test_fit_output_byte_identical(tmp_path):
    out = tmp_path / "fit.json"
    runs = []
    for _ in range(2):
        assert main(["fit", "--data", EXAMPLE, "--out", str(out)]) == 0
        runs.append(out.read_bytes())
    assert runs[0] == runs[1]


def test_fit_prints_to_stdout(capsys):
    assert main(["weights", "--data", EXAMPLE]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["result"]["weights"]["omega"]) == 5


def test_non_convergence_exit_1(tmp_path):
    out = tmp_path / "fit.json"
    assert main(["fit", "--data", EXAMPLE, "--scale", "0.01", "--max-iters", "1", "--out", str(out)]) == 1
    assert read_json(out)["result"]["converged"] is False


def test_corrupt_row_named(tmp_path, capsys):
    lines = open(EXAMPLE).read().splitlines()
    lines[5] = "0.3,1,abc,0,0,0,0"
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["fit", "--data", str(bad)]) == 2
    assert "row 6" in capsys.readouterr().err


def test_missing_file_exit_2():
    assert main(["fit", "--data", "/nonexistent/cohort.csv"]) == 2


def test_re_check_keys(tmp_path):
    out = tmp_path / "re.json"
    assert main(["re-check", "--data", EXAMPLE, "--s", "2", "--out", str(out)]) == 0
    res = read_json(out)["result"]
    assert set(res) >= {"kappa_bracket", "pi_n", "certificate", "gram", "provenance"}
    lo, hi = res["kappa_bracket"]
    assert 0 <= lo <= hi
    assert res["provenance"] == "plug-in-counts"


def test_diagnose_needs_design():
    assert main(["diagnose", "--data", EXAMPLE]) == 2


def test_diagnose_on_design(tmp_path):
    sim = tmp_path / "d.json"
    sim.write_text(json.dumps({"n": 100, "p": 3, "beta0": [0.5, 0.0, -0.5], "tau": 2.0}))
    out = tmp_path / "diag.json"
    assert main(["diagnose", "--sim", str(sim), "--seed", "4", "--out", str(out)]) == 0
    res = read_json(out)["result"]
    assert res["kullback"] >= 0 and res["sandwich"]["holds"]


# ---- simulation and verification ----------------------------------------------------------

def test_simulate_writes_cohort(tmp_path, capsys):
    out = tmp_path / "cohort.csv"
    assert main(["simulate", "--seed", "3", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    summary = json.loads(capsys.readouterr().out)["result"]
    assert rows[0][:2] == ["time", "status"] and len(rows) == summary["n"] + 1
    assert main(["fit", "--data", str(out), "--out", str(tmp_path / "fit.json")]) in (0, 1)


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", "--seed", "8", "--out", str(a)])
    main(["simulate", "--seed", "8", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_small_bernstein_run(tmp_path):
    out = tmp_path / "bern"
    code = main(["verify-bernstein", "--seed", "1", "--replicates", "30", "--out", str(out)])
    doc = read_json(out / "report.json")
    assert code == (0 if doc["result"]["pass"] else 1)
    assert doc["result"]["artifacts_path"] == "replicates.csv"
    rows = list(csv.DictReader(open(out / "replicates.csv")))
    assert len(rows) == 30 and "eta0" in rows[0]
    assert sorted(p.name for p in out.iterdir()) == ["replicates.csv", "report.json"]


def test_verify_report_byte_identical_and_threads_invariant(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    main(["verify-oracle", "--seed", "5", "--replicates", "8", "--threads", "1", "--out", str(outs[0])])
    main(["verify-oracle", "--seed", "5", "--replicates", "8", "--threads", "3", "--out", str(outs[1])])
    a, b = read_json(outs[0] / "report.json"), read_json(outs[1] / "report.json")
    assert a["result"] == b["result"]
    assert (outs[0] / "replicates.csv").read_bytes() == (outs[1] / "replicates.csv").read_bytes()


def test_rate_sweep_grid_checked(tmp_path):
    assert main(["rate-sweep", "--seed", "1", "--ns", "100", "200", "--replicates", "2",
                 "--out", str(tmp_path)]) == 2


def test_rate_sweep_writes_table(tmp_path):
    out = tmp_path / "rates"
    assert main(["rate-sweep", "--seed", "1", "--ns", "100", "150", "200", "--replicates", "3", "--scale", "0.1",
                 "--out", str(out)]) == 0
    doc = read_json(out / "report.json")
    assert len(doc["result"]["table"]) == 3 and doc["config"]["scale"] == 0.1
    assert len(list(csv.DictReader(open(out / "table.csv")))) == 3


@pytest.mark.slow
def test_default_bernstein_fixture_passes(tmp_path):
    out = tmp_path / "bern"
    assert main(["verify-bernstein", "--seed", "2024", "--out", str(out)]) == 0
    assert read_json(out / "report.json")["result"]["pass"] is True
