import csv
import json
import subprocess
import sys

import pytest

from fedphish import __version__, cli, data

SMALL_RUN = ["run", "--synthetic-records", "200", "--rounds", "4", "--nodes", "2", "--local-epochs", "1",
             "--hidden-dim", "8", "--num-heads", "2", "--num-layers", "1"]


def test_run_writes_reports(tmp_path, capsys):
    code = cli.main(SMALL_RUN + ["--models", "attention,simple_mlp", "--strategies", "naive,lwf",
                                 "--out", str(tmp_path), "--format", "csv,json"])
    assert code == cli.EXIT_OK
    printed = capsys.readouterr().out.split()
    assert sorted(p.rsplit("/", 1)[-1] for p in printed) == ["report.csv", "report.json", "timing.json"]
    rows = list(csv.reader((tmp_path / "report.csv").open()))
    assert len(rows) == 1 + 4 * 4 * 4 + 4


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rounds": 8, "models": "simple_mlp", "strategies": "naive",
                               "synthetic_records": 200, "nodes": 2, "local_epochs": 1,
                               "format": "json"}))
    assert cli.main(["run", "--config", str(cfg), "--rounds", "4", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["config"]["rounds"] == 4
    assert len(doc["cells"][0]["history"]) == 4


def test_config_error_is_stage_tagged(tmp_path, capsys):
    code = cli.main(["run", "--rounds", "3", "--out", str(tmp_path)])
    assert code == cli.EXIT_FAILURE
    assert "fedphish: error: [config]" in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_FAILURE
    assert "[config]" in capsys.readouterr().err


def test_missing_dataset(tmp_path, capsys):
    assert cli.main(["run", "--dataset", str(tmp_path / "none.csv")]) == cli.EXIT_FAILURE
    assert "[load]" in capsys.readouterr().err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as err:
        cli.main(["run", "--partition", "sorted"])
    assert err.value.code == cli.EXIT_USAGE


def test_features_plain_lines(tmp_path, capsys):
    src = tmp_path / "urls.txt"
    src.write_text("http://a.b/c?d=e\n\n.\n")
    assert cli.main(["features", str(src)]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == list(data.FEATURE_NAMES)
    assert rows[1][0] == "16" and rows[2][:2] == ["1", "1"]


def test_features_labelled_to_file(tmp_path):
    src = tmp_path / "urls.csv"
    src.write_text("url,label\nhttp://x//y//z,1\n")
    out = tmp_path / "f.csv"
    assert cli.main(["features", str(src), "-o", str(out)]) == 0
    ds = data.load_csv(out)
    assert ds.y.tolist() == [1]
    assert ds.X[0, -1] == 2


def test_features_empty_url_fails(tmp_path, capsys):
    src = tmp_path / "urls.csv"
    src.write_text("url,label\n,1\n")
    assert cli.main(["features", str(src)]) == cli.EXIT_FAILURE
    assert "[extract]" in capsys.readouterr().err


def test_correlate_synthetic(capsys):
    assert cli.main(["correlate", "--seed", "1"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["feature", "r", "constant_flag"]
    assert [r[0] for r in rows[1:]] == list(data.FEATURE_NAMES)
    assert all(-1.0 <= float(r[1]) <= 1.0 for r in rows[1:])


def test_gradcheck_command(capsys):
    assert cli.main(["--kernels", "numpy", "gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "numpy kernels" in out


def test_gradcheck_failure_exit(capsys):
    assert cli.main(["gradcheck", "--seeds", "1", "--tolerance", "1e-300"]) == cli.EXIT_GRADCHECK


def test_version_subprocess():
    proc = subprocess.run([sys.executable, "-m", "fedphish.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert __version__ in proc.stdout
