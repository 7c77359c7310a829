import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from lfgp.cli import main
from lfgp.datasets import read_csv
from lfgp.svg import line_chart

SVG_NS = "{http://www.w3.org/2000/svg}"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def cube_csv(tmp_path):
    path = tmp_path / "cube.csv"
    assert run("generate", "--kind", "cube", "--n", 10000, "--seed", 7, "--out", path) == 0
    return path


class TestGenerate:
    def test_rows_and_bytes(self, cube_csv, tmp_path):
        lines = cube_csv.read_text().splitlines()
        assert len(lines) == 10001 and len(lines[1].split(",")) == 4
        again = tmp_path / "again.csv"
        run("generate", "--kind", "cube", "--n", 10000, "--seed", 7, "--out", again)
        assert again.read_bytes() == cube_csv.read_bytes()
        assert (tmp_path / "cube.csv.meta").read_text() == (tmp_path / "again.csv.meta").read_text().replace("again", "cube")

    def test_roll_radius_on_reread(self, tmp_path):
        path = tmp_path / "roll.csv"
        run("generate", "--kind", "roll", "--n", 500, "--seed", 1, "--out", path)
        d = read_csv(path)
        np.testing.assert_allclose(np.hypot(d.X[:, 0], d.X[:, 1]), np.arange(1, 501) / 500, rtol=1e-14)

    def test_missing_directory(self, tmp_path, capsys):
        assert run("generate", "--out", tmp_path / "nope" / "x.csv") == 2
        assert "nope" in capsys.readouterr().err


class TestFitPredict:
    def test_fit_report(self, cube_csv, tmp_path):
        model, report = tmp_path / "m.json", tmp_path / "r.csv"
        assert run("fit", "--data", cube_csv, "--statistic", "mean", "--n0", 1000, "--epsilon", 1,
                   "--model-out", model, "--report-out", report) == 0
        header, row = report.read_text().splitlines()
        fields = dict(zip(header.split(","), row.split(",")))
        assert 5 <= int(fields["m"]) <= 10
        assert int(fields["repetition_count"]) <= 5
        assert json.loads(model.read_text())["schema"] == "lfgp-model/1"

    def test_predict_grid_and_plot(self, cube_csv, tmp_path):
        model = tmp_path / "m.json"
        run("fit", "--data", cube_csv, "--n0", 1000, "--model-out", model)
        out = tmp_path / "pred.csv"
        assert run("predict", "--model", model, "--grid", "cube", "--n-star", 30, "--out", out, "--plot") == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "x1,mean,variance,true" and len(lines) == 31
        root = ET.parse(tmp_path / "pred.svg").getroot()
        assert root.tag == SVG_NS + "svg"
        assert len(root.findall(f".//{SVG_NS}polyline")) == 2
        assert (tmp_path / "pred.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        first = out.read_bytes()
        run("predict", "--model", model, "--grid", "cube", "--out", out)
        assert out.read_bytes() == first

    def test_fit_deterministic(self, cube_csv, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run("fit", "--data", cube_csv, "--n0", 1000, "--statistic", "skew", "--seed", 2, "--model-out", a)
        run("fit", "--data", cube_csv, "--n0", 1000, "--statistic", "skew", "--seed", 2, "--model-out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_embedding_recorded(self, tmp_path):
        data, model = tmp_path / "roll.csv", tmp_path / "m.json"
        run("generate", "--kind", "roll", "--n", 2000, "--seed", 0, "--out", data)
        assert run("fit", "--data", data, "--n0", 200, "--embedding", "lle", "--k", 50, "--grid", "roll",
                   "--model-out", model) == 0
        emb = json.loads(model.read_text())["embedding"]
        assert emb["method"] == "lle" and emb["k_neighbors"] == 50
        assert run("predict", "--model", model, "--grid", "roll", "--out", tmp_path / "p.csv") == 0
        assert run("predict", "--model", model, "--grid", "roll", "--n-star", 31, "--out", tmp_path / "q.csv") == 1

    def test_missing_data_file(self, tmp_path, capsys):
        missing = tmp_path / "absent.csv"
        assert run("fit", "--data", missing, "--model-out", tmp_path / "m.json") == 2
        assert str(missing) in capsys.readouterr().err

    def test_insufficient_data(self, tmp_path):
        data = tmp_path / "small.csv"
        run("generate", "--n", 50, "--out", data)
        assert run("fit", "--data", data, "--n0", 100, "--model-out", tmp_path / "m.json") == 1
        assert not (tmp_path / "m.json").exists()

    def test_config_file(self, cube_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n0": 2000, "model_out": str(tmp_path / "m.json"), "report-out": str(tmp_path / "r.csv")}))
        assert run("fit", "--data", cube_csv, "--config", cfg) == 0
        assert (tmp_path / "r.csv").read_text().splitlines()[1].split(",")[2] == "2000"
        # explicit flags beat the file
        assert run("fit", "--data", cube_csv, "--config", cfg, "--n0", 1500) == 0
        assert (tmp_path / "r.csv").read_text().splitlines()[1].split(",")[2] == "1500"

    def test_config_unknown_key(self, cube_csv, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n0": 500, "learning_rate": 3}))
        assert run("fit", "--data", cube_csv, "--model-out", tmp_path / "m.json", "--config", cfg) == 2
        assert "learning_rate" in capsys.readouterr().err

    def test_unknown_flag(self, cube_csv):
        with pytest.raises(SystemExit) as exc:
            run("fit", "--data", cube_csv, "--model-out", "m.json", "--bogus")
        assert exc.value.code == 2


class TestBench:
    def test_summary_row(self, tmp_path):
        out = tmp_path / "bench.csv"
        assert run("bench", "--n", 20000, "--n0", "1000,4000", "--reps", 2, "--out", out) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("n,n0,time_mean_s")
        assert len(lines) == 3
        assert all(float(line.split(",")[4]) >= 1 for line in lines[1:])


class TestBacktestCommand:
    def test_end_to_end(self, tmp_path, capsys):
        rates = tmp_path / "rates.csv"
        assert run("rates", "--days", 14, "--seed", 2, "--momentum", 0.3, "--out", rates) == 0
        # knock out ten minutes of the evaluation window to create a gap
        lines = rates.read_text().splitlines()
        rates.write_text("\n".join(lines[:30000] + lines[30020:]) + "\n")
        out = tmp_path / "bt"
        assert run("backtest", "--rates", rates, "--alpha", "0.5,0.3,0.1", "--lag", 3, "--n0", 200,
                   "--out-dir", out, "--plot") == 0
        summary = (out / "summary.csv").read_text().splitlines()
        entries = [int(r.split(",")[4]) for r in summary[1:]]
        assert entries[0] > 0 and entries == sorted(entries, reverse=True)
        assert "dropped" in capsys.readouterr().out
        dropped = int(summary[1].split(",")[3])
        assert dropped > 0
        root = ET.parse(out / "cumulative_profit.svg").getroot()
        assert len(root.findall(f".//{SVG_NS}polyline")) == 3
        first = (out / "ledger_alpha_0.5.csv").read_bytes()
        run("backtest", "--rates", rates, "--alpha", "0.5", "--lag", 3, "--n0", 200, "--out-dir", out)
        assert (out / "ledger_alpha_0.5.csv").read_bytes() == first
        assert not list(out.glob("*.tmp"))

    def test_bad_rates(self, tmp_path, capsys):
        rates = tmp_path / "rates.csv"
        rates.write_text("timestamp,rate\n2019-09-02T00:00:30Z,140.0\n2019-09-02T00:00:00Z,140.1\n")
        assert run("backtest", "--rates", rates, "--out-dir", tmp_path / "o") == 1
        assert "2019-09-02T00:00:00Z" in capsys.readouterr().err


class TestSvg:
    def test_well_formed(self):
        doc = line_chart([("a", [0, 1, 2], [1, 3, 2]), ("b & c", [0, 2], [0, 0])], title="t<1>")
        root = ET.fromstring(doc)
        assert len(root.findall(f"{SVG_NS}polyline")) == 2

    def test_degenerate_inputs(self):
        ET.fromstring(line_chart([("flat", [1, 1], [2, 2])]))
        ET.fromstring(line_chart([("empty", [], [])]))
        ET.fromstring(line_chart([("nan", [0, 1], [float("nan"), 1.0])]))


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "lfgp.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "backtest" in res.stdout
