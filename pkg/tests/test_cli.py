import json

import numpy as np
import pytest

from rfit.cli import main
from rfit.io import ingest, read_influence_csv


@pytest.fixture
def line_file(tmp_path):
    path = tmp_path / "line.json"
    assert main(["gen", "--kind", "line", "--n", "10", "--inliers", "7", "--sigma", "0.1",
                 "--spread", "10", "--seed", "2", "--eps", "0.3", "--out", str(path)]) == 0
    return path


class TestGen:
    def test_writes_instance(self, line_file, capsys):
        inst = ingest(line_file)
        assert inst.n == 10 and inst.eps == 0.3
        assert inst.provenance["seed"] == 2

    def test_byte_identical(self, tmp_path):
        args = ["gen", "--kind", "homography", "--n", "8", "--inliers", "5", "--seed", "3"]
        main(args + ["--out", str(tmp_path / "a.json")])
        main(args + ["--out", str(tmp_path / "b.json")])
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_usage_error(self, tmp_path, capsys):
        code = main(["gen", "--kind", "line", "--n", "3", "--inliers", "5", "--out", str(tmp_path / "x.json")])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_argparse_error_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--kind", "plane", "--n", "3", "--inliers", "1", "--out", "x"])
        assert exc.value.code == 2


class TestInfluence:
    @pytest.mark.parametrize("method", ["exact", "classical", "quantum"])
    def test_csv(self, line_file, tmp_path, method):
        out = tmp_path / f"{method}.csv"
        assert main(["influence", "--in", str(line_file), "--method", method, "--m", "400",
                     "--seed", "1", "--out-csv", str(out)]) == 0
        d = read_influence_csv(out)
        assert d["alpha"].size == 10
        if method != "classical":
            # the classical estimator averages over 3-subsets, a different sampling space
            np.testing.assert_array_equal(d["label_pred"], d["label_true"])

    def test_cap_is_usage_error(self, tmp_path, monkeypatch):
        path = tmp_path / "big.json"
        main(["gen", "--kind", "line", "--n", "12", "--inliers", "8", "--out", str(path)])
        monkeypatch.setenv("RFIT_MAX_EXACT_N", "10")
        assert main(["influence", "--in", str(path), "--out-csv", str(tmp_path / "o.csv")]) == 2

    def test_schema_error_exit_4(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"kind": "triangulation", "eps": 1, "points": [{"camera": 0, "uv": [0, 0]}]}')
        assert main(["influence", "--in", str(path), "--out-csv", str(tmp_path / "o.csv")]) == 4
        assert "cameras" in capsys.readouterr().err


class TestFit:
    def test_report_and_summary(self, line_file, tmp_path, capsys):
        rep = tmp_path / "r.json"
        assert main(["fit", "--in", str(line_file), "--report", str(rep)]) == 0
        out = capsys.readouterr().out
        assert "kept 7/10" in out and "agreement with ground truth: 1.0000" in out
        doc = json.loads(rep.read_text())
        assert "timing" not in doc and doc["gamma"] == 0.3

    def test_timing_flag(self, line_file, tmp_path):
        rep = tmp_path / "r.json"
        main(["fit", "--in", str(line_file), "--report", str(rep), "--timing"])
        assert "influence_s" in json.loads(rep.read_text())["timing"]

    def test_rerun_identical(self, line_file, tmp_path):
        for name in ("a.json", "b.json"):
            main(["fit", "--in", str(line_file), "--method", "classical", "--m", "50", "--seed", "4",
                  "--report", str(tmp_path / name)])
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_gamma_too_small(self, line_file):
        assert main(["fit", "--in", str(line_file), "--gamma", "0.000001"]) == 2

    def test_numerical_exit_3(self, tmp_path):
        # all points identical: every retained subset is rank deficient for the refit
        path = tmp_path / "deg.json"
        path.write_text(json.dumps({"kind": "homography", "eps": 4.0,
                                    "points": [{"u": [1, 1], "v": [2, 2]}] * 5}))
        assert main(["fit", "--in", str(path), "--gamma", "1"]) == 3


class TestBench:
    def test_small_instance(self, line_file, capsys):
        assert main(["bench", "--in", str(line_file), "--m", "800"]) == 0
        out = capsys.readouterr().out
        assert "ratio, cached f (N+1)" in out
        rows = dict(line.rsplit(None, 1) for line in out.splitlines())
        assert rows["ratio, cached f (N+1)"] == "11"
        assert rows["ratio, NM convention (N)"] == "10"
        assert rows["classical queries, cached f: M(N+1)"] == "8800"
        assert rows["measured quantum queries"] == "800"


class TestReport:
    def test_csv_and_plots(self, line_file, tmp_path, capsys):
        rep = tmp_path / "r.json"
        main(["fit", "--in", str(line_file), "--report", str(rep)])
        assert main(["report", "--in", str(rep), "--csv", str(tmp_path / "i.csv"),
                     "--plots", str(tmp_path / "plots")]) == 0
        d = read_influence_csv(tmp_path / "i.csv")
        np.testing.assert_array_equal(d["label_pred"], d["label_true"])
        assert (tmp_path / "plots" / "influence.csv").exists()
        assert (tmp_path / "plots" / "influence.gp").exists()

    def test_missing_report(self, tmp_path):
        assert main(["report", "--in", str(tmp_path / "none.json")]) == 4
