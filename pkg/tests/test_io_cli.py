import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import make_data
from esb import io
from esb.cli import main
from esb.core import Dataset, HyperParams
from esb.errors import DimensionMismatch, InputError
from esb.search import ChainConfig, run_chain


def _write_csv(path, d: Dataset):
    header = ",".join(["y"] + [f"x{j + 1}" for j in range(d.p)])
    rows = [",".join(repr(float(v)) for v in np.r_[d.y[i], d.X[i]]) for i in range(d.n)]
    path.write_text("\n".join([header] + rows) + "\n")
    return path


class TestReaders:
    def test_csv_roundtrip(self, tmp_path):
        d = make_data(12, 3, [1.0, 0.0, 2.0])
        out = io.read_csv_dataset(_write_csv(tmp_path / "d.csv", d))
        assert np.array_equal(out.X, d.X) and np.array_equal(out.y, d.y)

    def test_ragged_row_named(self, tmp_path):
        f = tmp_path / "r.csv"
        f.write_text("y,x1,x2\n1,2,3\n4,5\n")
        with pytest.raises(InputError, match="row 3"):
            io.read_csv_dataset(f)

    def test_non_numeric(self, tmp_path):
        f = tmp_path / "n.csv"
        f.write_text("y,x1\n1,abc\n")
        with pytest.raises(InputError, match="non-numeric"):
            io.read_csv_dataset(f)

    def test_matrix_width(self, tmp_path):
        f = tmp_path / "m.csv"
        f.write_text("a,b\n1,2\n")
        with pytest.raises(DimensionMismatch):
            io.read_csv_matrix(f, 3)

    def test_bin_roundtrip(self, tmp_path):
        d = make_data(9, 4, [1.0, 0.0, 0.0, -1.0])
        io.write_bin_dataset(d, tmp_path / "d.bin")
        out = io.read_bin_dataset(tmp_path / "d.bin")
        assert np.array_equal(out.X, d.X) and np.array_equal(out.y, d.y)
        raw = (tmp_path / "d.bin").read_bytes()
        assert raw[:4] == b"ESB1" and len(raw) == 20 + 8 * 9 * 5

    def test_bin_bad_magic_and_length(self, tmp_path):
        d = make_data(5, 2, [1.0, 0.0])
        io.write_bin_dataset(d, tmp_path / "d.bin")
        raw = (tmp_path / "d.bin").read_bytes()
        (tmp_path / "m.bin").write_bytes(b"XXXX" + raw[4:])
        (tmp_path / "t.bin").write_bytes(raw[:-8])
        with pytest.raises(InputError, match="magic"):
            io.read_bin_dataset(tmp_path / "m.bin")
        with pytest.raises(InputError, match="bytes"):
            io.read_bin_dataset(tmp_path / "t.bin")

    def test_hyper_strict(self, tmp_path):
        f = tmp_path / "h.json"
        f.write_text(json.dumps({"schema_version": "1", "alpha": 0.9, "R": 3}))
        h = io.read_hyperparams(f)
        assert h.alpha == 0.9 and h.R == 3
        f.write_text(json.dumps({"alpha": 0.9, "beta": 1}))
        with pytest.raises(InputError):
            io.read_hyperparams(f)

    def test_bundled(self):
        d = io.read_dataset("@tiny")
        assert (d.n, d.p) == (20, 5)

    def test_samples_roundtrip(self, tmp_path, small_data):
        s = run_chain(small_data, HyperParams(), ChainConfig(n_iter=300, burn_in=50, seed=2))
        io.write_samples_jsonl(s, tmp_path / "s.jsonl")
        back = io.read_samples_jsonl(tmp_path / "s.jsonl", 6)
        assert back.models == s.models
        assert np.array_equal(back.beta_matrix(), s.beta_matrix())


class TestCli:
    def test_fit_and_enumerate_agree(self, tmp_path):
        assert main(["fit", "--data", "@tiny", "--seed", "7", "--n-iter", "30000", "--burn-in", "2000",
                     "--out", str(tmp_path / "fit")]) == 0
        assert main(["enumerate", "--data", "@tiny", "--out", str(tmp_path / "e.json")]) == 0
        fit = json.loads((tmp_path / "fit" / "summary.json").read_text())
        enu = json.loads((tmp_path / "e.json").read_text())
        assert np.allclose(fit["inclusion_probabilities"], enu["inclusion_probabilities"], atol=0.02)
        assert fit["map_model"] == enu["map_model"] == [0, 2]
        for doc in (fit, enu):
            assert {"schema_version", "software_version", "command", "config"} <= set(doc)
        lines = (tmp_path / "fit" / "samples.jsonl").read_text().splitlines()
        assert len(lines) == fit["n_draws"] == 28000

    def test_enumeration_guard_exit(self, tmp_path):
        d = make_data(60, 40, np.r_[1.0, np.zeros(39)])
        f = _write_csv(tmp_path / "w.csv", d)
        assert main(["enumerate", "--data", str(f), "--R", "10", "--out", str(tmp_path / "e.json")]) == 4

    def test_singular_init_exit(self, tmp_path):
        d = make_data(20, 3, [1.0, 0.0, 0.0])
        X = d.X.copy()
        X[:, 2] = X[:, 0]
        f = _write_csv(tmp_path / "s.csv", Dataset(d.y, X))
        c = tmp_path / "c.json"
        c.write_text(json.dumps({"n_iter": 100, "burn_in": 10, "init_model": [0, 2]}))
        assert main(["fit", "--data", str(f), "--chain", str(c), "--out", str(tmp_path / "o")]) == 3

    def test_input_error_exit(self, tmp_path, capsys):
        f = tmp_path / "r.csv"
        f.write_text("y,x1,x2\n1,2,3\n4,5\n")
        assert main(["enumerate", "--data", str(f), "--out", str(tmp_path / "e.json")]) == 2
        assert "row 3" in capsys.readouterr().err
        assert main(["enumerate", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "e.json")]) == 2

    def test_single_predictor(self, tmp_path):
        d = make_data(15, 1, [2.0])
        f = _write_csv(tmp_path / "one.csv", d)
        assert main(["enumerate", "--data", str(f), "--out", str(tmp_path / "e.json")]) == 0
        doc = json.loads((tmp_path / "e.json").read_text())
        assert len(doc["models"]) == 2
        assert sum(m["probability"] for m in doc["models"]) == pytest.approx(1.0)

    def test_predict(self, tmp_path):
        xt = tmp_path / "xt.csv"
        xt.write_text("x1,x2,x3,x4,x5\n1,0,0,0,0\n0,0,1,0,0\n0.5,0.5,0.5,0.5,0.5\n")
        assert main(["predict", "--data", "@tiny", "--xtilde", str(xt), "--level", "0.9",
                     "--out", str(tmp_path / "p.json")]) == 0
        doc = json.loads((tmp_path / "p.json").read_text())
        assert doc["config"]["source"] == "enumeration" and len(doc["rows"]) == 3
        for r in doc["rows"]:
            assert all(np.isfinite([r["mean"], r["lower"], r["upper"]]))
            assert r["lower"] < r["mean"] < r["upper"]

    def test_check_theory(self, tmp_path):
        assert main(["check-theory", "--n-mc", "20000", "--data", "@tiny", "--out", str(tmp_path / "t.json")]) == 0
        doc = json.loads((tmp_path / "t.json").read_text())
        assert doc["all_passed"] is True
        assert len(doc["tail_checks"]) == 36 and len(doc["kappa"]) == 3

    def test_simulate_small_grid(self, tmp_path):
        assert main(["simulate", "--config", "@small_grid", "--workers", "1", "--out", str(tmp_path / "s")]) == 0
        doc = json.loads((tmp_path / "s" / "report.json").read_text())
        assert [a["label"] for a in doc["aggregates"]] == ["small-iid", "small-ar1"]
        assert all(a["failures"] == 0 for a in doc["aggregates"])

    def test_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "esb", "--version"], capture_output=True, text=True)
        assert out.returncode == 0 and "0.1.0" in out.stdout
