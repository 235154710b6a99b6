import csv
import json

import numpy as np
import pytest

from hilbert_tikhonov import cli, harness
from hilbert_tikhonov.rkhs import effective_dimension
from hilbert_tikhonov.testbed import TestbedSpec

MINI = {
    "testbed": {"n": 24, "a": 1.0, "mu_law": {"kind": "polynomial", "mu0": 1.0, "b": 0.5}},
    "op": {"kind": "hammerstein", "p": 1.0, "c": 0.1},
    "noise": {"kind": "gaussian", "sigma": 0.1, "M": 0.4, "Sigma": 0.2},
    "q": 2.0,
    "b": 0.5,
    "rule": "poly",
    "m_grid": [50, 100, 200, 400],
    "trials_per_m": 3,
    "restarts": 1,
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(MINI))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestGrid:
    def test_log_grid(self):
        np.testing.assert_allclose(cli.parse_lambda_grid("1e-5:1e-1:log20"), np.logspace(-5, -1, 20))

    def test_linear_and_list(self):
        np.testing.assert_allclose(cli.parse_lambda_grid("0.1:0.5:5"), [0.1, 0.2, 0.3, 0.4, 0.5])
        np.testing.assert_allclose(cli.parse_lambda_grid("0.1,0.01"), [0.1, 0.01])

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            cli.parse_lambda_grid("1:0.1:log5")


class TestEffdim:
    def test_table(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"n": 200, "a": 1.0, "mu_law": {"kind": "polynomial", "mu0": 1.0, "b": 0.5}}))
        out = tmp_path / "effdim.csv"
        code = cli.main(["effdim", "--spec", str(spec), "--lambda-grid", "1e-5:1e-1:log20", "--out", str(out)])
        assert code == 0
        rows = read_csv(out)
        assert rows[0] == ["lambda", "n_eff", "trivial_bound", "regime_fit"]
        assert len(rows) == 21
        mu = TestbedSpec().mu
        for lam, n_eff, bound, fit in rows[1:]:
            assert float(n_eff) == pytest.approx(effective_dimension(mu, float(lam)), rel=1e-14)
            assert float(n_eff) < float(bound)
            assert np.isfinite(float(fit))

    def test_out_dir_prefix(self, tmp_path):
        code = cli.main(["effdim", "--out-dir", str(tmp_path), "--lambda-grid", "1e-4:1e-1:log6"])
        assert code == 0 and (tmp_path / "effdim.csv").exists()


class TestSolve:
    def test_writes_result(self, tmp_path):
        for name, payload in [("t.json", MINI["testbed"]), ("o.json", MINI["op"]), ("n.json", MINI["noise"])]:
            (tmp_path / name).write_text(json.dumps(payload))
        out = tmp_path / "solve.json"
        argv = [
            "solve", "--testbed", str(tmp_path / "t.json"), "--op", str(tmp_path / "o.json"),
            "--noise", str(tmp_path / "n.json"), "--m", "500", "--rule", "poly",
            "--p", "1", "--q", "2", "--b", "0.5", "--seed", "7", "--out", str(out),
        ]  # fmt: skip
        assert cli.main(argv) == 0
        res = json.loads(out.read_text())
        assert res["lambda"] == pytest.approx(500**-0.5)
        assert res["converged"] and len(res["f_hat"]) == 24
        assert cli.main(argv) == 0
        assert json.loads(out.read_text()) == res


class TestDiagnose:
    def test_csv(self, config_file, tmp_path):
        out = tmp_path / "diag.csv"
        argv = ["diagnose", "--config", str(config_file), "--trials", "100", "--eta", "0.1",
                "--m", "300", "--lambda", "0.05", "--out", str(out)]  # fmt: skip
        assert cli.main(argv) == 0
        rows = read_csv(out)
        assert rows[0] == ["trial", "theta_z", "psi_x", "gamma_x", "psi_hs"]
        assert len(rows) == 1 + 100 + 2
        assert rows[-2][0] == "quantile" and rows[-1][0] == "bound"
        theta = np.array([float(r[1]) for r in rows[1:101]])
        assert float(rows[-2][1]) == pytest.approx(np.quantile(theta, 0.9))


class TestRates:
    def test_study_outputs(self, config_file, tmp_path):
        code = cli.main(["rates", "--config", str(config_file), "--out-dir", str(tmp_path), "--seed", "3"])
        summary = json.loads((tmp_path / "rates.json").read_text())
        assert code == (0 if summary["passed"] else 2)
        assert (tmp_path / "rates.csv").exists() and (tmp_path / "rates.svg").exists()
        assert len(read_csv(tmp_path / "rates.csv")) == 5

    def test_rerun_byte_identical(self, config_file, tmp_path):
        for sub in ("a", "b"):
            cli.main(["rates", "--config", str(config_file), "--out-dir", str(tmp_path / sub), "--seed", "5"])
        assert (tmp_path / "a" / "rates.csv").read_bytes() == (tmp_path / "b" / "rates.csv").read_bytes()
        assert (tmp_path / "a" / "rates.svg").read_bytes() == (tmp_path / "b" / "rates.svg").read_bytes()

    def test_failed_check_exit_code(self, config_file, tmp_path, monkeypatch):
        real = harness.run_rate_study

        def failing(cfg, workers=1):
            rep = real(cfg, workers)
            rep.theoretical = 10.0
            return rep

        monkeypatch.setattr(harness, "run_rate_study", failing)
        assert cli.main(["rates", "--config", str(config_file), "--out-dir", str(tmp_path)]) == 2


class TestSaturation:
    def test_runs_two_arms(self, tmp_path):
        cfg = dict(MINI, q=3.0, rule="trivial", trials_per_m=2)
        path = tmp_path / "sat.json"
        path.write_text(json.dumps(cfg))
        code = cli.main(["saturation", "--config", str(path), "--out-dir", str(tmp_path), "--seeds", "0", "1"])
        report = json.loads((tmp_path / "saturation.json").read_text())
        assert len(report["seeds"]) == 2
        assert code == (0 if report["passed"] else 2)
        assert (tmp_path / "rates_identity_seed1.csv").exists()


class TestErrors:
    def test_missing_config(self, tmp_path):
        assert cli.main(["rates", "--config", str(tmp_path / "nope.json")]) == 1

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(dict(MINI, q=9.0)))
        assert cli.main(["rates", "--config", str(path)]) == 1

    def test_unknown_subcommand(self):
        assert cli.main(["frobnicate"]) == 1

    def test_help_is_success(self, capsys):
        assert cli.main(["--help"]) == 0
        assert "effdim" in capsys.readouterr().out
