import io
import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from firstexit import RunConfig, parse_config, read_samples, write_samples
from firstexit import cli
from firstexit.experiments import standard_model
from firstexit.io import ConfigError, dump_config
from firstexit.marginal import ExitTimeSamples
from firstexit.numerics import NonConvergenceError

LOG5 = math.log(5.0)


def config_doc(n_dims=2, mu=0.0, rho=0.1, **run):
    doc = standard_model(n_dims, mu, rho).to_dict()
    if run:
        doc["run"] = run
    return doc


@pytest.fixture
def write_config(tmp_path):
    def make(doc, name="model.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)
    return make


class TestConfig:
    def test_round_trip_is_canonical(self):
        text = json.dumps(config_doc(3, 0.0, 0.1, method="euler", scenarios=10, seed=3))
        cfg = parse_config(text)
        assert parse_config(dump_config(cfg)) == cfg
        assert dump_config(parse_config(dump_config(cfg))) == dump_config(cfg)

    @given(st.floats(-0.5, 0.0), st.floats(-0.9, 0.9), st.integers(1, 10 ** 7),
           st.integers(0, 2 ** 31), st.floats(0.5, 50.0))
    def test_round_trip_property(self, mu, rho, n, seed, horizon):
        cfg = RunConfig(standard_model(2, mu, rho), scenarios=n, seed=seed, horizon=horizon)
        assert parse_config(dump_config(cfg)) == cfg

    def test_defaults(self):
        cfg = parse_config(json.dumps(config_doc()))
        assert (cfg.method, cfg.scenarios, cfg.seed, cfg.horizon, cfg.step) == \
            ("copula", 100000, 0, 10.0, 0.0015625)

    def test_single_dimension_without_corr(self):
        doc = {"dims": [{"mu": 0.0, "sigma": 1.0, "x0": 1.0, "barrier": 0.0}]}
        assert parse_config(json.dumps(doc)).model.n_dims == 1

    @pytest.mark.parametrize("mutate, field", [
        (lambda d: d["dims"][0].pop("sigma"), "dims[0]"),
        (lambda d: d["dims"][1].update(extra=1), "dims[1]"),
        (lambda d: d.update(dims=[]), "dims"),
        (lambda d: d.update(corr=[[1.0, 0.2], [0.3, 1.0]]), "corr"),
        (lambda d: d.pop("corr"), "corr"),
        (lambda d: d.update(run={"method": "magic"}), "run.method"),
        (lambda d: d.update(run={"scenarios": 0}), "run.scenarios"),
        (lambda d: d.update(run={"horizon": -1}), "run.horizon"),
        (lambda d: d.update(run={"step": 20.0}), "run.step"),
        (lambda d: d.update(run={"speed": 1}), "run"),
    ])
    def test_field_level_errors(self, mutate, field):
        doc = config_doc()
        mutate(doc)
        with pytest.raises(ConfigError) as info:
            parse_config(json.dumps(doc))
        assert info.value.field == field

    def test_invalid_json(self):
        with pytest.raises(ConfigError, match="invalid JSON"):
            parse_config("{")


class TestSampleFiles:
    def test_round_trip_with_inf(self, tmp_path):
        t = np.array([[1.5, np.inf], [0.1 + 0.2, 7.0], [np.inf, np.inf]])
        path = str(tmp_path / "s.csv")
        write_samples(path, ExitTimeSamples(t))
        text = open(path).read()
        assert text.splitlines()[0] == "tau_1,tau_2"
        assert "inf" in text
        np.testing.assert_array_equal(read_samples(path).times, t)

    def test_stream_target(self):
        buf = io.StringIO()
        write_samples(buf, ExitTimeSamples(np.array([[2.0]])))
        assert buf.getvalue() == "tau_1\n2.0\n"

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ConfigError):
            read_samples(str(path))


class TestCli:
    def test_sample_and_byte_identical_reruns(self, write_config, tmp_path, capsys):
        cfg = write_config(config_doc())
        outs = []
        for k in range(2):
            out = str(tmp_path / f"s{k}.csv")
            assert cli.main(["-q", "sample", "--config", cfg, "--n", "2000", "--seed", "5",
                             "--out", out]) == cli.EXIT_OK
            outs.append(open(out, "rb").read())
        assert outs[0] == outs[1]
        captured = capsys.readouterr()
        assert captured.out.startswith("count,probability\nP2,")
        assert "P2 = " in captured.err
        other = str(tmp_path / "other.csv")
        cli.main(["-q", "sample", "--config", cfg, "--n", "2000", "--seed", "6", "--out", other])
        assert open(other, "rb").read() != outs[0]

    def test_report_and_default_probs(self, write_config, tmp_path, capsys):
        cfg = write_config(config_doc())
        out, rep = str(tmp_path / "s.csv"), str(tmp_path / "r.json")
        cli.main(["-q", "sample", "--config", cfg, "--n", "3000", "--out", out, "--report", rep])
        doc = json.load(open(rep))
        assert math.fsum(doc["probs"]) == pytest.approx(1.0, abs=1e-12)
        assert doc["config"]["run"]["scenarios"] == 3000
        capsys.readouterr()
        assert cli.main(["default-probs", out, "--horizon", "10"]) == cli.EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "count,probability" and len(lines) == 4
        assert float(lines[1].split(",")[1]) == pytest.approx(doc["probs"][2], abs=1e-6)

    def test_calibrate_then_sample_with_copula(self, write_config, tmp_path):
        cfg = write_config(config_doc(rho=0.5))
        cop = str(tmp_path / "cop.json")
        assert cli.main(["-q", "calibrate", "--config", cfg, "--out", cop]) == cli.EXIT_OK
        sigma = np.array(json.load(open(cop))["sigma"])
        assert 0.3 < sigma[0, 1] < 0.5
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        cli.main(["-q", "sample", "--config", cfg, "--copula", cop, "--n", "500", "--out", a])
        cli.main(["-q", "sample", "--config", cfg, "--n", "500", "--out", b])
        assert open(a).read() == open(b).read()

    def test_euler_and_kstest(self, write_config, tmp_path, capsys):
        cfg = write_config(config_doc(mu=-0.05))
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        assert cli.main(["-q", "euler", "--config", cfg, "--n", "300", "--step", "0.01",
                         "--out", a]) == cli.EXIT_OK
        cli.main(["-q", "euler", "--config", cfg, "--n", "300", "--step", "0.01", "--seed", "1",
                  "--out", b])
        capsys.readouterr()
        assert cli.main(["kstest", a, b, "--permutations", "19"]) == cli.EXIT_OK
        header, row = capsys.readouterr().out.splitlines()
        assert header.startswith("statistic,p_value,decision")
        assert row.split(",")[2] in ("H0", "H1")

    def test_density_grid(self, write_config, tmp_path):
        cfg = write_config(config_doc(rho=0.5))
        out = str(tmp_path / "f.csv")
        assert cli.main(["-q", "density", "--config", cfg, "--grid", "0.5,5,4",
                         "--out", out]) == cli.EXIT_OK
        rows = open(out).read().splitlines()
        assert rows[0] == "s,t,density" and len(rows) == 17
        vals = [float(r.split(",")[2]) for r in rows[1:]]
        assert all(v >= 0 for v in vals) and max(vals) > 0

    def test_invalid_config_exit_code(self, write_config, capsys):
        doc = config_doc()
        doc["dims"][0]["sigma"] = -1.0
        assert cli.main(["sample", "--config", write_config(doc)]) == cli.EXIT_INVALID
        assert "error:" in capsys.readouterr().err

    def test_drifted_three_dimensions_rejected(self, write_config, capsys):
        cfg = write_config(config_doc(3, mu=-0.05))
        assert cli.main(["-q", "sample", "--config", cfg, "--n", "10"]) == cli.EXIT_INVALID
        assert "limited to two coordinates" in capsys.readouterr().err

    def test_bad_grid(self, write_config):
        cfg = write_config(config_doc())
        assert cli.main(["-q", "density", "--config", cfg, "--grid", "5,1,3"]) == \
            cli.EXIT_INVALID

    def test_nonconvergence_exit_code(self, write_config, monkeypatch):
        def boom(*a, **k):
            raise NonConvergenceError("series cap")

        monkeypatch.setattr(cli, "sample", boom)
        cfg = write_config(config_doc())
        assert cli.main(["-q", "sample", "--config", cfg, "--n", "10"]) == \
            cli.EXIT_NONCONVERGENCE

    def test_reproduce_mismatch_exit_code(self, tmp_path, capsys):
        out = str(tmp_path / "rep.txt")
        code = cli.main(["-q", "reproduce", "8", "--n", "2000", "--out", out])
        text = capsys.readouterr().out
        assert code in (cli.EXIT_OK, cli.EXIT_MISMATCH)
        assert code == (cli.EXIT_OK if "overall: PASS" in text else cli.EXIT_MISMATCH)
        for label, ref in zip(("P3", "P2", "P1", "P0"),
                              ("0.257971", "0.395472", "0.267637", "0.078920")):
            assert any(line.startswith(label) and ref in line for line in text.splitlines())
        assert open(out).read() == text

    def test_unknown_case(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["reproduce", "9"])
        assert info.value.code == 2

    def test_console_script(self):
        exe = shutil.which("firstexit")
        cmd = [exe] if exe else [sys.executable, "-m", "firstexit.cli"]
        proc = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.strip()
