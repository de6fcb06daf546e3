import json

import pytest
import yaml

from adasub.cli import (
    ConfigError,
    load_config,
    main,
    run_suite,
)

SMALL_CONFIG = {
    "seed": 99,
    "trials": 2,
    "n": 40,
    "population": {"name": "bernoulli", "p": 0.3},
    "mechanism": {"name": "subsampling-sq", "tau": 0.4, "delta": 0.2},
    "analyst": {"name": "fixed", "queries": ["identity"]},
}


def write_config(tmp_path, overrides=None, name="cfg.yaml"):
    cfg = dict(SMALL_CONFIG)
    if overrides:
        cfg.update(overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestLoadConfig:
    def test_valid(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.seed == 99 and cfg.trials == 2 and cfg.n == 40

    def test_unknown_top_key_named(self, tmp_path):
        path = write_config(tmp_path, {"fastapi": True})
        with pytest.raises(ConfigError, match="fastapi"):
            load_config(path)

    def test_missing_key_named(self, tmp_path):
        cfg = dict(SMALL_CONFIG)
        del cfg["analyst"]
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(cfg))
        with pytest.raises(ConfigError, match="analyst"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")


class TestRunCommand:
    def test_run_writes_csv_and_summary(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "report.csv"
        assert main(["run", str(cfg), "--out", str(out)]) == 0
        text = out.read_text()
        header = text.splitlines()[0]
        assert header == ("trial,t,query_id,mechanism,answer,sample_value,"
                          "truth,bias,threshold,within_bound,cost")
        assert (tmp_path / "report.csv.summary.json").exists()
        summary = json.loads((tmp_path / "report.csv.summary.json").read_text())
        assert summary["mechanism"] == "subsampling-sq"
        assert "wrote" in capsys.readouterr().out

    def test_unknown_mechanism_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"mechanism": {"name": "magic"}})
        assert main(["run", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
        assert "magic" in capsys.readouterr().err

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"zzz": 1})
        assert main(["run", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
        assert "zzz" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["run", str(cfg), "--out", str(a)]) == 0
        assert main(["run", str(cfg), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_override_changes_report(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["run", str(cfg), "--out", str(a)]) == 0
        assert main(["run", str(cfg), "--out", str(b), "--seed", "100"]) == 0
        ta, tb = a.read_text(), b.read_text()
        assert ta != tb
        assert ta.splitlines()[0] == tb.splitlines()[0]
        assert len(ta.splitlines()) == len(tb.splitlines())

    def test_out_dir_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ADASUB_OUT_DIR", str(tmp_path / "outs"))
        cfg = write_config(tmp_path)
        assert main(["run", str(cfg)]) == 0
        assert (tmp_path / "outs" / "run-99.csv").exists()

    def test_threads_flag_keeps_output(self, tmp_path):
        cfg = write_config(tmp_path, {"trials": 3})
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["run", str(cfg), "--out", str(a)]) == 0
        assert main(["run", str(cfg), "--out", str(b), "--threads", "3"]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestVerifyCommand:
    @pytest.mark.parametrize("suite,trials", [
        ("chi2-stability", 60),
        ("var-contraction", 80),
        ("var-contraction-linear-equality", 40),
        ("kl-chi2", 200),
        ("kl-mixture", 200),
        ("exceeds-mean", 20000),
    ])
    def test_suites_pass(self, suite, trials, capsys):
        assert main(["verify", suite, "--trials", str(trials), "--seed", "5"]) == 0
        out = capsys.readouterr().out
        assert "pass" in out

    def test_unknown_suite_exit_2(self, capsys):
        assert main(["verify", "nonsense"]) == 2
        assert "nonsense" in capsys.readouterr().err

    def test_linear_equality_reports_max_dev(self, capsys):
        assert main(["verify", "var-contraction-linear-equality",
                     "--trials", "30"]) == 0
        assert "max_dev" in capsys.readouterr().out

    def test_failure_pinpoints_instance(self, capsys):
        # a suite over a broken verifier is simulated by running the real
        # suite with an impossible tolerance via monkeypatching; instead,
        # check the reporting path on a crafted failing result
        from adasub.cli import SuiteResult, EXIT_FAILURE, cmd_verify
        import argparse
        import adasub.cli as cli

        def fake_suite(name, trials=None, seed=1):
            return SuiteResult("fake", 1, failures=["instance 0: dataset=[1,2]"])

        orig = cli.run_suite
        cli.run_suite = fake_suite
        try:
            args = argparse.Namespace(suite="fake", trials=None, seed=1)
            assert cmd_verify(args) == EXIT_FAILURE
        finally:
            cli.run_suite = orig
        assert "counterexample" in capsys.readouterr().out

    def test_run_suite_api(self):
        res = run_suite("var-contraction", trials=25, seed=3)
        assert res.passed and res.instances == 25


class TestParamsCommand:
    def test_sq_table(self, capsys):
        assert main(["params", "--n", "15000", "--T", "1000",
                     "--tau", "0.1", "--delta", "0.1"]) == 0
        out = capsys.readouterr().out
        assert "8478" in out
        assert "epsilon" in out
        assert "MI upper bound" in out

    def test_tau_one_exit_2(self, capsys):
        assert main(["params", "--n", "100", "--T", "10",
                     "--tau", "1.0", "--delta", "0.1"]) == 2

    def test_median_table(self, capsys):
        assert main(["params", "--median", "--T", "100", "--rmax", "1024",
                     "--delta", "0.05"]) == 0
        assert "85" in capsys.readouterr().out

    def test_median_missing_flag_exit_2(self, capsys):
        assert main(["params", "--median", "--T", "100"]) == 2
