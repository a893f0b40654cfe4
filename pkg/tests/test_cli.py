import json
import os

import numpy as np
import pytest

from fishervi.cli import (
    ConfigError,
    build_model,
    load_config,
    main,
    parse_config_text,
)


@pytest.fixture
def gaussian_setup(tmp_path, rng):
    d = 4
    a = rng.standard_normal((d, d))
    lamb = a @ a.T + 2 * np.eye(d)
    nu = rng.standard_normal(d)
    np.savetxt(tmp_path / "nu.csv", nu, delimiter=",")
    np.savetxt(tmp_path / "lambda.csv", lamb, delimiter=",")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# gaussian smoke config\n"
        "model.kind = gaussian\n"
        "model.nu_csv = nu.csv\n"
        "model.lambda_csv = lambda.csv\n"
        "divergence = KLD\n"
        "optimizer.max_iter = 1500\n"
        "optimizer.window = 300\n"
    )
    return cfg, nu, lamb


class TestConfigParsing:
    def test_flat_key_values(self):
        cfg = parse_config_text("a.b = 1\n# comment\nc = hello  # trailing\n\n")
        assert cfg == {"a.b": "1", "c": "hello"}

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("not a key value\n")

    def test_missing_file_named(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.cfg")

    def test_missing_data_file_named(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("model.kind = gaussian\nmodel.nu_csv = ghost.csv\n"
                       "model.lambda_csv = ghost.csv\ndivergence = KLD\n")
        with pytest.raises(ConfigError, match="ghost.csv"):
            build_model(load_config(cfg))


class TestFitCommand:
    def test_run_writes_artifacts_and_exit_zero(self, gaussian_setup, tmp_path):
        cfg, nu, lamb = gaussian_setup
        out = tmp_path / "out"
        rc = main(["fit", "--config", str(cfg), "--seed", "11", "--out", str(out)])
        assert rc == 0
        assert (out / "fitresult.json").exists()
        assert (out / "lb_trace.csv").exists()
        doc = json.loads((out / "fitresult.json").read_text())
        assert doc["divergence"] == "KLD"
        assert doc["seed"] == 11

    def test_rerun_same_seed_identical_bytes(self, gaussian_setup, tmp_path):
        cfg, _, _ = gaussian_setup
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["fit", "--config", str(cfg), "--seed", "5", "--out", str(out1)]) == 0
        assert main(["fit", "--config", str(cfg), "--seed", "5", "--out", str(out2)]) == 0
        assert (out1 / "fitresult.json").read_bytes() == \
            (out2 / "fitresult.json").read_bytes()

    def test_missing_file_nonzero_exit(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("model.kind = gaussian\nmodel.nu_csv = missing_nu.csv\n"
                       "model.lambda_csv = missing_nu.csv\ndivergence = KLD\n")
        rc = main(["fit", "--config", str(cfg), "--seed", "1",
                   "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "missing_nu.csv" in capsys.readouterr().err

    def test_sweep(self, gaussian_setup, tmp_path):
        cfg, _, _ = gaussian_setup
        text = cfg.read_text() + "seed = 2\noutput_dir = " + \
            str(tmp_path / "sweep_out") + "\n"
        c2 = tmp_path / "run2.cfg"
        c2.write_text(text)
        assert main(["sweep", str(c2), "--workers", "2"]) == 0
        assert (tmp_path / "sweep_out" / "fitresult.json").exists()


class TestCompareCommand:
    def test_compare_outputs(self, gaussian_setup, tmp_path, rng):
        cfg, nu, lamb = gaussian_setup
        out = tmp_path / "fitout"
        main(["fit", "--config", str(cfg), "--seed", "4", "--out", str(out)])
        cov = np.linalg.inv(lamb)
        draws = nu + rng.standard_normal((1500, nu.size)) @ np.linalg.cholesky(cov).T
        ref = tmp_path / "ref.csv"
        with open(ref, "w") as fh:
            fh.write(",".join(f"v{i}" for i in range(nu.size)) + "\n")
            np.savetxt(fh, draws, delimiter=",")
        cmp_out = tmp_path / "cmp"
        rc = main(["compare", "--fit", str(out / "fitresult.json"),
                   "--ref", str(ref), "--seed", "3", "--replicates", "4",
                   "--out", str(cmp_out), ])
        assert rc == 0
        report = json.loads((cmp_out / "comparison.json").read_text())
        assert len(report["mstar_values"]) == 4
        assert (cmp_out / "comparison.csv").exists()


class TestAnalysisCommands:
    def test_meanfield_command(self, tmp_path):
        lamb = np.array([[1.0, 0.5], [0.5, 1.0]])
        np.savetxt(tmp_path / "lam.csv", lamb, delimiter=",")
        out = tmp_path / "mf"
        rc = main(["meanfield", "--lambda-csv", str(tmp_path / "lam.csv"),
                   "--out", str(out), "--region-sweep", "--region-step", "0.5"])
        assert rc == 0
        lines = (out / "meanfield.csv").read_text().splitlines()
        assert lines[0] == "divergence,coordinate,sigma,kkt_case"
        assert len(lines) == 1 + 3 * 2
        assert (out / "sd_fd_regions.csv").exists()

    def test_unilab_command(self, tmp_path):
        out = tmp_path / "uni"
        rc = main(["unilab", "--target", "log_inv_gamma", "--param", "a1=3.0",
                   "--param", "b1=20.0", "--out", str(out)])
        assert rc == 0
        lines = (out / "unilab.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 * 4  # three divergences, four metrics

    def test_recursion_command(self, tmp_path):
        out = tmp_path / "rec"
        rc = main(["recursion", "--dim", "3", "--beta", "0.8", "--t-max", "60",
                   "--seed", "2", "--out", str(out)])
        assert rc == 0
        lines = (out / "recursion.csv").read_text().splitlines()
        assert len(lines) == 62  # header + t = 0..60
        last = [float(v) for v in lines[-1].split(",")]
        assert last[1] < 1e-3  # eps norm nearly gone after 60 steps

    def test_gradvar_command(self, tmp_path):
        out = tmp_path / "gv"
        rc = main(["gradvar", "--draws", "60", "--out", str(out), "--seed", "1"])
        assert rc == 0
        lines = (out / "gradient_sd.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 * 49
