import json
import shutil

import pytest

from cvcluster import compiler
from cvcluster.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, main, verify_manifest

QUICK_TOMOGRAPHY = "experiment = tomography-single\ngate = rotation\nvalues = 0, 45deg\nwires = 0, 1\n"


@pytest.fixture
def run_cli(tmp_path, capsys):
    def run(text, *flags, name="out"):
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(text)
        out = tmp_path / name
        status = main(["--config", str(cfg), "--out", str(out), *flags])
        captured = capsys.readouterr()
        return status, out, captured

    return run


class TestRuns:
    def test_tomography_artifacts(self, run_cli):
        status, out, _ = run_cli(QUICK_TOMOGRAPHY)
        assert status == 0
        names = {p.name for p in out.iterdir()}
        assert {"transfer.csv", "noise.csv", "epsilon.csv", "manifest.json", "noise.png", "symplectic_w0.png"} <= names
        header = (out / "transfer.csv").read_text().splitlines()[0]
        assert header == "gate,param,wire,parity,entry,value,std_error,expected"

    def test_manifest_contents(self, run_cli):
        status, out, _ = run_cli(QUICK_TOMOGRAPHY + "seed = 5\n")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 5
        assert manifest["config_sources"]["seed"] == "file"
        assert manifest["wiring"]["validated"] is True
        assert manifest["tomography_readout"] == "before-BS3"
        assert manifest["golden_tables"][compiler.GOLDEN_CZ]["version"] == 1
        assert all(verify_manifest(out).values())

    def test_tampering_detected(self, run_cli):
        _, out, _ = run_cli(QUICK_TOMOGRAPHY)
        (out / "noise.csv").write_text("edited\n")
        assert verify_manifest(out)["noise.csv"] is False

    @pytest.mark.parametrize("text", [
        "experiment = nullifiers\nK = 48\nr_values = 0.5\n",
        "experiment = tomography-cz\ng_values = 1\nwires = 0\nfigures = false\n",
        "experiment = circuit-encoder\nfigures = false\n",
        "experiment = noise-sweep\npump_grid = 0, 0.4\nphase_jitter = 2deg\njitter_samples = 5\n",
        "experiment = calibrate-D\nfigures = false\n",
        "experiment = tomography-single\nsource = opo\nvalues = 0.3\nfigures = false\n",
    ])
    def test_every_experiment_runs(self, run_cli, text):
        status, out, captured = run_cli(text)
        assert status == 0, captured.err
        assert json.loads(captured.out)["status"] == "ok"

    def test_opo_calibration_recorded(self, run_cli):
        _, out, _ = run_cli("experiment = tomography-single\nsource = opo\nvalues = 0.3\nfigures = false\n")
        cal = json.loads((out / "manifest.json").read_text())["opo_calibration"]
        assert cal["var_p_db"] == pytest.approx(-4.4, abs=1e-6)


class TestReproducibility:
    def test_byte_identical_across_runs_and_workers(self, run_cli):
        text = "experiment = tomography-single\nmode = mc\nshots = 3000\nvalues = 0.4\nwires = 1\nfigures = false\nseed = 99\n"
        _, a, _ = run_cli(text, "--workers", "1", name="a")
        _, b, _ = run_cli(text, "--workers", "1", name="b")
        _, c, _ = run_cli(text, "--workers", "8", name="c")
        for f in ("transfer.csv", "noise.csv", "epsilon.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes() == (c / f).read_bytes()

    def test_seed_changes_samples(self, run_cli):
        text = "experiment = tomography-single\nmode = mc\nshots = 2000\nvalues = 0.4\nwires = 0\nfigures = false\n"
        _, a, _ = run_cli(text + "seed = 1\n", name="a")
        _, b, _ = run_cli(text + "seed = 2\n", name="b")
        assert (a / "transfer.csv").read_bytes() != (b / "transfer.csv").read_bytes()


class TestErrors:
    def test_unknown_key_exit_code(self, run_cli):
        status, out, captured = run_cli("experiment = nullifiers\nbogus = 1\n")
        assert status == EXIT_CONFIG
        assert json.loads(captured.err)["type"] == "ConfigError"
        assert (out / "error.json").is_file()

    def test_nothing_to_do(self, capsys):
        assert main([]) == EXIT_CONFIG

    def test_numeric_failure_exit_code(self, run_cli):
        status, _, captured = run_cli("experiment = tomography-single\nvalues = 0.1\nprobes_per_parity = 0\n")
        assert status == EXIT_NUMERIC
        assert json.loads(captured.err)["type"] == "DivisionDegenerate"

    def test_flag_overrides(self, run_cli):
        status, out, _ = run_cli("experiment = nullifiers\nK = 48\nr_values = 0.5\nfigures = false\n", "--mode", "mc", "--shots", "500", "--seed", "3")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["shots"] == 500
        assert manifest["config_sources"]["mode"] == "flag"


class TestCheck:
    def test_corrupted_golden_fails_by_name(self, tmp_path, monkeypatch, capsys):
        from cvcluster import acceptance

        golden = tmp_path / "golden"
        shutil.copytree(compiler.data_dir(), golden)
        table = json.loads((golden / compiler.GOLDEN_CZ).read_text())
        key = next(iter(table["entries"]))
        table["entries"][key]["noise_factors"][0] += 0.01
        (golden / compiler.GOLDEN_CZ).write_text(json.dumps(table))
        monkeypatch.setenv(compiler.GOLDEN_ENV, str(golden))
        compiler.clear_golden_cache()
        try:
            monkeypatch.setattr(acceptance, "QUICK", (5,))
            status = main(["--check", "--quick", "--out", str(tmp_path / "check")])
        finally:
            monkeypatch.delenv(compiler.GOLDEN_ENV)
            compiler.clear_golden_cache()
        out = capsys.readouterr().out
        assert status == EXIT_CHECK
        assert "FAIL" in out and compiler.GOLDEN_CZ in out
        report = json.loads((tmp_path / "check" / "acceptance.json").read_text())
        assert report[0]["criterion"] == 5 and not report[0]["passed"]
