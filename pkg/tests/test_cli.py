import csv
import functools
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from svolterra import __version__
from svolterra.cli import RunConfig, UsageError, load_config, main


def write_config(tmp_path, obj):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return p


class TestConfig:
    def test_empty_object_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path, {}))
        assert (cfg.H, cfg.N, cfg.n_paths, cfg.seed) == (0.5, 256, 100, 0)
        assert cfg.tol == 1e-8 and cfg.format == "csv"

    def test_bad_h_names_field(self, tmp_path):
        with pytest.raises(UsageError) as info:
            load_config(write_config(tmp_path, {"H": 1.2}))
        assert info.value.field == "H" and "H" in str(info.value)

    def test_unknown_key(self, tmp_path):
        with pytest.raises(UsageError) as info:
            load_config(write_config(tmp_path, {"H": 0.3, "hurst": 0.3}))
        assert info.value.field == "hurst"

    @pytest.mark.parametrize("text", ["{not json", "[1, 2]"])
    def test_malformed(self, tmp_path, text):
        with pytest.raises(UsageError):
            load_config(write_config(tmp_path, text))

    def test_flags_override_file(self, tmp_path):
        cfg = load_config(write_config(tmp_path, {"H": 0.3, "N": 64}), {"H": 0.7, "seed": None})
        assert cfg.H == 0.7 and cfg.N == 64 and cfg.seed == 0

    @pytest.mark.parametrize("field, value", [("N", 2), ("N", 48), ("N", 64.0), ("n_paths", 0), ("seed", -1),
                                              ("tol", 0.0), ("format", "xml"), ("command", "plot"), ("H", True)])
    def test_invariants(self, field, value):
        with pytest.raises(UsageError) as info:
            RunConfig(**{field: value})
        assert info.value.field == field


def run_cli(args):
    return main([str(a) for a in args])


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestCommands:
    def test_fbm_example(self, tmp_path):
        out = tmp_path / "fbm"
        assert run_cli(["fbm", "--H", 0.75, "--N", 1024, "--n-paths", 100, "--seed", 7, "-o", out]) == 0
        with open(out / "fbm_paths.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "t" and len(rows[0]) == 101 and rows[0][1] == "path_7"
        assert len(rows) == 1026 and float(rows[-1][0]) == 1.0
        man = json.loads((out / "manifest.json").read_text())
        assert man["files"] == {"fbm_paths.csv": sha(out / "fbm_paths.csv")}
        assert man["seeds"] == list(range(7, 107))
        assert man["config"]["H"] == 0.75 and man["version"] == __version__
        assert man["wall_clock_s"] >= 0 and man["status"] == "ok"

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a", "b"):
            assert run_cli(["solve", "--H", 0.3, "--N", 64, "--n-paths", 5, "--seed", 3, "-o", tmp_path / name]) == 0
        for f in ("solutions.csv", "picard_diagnostics.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_config_file_and_flags(self, tmp_path):
        cfg = write_config(tmp_path, {"H": 0.3, "N": 32, "n_paths": 4})
        out = tmp_path / "o"
        assert run_cli(["fbm", "--config", cfg, "--n-paths", 2, "-o", out]) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["config"]["H"] == 0.3 and man["config"]["n_paths"] == 2

    def test_json_format(self, tmp_path):
        out = tmp_path / "j"
        assert run_cli(["fbm", "--N", 16, "--n-paths", 2, "--format", "json", "-o", out]) == 0
        data = json.loads((out / "fbm_paths.json").read_text())
        assert len(data["t"]) == 17 and set(data["columns"]) == {"path_0", "path_1"}

    def test_verify_cov_brownian(self, tmp_path):
        out = tmp_path / "vc"
        assert run_cli(["verify-cov", "--H", 0.5, "--N", 16, "--n-paths", 5000, "-o", out]) == 0
        summary = json.loads((out / "covariance_summary.json").read_text())
        assert summary["within_allowance"]
        with open(out / "covariance.csv") as fh:
            rows = list(csv.DictReader(fh))
        ref = np.array([float(r["reference"]) for r in rows])
        mins = np.array([min(float(r["s"]), float(r["t"])) for r in rows])
        np.testing.assert_allclose(ref, mins, atol=1e-15)

    @pytest.mark.parametrize("command, files", [
        ("malliavin", {"derivatives.csv", "consistency.json"}),
        ("holder", {"holder.csv", "holder_summary.json"}),
        ("kernel-dump", {"kernel_deterministic.csv", "kernel_stochastic.csv"}),
        ("solve", {"solutions.csv", "picard_diagnostics.json"}),
    ])
    def test_other_commands(self, tmp_path, command, files):
        out = tmp_path / command
        assert run_cli([command, "--H", 0.75, "--N", 64, "--n-paths", 3, "-o", out]) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert set(man["files"]) == files
        for f in files:
            assert man["files"][f] == sha(out / f)

    def test_usage_error_exit_2(self, tmp_path, capsys):
        assert run_cli(["fbm", "--H", 1.2, "-o", tmp_path / "x"]) == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["field"] == "H"

    def test_argparse_error_exit_2(self):
        with pytest.raises(SystemExit) as info:
            main(["nonsense"])
        assert info.value.code == 2

    def test_numeric_failure_exit_1(self, tmp_path, monkeypatch, capsys):
        # well-posed problems reach a floating-point fixed point, so force the cap
        import svolterra.cli as cli

        monkeypatch.setattr(cli, "SolverConfig", functools.partial(cli.SolverConfig, max_picard_iters=2))
        out = tmp_path / "fail"
        assert run_cli(["solve", "--N", 64, "--n-paths", 2, "--tol", 1e-12, "-o", out]) == 1
        rec = json.loads((out / "error.json").read_text())
        assert rec["error"] == "PicardConvergenceError"
        assert json.loads(capsys.readouterr().err.strip())["error"] == "PicardConvergenceError"
        assert json.loads((out / "manifest.json").read_text())["status"] == "error"

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run_cli(["fbm", "--N", 8, "--n-paths", 1, "-o", blocker / "sub"]) == 2

    def test_console_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "svolterra.cli", "fbm", "--N", "8", "--n-paths", "1",
                               "-o", str(tmp_path / "m")], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
