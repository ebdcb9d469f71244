import csv
import json

import pytest

from app.core import numcore
from app.core.config import CONFIG_DIR
from app.errors.exceptions import DomainError, EngineRunError, ExitCode
from app.main import main
from app.service.hvmp_service import HvmpEngine

SMOKE = str(CONFIG_DIR / "smoke.conf")


def _rows_without_wall_time(path) -> list[list[str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    wall = rows[0].index("wall_ms")
    return [row[:wall] + row[wall + 1 :] for row in rows]


class TestConfigErrors:
    """Tests for configuration failures at the command line."""

    def test_missing_config(self, tmp_path, capsys) -> None:
        """A missing config file exits with code 1 and names the path."""
        missing = tmp_path / "nope.conf"

        code = main(["run", "--config", str(missing), "--out", str(tmp_path)])

        assert code == ExitCode.CONFIG
        assert str(missing) in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys) -> None:
        """An unknown override key is rejected."""
        code = main(["run", "--config", SMOKE, "--set", "bogus=1", "--out", str(tmp_path)])

        assert code == ExitCode.CONFIG
        assert "bogus" in capsys.readouterr().err

    def test_bad_seed(self, tmp_path) -> None:
        """A negative seed is refused by the parser."""
        with pytest.raises(SystemExit):
            main(["run", "--seed", "-1", "--out", str(tmp_path)])


class TestRun:
    """Tests for the run and gen commands."""

    def test_override_is_echoed(self, tmp_path) -> None:
        """``--set t_max=1`` is honored and echoed in the summary."""
        code = main(
            ["run", "--config", SMOKE, "--set", "t_max=1", "--set", "trials=1", "--jobs", "1", "--out", str(tmp_path)],
        )

        summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
        assert code == ExitCode.OK
        assert summary["config"]["t_max"] == 1
        assert summary["command"] == "run"
        assert _rows_without_wall_time(tmp_path / "trials.csv")[1][10] == "1"

    def test_gen_then_run_instance(self, tmp_path) -> None:
        """A generated bundle can be run with ``--instance``."""
        bundle, out = tmp_path / "bundle", tmp_path / "out"

        assert main(["gen", "--config", SMOKE, "--out", str(bundle)]) == ExitCode.OK
        code = main(
            ["run", "--config", SMOKE, "--instance", str(bundle), "--set", "trials=1", "--out", str(out)],
        )

        rows = _rows_without_wall_time(out / "trials.csv")
        assert code == ExitCode.OK
        assert (bundle / "manifest.json").exists()
        assert rows[1][1:5] == ["4", "16", "12", "96"]

    def test_failed_trials_exit_code(self, tmp_path, monkeypatch) -> None:
        """Failed trials are recorded and the command exits with code 2."""

        def always_fail(self, *args, **kwargs):
            raise EngineRunError(DomainError("collapsed"), [])

        monkeypatch.setattr(HvmpEngine, "run", always_fail)

        code = main(["run", "--config", SMOKE, "--set", "trials=1", "--jobs", "1", "--out", str(tmp_path)])

        assert code == ExitCode.FAILED_TRIALS
        assert _rows_without_wall_time(tmp_path / "trials.csv")[1][8] == "nan"


class TestSweepAndBench:
    """Tests for the sweep and bench commands."""

    def test_resume_gives_identical_csv(self, tmp_path) -> None:
        """A resumed sweep reproduces the full CSV apart from timings."""
        args = ["sweep", "--config", SMOKE, "--jobs", "1", "--out", str(tmp_path)]
        assert main(args) == ExitCode.OK
        csv_path = tmp_path / "phase_transition.csv"
        full = _rows_without_wall_time(csv_path)

        lines = csv_path.read_text(encoding="utf-8").splitlines(keepends=True)
        csv_path.write_text("".join(lines[:3]), encoding="utf-8")
        assert main([*args, "--resume"]) == ExitCode.OK

        assert _rows_without_wall_time(csv_path) == full
        assert len(full) == 1 + 2 * 2 * 2

    def test_bench_writes_runtime_table(self, tmp_path) -> None:
        """The bench command writes one runtime row per K."""
        code = main(["bench", "--config", SMOKE, "--jobs", "1", "--out", str(tmp_path)])

        with (tmp_path / "runtime.csv").open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        assert code == ExitCode.OK
        assert rows[0] == ["K", "trials", "reached", "median_wall_ms", "median_iters", "status"]
        assert [row[0] for row in rows[1:]] == ["2", "4"]


class TestVerify:
    """Tests for the verify command."""

    def test_all_suites_pass(self, tmp_path, capsys) -> None:
        """The smoke-sized oracle suites pass and are all reported."""
        code = main(["verify", "--config", SMOKE, "--out", str(tmp_path)])

        out = capsys.readouterr().out
        assert code == ExitCode.OK
        for suite in ("vec_identity", "quadratic_mc", "inv_sqrt", "gaussian_consistency"):
            assert suite in out

    def test_broken_inverse_square_root(self, tmp_path, monkeypatch, capsys) -> None:
        """A perturbed inverse square root fails its suite with exit code 3."""
        original = numcore.inv_sqrt

        def perturbed(cov, name="covariance"):
            return 1.001 * original(cov, name)

        monkeypatch.setattr(numcore, "inv_sqrt", perturbed)

        code = main(["verify", "--config", SMOKE, "--suite", "inv_sqrt", "--out", str(tmp_path)])

        assert code == ExitCode.VERIFY_FAILED
        assert "FAIL inv_sqrt" in capsys.readouterr().out
