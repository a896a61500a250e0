import json

import pytest

from vlpalloc.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestBasicCommands:
    def test_crlb(self, capsys):
        code, out, err = run_cli(capsys, "crlb", "--power", "400,400,400,400")
        assert code == 0
        assert "crlb_m2: 0.004417629" in out
        assert "rmse_bound_m" in out
        assert '"scenario_sha256"' in err  # manifest on stderr

    def test_check_feasible(self, capsys):
        code, out, _ = run_cli(capsys, "check", "--power", "400,400,400,400")
        assert code == 0
        assert "feasible: True" in out

    def test_check_infeasible_exit_code(self, capsys):
        code, out, _ = run_cli(capsys, "check", "--power", "950,400,400,400")
        assert code == 2
        assert "power_box_upper[0]" in out

    def test_solve(self, capsys):
        code, out, _ = run_cli(capsys, "solve")
        assert code == 0
        assert "status: optimal" in out
        assert "p_star_w" in out

    def test_solve_infeasible_budget(self, capsys):
        code, out, _ = run_cli(capsys, "solve", "--total-power", "400")
        assert code == 2
        assert "status: infeasible" in out

    def test_worst_case_infeasible(self, capsys):
        code, out, _ = run_cli(capsys, "worst-case", "--power",
                               "400,400,400,400", "--delta", "0.5")
        assert code == 2

    def test_min_power(self, capsys):
        code, out, _ = run_cli(capsys, "min-power", "--accuracy", "0.1")
        assert code == 0
        assert "total_power_w: 536.84" in out

    def test_unknown_flag_exits_64(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["solve", "--no-such-flag"])
        assert exc.value.code == 64

    def test_missing_subcommand_exits_64(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 64


class TestArtifacts:
    def test_out_directory_with_manifest(self, tmp_path, capsys):
        out = tmp_path / "run1"
        code, _, _ = run_cli(capsys, "--out", str(out), "solve")
        assert code == 0
        result = json.loads((out / "solve.json").read_text())
        assert result["status"] == "optimal"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["version"]
        assert len(manifest["scenario_sha256"]) == 64
        assert manifest["solver"] == "CLARABEL"

    def test_rerun_reproduces_artifact(self, tmp_path, capsys):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_cli(capsys, "--out", str(out1), "--seed", "5", "experiment",
                "--protocol", "compare", "--delta", "0.1",
                "--delta-scale", "absolute", "--n-real", "3")
        run_cli(capsys, "--out", str(out2), "--seed", "5", "experiment",
                "--protocol", "compare", "--delta", "0.1",
                "--delta-scale", "absolute", "--n-real", "3")
        csv1 = (out1 / "experiment_compare.csv").read_bytes()
        csv2 = (out2 / "experiment_compare.csv").read_bytes()
        assert csv1 == csv2

    def test_illuminance_map(self, tmp_path, capsys):
        out = tmp_path / "map"
        code, _, _ = run_cli(capsys, "--out", str(out), "illuminance-map",
                             "--power", "400,400,400,400", "--grid", "5,5")
        assert code == 0
        lines = (out / "illuminance_map.csv").read_text().splitlines()
        assert lines[0] == "x_m,y_m,illuminance_lx"
        assert len(lines) == 26

    def test_sweep_csv(self, tmp_path, capsys):
        out = tmp_path / "sweep"
        code, _, _ = run_cli(capsys, "--out", str(out), "experiment",
                             "--protocol", "sweep", "--axis", "total_power",
                             "--grid", "600,1600", "--strategies",
                             "optimal,uniform")
        assert code == 0
        lines = (out / "experiment_sweep.csv").read_text().splitlines()
        assert lines[0].startswith("index,axis,value,strategy,status")
        assert len(lines) == 5


class TestRobustCommands:
    def test_robust_gamma_absolute(self, capsys):
        code, out, _ = run_cli(capsys, "robust-gamma", "--delta", "0.1")
        assert code == 0
        assert "status: optimal" in out

    def test_robust_location_trace(self, tmp_path, capsys):
        out = tmp_path / "loc"
        code, _, _ = run_cli(capsys, "--out", str(out), "robust-location",
                             "--delta-l", "0.1", "--grid", "500")
        assert code == 0
        payload = json.loads((out / "robust_location.json").read_text())
        assert payload["converged"] is True
        trace = (out / "robust_location.csv").read_text().splitlines()
        assert trace[0] == "iteration,n_candidates,rho,smoothed_m2,inner_max_m2"
        assert len(trace) >= 2
