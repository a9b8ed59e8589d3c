"""Integration tests for the command-line front end.

Commands run in-process through ``main`` with small problems so the whole
module stays fast; exit codes and file contents are the contract under test.
"""
import csv
import json

import numpy as np
import pytest

from sgopt.cli import RECORD_HEADER, _parse_range, main


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


SMALL_VALIDATE = {
    "n": 2,
    "horizon": 15,
    "actuation": {"m": 1},
    "preset": {"upright_perturbed": 1.0},
}


class TestValidate:
    def test_small_problem_exit_zero(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_VALIDATE)
        out = tmp_path / "out"
        assert main(["validate", "--config", cfg, "--out", str(out)]) == 0
        rows = read_csv(out / "validate.csv")
        assert rows[0] == RECORD_HEADER
        assert len(rows) == 3
        solvers = {(r[5], r[11]) for r in rows[1:]}
        assert solvers == {("sgopt", "ok"), ("riccati", "ok")}
        costs = [float(r[6]) for r in rows[1:]]
        assert costs[0] == pytest.approx(costs[1], rel=1e-6)

    def test_trajectory_columns(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_VALIDATE)
        out = tmp_path / "out"
        main(["validate", "--config", cfg, "--out", str(out)])
        rows = read_csv(out / "trajectory.csv")
        assert rows[0] == ["t", "theta_0", "theta_1", "u_0"]
        assert len(rows) == 1 + SMALL_VALIDATE["horizon"]
        # Last step has no control; the cell is left empty.
        assert rows[-1][-1] == ""
        assert float(rows[1][1]) == pytest.approx(np.radians(1.0))
        assert (out / "trajectory.svg").exists()

    def test_zero_perturbation_costs_nothing(self, tmp_path):
        cfg = write_config(
            tmp_path, {"n": 2, "horizon": 20, "actuation": {"m": 1}}
        )
        out = tmp_path / "out"
        assert main(["validate", "--config", cfg, "--out", str(out)]) == 0
        rows = read_csv(out / "validate.csv")
        assert all(float(r[6]) == pytest.approx(0.0, abs=1e-15) for r in rows[1:])

    def test_malformed_config_exits_two(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"n": 2})
        assert main(["validate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "horizon" in capsys.readouterr().err

    def test_unreadable_config_exits_two(self, tmp_path):
        missing = str(tmp_path / "nope.json")
        assert main(["validate", "--config", missing, "--out", str(tmp_path / "o")]) == 2

    def test_reruns_identical_apart_from_timing(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_VALIDATE)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["validate", "--config", cfg, "--out", str(out_a)])
        main(["validate", "--config", cfg, "--out", str(out_b)])
        timing = {RECORD_HEADER.index("runtime_s"), RECORD_HEADER.index("build_s")}
        strip = lambda rows: [
            [c for i, c in enumerate(r) if i not in timing] for r in rows
        ]
        assert strip(read_csv(out_a / "validate.csv")) == strip(
            read_csv(out_b / "validate.csv")
        )
        assert (out_a / "trajectory.csv").read_bytes() == (
            out_b / "trajectory.csv"
        ).read_bytes()


class TestScale:
    def test_single_point_three_rows(self, tmp_path):
        out = tmp_path / "out"
        assert main(["scale", "--mode", "n", "--range", "3:3:1", "--out", str(out)]) == 0
        rows = read_csv(out / "scale_n.csv")
        assert rows[0] == RECORD_HEADER
        assert len(rows) == 4
        assert [r[5] for r in rows[1:]] == ["sgopt", "sgopt", "riccati"]
        assert {r[4] for r in rows[1:]} == {"structured", "mindegree", "none"}
        assert all(r[11] == "ok" for r in rows[1:])

    def test_rho_mode_fixes_chain_size(self, tmp_path):
        out = tmp_path / "out"
        assert main(
            ["scale", "--mode", "rho", "--range", "0.5:0.5:0.1", "--out", str(out)]
        ) == 0
        rows = read_csv(out / "scale_rho.csv")
        assert all(r[1] == "30" and r[2] == "15" and r[3] == "10" for r in rows[1:])

    def test_svg_flag_renders_charts(self, tmp_path):
        out = tmp_path / "out"
        main(["scale", "--mode", "n", "--range", "2:4:2", "--svg", "--out", str(out)])
        assert (out / "scale_n_runtime.svg").exists()
        assert (out / "scale_n_cost.svg").exists()

    def test_bad_range_exits_two(self, tmp_path, capsys):
        code = main(["scale", "--mode", "n", "--range", "5:3:1", "--out", str(tmp_path)])
        assert code == 2
        assert "range" in capsys.readouterr().err

    def test_bad_point_becomes_error_row(self, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["scale", "--mode", "rho", "--range", "0.0:0.5:0.5", "--out", str(out)]
        )
        assert code == 0
        rows = read_csv(out / "scale_rho.csv")
        statuses = [r[11] for r in rows[1:]]
        assert any(s.startswith("error:") for s in statuses)
        assert statuses.count("ok") == 3

    def test_parallel_sweep_matches_serial(self, tmp_path, monkeypatch):
        serial, parallel = tmp_path / "s", tmp_path / "p"
        main(["scale", "--mode", "n", "--range", "2:3:1", "--out", str(serial)])
        monkeypatch.setenv("SGOPT_THREADS", "2")
        main(["scale", "--mode", "n", "--range", "2:3:1", "--out", str(parallel)])
        pick = lambda rows: [(r[1], r[4], r[5], r[6], r[11]) for r in rows[1:]]
        assert pick(read_csv(serial / "scale_n.csv")) == pick(
            read_csv(parallel / "scale_n.csv")
        )

    def test_range_parser(self):
        assert _parse_range("10:40:10") == [10, 20, 30, 40]
        assert len(_parse_range("0.1:1.0:0.1")) == 10
        assert _parse_range("7:7:1") == [7]


class TestSwingup:
    def test_upright_start_is_trivial(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {"n": 1, "horizon": 10, "actuation": {"m": 1},
             "preset": {"upright_perturbed": 0.0}},
        )
        out = tmp_path / "out"
        assert main(["swingup", "--config", cfg, "--out", str(out)]) == 0
        history = read_csv(out / "swingup.csv")
        assert history[0] == ["iteration", "lambda", "cost", "accepted"]
        assert len(history) - 1 <= 2
        traj = read_csv(out / "swingup_traj.csv")
        controls = [float(r[2]) for r in traj[1:-1]]
        assert max(abs(u) for u in controls) <= 1e-9
        assert (out / "swingup.svg").exists()

    def test_single_body_swingup_succeeds(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {"n": 1, "horizon": 25, "actuation": {"m": 1}, "preset": "hanging",
             "weights": {"qthetaf": 1e5}},
        )
        out = tmp_path / "out"
        assert main(["swingup", "--config", cfg, "--out", str(out)]) == 0
        traj = read_csv(out / "swingup_traj.csv")
        assert abs(float(traj[-1][1])) <= 0.05

    def test_horizon_one_rejected(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path, {"n": 1, "horizon": 1, "actuation": {"m": 1}, "preset": "hanging"}
        )
        assert main(["swingup", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "no controls" in capsys.readouterr().err

    def test_no_progress_writes_partial_history(self, tmp_path, capsys, monkeypatch):
        from sgopt import cli
        from sgopt.errors import NoProgress
        from sgopt.solvers import LMIteration

        def stalled(config, **kwargs):
            err = NoProgress("damping exceeded 1e+08 after 3 iterations")
            err.history = [
                LMIteration(iteration=i, damping=10.0 ** i, cost=5.0, accepted=False)
                for i in (1, 2, 3)
            ]
            raise err

        monkeypatch.setattr(cli, "iterative_sgopt", stalled)
        cfg = write_config(
            tmp_path, {"n": 1, "horizon": 10, "actuation": {"m": 1}, "preset": "hanging"}
        )
        out = tmp_path / "out"
        assert main(["swingup", "--config", cfg, "--out", str(out)]) == 1
        assert "no progress" in capsys.readouterr().err
        history = read_csv(out / "swingup.csv")
        assert history[0] == ["iteration", "lambda", "cost", "accepted"]
        assert [r[0] for r in history[1:]] == ["1", "2", "3"]
        assert all(r[3] == "0" for r in history[1:])
