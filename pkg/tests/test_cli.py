import numpy as np
import pytest

from gradkf.cli import main, read_config
from gradkf.model import read_trajectory_csv


def body(path):
    return [l for l in path.read_text().splitlines() if not l.startswith("#")]


def test_simulate_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--horizon", "200", "--seed", "7", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a/trajectory_seed7.csv").read_bytes() == (tmp_path / "b/trajectory_seed7.csv").read_bytes()


def test_simulate_noiseless(tmp_path):
    assert main(["simulate", "--horizon", "50", "--q-std", "0", "--r-std", "0", "--c-mode", "identity",
                 "--out", str(tmp_path)]) == 0
    traj = read_trajectory_csv(tmp_path / "trajectory_seed0.csv")
    np.testing.assert_array_equal(traj.observations, traj.states[1:])


def test_compare_two_settings_and_manifest_round_trip(tmp_path):
    out = tmp_path / "run"
    assert main(["compare", "--horizon", "200", "--seed", "2", "--n-steps", "5", "--n-steps", "2",
                 "--out", str(out)]) == 0
    assert (out / "results_none_seed2_n5.csv").exists()
    assert (out / "metrics_none_seed2_n2.txt").exists()
    again = tmp_path / "again"
    assert main(["compare", "--config", str(out / "manifest.txt"), "--out", str(again)]) == 0
    assert body(out / "manifest.txt") == body(again / "manifest.txt")
    for name in ("results_none_seed2_n5.csv", "metrics_none_seed2_n2.txt"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# sweep\nhorizon = 100\nseed = 4\nn_steps = 3\n")
    assert main(["compare", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "o")]) == 0
    man = read_config(tmp_path / "o/manifest.txt", "compare")
    assert man["seed"] == 5 and man["horizon"] == 100 and man["n_steps"] == [3]


def test_compare_from_trajectory(tmp_path):
    assert main(["simulate", "--horizon", "100", "--seed", "3", "--out", str(tmp_path)]) == 0
    assert main(["compare", "--traj", str(tmp_path / "trajectory_seed3.csv"), "--seed", "3",
                 "--out", str(tmp_path / "c")]) == 0
    assert main(["compare", "--horizon", "100", "--seed", "3", "--out", str(tmp_path / "d")]) == 0
    a = (tmp_path / "c/results_none_seed3_n5.csv").read_text()
    assert a == (tmp_path / "d/results_none_seed3_n5.csv").read_text()


def test_converged_compare_metrics(tmp_path):
    assert main(["compare", "--horizon", "200", "--seed", "1", "--n-steps", "500", "--out", str(tmp_path)]) == 0
    metrics = dict(l.split(" = ") for l in (tmp_path / "metrics_none_seed1_n500.txt").read_text().splitlines())
    assert float(metrics["rmse_gradient_vs_analytic"]) <= 1e-4


def test_compare_without_source_is_usage_error(tmp_path, capsys):
    assert main(["compare", "--out", str(tmp_path / "x")]) == 2
    assert "--traj" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_bad_flag_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--horizon", "-3"])
    assert exc.value.code != 0


def test_learn_divergence_cleans_up(tmp_path, capsys):
    out = tmp_path / "learn"
    assert main(["learn", "--scenario", "a", "--lr", "1.0", "--seed", "1", "--horizon", "300",
                 "--out", str(out)]) == 1
    err = capsys.readouterr().err
    assert "--lr" in err and "lr=1.0" in err
    assert not out.exists()


def test_learn_scenario_c_exits_zero(tmp_path):
    assert main(["learn", "--scenario", "c", "--seed", "1", "--horizon", "300", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "matrices_learn_C_seed1_n5.txt").exists()


def test_jobs_gives_same_outputs(tmp_path):
    args = ["compare", "--horizon", "100", "--seed", "1", "--n-steps", "2", "--n-steps", "3"]
    assert main(args + ["--out", str(tmp_path / "s")]) == 0
    assert main(args + ["--jobs", "2", "--out", str(tmp_path / "p")]) == 0
    for name in ("results_none_seed1_n2.csv", "results_none_seed1_n3.csv"):
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("colour = blue\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    assert "all 6 checks passed" in capsys.readouterr().out
    assert main(["selftest", "--inject-fault"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  grad_mu matches finite differences" in out
