"""End-to-end tests for the riemflow command line."""

import csv
import subprocess
import sys

import numpy as np
import pytest

from riemflow import cli, dataset, manifolds, pipeline
from riemflow.flow import FlowModel

FAST = ("--epochs", "2", "--batch-size", "32", "--layers", "2", "--hidden", "8")
TINY_EVAL = ("--epochs", "1", "--batch-size", "16", "--layers", "1", "--hidden", "4")


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Shared demosets and one trained run per manifold."""
    root = tmp_path_factory.mktemp("cli")
    assert cli.entry(["dataset", "--out", str(root / "ds_uq"), "--manifold", "uq",
                      "--kind", "spiral", "--length", "60", "--demos", "3",
                      "--seed", "1"]) == 0
    spd = dataset.synth_demoset("s_curve", manifolds.SPD, n_demos=3, length=60, seed=1)
    dataset.save_demoset(root / "ds_spd", spd)
    assert cli.entry(["train", "--demos", str(root / "ds_uq"),
                      "--out", str(root / "run_uq"), *FAST]) == 0
    assert cli.entry(["train", "--demos", str(root / "ds_spd"),
                      "--out", str(root / "run_spd"), *FAST]) == 0
    return root


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- top level ---------------------------------------------------------------------


def test_version_exits_zero(capsys):
    assert cli.entry(["--version"]) == 0
    out = capsys.readouterr().out
    assert "riemflow" in out
    assert "riemflow.model/1" in out
    assert "riemflow.demoset/1" in out


def test_no_arguments_is_usage_error(capsys):
    assert cli.entry([]) == 2


def test_unknown_subcommand_is_usage_error(capsys):
    assert cli.entry(["polish"]) == 2


def test_module_entrypoint_runs():
    proc = subprocess.run([sys.executable, "-m", "riemflow", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "riemflow" in proc.stdout


# -- dataset -----------------------------------------------------------------------


def test_dataset_writes_loadable_demoset(work):
    demos = dataset.load_demoset(work / "ds_uq")
    assert demos.manifold == manifolds.UNIT_QUATERNION
    assert demos.n_demos == 3
    assert all(p.shape == (60, 4) for p in demos.points)
    assert demos.name == "spiral"


def test_dataset_recombines_raw_planar_file(tmp_path):
    out = tmp_path / "rec"
    rc = cli.entry(["dataset", "--out", str(out), "--manifold", "spd",
                    "--raw", "tests/data/planar_demos.csv", "--name", "letters"])
    assert rc == 0
    demos = dataset.load_demoset(out)
    assert demos.manifold == manifolds.SPD
    assert demos.n_demos == len(dataset.RECOMBINE_TRIPLES)
    assert demos.name == "letters"


def test_dataset_rejects_unknown_kind(tmp_path, capsys):
    assert cli.entry(["dataset", "--out", str(tmp_path / "x"),
                      "--kind", "zigzag"]) == 2


# -- train -------------------------------------------------------------------------


def test_train_writes_model_history_config(work):
    run = work / "run_uq"
    model = FlowModel.load(run / "model.rfm")
    assert model.manifold == manifolds.UNIT_QUATERNION
    assert model.mode == "riemannian"
    rows = read_rows(run / "history.csv")
    assert rows[0] == ["epoch", "loss", "dtw"]
    assert len(rows) == 1 + 2  # header + one row per epoch
    config = dict(line.split("=", 1)
                  for line in (run / "config.txt").read_text().splitlines())
    assert config["epochs"] == "2"
    assert config["n_layers"] == "2"


def test_train_flag_overrides_config_file(tmp_path, work):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("epochs=2\nbatch_size=32\nn_layers=2\nhidden_units=8\nseed=7\n")
    out = tmp_path / "run"
    assert cli.entry(["train", "--demos", str(work / "ds_uq"), "--out", str(out),
                      "--config", str(cfg), "--seed", "9"]) == 0
    text = (out / "config.txt").read_text()
    assert "seed=9" in text
    assert "epochs=2" in text


def test_train_missing_demoset_is_input_error(tmp_path, capsys):
    rc = cli.entry(["train", "--demos", str(tmp_path / "nope"),
                    "--out", str(tmp_path / "out"), *FAST])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_train_rejects_unknown_config_key(tmp_path, work, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("bogus=1\n")
    rc = cli.entry(["train", "--demos", str(work / "ds_uq"),
                    "--out", str(tmp_path / "out"), "--config", str(cfg)])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


def test_train_divergence_exits_three(tmp_path, work, capsys):
    rc = cli.entry(["train", "--demos", str(work / "ds_uq"),
                    "--out", str(tmp_path / "out"), *FAST,
                    "--learning-rate", "1e6", "--optimizer", "sgd"])
    assert rc == 3
    assert "diverged" in capsys.readouterr().err


# -- generate ----------------------------------------------------------------------


def test_generate_from_demo_start_converges(work, tmp_path, capsys):
    out = tmp_path / "traj.csv"
    rc = cli.entry(["generate", "--model", str(work / "run_uq" / "model.rfm"),
                    "--demos", str(work / "ds_uq"), "--start-demo", "1",
                    "--out", str(out), "--xi", "0.5", "--max-steps", "2000"])
    assert rc == 0
    rows = read_rows(out)
    assert rows[0] == ["t", "nu", "ux", "uy", "uz"]
    assert len(rows) > 2
    # time column advances by the model's dt
    assert float(rows[2][0]) - float(rows[1][0]) == pytest.approx(0.004)
    for row in rows[1:]:
        q = np.array([float(v) for v in row[1:]])
        assert abs(np.linalg.norm(q) - 1.0) < 1e-9


def test_generate_without_convergence_withholds_file(work, tmp_path, capsys):
    out = tmp_path / "traj.csv"
    rc = cli.entry(["generate", "--model", str(work / "run_uq" / "model.rfm"),
                    "--demos", str(work / "ds_uq"), "--out", str(out),
                    "--max-steps", "20"])
    assert rc == 4
    assert not out.exists()
    assert "--allow-partial" in capsys.readouterr().err
    rc = cli.entry(["generate", "--model", str(work / "run_uq" / "model.rfm"),
                    "--demos", str(work / "ds_uq"), "--out", str(out),
                    "--max-steps", "20", "--allow-partial"])
    assert rc == 4
    assert out.exists()
    assert len(read_rows(out)) == 1 + 21  # header + start + 20 steps


def test_generate_start_flag_quaternion(work, tmp_path):
    out = tmp_path / "traj.csv"
    rc = cli.entry(["generate", "--model", str(work / "run_uq" / "model.rfm"),
                    "--start", "1,0,0,0", "--out", str(out)])
    assert rc == 0
    rows = read_rows(out)
    assert len(rows) == 2  # already at the goal: start only
    assert [float(v) for v in rows[1]] == [0.0, 1.0, 0.0, 0.0, 0.0]


def test_generate_start_flag_spd(work, tmp_path):
    out = tmp_path / "traj.csv"
    rc = cli.entry(["generate", "--model", str(work / "run_spd" / "model.rfm"),
                    "--start", "100,100,0", "--out", str(out)])
    assert rc == 0
    rows = read_rows(out)
    assert rows[0] == ["t", "m11", "m22", "m12"]
    assert len(rows) == 2


def test_generate_rejects_wrong_start_size(work, tmp_path, capsys):
    rc = cli.entry(["generate", "--model", str(work / "run_uq" / "model.rfm"),
                    "--start", "1,0,0", "--out", str(tmp_path / "t.csv")])
    assert rc == 2
    assert "4 quaternion components" in capsys.readouterr().err


def test_generate_rejects_out_of_range_demo_index(work, tmp_path, capsys):
    rc = cli.entry(["generate", "--model", str(work / "run_uq" / "model.rfm"),
                    "--demos", str(work / "ds_uq"), "--start-demo", "5",
                    "--out", str(tmp_path / "t.csv")])
    assert rc == 2
    assert "out of range" in capsys.readouterr().err


def test_generate_needs_some_start(work, tmp_path, capsys):
    rc = cli.entry(["generate", "--model", str(work / "run_uq" / "model.rfm"),
                    "--out", str(tmp_path / "t.csv")])
    assert rc == 2


# -- eval --------------------------------------------------------------------------


def _eval_args(work, out, **extra):
    args = ["eval", "--demos", str(work / "ds_uq"), "--out", str(out),
            "--seeds", "20", *TINY_EVAL]
    for key, val in extra.items():
        args += [f"--{key.replace('_', '-')}", val]
    return args


def test_eval_writes_benchmark_and_summary(work, tmp_path, capsys):
    out = tmp_path / "ev"
    assert cli.entry(_eval_args(work, out)) == 0
    rows = read_rows(out / "benchmark.csv")
    assert rows[0] == list(cli.BENCHMARK_COLUMNS)
    assert len(rows) == 1 + 2  # two methods x one seed x one shape
    summary = read_rows(out / "summary.csv")
    assert summary[0] == list(cli.SUMMARY_COLUMNS)
    assert {r[0] for r in summary[1:]} == {"riemannian", "naive"}
    assert (out / "config.txt").exists()


def strip_runtime(path):
    rows = read_rows(path)
    drop = rows[0].index("runtime_s")
    return [[v for i, v in enumerate(row) if i != drop] for row in rows]


def test_eval_repeat_runs_are_identical_modulo_runtime(work, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli.entry(_eval_args(work, out_a)) == 0
    assert cli.entry(_eval_args(work, out_b)) == 0
    assert strip_runtime(out_a / "benchmark.csv") == strip_runtime(out_b / "benchmark.csv")
    assert (out_a / "summary.csv").read_bytes() == (out_b / "summary.csv").read_bytes()


def test_eval_all_cells_failed_exits_five(work, tmp_path, capsys):
    out = tmp_path / "ev"
    rc = cli.entry(_eval_args(work, out, methods="fancy"))
    assert rc == 5
    err = capsys.readouterr().err
    assert "cell failed" in err
    rows = read_rows(out / "benchmark.csv")  # failure rows are still recorded
    assert rows[1][rows[0].index("dtw")] == "inf"


def test_eval_scans_directory_of_demosets(tmp_path, capsys):
    parent = tmp_path / "shapes"
    for kind in ("spiral", "s_curve"):
        demos = dataset.synth_demoset(kind, manifolds.UNIT_QUATERNION,
                                      n_demos=2, length=40, seed=3)
        dataset.save_demoset(parent / kind, demos)
    out = tmp_path / "ev"
    rc = cli.entry(["eval", "--demos", str(parent), "--out", str(out),
                    "--seeds", "20", "--methods", "riemannian",
                    "--stream", *TINY_EVAL])
    assert rc == 0
    rows = read_rows(out / "benchmark.csv")
    assert {r[0] for r in rows[1:]} == {"spiral", "s_curve"}
    for kind in ("spiral", "s_curve"):
        assert (out / f"stream_{kind}.svg").exists()
        grid = read_rows(out / f"stream_{kind}.csv")
        assert grid[0] == ["x", "y", "u", "v"]
        assert len(grid) == 1 + 20 * 20


def test_eval_rejects_directory_without_demosets(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    rc = cli.entry(["eval", "--demos", str(tmp_path / "empty"),
                    "--out", str(tmp_path / "ev"), *TINY_EVAL])
    assert rc == 2


# -- search ------------------------------------------------------------------------


def test_search_ranks_trials(work, tmp_path):
    out = tmp_path / "sr"
    space = tmp_path / "space.txt"
    space.write_text("n_layers=1,2\nactivation=relu\noptimizer=adam\n"
                     "learning_rate=1e-4,1e-2\n")
    rc = cli.entry(["search", "--demos", str(work / "ds_uq"), "--out", str(out),
                    "--trials", "3", "--space", str(space),
                    "--epochs", "2", "--batch-size", "32", "--hidden", "8"])
    assert rc == 0
    rows = read_rows(out / "ranked_configs.csv")
    assert rows[0] == list(cli.SEARCH_COLUMNS)
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    dtws = [float(r[rows[0].index("dtw")]) for r in rows[1:]]
    assert dtws == sorted(dtws)
    assert (out / "best.rfm").exists()


def test_search_single_point_space_reproduces_train(work, tmp_path):
    """Pinning every searched field to the training defaults must yield the
    same model file byte for byte."""
    out = tmp_path / "sr"
    space = tmp_path / "space.txt"
    space.write_text("n_layers=2\nactivation=relu\n"
                     "optimizer=adam\nlearning_rate=0.00098\n")
    rc = cli.entry(["search", "--demos", str(work / "ds_uq"), "--out", str(out),
                    "--trials", "1", "--space", str(space),
                    "--epochs", "2", "--batch-size", "32", "--hidden", "8"])
    assert rc == 0
    assert (out / "best.rfm").read_bytes() == \
        (work / "run_uq" / "model.rfm").read_bytes()


def test_search_all_diverged_exits_three(work, tmp_path, capsys):
    out = tmp_path / "sr"
    space = tmp_path / "space.txt"
    space.write_text("n_layers=2\nactivation=relu\noptimizer=sgd\n"
                     "learning_rate=1e6\n")
    rc = cli.entry(["search", "--demos", str(work / "ds_uq"), "--out", str(out),
                    "--trials", "1", "--space", str(space),
                    "--epochs", "2", "--batch-size", "32", "--hidden", "8"])
    assert rc == 3
    assert (out / "ranked_configs.csv").exists()
    assert not (out / "best.rfm").exists()


def test_search_rejects_unknown_space_key(work, tmp_path, capsys):
    space = tmp_path / "space.txt"
    space.write_text("momentum=0.9\n")
    rc = cli.entry(["search", "--demos", str(work / "ds_uq"),
                    "--out", str(tmp_path / "sr"), "--trials", "1",
                    "--space", str(space)])
    assert rc == 2
    assert "momentum" in capsys.readouterr().err
