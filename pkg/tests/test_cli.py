import csv
import xml.etree.ElementTree as ET

import pytest

from coverpath.cli import BENCH_FIELDS, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from coverpath.gridworld import load_map
from coverpath.mapgen import builtin_map_text
from coverpath.metrics import summarize

# a small, fast agent for command-line round trips
AGENT = [
    "--set", "agent.grid_size=6",
    "--set", "agent.channels=4",
    "--set", "agent.heads=2",
    "--set", "agent.hidden=8",
    "--set", "agent.batch_size=4",
    "--set", "agent.window=2",
    "--set", "agent.learning_starts=20",
    "--set", "env.e_max=40",
]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def small_map(tmp_path_factory):
    path = tmp_path_factory.mktemp("maps") / "m.map"
    assert main(["gen", "--size", "6", "--density", "0.1", "--stations", "2", "--seed", "3", "-o", str(path)]) == EXIT_OK
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, small_map):
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--map", str(small_map), "--episodes", "4", "--seed", "1", "--checkpoint-every", "2", "--out", str(out)] + AGENT)
    assert code == EXIT_OK
    return out


def test_gen_writes_a_map(tmp_path, capsys):
    path = tmp_path / "m.map"
    code = main(["gen", "--size", "15", "--density", "0.15", "--stations", "5", "--layout", "strategic", "--seed", "7", "-o", str(path)])
    assert code == EXIT_OK and str(path) in capsys.readouterr().out
    grid = load_map(path)
    assert grid.size == 15 and len(grid.stations) == 5 and len(grid.obstacles) == 33
    assert grid.metadata["layout"] == "strategic"


def test_gen_builtin_copy(tmp_path):
    path = tmp_path / "map2.map"
    assert main(["gen", "--builtin", "2", "-o", str(path)]) == EXIT_OK
    assert path.read_text() == builtin_map_text(2)


def test_gen_rejects_bad_density(tmp_path, capsys):
    assert main(["gen", "--size", "8", "--density", "0.9", "-o", str(tmp_path / "x.map")]) == EXIT_USAGE
    assert "density" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, small_map, capsys):
    code = main(["train", "--map", str(small_map), "--episodes", "1", "--set", "agent.learning_rate=1", "--out", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "learning_rate" in capsys.readouterr().err


def test_config_file_and_echo(tmp_path, small_map):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nenv.e_min=7\nagent.hidden=8\n")
    out = tmp_path / "run"
    main(["train", "--map", str(small_map), "--episodes", "1", "--config", str(cfg), "--out", str(out)] + AGENT)
    echoed = (out / "config.txt").read_text()
    assert "env.e_min=7" in echoed and "agent.hidden=8" in echoed and "env.psi1=1.0" in echoed


def test_train_outputs(trained):
    log = rows(trained / "training.csv")
    assert [int(r["episode"]) for r in log] == [1, 2, 3, 4]
    for name in ("ckpt_000002.npz", "ckpt_000004.npz", "final.npz", "config.txt"):
        assert (trained / name).exists()


def test_train_is_byte_reproducible(tmp_path, small_map, trained):
    out = tmp_path / "again"
    main(["train", "--map", str(small_map), "--episodes", "4", "--seed", "1", "--checkpoint-every", "2", "--out", str(out)] + AGENT)
    assert (out / "training.csv").read_bytes() == (trained / "training.csv").read_bytes()


def test_resume_continues_numbering(tmp_path, small_map, trained):
    out = tmp_path / "resumed"
    code = main(["train", "--map", str(small_map), "--episodes", "3", "--seed", "1", "--resume", str(trained / "ckpt_000002.npz"), "--out", str(out)] + AGENT)
    assert code == EXIT_OK
    assert [int(r["episode"]) for r in rows(out / "training.csv")] == [3, 4, 5]


def test_eval_rows_and_aggregate(tmp_path, small_map, trained):
    out = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(trained / "final.npz"), "--map", str(small_map), "--runs", "5", "--out", str(out)] + AGENT) == EXIT_OK
    table = rows(out / "eval.csv")
    assert len(table) == 6 and table[-1]["run"] == "aggregate"
    cov = summarize([float(r["coverage_pct"]) for r in table[:-1]])
    assert abs(float(table[-1]["coverage_pct"]) - cov.mean) < 1e-9
    assert abs(float(table[-1]["coverage_pct_std"]) - cov.std) < 1e-9


def test_eval_shape_mismatch(tmp_path, trained):
    code = main(["eval", "--checkpoint", str(trained / "final.npz"), "--map", "builtin:1", "--runs", "1", "--out", str(tmp_path)])
    assert code == EXIT_USAGE


def test_missing_inputs(tmp_path, small_map):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.npz"), "--map", str(small_map), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["train", "--map", str(tmp_path / "nope.map"), "--episodes", "1", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["bench", "--maps", "builtin:1", "--training-csv", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == EXIT_USAGE


def test_bench_grid_and_plots(tmp_path, small_map, trained):
    out = tmp_path / "bench"
    maps = [str(small_map)] * 3
    code = main(
        ["bench", "--maps", *maps, "--algorithms", "rrt", "aco", "pso", "sac", "--checkpoints", str(trained / "final.npz"),
         "--runs", "2", "--training-csv", str(trained / "training.csv"), "--out", str(out),
         "--set", "planner.iterations=3", "--set", "planner.ants=2", "--set", "planner.swarm_size=2"] + AGENT
    )
    assert code == EXIT_OK
    table = rows(out / "bench.csv")
    assert len(table) == 12 and list(table[0]) == list(BENCH_FIELDS)
    assert {r["algorithm"] for r in table} == {"rrt", "aco", "pso", "sac"}
    for name in ("rewards.svg", "coverage.svg"):
        assert ET.parse(out / name).getroot().tag.endswith("svg")


def test_sweep_grid(tmp_path):
    out = tmp_path / "sweep"
    code = main(
        ["bench", "--sweep-weights", "--out", str(out), "--set", "sweep.algorithm='rrt'", "--set", "sweep.runs=1"]
    )
    assert code == EXIT_OK
    table = rows(out / "sweep.csv")
    assert len(table) == 18
    assert len({(r["psi1"], r["psi2"], r["psi3"]) for r in table}) == 6


def test_plot_command(tmp_path, trained):
    out = tmp_path / "plots"
    assert main(["plot", str(trained / "training.csv"), "--smooth", "2", "--out", str(out)]) == EXIT_OK
    for name in ("rewards.svg", "coverage.svg"):
        ET.parse(out / name)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, small_map):
    # an absurd critic step size blows the losses up within a few updates
    out = tmp_path / "boom"
    code = main(["train", "--map", str(small_map), "--episodes", "30", "--out", str(out), "--set", "agent.lr_critic=1e300", "--set", "agent.init_std=1.0"] + AGENT)
    assert code == EXIT_NUMERIC
    assert (out / "diverged.npz").exists()


def test_seed_from_environment(tmp_path, small_map, monkeypatch):
    monkeypatch.setenv("COVERPATH_SEED", "1")
    out = tmp_path / "envseed"
    main(["train", "--map", str(small_map), "--episodes", "2", "--out", str(out)] + AGENT)
    ref = tmp_path / "flagseed"
    monkeypatch.delenv("COVERPATH_SEED")
    main(["train", "--map", str(small_map), "--episodes", "2", "--seed", "1", "--out", str(ref)] + AGENT)
    assert (out / "training.csv").read_bytes() == (ref / "training.csv").read_bytes()
