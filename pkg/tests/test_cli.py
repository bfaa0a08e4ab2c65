import json

import pytest

from marl_nav import cli
from marl_nav.metrics import TrajectoryRow, write_trajectory_csv
from marl_nav.worldmap import bundled_map_path

TINY = {
    "ppo": {"train_batch_size": 128, "minibatch_size": 64, "epochs": 1, "num_envs": 2, "hidden": [8, 8]},
    "curriculum": {"free_iterations": 2, "obstacle_iterations": 2, "direct_iterations": 4, "checkpoint_every": 10},
    "env": {"max_steps": 40},
}


def run(argv):
    try:
        return cli.main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.json").write_text(json.dumps(TINY))
    out = d / "m3"
    code = run(["train", "--variant", "model3", "--config", d / "tiny.json", "--seed", 2, "--out", out,
                "--scale", "desk", "--eval-episodes", 2])
    assert code == 0
    return d, out


class TestTrain:
    def test_layout(self, trained):
        _, out = trained
        assert (out / "metrics.csv").exists() and (out / "config.resolved.json").exists()
        assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["iter_2.json", "iter_4.json"]
        assert (out / "eval" / "trajectories.csv").exists()
        assert json.loads((out / "eval" / "summary.json").read_text())["episodes"] == 2

    def test_resolved_config_layers(self, trained):
        _, out = trained
        doc = json.loads((out / "config.resolved.json").read_text())
        assert doc["seed"] == 2 and doc["variant"] == "model3"
        assert doc["ppo"]["train_batch_size"] == 128  # file beats desk default
        assert doc["maps"] == {"free": "desk_free", "obstacles": "desk_obstacles"}  # desk default kept

    def test_resolved_config_reproduces_metrics(self, trained, tmp_path):
        _, out = trained
        again = tmp_path / "again"
        assert run(["train", "--variant", "model3", "--config", out / "config.resolved.json", "--out", again,
                    "--eval-episodes", 0]) == 0
        assert (again / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()
        assert not (again / "eval").exists()

    def test_unknown_variant(self, tmp_path):
        assert run(["train", "--variant", "model4", "--out", tmp_path]) == 1

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps({"ppo": {"learning_rat": 1.0}}))
        assert run(["train", "--variant", "model1", "--config", tmp_path / "bad.json", "--out", tmp_path / "o"]) == 2

    def test_malformed_config(self, tmp_path):
        (tmp_path / "bad.json").write_text("{")
        assert run(["train", "--variant", "model1", "--config", tmp_path / "bad.json", "--out", tmp_path / "o"]) == 2

    def test_missing_required(self):
        assert run(["train", "--variant", "model1"]) == 1


class TestEval:
    def test_ok(self, trained, tmp_path, capsys):
        _, out = trained
        code = run(["eval", "--checkpoint", out / "checkpoints" / "iter_4.json", "--map", "desk_obstacles",
                    "--episodes", 3, "--out", tmp_path / "ev"])
        assert code == 0
        assert "goal rate" in capsys.readouterr().out
        assert json.loads((tmp_path / "ev" / "summary.json").read_text())["episodes"] == 3

    def test_zero_episodes(self, trained, tmp_path):
        _, out = trained
        assert run(["eval", "--checkpoint", out / "checkpoints" / "iter_4.json", "--map", "desk_free",
                    "--episodes", 0, "--out", tmp_path]) == 1

    def test_variant_mismatch(self, trained, tmp_path, capsys):
        _, out = trained
        code = run(["eval", "--checkpoint", out / "checkpoints" / "iter_4.json", "--map", "desk_free",
                    "--episodes", 1, "--out", tmp_path, "--variant", "model2"])
        assert code == 2
        assert "dimension mismatch" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path):
        assert run(["eval", "--checkpoint", tmp_path / "nope.json", "--map", "desk_free", "--episodes", 1,
                    "--out", tmp_path]) == 2


class TestReplay:
    def test_from_eval(self, trained, tmp_path):
        _, out = trained
        svg = tmp_path / "t.svg"
        assert run(["replay", "--trajectory", out / "eval" / "trajectories.csv", "--map", "desk_obstacles",
                    "--svg", svg]) == 0
        assert svg.read_text().lstrip().startswith("<")

    def test_header_only(self, tmp_path):
        write_trajectory_csv([], tmp_path / "e.csv")
        assert run(["replay", "--trajectory", tmp_path / "e.csv", "--map", "stage1_free", "--svg", tmp_path / "e.svg"]) == 0
        assert "polyline" not in (tmp_path / "e.svg").read_text()

    def test_malformed_row(self, tmp_path, capsys):
        write_trajectory_csv([TrajectoryRow(0, 0, 0, 1.0, 1.0, 0.0, -1, 0.0, "none")], tmp_path / "t.csv")
        with open(tmp_path / "t.csv", "a") as f:
            f.write("0,1,0,1.0\n")
        assert run(["replay", "--trajectory", tmp_path / "t.csv", "--map", "stage1_free", "--svg", tmp_path / "t.svg"]) == 2
        assert "line 3" in capsys.readouterr().err


class TestMapValidate:
    @pytest.mark.parametrize("name,expected", [
        ("stage1_free", "30x30, 0 obstacles, 8 spawn cells"),
        ("stage2_obstacles", "30x30, 8 obstacles, 8 spawn cells"),
        ("desk_free", "15x15, 0 obstacles, 8 spawn cells"),
    ])
    def test_bundled(self, name, expected, capsys):
        assert run(["map-validate", "--map", name]) == 0
        assert capsys.readouterr().out.strip() == expected

    def test_by_path(self, capsys):
        assert run(["map-validate", "--map", bundled_map_path("desk_obstacles")]) == 0
        assert "15x15" in capsys.readouterr().out

    def test_invalid(self, tmp_path, capsys):
        doc = json.loads(bundled_map_path("stage1_free").read_text())
        doc["obstacles"] = [{"x_min": 2.5, "y_min": 2.5, "x_max": 3.5, "y_max": 3.5}]  # covers a spawn cell
        (tmp_path / "bad.json").write_text(json.dumps(doc))
        assert run(["map-validate", "--map", tmp_path / "bad.json"]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_unknown_name(self):
        assert run(["map-validate", "--map", "no_such_map"]) == 2
