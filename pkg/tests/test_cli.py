import json
from importlib import resources

import pytest

from dropkan.cli import cli_main
from dropkan.data import DatasetSplits
from dropkan.layers import load_network
from dropkan.train import MetricLog


@pytest.fixture
def car_csv(tmp_path):
    path = tmp_path / "car.csv"
    path.write_text(resources.files("dropkan").joinpath("data/car.csv").read_text())
    return path


def test_verify_without_arguments(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert cli_main(["verify", "--gradient-seeds", "1"]) == 0
    report = (tmp_path / "runs" / "verify-seed0" / "verify_report.txt").read_text()
    assert "14/14 checks passed" in report
    assert "checks passed" in capsys.readouterr().out


def test_exp1_config_reruns_are_identical(tmp_path):
    config = tmp_path / "exp1.json"
    config.write_text(json.dumps({"dataset": "blobs", "architecture": [2, 2, 1], "repeats": 2, "steps": 20}))
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli_main(["exp1", "--config", str(config), "--seed", "7", "--out", str(out)]) == 0
        outputs.append({name: (out / name).read_bytes()
                        for name in ("exp1.csv", "exp1_summary.json")})
    assert outputs[0]["exp1.csv"] == outputs[1]["exp1.csv"]
    assert outputs[0] == outputs[1]
    resolved = json.loads((tmp_path / "a" / "resolved_config.json").read_text())
    assert resolved["architecture"] == [2, 2, 1] and resolved["seed"] == 7 and resolved["passes"] == 5


def test_flags_override_config(tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"dataset": "blobs", "architecture": [2, 2, 1], "repeats": 1, "steps": 20}))
    out = tmp_path / "o"
    assert cli_main(["exp1", "--config", str(config), "--seed", "1", "--steps", "10", "--out", str(out)]) == 0
    assert json.loads((out / "resolved_config.json").read_text())["steps"] == 10


def test_train_emits_metric_log(car_csv, tmp_path):
    out = tmp_path / "run"
    argv = ["train", "--dataset", str(car_csv), "--arch", "6,10,4", "--mode", "dropkan_pa", "--rate", "0.1",
            "--seed", "1", "--steps", "30", "--eval-every", "10", "--out", str(out)]
    assert cli_main(argv) == 0
    log = MetricLog.from_jsonl((out / "metrics.jsonl").read_text())
    assert [r.step for r in log.for_split("valid")] == [10, 20, 30]
    assert log.for_split("test")
    net = load_network(out / "model.json")
    assert net.architecture == [6, 10, 4]
    assert all(layer.drop.mode.value == "dropkan_pa" and layer.drop.scale for layer in net.layers)
    first = (out / "metrics.jsonl").read_bytes()
    assert cli_main(argv) == 0
    assert (out / "metrics.jsonl").read_bytes() == first


def test_train_timing_flag(tmp_path):
    out = tmp_path / "t"
    assert cli_main(["train", "--dataset", "blobs", "--seed", "0", "--steps", "3", "--timing", "--out", str(out)]) == 0
    assert "wall_time" in (out / "metrics.jsonl").read_text()


def test_preprocess_bundle(tmp_path):
    out = tmp_path / "p"
    assert cli_main(["preprocess", "--dataset", "car", "--seed", "3", "--out", str(out)]) == 0
    bundle = DatasetSplits.load(out / "dataset.npz")
    assert len(bundle.y_train) + len(bundle.y_valid) + len(bundle.y_test) == 1728
    assert json.loads((out / "schema.json").read_text())["classes"] == ["acc", "good", "unacc", "vgood"]


def test_search_writes_best(tmp_path):
    out = tmp_path / "s"
    argv = ["search", "--dataset", "blobs", "--seed", "2", "--steps", "10", "--evaluations", "2",
            "--setting", "dropout_w_scale", "--out", str(out)]
    assert cli_main(argv) == 0
    assert len((out / "search.csv").read_text().splitlines()) == 3
    assert json.loads((out / "best.json").read_text())["rates"]


def test_exp2_writes_table(tmp_path):
    out = tmp_path / "e"
    argv = ["exp2", "--dataset", "blobs", "--seed", "2", "--steps", "5", "--evaluations", "1", "--out", str(out)]
    assert cli_main(argv) == 0
    assert len((out / "exp2_results.csv").read_text().splitlines()) == 6


@pytest.mark.parametrize("argv", [
    ["train", "--dataset", "missing.csv", "--seed", "1"],
    ["train", "--dataset", "blobs"],
    ["train", "--dataset", "blobs", "--seed", "1", "--bogus"],
    ["exp1", "--config", "nope.json", "--seed", "1"],
    ["train", "--dataset", "blobs", "--seed", "1", "--arch", "3,2"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert cli_main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"dataset": "blobs", "colour": "red"}))
    assert cli_main(["exp1", "--config", str(config), "--seed", "1", "--out", str(tmp_path / "x")]) == 2
