import csv
import json

import pytest

from midgn.cli import main
from midgn.synth import SynthConfig, generate_synthetic, save_synthetic

FAST = ["--dim", "8", "--intents", "2", "--layers", "1", "--epochs", "2", "--batch-size", "128", "--lr", "0.01"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny")
    ds, truth = generate_synthetic(SynthConfig(n_users=40, n_bundles=40, items_per_intent=15,
                                               bundles_per_user=10, items_per_user=8, seed=2))
    save_synthetic(ds, truth, d)
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_then_evaluate_twice(data_dir, tmp_path, capsys):
    out = tmp_path / "train"
    code, stdout, _ = run(capsys, "train", "--dataset", data_dir, "--out", out, *FAST)
    assert code == 0 and "test" in json.loads(stdout)
    run_json = json.loads((out / "run.json").read_text())
    assert run_json["config"]["k"] == 2 and run_json["seeds"]["seed"] == 0
    assert (out / "best.npz").exists()
    log = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2]
    assert len(read_csv(out / "metrics.csv")) == 6

    reports = []
    for name in ("ev1", "ev2"):
        code, _, _ = run(capsys, "evaluate", "--dataset", data_dir, "--out", tmp_path / name,
                         "--checkpoint", out / "best.npz")
        assert code == 0
        reports.append((tmp_path / name / "report.json").read_text())
    assert reports[0] == reports[1]


def test_config_file_and_flag_override(data_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 8, "k": 4, "layers": 1, "epochs": 1, "batch_size": 256, "tau": 0.5,
                               "dataset": str(data_dir)}))
    code, _, _ = run(capsys, "train", "--config", cfg, "--intents", "2", "--out", tmp_path / "o")
    assert code == 0
    resolved = json.loads((tmp_path / "o" / "run.json").read_text())["config"]
    assert resolved["k"] == 2 and resolved["tau"] == 0.5 and resolved["d"] == 8


def test_ablate_rows(data_dir, tmp_path, capsys):
    code, _, _ = run(capsys, "ablate", "--dataset", data_dir, "--out", tmp_path, *FAST, "--epochs", "1")
    assert code == 0
    rows = [r for r in read_csv(tmp_path / "results.csv") if r["seed"] == "mean"]
    configs = []
    for r in rows:
        if r["config"] not in configs:
            configs.append(r["config"])
    assert configs == ["MIDGN", "w/o contra.", "w/o global", "w/o local"]
    assert len(rows) == 4 * 6


def test_sweep_intents_rows(data_dir, tmp_path, capsys):
    code, _, _ = run(capsys, "sweep-intents", "--dataset", data_dir, "--out", tmp_path, *FAST,
                     "--epochs", "1", "--seeds", "0,1")
    assert code == 0
    rows = read_csv(tmp_path / "results.csv")
    recall20 = [r for r in rows if r["seed"] == "mean" and r["metric"] == "recall" and r["k"] == "20"]
    assert [r["config"] for r in recall20] == ["K=1", "K=2", "K=4", "K=8"]
    assert len([r for r in rows if r["seed"] != "mean"]) == 4 * 2 * 6


def test_sweep_layers_rows(data_dir, tmp_path, capsys):
    code, _, _ = run(capsys, "sweep-layers", "--dataset", data_dir, "--out", tmp_path, *FAST, "--epochs", "1")
    assert code == 0
    labels = {r["config"] for r in read_csv(tmp_path / "results.csv")}
    assert labels == {"L=1", "L=2", "L=3", "L=4"}


def test_synth_check(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synth": {"n_users": 40, "n_bundles": 30, "items_per_intent": 10,
                                         "bundles_per_user": 5, "items_per_user": 6}}))
    code, stdout, _ = run(capsys, "synth-check", "--config", cfg, "--out", tmp_path / "s", *FAST,
                          "--intents", "4", "--synth-seed", "3")
    assert code == 0
    rep = json.loads((tmp_path / "s" / "synth_report.json").read_text())
    assert 0.25 <= rep["alignment"] <= 1 and rep["uniform_baseline"] == 0.25
    assert json.loads((tmp_path / "s" / "run.json").read_text())["synth"]["seed"] == 3
    assert (tmp_path / "s" / "data" / "ground_truth.json").exists()


def test_stats(data_dir, tmp_path, capsys):
    code, stdout, _ = run(capsys, "stats", "--dataset", data_dir, "--out", tmp_path)
    assert code == 0 and json.loads(stdout)["users"] == 40


@pytest.mark.parametrize("argv", [
    ["train", "--dataset", "/nonexistent/dir"],
    ["train"],
    ["train", "--dataset", "synth", "--intents", "3"],
    ["evaluate", "--dataset", "synth", "--checkpoint", "/nonexistent.npz"],
])
def test_errors_are_structured(argv, tmp_path, capsys):
    code, _, err = run(capsys, *argv, "--out", tmp_path)
    assert code == 2
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "ConfigError" and payload["message"]


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"learning_rate": 0.1}')
    code, _, err = run(capsys, "train", "--config", cfg, "--dataset", "synth", "--out", tmp_path)
    assert code == 2 and "learning_rate" in json.loads(err)["message"]


def test_bad_data_file_exit_code(tmp_path, capsys):
    for name in ("user_bundle.txt", "bundle_item.txt", "user_item.txt"):
        (tmp_path / name).write_text("0\t0\n")
    (tmp_path / "user_item.txt").write_text("0\tx\n")
    code, _, err = run(capsys, "stats", "--dataset", tmp_path, "--out", tmp_path / "o")
    payload = json.loads(err)
    assert code == 1 and payload["error"] == "DataFormatError" and "user_item.txt:1" in payload["message"]
