import json
import subprocess
import sys

import pytest

from dualfuse.cli import RunConfig, run_cli
from dualfuse.errors import BadConfigError

SYNTH = ["synth", "--classes", "4", "--per-class", "12", "--dims", "micro", "--noise", "0.3",
         "--image-confusable", "0-1", "--text-confusable", "2-3", "--attributes", "--seed", "7"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run_cli(SYNTH + ["--out", str(out)]) == 0
    return out


def files(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_synth_writes_dataset_and_attributes(data):
    names = set(files(data))
    assert {"manifest.json", "image.bin", "text.bin", "labels.bin", "synthetic.json",
            "attributes/attributes.json", "attributes/attributes.bin"} <= names


def test_synth_is_byte_identical_per_seed(data, tmp_path):
    assert run_cli(SYNTH + ["--out", str(tmp_path)]) == 0
    assert files(tmp_path) == files(data)


def test_split_command(data, tmp_path):
    out = tmp_path / "splits.json"
    assert run_cli(["split", "--data", str(data), "--seed", "1", "--out", str(out)]) == 0
    s = json.loads(out.read_text())
    assert sorted(s["train"] + s["val"] + s["test"]) == list(range(48))


def test_train_then_eval(data, tmp_path):
    run = tmp_path / "run"
    argv = ["train", "--model", "fusion", "--variant", "icatt", "--data", str(data), "--epochs", "2",
            "--patience", "1", "--lr", "1e-3", "--seed", "3", "--out", str(run)]
    assert run_cli(argv) == 0
    history = [json.loads(line) for line in (run / "history.jsonl").read_text().splitlines()]
    assert [h["epoch"] for h in history] == [1, 2]
    assert (run / "checkpoint" / "params.bin").exists()

    again = tmp_path / "again"
    assert run_cli(argv[:-1] + [str(again)]) == 0
    assert files(run) == files(again)

    ev = tmp_path / "eval"
    assert run_cli(["eval", "--checkpoint", str(run / "checkpoint"), "--data", str(data),
                    "--splits", str(run / "splits.json"), "--out", str(ev)]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())
    assert set(metrics) >= {"OA", "AA", "Kappa", "topk_OA", "confusion"} and metrics["topk"] == 3
    assert (ev / "confusion.csv").read_text().splitlines()[0] == ",class_0,class_1,class_2,class_3"


def test_train_from_config_file(data, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "lf", "data": str(data), "epochs": 1, "patience": 1}))
    assert run_cli(["train", "--config", str(cfg), "--out", str(tmp_path / "lf")]) == 0
    written = json.loads((tmp_path / "lf" / "run_config.json").read_text())
    assert written["model"] == "lf" and written["batch_size"] == 64


def test_run_config_defaults_and_unknown_keys():
    cfg = RunConfig.from_dict({})
    assert (cfg.num_heads, cfg.train.lr, cfg.train.epochs) == (4, 1e-4, 40)
    with pytest.raises(BadConfigError):
        RunConfig.from_dict({"learning_rate": 0.1})


def test_exit_codes(data, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert run_cli(["train", "--config", str(bad), "--data", str(data)]) == 2
    assert run_cli(["train", "--data", str(data), "--epochs", "3", "--patience", "5"]) == 2
    assert run_cli(["nonsense"]) == 2
    assert run_cli(["gradcheck", "--dims", "full"]) == 2
    assert run_cli(["eval", "--checkpoint", str(tmp_path / "missing"), "--data", str(data),
                    "--out", str(tmp_path / "e")]) == 1
    assert run_cli(["split", "--data", str(tmp_path / "nothing")]) == 1


def test_module_entry_point_exit_status(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dualfuse", "train", "--model", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "dualfuse", "split", "--data", str(tmp_path / "x")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr


def test_zeroshot_command(data, tmp_path):
    out = tmp_path / "zs"
    argv = ["zeroshot", "--data", str(data), "--attributes", str(data / "attributes"),
            "--ratios", "2/2,3/1", "--epochs", "1", "--patience", "1", "--out", str(out)]
    assert run_cli(argv) == 0
    report = json.loads((out / "zeroshot_report.json").read_text())
    runs = report["runs"]
    assert [(r["ratio"], r["backbone"]) for r in runs] == [
        ("2/2", "fusion"), ("2/2", "io"), ("3/1", "fusion"), ("3/1", "io")]
    assert all(r["exposed_unknown"] == 0 for r in runs)
    assert run_cli(argv[:-1] + [str(tmp_path / "zs2")]) == 0
    assert files(out) == files(tmp_path / "zs2")
    assert run_cli(argv[:-1] + [str(out)] + ["--backbones", "to"]) == 2


def test_bench_command_rows_and_format(data, tmp_path):
    out = tmp_path / "bench"
    assert run_cli(["bench", "--data", str(data), "--folds", "2", "--epochs", "1", "--patience", "1",
                    "--out", str(out)]) == 0
    table = (out / "bench.md").read_text().splitlines()
    rows = [line.split("|")[1].strip() for line in table[2:]]
    assert rows == ["IO", "TO", "EF", "LF", "NoCAtt", "ICAtt", "TCAtt", "Full"]
    import re
    assert all(re.search(r"\d+\.\d \(\d+\.\d\)", line) for line in table[2:])


def test_gradcheck_command(tmp_path):
    out = tmp_path / "grad.json"
    assert run_cli(["gradcheck", "--dims", "micro", "--mode", "f32", "--max-entries", "2", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and report["reports"][0]["tol"] == 1e-3
