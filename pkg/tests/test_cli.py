import json
import subprocess
import sys

import pytest

from corecd.cli import main
from corecd.graph import build_dataset, load_dataset


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("CORECD_OUT", str(tmp_path / "out"))
    return tmp_path


@pytest.fixture
def trained(out):
    """A tiny n=3 run through the CLI: returns (dataset path, run dir)."""
    assert main(["gen-data", "--n", "3", "--seed", "0"]) == 0
    data = out / "out" / "datasets" / "n3_seed0.txt"
    rc = main(["train", "--dataset", str(data), "--out-dir", str(out / "run"), "--steps", "1200",
               "--hidden", "16", "--warmup", "200", "--eval-every", "600", "--sync-every=100"])
    assert rc == 0
    return data, out / "run"


def test_gen_data_splits_and_determinism(out, capsys):
    assert main(["gen-data", "--n", "3", "--seed", "7", "--out", str(out / "a.txt")]) == 0
    assert "train=19 test=6" in capsys.readouterr().out
    assert main(["gen-data", "--n", "3", "--seed", "7", "--out", str(out / "b.txt")]) == 0
    assert (out / "a.txt").read_bytes() == (out / "b.txt").read_bytes()
    assert load_dataset(out / "a.txt") == build_dataset(3, seed=7)
    assert main(["gen-data", "--n", "4"]) == 0
    ds = load_dataset(out / "out" / "datasets" / "n4_seed0.txt")
    assert (len(ds.train), len(ds.test)) == (401, 142)


def test_gen_data_usage_errors(out):
    assert main(["gen-data", "--n", "3", "--train", "5"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["gen-data"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["gen-data", "--n", "3", "--bogus"])
    assert info.value.code == 2


def test_gen_data_io_failure(out):
    (out / "blocker").write_text("")
    assert main(["gen-data", "--n", "3", "--out", str(out / "blocker" / "d.txt")]) == 1


def test_train_outputs(trained):
    _, run = trained
    for name in ("best.ckpt", "last.ckpt", "metrics.csv", "config.txt", "best_eval.json"):
        assert (run / name).exists()
    assert json.loads((run / "best_eval.json").read_text())["n_rollouts"] == 18


def test_train_prints_final_score(out, tmp_path, capsys):
    data = tmp_path / "d.txt"
    main(["gen-data", "--n", "3", "--out", str(data)])
    capsys.readouterr()
    assert main(["train", "--dataset", str(data), "--out-dir", str(tmp_path / "r"), "--steps", "300",
                 "--eval-every", "300", "--warmup", "100", "--hidden", "8"]) == 0
    assert "test SHD (best):" in capsys.readouterr().out


def test_train_validation_fails_before_compute(out, tmp_path):
    data = tmp_path / "d.txt"
    main(["gen-data", "--n", "3", "--out", str(data)])
    run = tmp_path / "never"
    assert main(["train", "--dataset", str(data), "--out-dir", str(run), "--bogus-key", "1"]) == 2
    assert main(["train", "--dataset", str(data), "--out-dir", str(run), "--horizon", "0"]) == 2
    assert main(["train", "--dataset", str(data), "--out-dir", str(run), "--n", "4",
                 "--steps", "2000", "--eval-every", "1000"]) == 2
    assert main(["train", "--dataset", str(tmp_path / "missing.txt"), "--out-dir", str(run)]) == 2
    assert main(["train", "--out-dir", str(run)]) == 2
    assert main(["train", "--preset", "paper-6var", "--dataset", str(data)]) == 2
    assert not run.exists()


def test_train_config_file(out, tmp_path):
    data = tmp_path / "d.txt"
    main(["gen-data", "--n", "3", "--out", str(data)])
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"preset = desk-3var\ndataset = {data}\nout_dir = {tmp_path / 'r'}\n"
                   "total_steps = 400\neval_every = 400\nwarmup = 100\nhidden = 8\n")
    assert main(["train", "--config", str(cfg), "--random-interventions"]) == 0
    text = (tmp_path / "r" / "config.txt").read_text()
    assert "random_interventions = True" in text and "total_steps = 400" in text


def test_eval_baseline_transfer(trained, out, capsys):
    data, run = trained
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(run / "best.ckpt"), "--dataset", str(data),
                 "--fclass", "linear", "--out", str(out / "e.json")]) == 0
    line = capsys.readouterr().out
    assert line.startswith("CORE  n=3  linear") and "±" in line
    report = json.loads((out / "e.json").read_text())
    assert report["n_rollouts"] == 18

    assert main(["baseline", "--kind", "empty", "--dataset", str(data), "--out", str(out / "b.json")]) == 0
    assert json.loads((out / "b.json").read_text())["mean_shd"] == pytest.approx(
        load_dataset(data).mean_edges("test"))

    assert main(["transfer", "--ckpts", str(run / "best.ckpt"), "--dataset", str(data),
                 "--fclasses", "linear,linear_noise,interaction", "--out", str(out / "t.json")]) == 0
    grid = json.loads((out / "t.json").read_text())
    assert len(grid) == 1 and list(next(iter(grid.values()))) == ["linear", "linear_noise", "interaction"]


def test_dimension_mismatch_exit_codes(trained, out):
    data, run = trained
    d4 = out / "d4.txt"
    main(["gen-data", "--n", "4", "--out", str(d4)])
    assert main(["eval", "--ckpt", str(run / "best.ckpt"), "--dataset", str(d4)]) == 2
    assert main(["transfer", "--ckpts", str(run / "best.ckpt"), "--dataset", str(d4)]) == 2
    assert main(["infer", "--ckpt", str(run / "best.ckpt"), "--scm-preset", "eq7"]) == 2
    assert main(["eval", "--ckpt", str(out / "none.ckpt"), "--dataset", str(data)]) == 1
    assert main(["baseline", "--kind", "empty", "--dataset", str(out / "none.txt")]) == 1
    (out / "broken.txt").write_text("not a dataset\n")
    assert main(["baseline", "--kind", "empty", "--dataset", str(out / "broken.txt")]) == 2


def test_infer_trace(trained, out, capsys):
    data, run = trained
    capsys.readouterr()
    args = ["infer", "--ckpt", str(run / "best.ckpt"), "--dataset", str(data), "--graph-index", "2",
            "--print-scm", "--trace", str(out / "t.jsonl")]
    assert main(args) == 0
    text = capsys.readouterr().out
    assert sum(line.startswith("step ") for line in text.splitlines()) == 5
    assert "X0 <-" in text and "SHD:" in text
    recs = [json.loads(x) for x in (out / "t.jsonl").read_text().splitlines()]
    assert len(recs) == 5 and {"step", "intervention", "structural", "reward", "observation", "estimate"} <= set(recs[0])
    assert main(args) == 0
    assert capsys.readouterr().out == text
    assert main(["infer", "--ckpt", str(run / "best.ckpt"), "--dataset", str(data), "--graph-index", "99"]) == 2


def test_console_script_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "corecd.cli", "eval", "--ckpt", str(tmp_path / "x"),
                           "--dataset", str(tmp_path / "y")], capture_output=True, text=True)
    assert proc.returncode == 1
    proc = subprocess.run([sys.executable, "-m", "corecd.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
