import csv
import json
import subprocess
import sys

import pytest

from denc.cli import dispatch

FAST = """\
k_d = 3
k_a = 4
batch_size = 512
learning_rate = 0.5
max_epochs = 3
patience = 2
walks_per_node = 2
walk_length = 8
walk_epochs = 1
exposure_epochs = 5
balance_batch_l = 4
"""


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "synth.cfg").write_text("m = 60\nn = 50\nedge_prob = 0.2\ndelta = 0.35\nseed = 2\n")
    assert dispatch(["synth", "--config", str(d / "synth.cfg"), "--out", str(d / "data")]) == 0
    (d / "run.cfg").write_text(f"data = data\n{FAST}mask_fractions = 0,0.5\ncohort_size = 5\n")
    return d


def test_synth_writes_all_files(synth_dir):
    names = {p.name for p in (synth_dir / "data").iterdir()}
    assert {"ratings.tsv", "trust.tsv", "truth.tsv", "exposure.tsv", "config.json",
            "run_manifest.json"} <= names
    truth = (synth_dir / "data" / "truth.tsv").read_text().splitlines()
    assert len(truth) == 60 * 50


def test_synth_without_config(tmp_path):
    assert dispatch(["synth", "--out", str(tmp_path), "--seed", "4"]) == 0
    meta = json.loads((tmp_path / "config.json").read_text())
    assert meta["seed"] == 4


def test_unknown_subcommand_exits_one(capsys):
    assert dispatch(["frobnicate"]) == 1


def test_missing_config_exits_one(tmp_path):
    assert dispatch(["train", "--out", str(tmp_path)]) == 1
    assert dispatch(["train", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 1


def test_invalid_value_exits_one(tmp_path):
    (tmp_path / "bad.cfg").write_text("k_d = 0\n")
    assert dispatch(["train", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path)]) == 1
    (tmp_path / "bad2.cfg").write_text("this line has no equals sign\n")
    assert dispatch(["train", "--config", str(tmp_path / "bad2.cfg"),
                     "--out", str(tmp_path)]) == 1


def test_help_lists_flags():
    res = subprocess.run([sys.executable, "-m", "denc", "train", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for flag in ("--config", "--out", "--seed", "--log"):
        assert flag in res.stdout
    top = subprocess.run([sys.executable, "-m", "denc", "--help"], capture_output=True, text=True)
    for cmd in ("synth", "embed", "train", "eval", "analyze", "ablate"):
        assert cmd in top.stdout


def test_train_then_eval(synth_dir):
    out = synth_dir / "train_out"
    assert dispatch(["train", "--config", str(synth_dir / "run.cfg"), "--out", str(out)]) == 0
    for name in ("metrics.json", "stats.json", "run_manifest.json", "checkpoint/U.bin",
                 "checkpoint/history.csv"):
        assert (out / name).exists()
    (synth_dir / "eval.cfg").write_text("data = data\ncheckpoint = train_out/checkpoint\n")
    ev = synth_dir / "eval_out"
    assert dispatch(["eval", "--config", str(synth_dir / "eval.cfg"), "--out", str(ev)]) == 0
    assert (json.loads((ev / "metrics.json").read_text())
            == json.loads((out / "metrics.json").read_text()))


def test_eval_needs_checkpoint(synth_dir, tmp_path):
    (tmp_path / "e.cfg").write_text(f"data = {synth_dir / 'data'}\n")
    assert dispatch(["eval", "--config", str(tmp_path / "e.cfg"), "--out", str(tmp_path)]) == 1


def test_embed(synth_dir):
    out = synth_dir / "embed_out"
    assert dispatch(["embed", "--config", str(synth_dir / "run.cfg"), "--out", str(out)]) == 0
    info = json.loads((out / "embedding.json").read_text())
    assert info["m"] == 60 and info["dim"] == 4


def test_ablate_three_rows(synth_dir):
    out = synth_dir / "ablate_out"
    assert dispatch(["ablate", "--config", str(synth_dir / "run.cfg"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert [r["ablation"] for r in rows] == ["full", "no_exposure", "no_confounder"]


def test_analyze_outputs(synth_dir):
    out = synth_dir / "analyze_out"
    assert dispatch(["analyze", "--config", str(synth_dir / "run.cfg"), "--out", str(out)]) == 0
    for name in ("cohorts.json", "interaction_dist_in.csv", "interaction_dist_out.csv",
                 "common_items_in.csv", "common_items_out.csv", "masking_sweep.csv"):
        assert (out / name).exists()
    assert len(list(csv.DictReader(open(out / "masking_sweep.csv")))) == 2


def test_repeated_runs_identical(synth_dir):
    digests = []
    for k in range(2):
        out = synth_dir / f"rep{k}"
        assert dispatch(["train", "--config", str(synth_dir / "run.cfg"), "--out", str(out)]) == 0
        digests.append(json.loads((out / "run_manifest.json").read_text())["artifacts"])
    assert digests[0] == digests[1] and len(digests[0]) >= 10


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_failure_exits_two(synth_dir, tmp_path):
    # a learning rate this large makes the factors overflow
    (tmp_path / "div.cfg").write_text(f"data = {synth_dir / 'data'}\n"
                                      + FAST.replace("learning_rate = 0.5", "learning_rate = 1e6"))
    assert dispatch(["train", "--config", str(tmp_path / "div.cfg"),
                     "--out", str(tmp_path / "o")]) == 2
