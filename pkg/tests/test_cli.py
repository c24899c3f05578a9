import csv
import json

import numpy as np
import pytest

from idg.cli import run
from idg.eval import read_curves_csv, read_regret_csv
from idg.models import load_checkpoint

SMALL = {"experiment": "synthetic", "num_train_domains": 4, "num_test_domains": 4,
         "samples_per_domain": 20, "max_outer_steps": 30, "eta": 0.05, "batch_size": 10,
         "lambda_grid": [0.0, 0.5, 1.0], "seeds": [3]}


@pytest.fixture
def config(tmp_path):
    def write(**changes):
        path = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*.json')))}.json"
        path.write_text(json.dumps({**SMALL, "output_dir": str(tmp_path / "runs"), **changes}))
        return str(path)
    return write


def test_missing_config_names_the_file(tmp_path, capsys):
    assert run(["train", "--config", str(tmp_path / "nope.json")]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_bad_flags_and_bad_keys_are_config_errors(config, capsys):
    assert run(["frobnicate"]) == 2
    assert run(["train"]) == 2
    assert run(["train", "--config", config(learning_rate=1.0)]) == 2
    assert "learning_rate" in capsys.readouterr().err
    assert run(["train", "--config", config(), "--threads", "0"]) == 2


def test_missing_data_is_a_data_error(config, tmp_path, capsys):
    cfg = config(experiment="bike", bike_csv=str(tmp_path / "hour.csv"))
    assert run(["gen-data", "--config", cfg]) == 3
    assert "hour.csv" in capsys.readouterr().err


def test_gen_data_writes_csv_and_manifest(config, tmp_path, capsys):
    out = tmp_path / "data"
    assert run(["gen-data", "--config", config(), "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"train.csv", "test.csv", "manifest.json"}
    with open(out / "train.csv") as fh:
        ids = {row["domain_id"] for row in csv.DictReader(fh)}
    assert len(ids) == 4
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and man["config"]["num_train_domains"] == 4


def test_train_eval_regret_pipeline(config, tmp_path, capsys):
    cfg = config()
    out = tmp_path / "iro"
    assert run(["train", "--config", cfg, "--out", str(out)]) == 0
    header, last = capsys.readouterr().out.strip().splitlines()
    assert header == "step,alpha,beta,grad_norm" and len(last.split(",")) == 4
    assert {"checkpoint.json", "trace.csv", "trace.png", "manifest.json"} <= {p.name for p in out.iterdir()}
    model = load_checkpoint(out / "checkpoint.json")
    assert model.spec.conditioning == "film-affine"

    assert run(["eval", "--config", cfg, "--checkpoint", str(out / "checkpoint.json"),
                "--label", "IL"]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert printed[0] == "label,lambda,value" and len(printed) == 4
    curves_path = out / "eval" / "curves.csv"
    (curve,) = read_curves_csv(curves_path)
    assert curve.lambda_grid == (0.0, 0.5, 1.0)

    # a second curve playing the ideal, one unit lower everywhere
    with open(curves_path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for lam, v in zip(curve.lambda_grid, curve.values):
            w.writerow(["ideal", repr(lam), repr(v - 1.0)])
    assert run(["regret", "--curves", str(curves_path)]) == 0
    table = read_regret_csv(out / "eval" / "regret.csv")
    assert table["ideal"] == 0.0 and np.isclose(table["IL"], 1.0, rtol=0, atol=1e-12)
    assert run(["regret", "--curves", str(curves_path), "--ideal-label", "oracle"]) == 2


@pytest.mark.parametrize("method", ["iro", "plf", "plh"])
def test_train_is_byte_identical_across_runs(config, tmp_path, method):
    cfg = config(method=method, prior_alpha=2.0, prior_beta=3.0, lambda_fixed=0.5)
    for name in ("a", "b"):
        assert run(["train", "--config", cfg, "--out", str(tmp_path / name), "--threads", "1"]) == 0
    for f in ("checkpoint.json", "trace.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_flag_changes_the_run(config, tmp_path):
    cfg = config()
    assert run(["train", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert run(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "4"]) == 0
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() != \
        (tmp_path / "b" / "checkpoint.json").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 4


def test_reproduce_writes_report_and_is_repeatable(config, tmp_path, capsys):
    cfg = config(max_outer_steps=15, seeds=[0, 1])
    for name in ("a", "b"):
        assert run(["reproduce", "table1-synthetic", "--config", cfg, "--scale", "0.016",
                    "--seed", "7", "--out", str(tmp_path / name)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "label,max_regret,standard_error"
    a = tmp_path / "a"
    assert {"curves.csv", "regret.csv", "curves.svg", "curves.png", "regret_by_seed.csv",
            "manifest.json"} <= {p.name for p in a.iterdir()}
    assert (a / "regret.csv").read_bytes() == (tmp_path / "b" / "regret.csv").read_bytes()
    table = read_regret_csv(a / "regret.csv")
    assert list(table)[0] == "IL" and table["ideal"] == 0.0
    assert all(v >= -1e-12 for v in table.values())
    man = json.loads((a / "manifest.json").read_text())
    assert man["config"]["seeds"] == [7, 8] and man["config"]["num_train_domains"] == 4


def test_reproduce_rejects_bad_scale_and_target(tmp_path):
    assert run(["reproduce", "table1-synthetic", "--scale", "0", "--out", str(tmp_path)]) == 2
    assert run(["reproduce", "table9"]) == 2
