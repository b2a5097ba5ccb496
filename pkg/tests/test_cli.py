import json

import numpy as np
import pytest

from rlplace.cli import main, read_csv, read_pgm, write_pgm
from rlplace.netlist import parse_bookshelf

from conftest import DESIGNS, fixture_aux

TOY = DESIGNS / "toy500" / "toy500.aux"


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Random (untrained) checkpoint plus cached baseline stats for toy500."""
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--design", str(TOY), "--episodes", "0", "--out", str(out)]) == 0
    return out


def test_place_writes_stats(tmp_path):
    assert main(["place", "--design", str(TOY), "--out", str(tmp_path), "--dump-maps"]) == 0
    rows, meta = read_csv(tmp_path / "stats.csv")
    assert list(rows[0]) == ["iteration", "hpwl", "overflow", "lambda", "cof", "wall_ms"]
    its = [int(r["iteration"]) for r in rows]
    assert its == sorted(its) and its[0] == 0
    assert float(rows[-1]["overflow"]) <= 0.1
    assert set(meta) == {"git", "config_digest", "seed"}
    img = read_pgm(tmp_path / "density.pgm")
    assert img.shape == (32, 32)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["reason"] == "converged"


def test_place_is_seeded(tmp_path):
    for d in ("a", "b"):
        assert main(["place", "--design", str(TOY), "--seed", "3", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "toy500.pl").read_text() == (tmp_path / "b" / "toy500.pl").read_text()


def test_eval_random_checkpoint(tmp_path, trained):
    rc = main(["eval", "--design", str(TOY), "--checkpoint", str(trained / "checkpoint.bin"),
               "--stats", str(trained / "toy500.stats.json"), "--out", str(tmp_path)])
    report = json.loads((tmp_path / "eval.json").read_text())
    assert rc == 0
    assert np.isfinite(report["final_hpwl"]) and np.isfinite(report["improvement_pct"])


def _content(path):
    return [ln for ln in path.read_text().splitlines() if not ln.lstrip().startswith("#")]


def test_edit_zero_is_identity(tmp_path):
    assert main(["edit", "--in", str(TOY), "--edits", "0", "--out", str(tmp_path)]) == 0
    for ext in ("nodes", "nets", "pl", "scl"):
        assert _content(tmp_path / f"toy500.{ext}") == _content(TOY.with_suffix(f".{ext}"))
    log = json.loads((tmp_path / "edits.json").read_text())
    assert log["records"] == []


def test_edit_fixture(tmp_path):
    assert main(["edit", "--in", str(fixture_aux("mixed8")), "--edits", "25", "--seed", "2",
                 "--out", str(tmp_path)]) == 0
    nl, _ = parse_bookshelf(tmp_path / "mixed8.aux")
    assert len(json.loads((tmp_path / "edits.json").read_text())["records"]) == 25
    assert nl.num_nets >= 1


def test_robustness_report(tmp_path, trained):
    args = ["robustness", "--design", str(TOY), "--checkpoint", str(trained / "checkpoint.bin"),
            "--edits", "0,5", "--reps", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    rows, _ = read_csv(tmp_path / "a" / "robustness.csv")
    assert len(rows) == 4
    assert all(float(r["retained_fraction"]) == 1.0 for r in rows if r["edits"] == "0")
    assert (tmp_path / "a" / "robustness.csv").read_text() == (tmp_path / "b" / "robustness.csv").read_text()


def test_features_noise_and_policy_dump(tmp_path, trained):
    assert main(["features", "--design", str(TOY), "--channel", "wire_density",
                 "--out", str(tmp_path / "f")]) == 0
    grid = np.loadtxt(tmp_path / "f" / "wire_density.csv", delimiter=",")
    assert grid.shape == (32, 32) and np.all(grid >= 0)
    assert main(["noise-demo", "--action-dims", "16", "--base", "2", "--frames", "4",
                 "--out", str(tmp_path / "n")]) == 0
    assert len(list((tmp_path / "n").glob("frame_*.pgm"))) == 4
    assert main(["policy-dump", "--design", str(TOY), "--checkpoint", str(trained / "checkpoint.bin"),
                 "--stats", str(trained / "toy500.stats.json"), "--step", "3",
                 "--out", str(tmp_path / "p")]) == 0
    doc = json.loads((tmp_path / "p" / "policy.json").read_text())
    assert np.isfinite(doc["value"])


def test_train_spatial_smoke(tmp_path):
    out = tmp_path / "t"
    assert main(["train", "--design", str(TOY), "--action", "spatial", "--episodes", "2",
                 "--out", str(out)]) == 0
    rows, meta = read_csv(out / "training_curve.csv")
    assert len(rows) == 2 and meta["seed"] == 0
    assert (out / "checkpoint.json").exists()


def test_exit_codes(tmp_path):
    assert main(["place", "--design", "/no/such.aux", "--out", str(tmp_path)]) == 3
    assert main(["place", "--design", str(TOY), "--set", "grid_dims=abc", "--out", str(tmp_path)]) == 2
    assert main(["place", "--design", str(TOY), "--set", "nonsense=1", "--out", str(tmp_path)]) == 2
    assert main(["place", "--design", str(TOY), "--set", "max_iterations=3", "--out", str(tmp_path)]) == 4
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    assert main(["eval", "--design", str(TOY), "--checkpoint", str(bad), "--out", str(tmp_path)]) == 3


def test_pgm_round_trip(tmp_path):
    g = np.arange(12.0).reshape(3, 4)
    write_pgm(tmp_path / "g.pgm", g)
    img = read_pgm(tmp_path / "g.pgm")
    assert img.shape == (4, 3)               # rows are y, top row is max y
    assert img[-1, 0] == 0 and img[0, -1] == 255
