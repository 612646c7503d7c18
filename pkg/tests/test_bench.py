import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from promptevo.bench.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from promptevo.bench.commands import read_per_image, summarize
from promptevo.gradcheck import random_params
from promptevo.oracle import load_params, save_params

SEG = ["--kappa", "10", "--tau", "0.3"]


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def outputs(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file() and p.name != "run_manifest.json"}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    data = root / "data"
    assert main(["phantom", "--train", "3", "--val", "2", "--test", "3", "--width", "32", "--height", "32", "--seed", "5", "--out", str(data)]) == 0
    train = root / "train"
    assert main(["train", "--data", str(data), "--epochs", "2", "--batch", "8", "--deltas=-2,2", "--out", str(train)] + SEG) == 0
    ev = root / "evaluate"
    assert main(["evaluate", "--data", str(data), "--weights", str(train / "weights.spot"), "--iters", "4", "--trajectories", "--out", str(ev)]) == 0
    return root


class TestCommands:
    def test_phantom_layout(self, run_dir):
        rows = read_csv(run_dir / "data" / "manifest.csv")
        assert rows[0] == ["id", "image_path", "mask_path", "split"]
        assert len(rows) == 9
        assert {r[3] for r in rows[1:]} == {"train", "val", "test"}
        for r in rows[1:]:
            assert (run_dir / "data" / r[1]).is_file() and (run_dir / "data" / r[2]).is_file()

    def test_train_outputs(self, run_dir):
        t = run_dir / "train"
        assert read_csv(t / "candidates.csv")[0] == ["sample_id", "source", "delta_or_prompt", "dice"]
        assert len(read_csv(t / "candidates.csv")) == 1 + 8 * 8
        loss = read_csv(t / "loss.csv")
        assert loss[0] == ["epoch", "train_mse", "val_mse"] and len(loss) == 3
        summary = dict(read_csv(t / "summary.csv")[1:])
        assert -1 <= float(summary["test_pearson"]) <= 1
        assert load_params(t / "weights.spot").input_shape == (32, 32)

    def test_manifest_recorded(self, run_dir):
        m = json.loads((run_dir / "train" / "run_manifest.json").read_text())
        assert m["command"] == "train" and m["status"] == "ok"
        assert m["flags"]["epochs"] == 2 and m["seed"] == 0
        assert m["finished"] >= m["started"]

    def test_evaluate_summary_consistent(self, run_dir):
        ev = run_dir / "evaluate"
        rows = read_per_image(ev / "per_image.csv")
        assert read_csv(ev / "per_image.csv")[0] == ["id", "dice_initial", "dice_evolved", "score_initial", "score_evolved"]
        assert [r["id"] for r in rows] == ["test-0000", "test-0001", "test-0002"]
        summary = {k: float(v) for k, v in read_csv(ev / "summary.csv")[1:]}
        for k, v in summarize(rows).items():
            assert (math.isnan(v) and math.isnan(summary[k])) or summary[k] == v
        assert summary["all_frozen"] == 1 and summary["any_nonfinite"] == 0
        assert summary["min_score_gain"] >= 0
        assert len(list((ev / "trajectories").glob("*_trajectory.csv"))) == 3

    def test_trajectory_files(self, run_dir):
        tr = read_csv(run_dir / "evaluate" / "trajectories" / "test-0000_trajectory.csv")
        assert tr[0] == ["iter", "x", "y", "score", "dice"]
        assert [int(r[0]) for r in tr[1:]] == list(range(5))

    def test_evolve_single_and_dump(self, run_dir, tmp_path):
        assert main([
            "evolve", "--data", str(run_dir / "data"), "--id", "test-0001", "--weights", str(run_dir / "train" / "weights.spot"),
            "--iters", "2", "--dump-masks", "--out", str(tmp_path),
        ]) == 0
        assert (tmp_path / "test-0001_trajectory.csv").is_file()
        assert len(list((tmp_path / "masks").glob("test-0001_iter*.pgm"))) == 3

    def test_heatmap(self, run_dir, tmp_path):
        assert main(["heatmap", "--data", str(run_dir / "data"), "--id", "test-0002", "--stride", "3",
                     "--weights", str(run_dir / "train" / "weights.spot"), "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "heatmap_test-0002.csv")
        assert rows[0] == ["x", "y", "dice", "score"]
        assert len(rows) > 2
        for r in rows[1:]:
            assert int(r[0]) % 3 == 0 and int(r[1]) % 3 == 0
            assert 0 <= float(r[2]) <= 1 and 0 < float(r[3]) < 1

    def test_parallel_matches_serial(self, run_dir, tmp_path):
        args = ["evaluate", "--data", str(run_dir / "data"), "--weights", str(run_dir / "train" / "weights.spot"), "--iters", "4"]
        assert main(args + ["--jobs", "2", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "per_image.csv").read_bytes() == (run_dir / "evaluate" / "per_image.csv").read_bytes()


class TestReplay:
    @pytest.mark.parametrize("command", ["data", "train", "evaluate"])
    def test_byte_identical(self, run_dir, tmp_path, command):
        src = run_dir / command
        assert main(["replay", str(src / "run_manifest.json"), "--out", str(tmp_path)]) == 0
        a, b = outputs(src), outputs(tmp_path)
        assert a.keys() == b.keys() and a
        for k in a:
            assert a[k] == b[k], k

    def test_missing_manifest(self, tmp_path):
        assert main(["replay", str(tmp_path / "nope.json")]) == EXIT_DATA


class TestExitCodes:
    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as e:
            main(["phantom", "--bogus"])
        assert e.value.code == EXIT_USAGE

    def test_no_command(self):
        with pytest.raises(SystemExit) as e:
            main([])
        assert e.value.code == EXIT_USAGE

    def test_bad_stride(self, run_dir, tmp_path):
        assert main(["heatmap", "--data", str(run_dir / "data"), "--stride", "0", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_bad_segmenter_config(self, run_dir, tmp_path):
        assert main(["heatmap", "--data", str(run_dir / "data"), "--kappa", "-1", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_missing_data(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == EXIT_DATA

    def test_missing_weights(self, run_dir, tmp_path):
        code = main(["evolve", "--data", str(run_dir / "data"), "--weights", str(tmp_path / "w.spot"), "--out", str(tmp_path)])
        assert code == EXIT_DATA

    def test_corrupt_weights(self, run_dir, tmp_path):
        w = tmp_path / "w.spot"
        w.write_bytes(b"garbage")
        assert main(["evolve", "--data", str(run_dir / "data"), "--weights", str(w), "--out", str(tmp_path)]) == EXIT_DATA

    def test_corrupt_image(self, run_dir, tmp_path):
        import shutil

        data = tmp_path / "data"
        shutil.copytree(run_dir / "data", data)
        (data / read_csv(data / "manifest.csv")[-1][1]).write_bytes(b"P5\n32 32\n65535\n\x00")
        code = main(["evaluate", "--data", str(data), "--weights", str(run_dir / "train" / "weights.spot"), "--iters", "1", "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA

    def test_unknown_id(self, run_dir, tmp_path):
        code = main(["evolve", "--data", str(run_dir / "data"), "--id", "test-9999", "--weights", str(run_dir / "train" / "weights.spot"), "--out", str(tmp_path)])
        assert code == EXIT_DATA

    def test_nonfinite_weights(self, run_dir, tmp_path):
        p = random_params(np.random.default_rng(0), (32, 32))
        p.biases[4][:] = np.nan
        save_params(p, tmp_path / "nan.spot")
        code = main(["evolve", "--data", str(run_dir / "data"), "--id", "test-0000", "--weights", str(tmp_path / "nan.spot"), "--out", str(tmp_path / "o")])
        assert code == EXIT_NUMERIC
        m = json.loads((tmp_path / "o" / "run_manifest.json").read_text())
        assert m["status"] == "failed"


def test_default_out_from_environment(run_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("PROMPTEVO_OUT", str(tmp_path))
    monkeypatch.chdir(tmp_path)
    assert main(["evolve", "--data", str(run_dir / "data"), "--id", "test-0000", "--weights", str(run_dir / "train" / "weights.spot"), "--iters", "1"]) == EXIT_OK
    assert (tmp_path / "evolve" / "test-0000_trajectory.csv").is_file()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "promptevo", "phantom", "--train", "1", "--val", "1", "--test", "1",
                        "--width", "16", "--height", "16", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "manifest.csv").is_file()
