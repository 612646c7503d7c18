"""Experiment commands. Each takes a flat dict of flags and writes files under ``out``.

Outputs never embed timestamps or absolute paths, so re-running a command
with the same flags reproduces them byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..errors import DataError, InvalidConfigError
from ..evolve import EvolveConfig, evolve, initial_prompt
from ..field import Prompt, dice, pearson
from ..oracle.candidates import as_arrays, build_candidates, write_candidates_csv
from ..oracle.regressor import RegressorParams, regressor_forward
from ..oracle.train import TrainingConfig, predict, train_regressor
from ..oracle.weights import load_params, save_params
from ..phantom import PhantomSpec, Sample, find_sample, make_dataset, read_dataset, save_pgm, write_dataset
from ..segmenter import SegmenterConfig, SurrogateSegmenter, sharpen

log = logging.getLogger(__name__)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _segmenter(flags: dict) -> SurrogateSegmenter:
    return SurrogateSegmenter(
        SegmenterConfig(flags["kappa"], flags["tau"], flags["lambda_i"], flags["lambda_r"])
    )


def _evolve_cfg(flags: dict) -> EvolveConfig:
    return EvolveConfig(iterations=flags["iters"], k=flags["k"], lr=flags["lr"], clamp_margin=flags["margin"])


def _load_weights(path) -> RegressorParams:
    if not Path(path).is_file():
        raise DataError(f"weights file {path} not found")
    return load_params(path)


def params_digest(params: RegressorParams) -> str:
    h = hashlib.sha256()
    for a in params.all_arrays():
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _samples(flags: dict) -> list[Sample]:
    if flags.get("id"):
        return [find_sample(flags["data"], flags["id"])]
    split = flags.get("split") or "test"
    samples = read_dataset(flags["data"], split).get(split, [])
    if not samples:
        raise DataError(f"split {split!r} is empty or missing in {flags['data']}")
    return samples


# --- phantom -------------------------------------------------------------------


def cmd_phantom(flags: dict) -> dict:
    spec = PhantomSpec(width=flags["width"], height=flags["height"])
    train, val, test = make_dataset(spec, flags["train"], flags["val"], flags["test"], flags["seed"])
    manifest = write_dataset(flags["out"], {"train": train, "val": val, "test": test})
    print(f"wrote {len(train) + len(val) + len(test)} samples; manifest {manifest}")
    return {"samples": len(train) + len(val) + len(test)}


# --- train ---------------------------------------------------------------------


def cmd_train(flags: dict) -> dict:
    out = Path(flags["out"])
    data = read_dataset(flags["data"])
    if not data.get("train") or not data.get("val"):
        raise DataError(f"dataset {flags['data']} needs nonempty train and val splits")
    seg = _segmenter(flags)
    kw = dict(deltas=tuple(flags["deltas"]), segmenter=seg, k=flags["k"], seed=flags["seed"])
    train_c = build_candidates(data["train"], **kw)
    val_c = build_candidates(data["val"], **kw)
    test_c = build_candidates(data["test"], **kw) if data.get("test") else []
    write_candidates_csv(train_c + val_c + test_c, out / "candidates.csv")

    cfg = TrainingConfig(
        epochs=flags["epochs"], batch_size=flags["batch"], lr=flags["lr"], seed=flags["seed"], patience=flags.get("patience")
    )

    def report(epoch, tr, va):
        if epoch == 1 or epoch % 10 == 0 or epoch == cfg.epochs:
            print(f"epoch {epoch:4d}  train_mse {tr:.6f}  val_mse {va:.6f}", file=sys.stderr, flush=True)

    res = train_regressor(train_c, val_c, cfg, on_epoch=report)
    weights_out = Path(flags.get("weights_out") or out / "weights.spot")
    weights_out.parent.mkdir(parents=True, exist_ok=True)
    save_params(res.params, weights_out)
    _write_csv(out / "loss.csv", ("epoch", "train_mse", "val_mse"), [(e, _fmt(a), _fmt(b)) for e, a, b in res.history])

    summary = {
        "initial_val_mse": res.initial_val_mse,
        "best_val_mse": res.best_val_mse,
        "best_epoch": res.best_epoch,
        "epochs_run": len(res.history),
    }
    if test_c:
        # Score with the weights as stored, so the number matches what later commands see.
        stored = load_params(weights_out)
        images, masks, target = as_arrays(test_c)
        pred = predict(stored, images, masks)
        summary["test_pearson"] = pearson(pred, target)
        summary["test_mse"] = float(np.mean((pred - target) ** 2))
        _write_csv(
            out / "test_predictions.csv",
            ("sample_id", "source", "delta_or_prompt", "dice", "score"),
            [(c.sample_id, c.source, c.tag, _fmt(c.dice), _fmt(s)) for c, s in zip(test_c, pred)],
        )
    _write_csv(out / "summary.csv", ("metric", "value"), [(k, _fmt(v)) for k, v in summary.items()])
    for k, v in summary.items():
        print(f"{k}: {v}")
    return summary


# --- heatmap -------------------------------------------------------------------


def heatmap_rows(sample: Sample, stride: int, seg, k: float, params: RegressorParams | None):
    if stride < 1:
        raise InvalidConfigError("stride must be >= 1")
    h, w = sample.gt.shape
    rows = []
    for y in range(0, h, stride):
        for x in range(0, w, stride):
            if sample.gt[y, x] <= 0.5:
                continue
            mask = sharpen(seg.segment(sample.image, Prompt(float(x), float(y))).logits, k)
            d = dice(mask, sample.gt)
            score = regressor_forward(sample.image, mask, params, training=False)[0] if params is not None else float("nan")
            rows.append((x, y, d, score))
    return rows


def cmd_heatmap(flags: dict) -> dict:
    out = Path(flags["out"])
    out.mkdir(parents=True, exist_ok=True)
    params = _load_weights(flags["weights"]) if flags.get("weights") else None
    seg = _segmenter(flags)
    stats = {}
    for sample in _samples(flags):
        rows = heatmap_rows(sample, flags["stride"], seg, flags["k"], params)
        _write_csv(out / f"heatmap_{sample.id}.csv", ("x", "y", "dice", "score"), [(x, y, _fmt(d), _fmt(s)) for x, y, d, s in rows])
        ds = [r[2] for r in rows]
        spread = max(ds) - min(ds) if ds else 0.0
        stats[sample.id] = spread
        print(f"{sample.id}: {len(rows)} prompts, dice {min(ds, default=0):.3f}..{max(ds, default=0):.3f} (spread {spread:.3f})")
    return {"spread": stats}


# --- evolve / evaluate ---------------------------------------------------------


def _evolve_one(sample: Sample, params: RegressorParams, flags: dict, traj_dir: Path | None, dump_dir: Path | None):
    seg = _segmenter(flags)
    cfg = _evolve_cfg(flags)
    digest_before = params_digest(params)
    seg_before = repr(seg.cfg)

    on_step = None
    if dump_dir is not None:
        def on_step(step, mask):
            save_pgm(np.clip(mask, 0.0, 1.0), dump_dir / f"{sample.id}_iter{step.iteration:03d}.pgm")

    p0 = initial_prompt(sample.gt)
    best, traj = evolve(sample.image, p0, params, cfg, seg, gt=sample.gt, on_step=on_step)
    if traj_dir is not None:
        traj.write_csv(traj_dir / f"{sample.id}_trajectory.csv")
    first, top = traj.steps[0], traj.best_step
    return {
        "id": sample.id,
        "dice_initial": first.dice,
        "dice_evolved": top.dice,
        "score_initial": first.score,
        "score_evolved": top.score,
        "x0": p0.x,
        "y0": p0.y,
        "x": best.x,
        "y": best.y,
        "steps": len(traj),
        "nonfinite": traj.nonfinite,
        "frozen": digest_before == params_digest(params) and seg_before == repr(seg.cfg),
    }


def _evolve_worker(args):
    return _evolve_one(*args)


def _run_evolutions(samples, params, flags, traj_dir, dump_dir) -> list[dict]:
    jobs = max(1, int(flags.get("jobs") or 1))
    tasks = [(s, params, flags, traj_dir, dump_dir) for s in samples]
    if jobs == 1:
        results = [_evolve_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evolve_worker, tasks))
    return sorted(results, key=lambda r: r["id"])


def cmd_evolve(flags: dict) -> dict:
    out = Path(flags["out"])
    out.mkdir(parents=True, exist_ok=True)
    params = _load_weights(flags["weights"])
    dump_dir = None
    if flags.get("dump_masks"):
        dump_dir = out / "masks"
        dump_dir.mkdir(exist_ok=True)
    results = _run_evolutions(_samples(flags), params, flags, out, dump_dir)
    for r in results:
        print(f"{r['id']}: score {r['score_initial']:.4f} -> {r['score_evolved']:.4f}, dice {r['dice_initial']:.4f} -> {r['dice_evolved']:.4f}")
    return {"results": results}


PER_IMAGE_FIELDS = ("id", "dice_initial", "dice_evolved", "score_initial", "score_evolved")


def summarize(rows: list[dict]) -> dict:
    """Summary statistics, computed only from the per-image table."""
    if not rows:
        raise DataError("nothing to summarize")
    d0 = np.array([r["dice_initial"] for r in rows], dtype=np.float64)
    d1 = np.array([r["dice_evolved"] for r in rows], dtype=np.float64)
    s0 = np.array([r["score_initial"] for r in rows], dtype=np.float64)
    s1 = np.array([r["score_evolved"] for r in rows], dtype=np.float64)
    try:
        r_evolved = pearson(s1, d1)
    except Exception:
        r_evolved = float("nan")
    return {
        "n": len(rows),
        "n_improved": int(np.sum(d1 > d0)),
        "fraction_improved": float(np.mean(d1 > d0)),
        "mean_dice_initial": float(d0.mean()),
        "mean_dice_evolved": float(d1.mean()),
        "pearson_score_dice_evolved": r_evolved,
        "min_score_gain": float(np.min(s1 - s0)),
    }


def read_per_image(path) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {"id": r["id"], **{k: float(r[k]) for k in PER_IMAGE_FIELDS[1:]}}
            for r in csv.DictReader(f)
        ]


def cmd_evaluate(flags: dict) -> dict:
    out = Path(flags["out"])
    out.mkdir(parents=True, exist_ok=True)
    params = _load_weights(flags["weights"])
    traj_dir = out / "trajectories" if flags.get("trajectories") else None
    if traj_dir is not None:
        traj_dir.mkdir(exist_ok=True)
    results = _run_evolutions(_samples(flags), params, flags, traj_dir, None)
    _write_csv(out / "per_image.csv", PER_IMAGE_FIELDS, [[r["id"]] + [_fmt(r[k]) for k in PER_IMAGE_FIELDS[1:]] for r in results])
    summary = summarize(read_per_image(out / "per_image.csv"))
    summary["all_frozen"] = int(all(r["frozen"] for r in results))
    summary["any_nonfinite"] = int(any(r["nonfinite"] for r in results))
    _write_csv(out / "summary.csv", ("metric", "value"), [(k, _fmt(v)) for k, v in summary.items()])
    for k, v in summary.items():
        print(f"{k}: {v}")
    return summary


COMMANDS = {
    "phantom": cmd_phantom,
    "train": cmd_train,
    "heatmap": cmd_heatmap,
    "evolve": cmd_evolve,
    "evaluate": cmd_evaluate,
}
