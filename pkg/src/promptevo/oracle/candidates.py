"""Synthetic candidate masks with known Dice for training the regressor."""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import DegenerateMaskError
from ..field import Prompt, centroid, dice, signed_distance_transform
from ..phantom import Sample
from ..rng import Stream
from ..segmenter import PromptableSegmenter, SurrogateSegmenter, sharpen

DEFAULT_DELTAS = (-6.0, -4.0, -2.0, -1.0, 1.0, 2.0, 4.0, 6.0)
OUTSIDE_OFFSET = 5.0
N_BAND = 3
N_OUTSIDE = 3


@dataclass(frozen=True)
class Candidate:
    sample_id: str
    source: str  # "levelset", "band" or "outside"
    tag: str  # delta for level sets, "x;y" for prompts
    image: np.ndarray
    mask: np.ndarray
    dice: float


def levelset_perturb(gt, delta: float, sdt: np.ndarray | None = None) -> np.ndarray:
    """Threshold the signed distance map at ``-delta``: positive delta dilates."""
    if sdt is None:
        sdt = signed_distance_transform(gt)
    return (sdt > -float(delta)).astype(np.float64)


def band_prompts(gt) -> list[Prompt]:
    """Centroids of three horizontal bands holding roughly equal foreground counts.

    A row joins band ``floor(3 * c / total)`` where ``c`` counts foreground
    pixels above the row plus half of the row's own.
    """
    fg = np.asarray(gt) > 0.5
    counts = fg.sum(axis=1).astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise DegenerateMaskError("band prompts need a nonempty mask")
    mid = np.cumsum(counts) - counts / 2.0
    band_of_row = np.minimum((3.0 * mid / total).astype(np.int64), 2)
    prompts = []
    for b in range(N_BAND):
        rows = (band_of_row == b) & (counts > 0)
        if not rows.any():
            raise DegenerateMaskError(f"band {b} of the mask is empty")
        band = fg & rows[:, None]
        prompts.append(centroid(band))
    return prompts


def outside_prompts(gt, n: int, offset: float = OUTSIDE_OFFSET, seed: int = 0, sdt=None) -> list[Prompt]:
    """``n`` distinct background pixels at least ``offset`` away from the mask."""
    if sdt is None:
        sdt = signed_distance_transform(gt)
    ys, xs = np.nonzero(sdt <= -offset)
    if xs.size == 0:
        raise DegenerateMaskError(f"no pixel lies {offset} or more outside the mask")
    if n > xs.size:
        raise DegenerateMaskError(f"asked for {n} outside prompts, only {xs.size} eligible pixels")
    order = Stream(seed, 0x0D).permutation(xs.size)[:n]
    return [Prompt(float(xs[i]), float(ys[i]), 1) for i in order]


def _sample_key(sample_id: str) -> int:
    # crc32 rather than hash(): stable across interpreter runs.
    return zlib.crc32(sample_id.encode("utf-8"))


def build_candidate_set(
    sample: Sample,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    segmenter: PromptableSegmenter | None = None,
    k: float = 10.0,
    seed: int = 0,
    include_predictions: bool = True,
) -> list[Candidate]:
    """Level-set candidates (one per delta) plus six segmenter predictions.

    Predictions come from the three band centroids and three random prompts
    well outside the target.
    """
    gt = sample.gt
    sdt = signed_distance_transform(gt)
    out = []
    for d in deltas:
        m = levelset_perturb(gt, d, sdt)
        out.append(Candidate(sample.id, "levelset", repr(float(d)), sample.image, m, dice(m, gt)))
    if include_predictions:
        seg = segmenter if segmenter is not None else SurrogateSegmenter()
        prompts = [("band", q) for q in band_prompts(gt)]
        prompts += [("outside", q) for q in outside_prompts(gt, N_OUTSIDE, seed=seed + _sample_key(sample.id), sdt=sdt)]
        for source, q in prompts:
            m = sharpen(seg.segment(sample.image, q).logits, k)
            out.append(Candidate(sample.id, source, f"{q.x!r};{q.y!r}", sample.image, m, dice(m, gt)))
    return out


def build_candidates(samples: Iterable[Sample], **kwargs) -> list[Candidate]:
    out = []
    for s in samples:
        out.extend(build_candidate_set(s, **kwargs))
    return out


def as_arrays(cands: Sequence[Candidate]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not cands:
        raise ValueError("empty candidate set")
    images = np.stack([c.image for c in cands])
    masks = np.stack([c.mask for c in cands])
    target = np.array([c.dice for c in cands])
    return images, masks, target


def write_candidates_csv(cands: Sequence[Candidate], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("sample_id", "source", "delta_or_prompt", "dice"))
        for c in cands:
            w.writerow((c.sample_id, c.source, c.tag, repr(c.dice)))
