"""Prompt evolution: Adam ascent on the regressor score with respect to the prompt.

Only the prompt moves. The segmenter and regressor are read, never written.
The returned prompt is the visited one with the highest regressor score, so
it never scores below the starting prompt.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateMaskError, NonFiniteError
from .field import Prompt, centroid, clamp_prompt, dice
from .optim import adam_direction
from .oracle.regressor import RegressorParams, regressor_backward, regressor_forward
from .segmenter import PromptableSegmenter, SurrogateSegmenter, sharpen


@dataclass(frozen=True)
class AdamState:
    m: tuple[float, float] = (0.0, 0.0)
    v: tuple[float, float] = (0.0, 0.0)
    t: int = 0
    lr: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass(frozen=True)
class EvolveConfig:
    iterations: int = 50
    k: float = 10.0
    lr: float = 10.0
    clamp_margin: float = 0.0
    stop_on_nonfinite: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class Step:
    iteration: int
    prompt: Prompt
    score: float
    dice: float | None = None


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    best: int = 0
    nonfinite: bool = False

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def best_step(self) -> Step:
        return self.steps[self.best]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("iter", "x", "y", "score", "dice"))
            for s in self.steps:
                w.writerow((s.iteration, repr(s.prompt.x), repr(s.prompt.y), repr(s.score), "" if s.dice is None else repr(s.dice)))


def adam_ascent_step(
    state: AdamState, p: Prompt, g, shape: tuple[int, int] | None = None, margin: float = 0.0
) -> tuple[AdamState, Prompt]:
    """One Adam ascent step ``p + lr * m_hat / (sqrt(v_hat) + eps)``, clamped to the grid."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite prompt gradient {g}")
    x = p.as_array()
    if state.weight_decay:
        g = g - state.weight_decay * x
    t = state.t + 1
    m, v, direction = adam_direction(np.array(state.m), np.array(state.v), g, t, state.beta1, state.beta2, state.eps)
    x = x + state.lr * direction
    q = p.moved(x[0], x[1])
    if shape is not None:
        q = clamp_prompt(q, shape, margin)
    return replace(state, m=(float(m[0]), float(m[1])), v=(float(v[0]), float(v[1])), t=t), q


def score_and_grad(
    image,
    p: Prompt,
    segmenter: PromptableSegmenter,
    k: float,
    params: RegressorParams,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Regressor score of the sharpened segmentation and its gradient w.r.t. the prompt.

    Also returns the sharpened mask that was scored.
    """
    out = segmenter.segment(image, p)
    mask = sharpen(out.logits, k)
    score, cache = regressor_forward(image, mask, params, training=False)
    _, dmask = regressor_backward(cache, params, 1.0, need_param_grads=False)
    grad = segmenter.prompt_vjp(image, p, k, dmask, out)
    return score, grad, mask


def evolve(
    image,
    p0: Prompt,
    params: RegressorParams,
    cfg: EvolveConfig = EvolveConfig(),
    segmenter: PromptableSegmenter | None = None,
    gt=None,
    on_step=None,
) -> tuple[Prompt, Trajectory]:
    """Run up to ``cfg.iterations`` ascent steps from ``p0``; return the best-scoring prompt.

    ``gt`` only adds true Dice to the trajectory; it never affects the updates.
    ``on_step(step, mask)`` is called for every recorded prompt.
    """
    seg = segmenter if segmenter is not None else SurrogateSegmenter()
    image = np.asarray(image, dtype=np.float64)
    shape = image.shape
    p = clamp_prompt(p0, shape, cfg.clamp_margin)
    state = AdamState(lr=cfg.lr)
    traj = Trajectory()
    for it in range(cfg.iterations + 1):
        score, grad, mask = score_and_grad(image, p, seg, cfg.k, params)
        finite = math.isfinite(score) and bool(np.all(np.isfinite(grad)))
        if not math.isfinite(score):
            traj.nonfinite = True
            break
        step = Step(it, p, score, dice(mask, gt) if gt is not None else None)
        traj.steps.append(step)
        if on_step is not None:
            on_step(step, mask)
        if score > traj.steps[traj.best].score:
            traj.best = len(traj.steps) - 1
        if not finite:
            traj.nonfinite = True
            if cfg.stop_on_nonfinite:
                break
            grad = np.zeros(2)
        if it == cfg.iterations:
            break
        state, p = adam_ascent_step(state, p, grad, shape, cfg.clamp_margin)
    if not traj.steps:
        raise NonFiniteError("score is non-finite at the initial prompt")
    return traj.best_step.prompt, traj


def initial_prompt(gt) -> Prompt:
    """Mask centroid, snapped to the nearest foreground pixel when it falls outside."""
    fg = np.asarray(gt) > 0.5
    c = centroid(fg)
    h, w = fg.shape
    i = min(max(int(round(c.x)), 0), w - 1)
    j = min(max(int(round(c.y)), 0), h - 1)
    if fg[j, i]:
        return c
    ys, xs = np.nonzero(fg)
    if xs.size == 0:
        raise DegenerateMaskError("empty mask")
    d2 = (xs - c.x) ** 2 + (ys - c.y) ** 2
    k = int(np.argmin(d2))  # first minimum in row-major order breaks ties
    return Prompt(float(xs[k]), float(ys[k]), 1)
