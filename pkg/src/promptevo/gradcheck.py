"""Central finite-difference checks for the regressor and the full prompt chain.

A stencil that flips the sign of any leaky-ReLU pre-activation straddles a
kink, where central differences do not estimate the derivative; such entries
are counted as ``skipped`` instead of compared.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field import Prompt
from .oracle.regressor import RegressorParams, backward_batch, forward_batch

REL_FLOOR = 1e-6


def rel_error(a: float, b: float, floor: float = REL_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    checked: int = 0
    skipped: int = 0
    worst: str = ""
    errors: dict = field(default_factory=dict)

    def add(self, label: str, analytic: float, numeric: float) -> None:
        e = rel_error(analytic, numeric)
        self.checked += 1
        if e > self.max_rel_error:
            self.max_rel_error, self.worst = e, label

    def merge(self, other: "GradCheckReport") -> None:
        self.checked += other.checked
        self.skipped += other.skipped
        if other.max_rel_error > self.max_rel_error:
            self.max_rel_error, self.worst = other.max_rel_error, other.worst


def _signs(cache) -> list[np.ndarray]:
    return [z > 0 for z in cache.pre_act]


def _same(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_regressor(
    params: RegressorParams,
    images: np.ndarray,
    masks: np.ndarray,
    weights: np.ndarray,
    training: bool,
    h: float = 1e-4,
    param_fraction: float = 1.0,
    n_pixels: int = 20,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``sum(weights * score)`` with central differences.

    Checks a random ``param_fraction`` of every parameter tensor (at least one
    entry each) and ``n_pixels`` random mask pixels.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    images = np.asarray(images, dtype=np.float64)
    masks = np.array(masks, dtype=np.float64)

    def loss():
        s, c = forward_batch(images, masks, params, training, update_running=False)
        return float(np.dot(weights, s)), _signs(c)

    scores, cache = forward_batch(images, masks, params, training, update_running=False)
    base = _signs(cache)
    grads, dmask, _ = backward_batch(cache, params, weights)
    report = GradCheckReport()

    def probe(arr, idx, analytic, label):
        orig = arr[idx]
        arr[idx] = orig + h
        lp, sp = loss()
        arr[idx] = orig - h
        lm, sm = loss()
        arr[idx] = orig
        if not (_same(sp, base) and _same(sm, base)):
            report.skipped += 1
            return
        report.add(label, float(analytic), (lp - lm) / (2 * h))

    for t, (pa, ga) in enumerate(zip(params.trainable(), grads.trainable())):
        n = pa.size
        count = max(1, int(round(param_fraction * n)))
        flat = rng.choice(n, size=min(count, n), replace=False)
        for f in flat:
            idx = np.unravel_index(f, pa.shape)
            probe(pa, idx, ga[idx], f"param[{t}]{tuple(int(i) for i in idx)}")
    for _ in range(n_pixels):
        idx = tuple(int(rng.integers(0, s)) for s in masks.shape)
        probe(masks, idx, dmask[idx], f"mask{idx}")
    return report


def random_params(rng: np.random.Generator, input_shape=None) -> RegressorParams:
    """He-style weights plus nonzero biases and normalization state."""
    from .oracle.regressor import init_params

    p = init_params(int(rng.integers(0, 2**31)), input_shape)
    for b in p.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    for i in range(len(p.gamma)):
        p.gamma[i][:] = rng.uniform(0.5, 1.5, p.gamma[i].shape)
        p.beta[i][:] = rng.normal(0, 0.1, p.beta[i].shape)
        p.running_mean[i][:] = rng.normal(0, 0.1, p.running_mean[i].shape)
        p.running_var[i][:] = rng.uniform(0.5, 2.0, p.running_var[i].shape)
    return p


def check_prompt_chain(
    image, p: Prompt, segmenter, k: float, params: RegressorParams, h: float = 1e-3
) -> float | None:
    """Relative error between ``score_and_grad`` and central differences of the composed score.

    Returns ``None`` when the stencil straddles a kink of the regressor.
    """
    from .evolve import score_and_grad
    from .segmenter import fd_prompt_grad, sharpen

    _, g, _ = score_and_grad(image, p, segmenter, k, params)
    patterns = []

    def score(q: Prompt) -> float:
        mask = sharpen(segmenter.segment(image, q).logits, k)
        s, cache = forward_batch(image, mask, params, training=False)
        patterns.append(_signs(cache))
        return float(s[0])

    score(p)
    fd = fd_prompt_grad(score, p, h, np.shape(image))
    if not all(_same(patterns[0], other) for other in patterns[1:]):
        return None
    scale = max(float(np.max(np.abs(fd))), float(np.max(np.abs(g))), REL_FLOOR)
    return float(np.max(np.abs(g - fd)) / scale)
