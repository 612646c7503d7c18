"""Promptable segmenter contract and the differentiable reference surrogate.

The surrogate scores every pixel by how close its intensity is to the image
value under the prompt and how far it lies from the prompt:

    z_i = kappa * (tau - lambda_i * (I_i - a(p))**2 - lambda_r * r_i(p)**2)

where ``a(p)`` is the bilinear image value at the prompt and ``r_i`` is the
pixel's distance to the prompt divided by ``max(W, H)``. The mask is
``logistic(z)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import InvalidConfigError, OutOfBoundsError, ShapeMismatchError
from .field import Prompt, as_grid, bilinear_sample, in_bounds


@dataclass(frozen=True)
class SegmenterConfig:
    kappa: float = 10.0
    tau: float = 0.3
    lambda_i: float = 4.0
    lambda_r: float = 4.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidConfigError("kappa must be > 0")
        if self.lambda_i < 0 or self.lambda_r < 0:
            raise InvalidConfigError("lambda_i and lambda_r must be >= 0")


@dataclass(frozen=True)
class SegmentationOutput:
    logits: np.ndarray
    mask: np.ndarray
    a: float
    grad_a: np.ndarray


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _require_foreground(p: Prompt) -> None:
    if p.c != 1:
        raise InvalidConfigError("the reference segmenter only accepts foreground prompts (c == 1)")


def _sq_radius(shape: tuple[int, int], p: Prompt) -> tuple[np.ndarray, np.ndarray, float]:
    h, w = shape
    scale = float(max(w, h))
    du = np.arange(w, dtype=np.float64)[None, :] - p.x
    dv = np.arange(h, dtype=np.float64)[:, None] - p.y
    return du, dv, scale


def segment(image, p: Prompt, cfg: SegmenterConfig = SegmenterConfig()) -> SegmentationOutput:
    image = as_grid(image, "image")
    _require_foreground(p)
    a, grad_a = bilinear_sample(image, p)
    du, dv, scale = _sq_radius(image.shape, p)
    r2 = (du * du + dv * dv) / (scale * scale)
    z = cfg.kappa * (cfg.tau - cfg.lambda_i * (image - a) ** 2 - cfg.lambda_r * r2)
    return SegmentationOutput(_readonly(z), _readonly(expit(z)), a, _readonly(grad_a))


def sharpen(logits, k: float) -> np.ndarray:
    """Steeper logistic ``logistic(k * z)``."""
    if not k > 0:
        raise InvalidConfigError(f"sharpen slope must be > 0, got {k}")
    return expit(k * np.asarray(logits, dtype=np.float64))


def prompt_vjp(
    image,
    p: Prompt,
    cfg: SegmenterConfig,
    k: float,
    upstream,
    out: SegmentationOutput | None = None,
) -> np.ndarray:
    """Gradient of ``sum(upstream * sharpen(segment(image, p).logits, k))`` w.r.t. ``(x, y)``."""
    image = as_grid(image, "image")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != image.shape:
        raise ShapeMismatchError(f"upstream {upstream.shape} vs image {image.shape}")
    if out is None:
        out = segment(image, p, cfg)
    kz = k * out.logits
    # d sharpen / dz, computed without cancellation in the saturated tails.
    slope = k * expit(kz) * expit(-kz)
    w = upstream * slope * cfg.kappa
    du, dv, scale = _sq_radius(image.shape, p)
    intensity = 2.0 * cfg.lambda_i * float(np.sum(w * (image - out.a)))
    radial = 2.0 * cfg.lambda_r / (scale * scale)
    gx = intensity * out.grad_a[0] + radial * float(np.sum(w * du))
    gy = intensity * out.grad_a[1] + radial * float(np.sum(w * dv))
    return np.array([gx, gy], dtype=np.float64)


def fd_prompt_grad(
    scorefn: Callable[[Prompt], float], p: Prompt, h: float, shape: tuple[int, int]
) -> np.ndarray:
    """Central finite-difference gradient of a black-box prompt score."""
    if not h > 0:
        raise InvalidConfigError("step h must be > 0")
    for x, y in ((p.x - h, p.y), (p.x + h, p.y), (p.x, p.y - h), (p.x, p.y + h)):
        if not in_bounds(shape, x, y):
            raise OutOfBoundsError(f"finite-difference stencil point ({x}, {y}) outside the grid")
    gx = (scorefn(p.moved(p.x + h, p.y)) - scorefn(p.moved(p.x - h, p.y))) / (2.0 * h)
    gy = (scorefn(p.moved(p.x, p.y + h)) - scorefn(p.moved(p.x, p.y - h))) / (2.0 * h)
    return np.array([gx, gy], dtype=np.float64)


class PromptableSegmenter:
    """Anything that maps (image, prompt) to logits.

    Subclasses must implement :meth:`segment`. :meth:`prompt_vjp` falls back to
    finite differences; override it when an analytic gradient exists.
    """

    fd_step = 1e-3

    def segment(self, image, p: Prompt) -> SegmentationOutput:
        raise NotImplementedError

    def prompt_vjp(self, image, p: Prompt, k: float, upstream, out=None) -> np.ndarray:
        upstream = np.asarray(upstream, dtype=np.float64)

        def score(q: Prompt) -> float:
            return float(np.sum(upstream * sharpen(self.segment(image, q).logits, k)))

        shape = np.shape(image)
        h = self.fd_step
        # Shift the stencil inward at the border so it stays inside the grid.
        x = min(max(p.x, h), shape[1] - 1 - h)
        y = min(max(p.y, h), shape[0] - 1 - h)
        return fd_prompt_grad(score, p.moved(x, y), h, shape)

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class SurrogateSegmenter(PromptableSegmenter):
    def __init__(self, cfg: SegmenterConfig = SegmenterConfig()):
        self.cfg = cfg

    def segment(self, image, p: Prompt) -> SegmentationOutput:
        return segment(image, p, self.cfg)

    def prompt_vjp(self, image, p: Prompt, k: float, upstream, out=None) -> np.ndarray:
        return prompt_vjp(image, p, self.cfg, k, upstream, out)

    def describe(self) -> dict:
        return {"kind": "surrogate", **self.cfg.__dict__}
