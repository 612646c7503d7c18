"""2D scalar-field primitives.

Grids are plain ``float64`` numpy arrays of shape ``(height, width)``. Pixel
``(x, y)`` means column ``x``, row ``y``, with the origin at the centre of the
top-left pixel.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import (
    DegenerateMaskError,
    OutOfBoundsError,
    ShapeMismatchError,
    UndefinedCorrelationError,
)

DICE_EPS = 1e-7


@dataclass(frozen=True)
class Prompt:
    """A single click prompt; ``c == 1`` marks a foreground click."""

    x: float
    y: float
    c: int = 1

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    def moved(self, x: float, y: float) -> "Prompt":
        return Prompt(float(x), float(y), self.c)


def as_grid(values, name: str = "grid") -> np.ndarray:
    g = np.asarray(values, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 2 or g.shape[1] < 2:
        raise ShapeMismatchError(f"{name} must be a 2D array of at least 2x2, got shape {g.shape}")
    return g


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"incompatible grids {a.shape} vs {b.shape}")


def dice(a, b) -> float:
    """Soft Dice ``2 sum(a*b) / (sum(a) + sum(b) + eps)``; two empty masks score 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    return float(2.0 * np.sum(a * b) / (np.sum(a) + np.sum(b) + DICE_EPS))


def in_bounds(shape: tuple[int, int], x: float, y: float) -> bool:
    h, w = shape
    return 0.0 <= x <= w - 1 and 0.0 <= y <= h - 1


def clamp_prompt(p: Prompt, shape: tuple[int, int], margin: float = 0.0) -> Prompt:
    h, w = shape
    x = min(max(p.x, margin), w - 1 - margin)
    y = min(max(p.y, margin), h - 1 - margin)
    return Prompt(float(x), float(y), p.c)


def bilinear_sample(g: np.ndarray, p: Prompt) -> tuple[float, np.ndarray]:
    """Bilinear value of ``g`` at ``p`` and its exact gradient with respect to ``(x, y)``.

    On the last row/column the cell to the upper-left is used, so the gradient
    there is the one-sided interior derivative.
    """
    h, w = g.shape
    x, y = float(p.x), float(p.y)
    if not in_bounds(g.shape, x, y):
        raise OutOfBoundsError(f"prompt ({x}, {y}) outside grid {w}x{h}")
    i = min(int(np.floor(x)), w - 2)
    j = min(int(np.floor(y)), h - 2)
    fx = x - i
    fy = y - j
    g00 = g[j, i]
    g01 = g[j, i + 1]
    g10 = g[j + 1, i]
    g11 = g[j + 1, i + 1]
    top = g00 + fx * (g01 - g00)
    bot = g10 + fx * (g11 - g10)
    value = top + fy * (bot - top)
    dx = (1.0 - fy) * (g01 - g00) + fy * (g11 - g10)
    dy = bot - top
    return float(value), np.array([dx, dy], dtype=np.float64)


def _check_binary(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    fg = m > 0.5
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask values must be exactly 0 or 1")
    return fg


def signed_distance_transform(m) -> np.ndarray:
    """Exact signed Euclidean distance: positive inside the mask, negative outside.

    Each pixel gets the distance to the nearest pixel of the opposite class.
    """
    fg = _check_binary(np.asarray(m))
    n_fg = int(fg.sum())
    if n_fg == 0 or n_fg == fg.size:
        raise DegenerateMaskError("signed distance needs both foreground and background pixels")
    to_bg = np.sqrt(kernels.edt_sq(~fg))
    to_fg = np.sqrt(kernels.edt_sq(fg))
    return np.where(fg, to_bg, -to_fg)


def centroid(m) -> Prompt:
    fg = np.asarray(m) > 0.5
    ys, xs = np.nonzero(fg)
    if xs.size == 0:
        raise DegenerateMaskError("centroid of an empty mask")
    return Prompt(float(xs.mean()), float(ys.mean()), 1)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeMismatchError("pearson needs two 1D sequences of equal length")
    if x.size < 2:
        raise UndefinedCorrelationError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance input")
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))
