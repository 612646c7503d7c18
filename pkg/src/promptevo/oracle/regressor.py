"""Five-layer convolutional Dice regressor with hand-written forward/backward.

Layout of the network (input is ``[image, mask]`` stacked as two channels)::

    conv 3x3 s1  2 -> 8   | batch-norm | leaky-ReLU(0.01)
    conv 3x3 s2  8 -> 16  | batch-norm | leaky-ReLU
    conv 3x3 s2 16 -> 16  | batch-norm | leaky-ReLU
    conv 3x3 s2 16 -> 32  | batch-norm | leaky-ReLU
    conv 3x3 s1 32 -> 1   | global average pool | logistic

All convolutions use zero padding of one pixel. Activations are kept as
``(N, H, W, C)`` arrays internally so every convolution is a single matrix
product over an im2col buffer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import ShapeMismatchError, StaleCacheError
from ..rng import Stream

CHANNELS = (2, 8, 16, 16, 32, 1)
STRIDES = (1, 2, 2, 2, 1)
N_CONV = 5
N_NORM = 4
LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# 9*cin*cout + cout weights/biases per conv, plus scale/shift per normalized channel.
N_TRAINABLE = sum(9 * CHANNELS[i] * CHANNELS[i + 1] + CHANNELS[i + 1] for i in range(N_CONV)) + 2 * sum(
    CHANNELS[1 : 1 + N_NORM]
)
N_RUNNING = 2 * sum(CHANNELS[1 : 1 + N_NORM])

TRAINABLE_GROUPS = ("weights", "biases", "gamma", "beta")


@dataclass
class RegressorParams:
    """Weights ``(cout, cin, 3, 3)``, biases, and per-layer normalization state."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    gamma: list[np.ndarray]
    beta: list[np.ndarray]
    running_mean: list[np.ndarray]
    running_var: list[np.ndarray]
    training: bool = False
    input_shape: tuple[int, int] | None = None
    version: int = field(default=0, compare=False)

    def trainable(self) -> list[np.ndarray]:
        return [a for g in TRAINABLE_GROUPS for a in getattr(self, g)]

    def copy(self) -> "RegressorParams":
        return RegressorParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [g.copy() for g in self.gamma],
            [b.copy() for b in self.beta],
            [m.copy() for m in self.running_mean],
            [v.copy() for v in self.running_var],
            self.training,
            self.input_shape,
            self.version,
        )

    def eval(self) -> "RegressorParams":
        p = self.copy()
        p.training = False
        return p

    def touch(self) -> None:
        """Mark the parameters as modified; outstanding caches become stale."""
        self.version += 1

    def astype(self, dtype) -> "RegressorParams":
        """Copy with every array cast to ``dtype``."""
        p = self.copy()
        for group in TRAINABLE_GROUPS + ("running_mean", "running_var"):
            setattr(p, group, [a.astype(dtype) for a in getattr(p, group)])
        return p

    def all_arrays(self) -> list[np.ndarray]:
        return self.trainable() + list(self.running_mean) + list(self.running_var)


def zero_params(input_shape: tuple[int, int] | None = None) -> RegressorParams:
    ws = [np.zeros((CHANNELS[i + 1], CHANNELS[i], 3, 3)) for i in range(N_CONV)]
    bs = [np.zeros(CHANNELS[i + 1]) for i in range(N_CONV)]
    gs = [np.zeros(CHANNELS[i + 1]) for i in range(N_NORM)]
    betas = [np.zeros(CHANNELS[i + 1]) for i in range(N_NORM)]
    rm = [np.zeros(CHANNELS[i + 1]) for i in range(N_NORM)]
    rv = [np.ones(CHANNELS[i + 1]) for i in range(N_NORM)]
    return RegressorParams(ws, bs, gs, betas, rm, rv, False, input_shape)


def init_params(seed: int, input_shape: tuple[int, int] | None = None) -> RegressorParams:
    """He-uniform weights scaled by fan-in, zero biases, unit normalization scale."""
    rs = Stream(seed, 0xC0)
    p = zero_params(input_shape)
    for i in range(N_CONV):
        cin, cout = CHANNELS[i], CHANNELS[i + 1]
        bound = np.sqrt(6.0 / (9 * cin))
        p.weights[i] = rs.uniform(cout * cin * 9, -bound, bound).reshape(cout, cin, 3, 3)
    for i in range(N_NORM):
        p.gamma[i][:] = 1.0
    return p


# --- convolution helpers -------------------------------------------------------


def _out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


def _im2col(x: np.ndarray, stride: int) -> tuple[np.ndarray, tuple[int, int]]:
    n, h, w, c = x.shape
    ho, wo = _out_size(h, stride), _out_size(w, stride)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, ho, wo, 3, 3, c), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            cols[:, :, :, di, dj, :] = xp[:, di : di + stride * (ho - 1) + 1 : stride, dj : dj + stride * (wo - 1) + 1 : stride, :]
    return cols.reshape(n * ho * wo, 9 * c), (ho, wo)


def _col2im(dcols: np.ndarray, x_shape: tuple, stride: int) -> np.ndarray:
    n, h, w, c = x_shape
    ho, wo = _out_size(h, stride), _out_size(w, stride)
    d = dcols.reshape(n, ho, wo, 3, 3, c)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[:, di : di + stride * (ho - 1) + 1 : stride, dj : dj + stride * (wo - 1) + 1 : stride, :] += d[:, :, :, di, dj, :]
    return dxp[:, 1:-1, 1:-1, :]


def _wmat(w: np.ndarray) -> np.ndarray:
    # (cout, cin, 3, 3) -> (3*3*cin, cout) matching the im2col column order.
    return w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0])


# --- forward / backward --------------------------------------------------------


@dataclass
class ForwardCache:
    training: bool
    version: int
    params_id: int
    x_shapes: list
    cols: list
    xhat: list = field(default_factory=list)
    invstd: list = field(default_factory=list)
    pre_act: list = field(default_factory=list)
    out_hw: tuple = ()
    score: np.ndarray | None = None
    consumed: bool = False


def _stack_inputs(images, masks, params: RegressorParams) -> np.ndarray:
    dtype = params.weights[0].dtype
    images = np.asarray(images, dtype=dtype)
    masks = np.asarray(masks, dtype=dtype)
    if images.shape != masks.shape:
        raise ShapeMismatchError(f"image {images.shape} vs mask {masks.shape}")
    if images.ndim == 2:
        images, masks = images[None], masks[None]
    if images.ndim != 3:
        raise ShapeMismatchError("expected (H, W) or (N, H, W) inputs")
    if params.input_shape is not None and tuple(images.shape[1:]) != tuple(params.input_shape):
        raise ShapeMismatchError(f"regressor trained at {params.input_shape}, got {images.shape[1:]}")
    return np.stack([images, masks], axis=-1)


def forward_batch(
    images, masks, params: RegressorParams, training: bool | None = None, update_running: bool = True
) -> tuple[np.ndarray, ForwardCache]:
    """Scores for a batch of ``(image, mask)`` pairs.

    In training mode normalization uses batch statistics and (optionally) folds
    them into the running estimates; in eval mode it uses the running estimates.
    """
    if training is None:
        training = params.training
    x = _stack_inputs(images, masks, params)
    cache = ForwardCache(training, params.version, id(params), [], [])
    for i in range(N_CONV):
        cache.x_shapes.append(x.shape)
        cols, (ho, wo) = _im2col(x, STRIDES[i])
        cache.cols.append(cols)
        y = cols @ _wmat(params.weights[i]) + params.biases[i]
        y = y.reshape(x.shape[0], ho, wo, -1)
        if i == N_CONV - 1:
            cache.out_hw = (ho, wo)
            x = y
            break
        if training:
            mean = y.mean(axis=(0, 1, 2))
            var = y.var(axis=(0, 1, 2))
            if update_running:
                m = y.shape[0] * ho * wo
                unbiased = var * m / max(m - 1, 1)
                params.running_mean[i][:] = (1 - BN_MOMENTUM) * params.running_mean[i] + BN_MOMENTUM * mean
                params.running_var[i][:] = (1 - BN_MOMENTUM) * params.running_var[i] + BN_MOMENTUM * unbiased
        else:
            mean = params.running_mean[i]
            var = params.running_var[i]
        invstd = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (y - mean) * invstd
        z = params.gamma[i] * xhat + params.beta[i]
        cache.xhat.append(xhat)
        cache.invstd.append(invstd)
        cache.pre_act.append(z)
        x = np.where(z > 0, z, LEAKY_SLOPE * z)
    pooled = x.mean(axis=(1, 2, 3))
    score = expit(pooled)
    cache.score = score
    return score, cache


def backward_batch(
    cache: ForwardCache | None,
    params: RegressorParams,
    upstream,
    need_param_grads: bool = True,
    need_input_grads: bool = True,
) -> tuple[RegressorParams | None, np.ndarray | None, np.ndarray | None]:
    """Back-propagate ``dL/dscore``.

    Returns parameter gradients (as a ``RegressorParams`` whose running stats
    are zero), ``dL/dmask`` and ``dL/dimage``, each shaped ``(N, H, W)``.
    Skipped outputs come back as ``None``.
    """
    if cache is None or cache.score is None:
        raise StaleCacheError("backward called without a forward cache")
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCacheError("parameters changed since the forward pass")
    s = cache.score
    n = s.shape[0]
    up = np.broadcast_to(np.asarray(upstream, dtype=s.dtype), (n,))
    grads = zero_params(params.input_shape).astype(s.dtype) if need_param_grads else None

    dpooled = up * s * (1.0 - s)
    ho, wo = cache.out_hw
    dy = np.broadcast_to((dpooled / (ho * wo))[:, None, None, None], (n, ho, wo, 1))
    for i in range(N_CONV - 1, -1, -1):
        if i < N_CONV - 1:
            z = cache.pre_act[i]
            dz = np.where(z > 0, dy, LEAKY_SLOPE * dy)
            xhat = cache.xhat[i]
            if need_param_grads:
                grads.gamma[i][:] = np.sum(dz * xhat, axis=(0, 1, 2))
                grads.beta[i][:] = np.sum(dz, axis=(0, 1, 2))
            dxhat = dz * params.gamma[i]
            if cache.training:
                m = dxhat.shape[0] * dxhat.shape[1] * dxhat.shape[2]
                dy = cache.invstd[i] / m * (
                    m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * np.sum(dxhat * xhat, axis=(0, 1, 2))
                )
            else:
                dy = dxhat * cache.invstd[i]
        cout = params.weights[i].shape[0]
        dy2 = np.ascontiguousarray(dy).reshape(-1, cout)
        if need_param_grads:
            cin = params.weights[i].shape[1]
            grads.weights[i][:] = (cache.cols[i].T @ dy2).reshape(3, 3, cin, cout).transpose(3, 2, 0, 1)
            grads.biases[i][:] = dy2.sum(axis=0)
        if i == 0 and not need_input_grads:
            cache.consumed = True
            return grads, None, None
        dcols = dy2 @ _wmat(params.weights[i]).T
        dy = _col2im(dcols, cache.x_shapes[i], STRIDES[i])
    cache.consumed = True
    return grads, dy[..., 1], dy[..., 0]


def regressor_forward(image, mask, params: RegressorParams, training: bool | None = None):
    """Score a single ``(image, mask)`` pair; returns ``(score, cache)``."""
    scores, cache = forward_batch(image, mask, params, training)
    return float(scores[0]), cache


def regressor_backward(cache: ForwardCache, params: RegressorParams, upstream: float = 1.0, need_param_grads: bool = True):
    """Gradients for a single-sample cache; returns ``(param_grads, dmask)``."""
    grads, dmask, _ = backward_batch(cache, params, upstream, need_param_grads)
    return grads, dmask[0]
