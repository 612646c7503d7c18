"""Mini-batch Adam training of the Dice regressor on MSE loss."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidConfigError
from ..optim import Adam
from ..rng import Stream
from .candidates import Candidate, as_arrays
from .regressor import RegressorParams, backward_batch, forward_batch, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # Stop after this many epochs without a new best validation loss; None runs all epochs.
    patience: int | None = None
    # Arithmetic precision for training only; the returned params are float64.
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise InvalidConfigError("need epochs >= 1, batch_size >= 1 and lr > 0")


@dataclass
class TrainingResult:
    params: RegressorParams
    history: list[tuple[int, float, float]]  # (epoch, train_mse, val_mse)
    initial_val_mse: float
    best_epoch: int
    best_val_mse: float


def predict(params: RegressorParams, images, masks, chunk: int = 128) -> np.ndarray:
    """Eval-mode scores for stacked inputs."""
    out = []
    for s in range(0, len(images), chunk):
        scores, _ = forward_batch(images[s : s + chunk], masks[s : s + chunk], params, training=False)
        out.append(scores)
    return np.concatenate(out)


def mse(params: RegressorParams, images, masks, target) -> float:
    return float(np.mean((predict(params, images, masks) - target) ** 2))


def train_regressor(
    train: Sequence[Candidate],
    val: Sequence[Candidate],
    cfg: TrainingConfig = TrainingConfig(),
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainingResult:
    """Train from a seeded initialization; return the snapshot with minimal validation MSE."""
    if not train or not val:
        raise ValueError("training and validation candidate sets must be nonempty")
    xi, xm, y = as_arrays(train)
    vi, vm, vy = as_arrays(val)
    dtype = np.dtype(cfg.dtype)
    xi, xm, y = xi.astype(dtype), xm.astype(dtype), y.astype(dtype)
    vi, vm = vi.astype(dtype), vm.astype(dtype)
    params = init_params(cfg.seed, input_shape=xi.shape[1:]).astype(dtype)
    params.training = True
    opt = Adam(params.trainable(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rs = Stream(cfg.seed, 0xBA7C)

    best = params.eval()
    best_val = mse(params, vi, vm, vy)
    initial_val = best_val
    best_epoch = 0
    history = []
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = rs.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s : s + cfg.batch_size])
            scores, cache = forward_batch(xi[idx], xm[idx], params, training=True)
            err = scores - y[idx]
            total += float(np.sum(err * err))
            grads, _, _ = backward_batch(cache, params, 2.0 * err / len(idx), need_input_grads=False)
            opt.step(grads.trainable())
            params.touch()
        train_mse = total / n
        val_mse = mse(params, vi, vm, vy)
        history.append((epoch, train_mse, val_mse))
        if on_epoch is not None:
            on_epoch(epoch, train_mse, val_mse)
        log.debug("epoch %d train %.5f val %.5f", epoch, train_mse, val_mse)
        if val_mse < best_val:
            best_val, best_epoch, best = val_mse, epoch, params.eval()
        elif cfg.patience is not None and epoch - best_epoch >= cfg.patience:
            break
    best = best.astype(np.float64)
    return TrainingResult(best, history, initial_val, best_epoch, best_val)
