"""Binary weight files for the regressor.

Layout, all integers little-endian ``u32``::

    b"SPOT" | version | n_conv | channels[n_conv + 1] | strides[n_conv]
            | input_height | input_width            (0, 0 = unconstrained)

followed by every tensor as little-endian ``float32`` in C order: for each
convolution its weight ``(cout, cin, 3, 3)`` then bias; then for each
normalized layer its scale, shift, running mean and running variance.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, TruncatedWeightsError, UnsupportedVersionError, WeightFileError
from .regressor import CHANNELS, N_CONV, N_NORM, STRIDES, RegressorParams, zero_params

MAGIC = b"SPOT"
VERSION = 1


def _tensors(p: RegressorParams) -> list[np.ndarray]:
    out = []
    for i in range(N_CONV):
        out += [p.weights[i], p.biases[i]]
    for i in range(N_NORM):
        out += [p.gamma[i], p.beta[i], p.running_mean[i], p.running_var[i]]
    return out


def save_params(params: RegressorParams, path) -> None:
    h, w = params.input_shape or (0, 0)
    header = MAGIC + struct.pack(
        f"<II{len(CHANNELS)}I{len(STRIDES)}III", VERSION, N_CONV, *CHANNELS, *STRIDES, h, w
    )
    body = b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes() for t in _tensors(params))
    Path(path).write_bytes(header + body)


def load_params(path) -> RegressorParams:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a regressor weight file")
    pos = 4
    if len(data) < pos + 8:
        raise TruncatedWeightsError(f"{path}: truncated header")
    version, n_conv = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, expected {VERSION}")
    plan_fmt = f"<{n_conv + 1}I{n_conv}III"
    if len(data) < pos + struct.calcsize(plan_fmt):
        raise TruncatedWeightsError(f"{path}: truncated layer plan")
    plan = struct.unpack_from(plan_fmt, data, pos)
    pos += struct.calcsize(plan_fmt)
    channels, strides = plan[: n_conv + 1], plan[n_conv + 1 : 2 * n_conv + 1]
    h, w = plan[-2:]
    if n_conv != N_CONV or tuple(channels) != CHANNELS or tuple(strides) != STRIDES:
        raise WeightFileError(f"{path}: layer plan {channels}/{strides} does not match this network")
    params = zero_params((h, w) if h and w else None)
    for t in _tensors(params):
        nbytes = 4 * t.size
        if len(data) < pos + nbytes:
            raise TruncatedWeightsError(f"{path}: tensor data ends early")
        t[...] = np.frombuffer(data, dtype="<f4", count=t.size, offset=pos).reshape(t.shape)
        pos += nbytes
    if pos != len(data):
        raise WeightFileError(f"{path}: {len(data) - pos} unexpected trailing bytes")
    return params
