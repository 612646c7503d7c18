"""Synthetic chest phantoms and PGM image I/O.

A phantom is a bright background with two dark elliptical lung fields, one of
which is the segmentation target. A cardiac ellipse below and medial to the
target brightens the lung pixels it overlaps, a smooth bright hilar bump sits
near the medial centre of each lung, horizontal sinusoidal rib stripes cross
the whole image, an optional bright pathology disc sits inside the target, and
clipped Gaussian noise is added last.
"""
from __future__ import annotations

import csv
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DataError,
    DegenerateMaskError,
    InvalidConfigError,
    PGMHeaderError,
    PGMMaxvalError,
    PGMTruncatedError,
)
from .rng import Stream

MIN_FG_FRACTION = 0.02
MAX_FG_FRACTION = 0.60
SEED_STRIDE = 100_000


@dataclass(frozen=True)
class PhantomSpec:
    width: int = 64
    height: int = 64
    lung_intensity: float = 0.25
    background_intensity: float = 0.75
    rib_amplitude: float = 0.15
    rib_period: float = 10.0
    pathology_probability: float = 0.5
    pathology_intensity: float = 0.35
    pathology_radius: tuple[float, float] = (2.5, 5.0)
    noise_sigma: float = 0.03
    cardiac_intensity: float = 0.25
    # Ellipse geometry as fractions of width/height: (nominal, +/- jitter).
    center_x: tuple[float, float] = (0.73, 0.02)
    center_y: tuple[float, float] = (0.50, 0.04)
    axis_x: tuple[float, float] = (0.20, 0.02)
    axis_y: tuple[float, float] = (0.34, 0.03)
    # Cardiac centre: x as a fraction of width, y as a drop below the target
    # centre in units of the target's vertical semi-axis.
    cardiac_x: tuple[float, float] = (0.555, 0.03)
    cardiac_drop: tuple[float, float] = (0.35, 0.15)
    cardiac_axes: tuple[float, float] = (0.18, 0.16)
    # Hilar bump: Gaussian of the given width (fraction of image width), centred
    # medially from the lung centre by a fraction of the lung's horizontal semi-axis.
    hilum_intensity: float = 0.4
    hilum_sigma: tuple[float, float] = (0.0625, 0.008)
    hilum_offset: tuple[float, float] = (0.1, 0.1)

    def validate(self) -> None:
        if self.width < 2 or self.height < 2:
            raise InvalidConfigError("phantom must be at least 2x2")
        for name in ("lung_intensity", "background_intensity", "rib_amplitude", "pathology_intensity", "cardiac_intensity", "hilum_intensity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfigError(f"{name}={v} outside [0, 1]")
        if self.rib_period < 2:
            raise InvalidConfigError("rib_period must be >= 2")
        if not 0.0 <= self.pathology_probability <= 1.0:
            raise InvalidConfigError("pathology_probability must be in [0, 1]")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma must be >= 0")
        if self.hilum_sigma[0] - abs(self.hilum_sigma[1]) <= 0:
            raise InvalidConfigError("hilum_sigma must stay positive over its jitter range")
        lo, hi = self.pathology_radius
        if not 0 < lo <= hi:
            raise InvalidConfigError("pathology_radius must satisfy 0 < low <= high")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    id: str
    image: np.ndarray
    gt: np.ndarray
    # Generator parameters (ellipse geometry etc.); empty for samples read from disk.
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.image.shape != self.gt.shape:
            raise DataError(f"sample {self.id}: image {self.image.shape} vs mask {self.gt.shape}")


def ellipse_mask(shape: tuple[int, int], cx: float, cy: float, ax: float, ay: float) -> np.ndarray:
    """Rasterize an axis-aligned ellipse: a pixel is foreground iff its centre is inside."""
    h, w = shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    return (((u - cx) / ax) ** 2 + ((v - cy) / ay) ** 2 <= 1.0).astype(np.float64)


def _jittered(rs: Stream, nominal_jitter: tuple[float, float], scale: float) -> float:
    nominal, jitter = nominal_jitter
    return scale * (nominal + rs.uniform1(-jitter, jitter))


def generate_phantom(spec: PhantomSpec, seed: int, sample_id: str | None = None) -> Sample:
    spec.validate()
    h, w = spec.height, spec.width
    rs = Stream(seed)

    cx = _jittered(rs, spec.center_x, w)
    cy = _jittered(rs, spec.center_y, h)
    ax = _jittered(rs, spec.axis_x, w)
    ay = _jittered(rs, spec.axis_y, h)
    # Contralateral lung: mirrored about the vertical midline, independently jittered.
    ocx = (w - 1) - _jittered(rs, spec.center_x, w)
    ocy = _jittered(rs, spec.center_y, h)
    oax = _jittered(rs, spec.axis_x, w)
    oay = _jittered(rs, spec.axis_y, h)
    rib_phase = rs.uniform1(0.0, 2.0 * np.pi)
    hx = _jittered(rs, spec.cardiac_x, w)
    hy = cy + ay * _jittered(rs, spec.cardiac_drop, 1.0)
    has_pathology = rs.uniform1() < spec.pathology_probability
    path_r = rs.uniform1(*spec.pathology_radius)
    path_u = rs.uniform1()
    hil_sigma = _jittered(rs, spec.hilum_sigma, w)
    hil_off = _jittered(rs, spec.hilum_offset, 1.0)
    ohil_off = _jittered(rs, spec.hilum_offset, 1.0)

    gt = ellipse_mask((h, w), cx, cy, ax, ay)
    other = ellipse_mask((h, w), ocx, ocy, oax, oay)
    frac = gt.mean()
    if not MIN_FG_FRACTION < frac < MAX_FG_FRACTION:
        raise DegenerateMaskError(f"target covers {frac:.3f} of the image; allowed ({MIN_FG_FRACTION}, {MAX_FG_FRACTION})")

    lungs = np.maximum(gt, other)
    img = np.where(lungs > 0, spec.lung_intensity, spec.background_intensity)
    heart = ellipse_mask((h, w), hx, hy, spec.cardiac_axes[0] * w, spec.cardiac_axes[1] * h)
    img = img + spec.cardiac_intensity * heart * lungs
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    # Medial is towards the image midline: -x for the target, +x for the other lung.
    for mask, hx_, hy_ in ((gt, cx - hil_off * ax, cy), (other, ocx + ohil_off * oax, ocy)):
        bump = np.exp(-((u - hx_) ** 2 + (v - hy_) ** 2) / (2.0 * hil_sigma**2))
        img = img + spec.hilum_intensity * bump * mask
    rows = np.arange(h, dtype=np.float64)[:, None]
    img = img + spec.rib_amplitude * 0.5 * (1.0 + np.sin(2.0 * np.pi * rows / spec.rib_period + rib_phase))

    if has_pathology:
        ys, xs = np.nonzero(gt)
        k = min(int(path_u * xs.size), xs.size - 1)
        disc = ((u - xs[k]) ** 2 + (v - ys[k]) ** 2 <= path_r**2) & (gt > 0)
        img = img + spec.pathology_intensity * disc

    if spec.noise_sigma > 0:
        img = img + spec.noise_sigma * rs.normal(h * w).reshape(h, w)
    img = np.clip(img, 0.0, 1.0)
    meta = {
        "target": (cx, cy, ax, ay),
        "contralateral": (ocx, ocy, oax, oay),
        "cardiac": (hx, hy, spec.cardiac_axes[0] * w, spec.cardiac_axes[1] * h),
        "hilum": (cx - hil_off * ax, cy, hil_sigma),
        "pathology": has_pathology,
    }
    return Sample(sample_id if sample_id is not None else f"phantom-{seed}", img, gt, meta)


def make_dataset(
    spec: PhantomSpec, n_train: int, n_val: int, n_test: int, seed: int
) -> tuple[list[Sample], list[Sample], list[Sample]]:
    counts = {"train": n_train, "val": n_val, "test": n_test}
    for name, n in counts.items():
        if n < 1:
            raise InvalidConfigError(f"{name} count must be >= 1, got {n}")
    if sum(counts.values()) > SEED_STRIDE:
        raise InvalidConfigError("too many samples for the per-sample seed scheme")
    splits = []
    index = 0
    for name, n in counts.items():
        split = []
        for i in range(n):
            split.append(generate_phantom(spec, seed * SEED_STRIDE + index, f"{name}-{i:04d}"))
            index += 1
        splits.append(split)
    return splits[0], splits[1], splits[2]


# --- PGM ---------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_header(data: bytes) -> tuple[int, int, int, int]:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PGMHeaderError("incomplete PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise PGMHeaderError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMHeaderError("non-integer PGM header field") from exc
    if w < 1 or h < 1:
        raise PGMHeaderError("PGM dimensions must be positive")
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise PGMHeaderError("missing whitespace after maxval")
    return w, h, maxval, pos + 1


def save_pgm(g: np.ndarray, path) -> None:
    """Write a 16-bit binary PGM; values must lie in [0, 1]."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("save_pgm needs a 2D grid")
    if np.any(~np.isfinite(g)) or g.min() < 0.0 or g.max() > 1.0:
        raise ValueError("PGM values must lie in [0, 1]")
    h, w = g.shape
    words = np.rint(g * 65535.0).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(words.tobytes())


def save_mask_pgm(m: np.ndarray, path) -> None:
    """Write a binary mask as an 8-bit PGM with 0/255 values."""
    m = np.asarray(m)
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.where(m > 0.5, 255, 0).astype(np.uint8).tobytes())


def _load_raw(path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    w, h, maxval, start = _parse_header(data)
    if maxval == 65535:
        dtype, nbytes = ">u2", 2
    elif maxval == 255:
        dtype, nbytes = np.uint8, 1
    else:
        raise PGMMaxvalError(f"unsupported maxval {maxval}; expected 255 or 65535")
    need = w * h * nbytes
    payload = data[start : start + need]
    if len(payload) < need:
        raise PGMTruncatedError(f"payload has {len(payload)} bytes, expected {need}")
    return np.frombuffer(payload, dtype=dtype).reshape(h, w).astype(np.int64), maxval


def load_pgm(path) -> np.ndarray:
    words, maxval = _load_raw(path)
    return words.astype(np.float64) / maxval


def load_mask_pgm(path) -> np.ndarray:
    words, maxval = _load_raw(path)
    if maxval != 255:
        raise PGMMaxvalError(f"mask files must use maxval 255, got {maxval}")
    return (words >= 128).astype(np.float64)


# --- dataset directory ---------------------------------------------------------

MANIFEST_NAME = "manifest.csv"
MANIFEST_FIELDS = ("id", "image_path", "mask_path", "split")


def write_dataset(out_dir, splits: dict[str, Sequence[Sample]]) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for split, samples in splits.items():
        for s in samples:
            img_rel = f"images/{s.id}.pgm"
            mask_rel = f"masks/{s.id}.pgm"
            save_pgm(s.image, out / img_rel)
            save_mask_pgm(s.gt, out / mask_rel)
            rows.append((s.id, img_rel, mask_rel, split))
    manifest = out / MANIFEST_NAME
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        writer.writerows(rows)
    return manifest


def read_dataset(data_dir, split: str | None = None) -> dict[str, list[Sample]]:
    """Load samples listed in ``manifest.csv``, grouped by split."""
    root = Path(data_dir)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise DataError(f"no dataset manifest at {manifest}")
    out: dict[str, list[Sample]] = {}
    with open(manifest, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise DataError(f"manifest header must be {','.join(MANIFEST_FIELDS)}")
        for row in reader:
            if split is not None and row["split"] != split:
                continue
            img = load_pgm(root / row["image_path"])
            gt = load_mask_pgm(root / row["mask_path"])
            out.setdefault(row["split"], []).append(Sample(row["id"], img, gt))
    for samples in out.values():
        samples.sort(key=lambda s: s.id)
    return out


def find_sample(data_dir, sample_id: str) -> Sample:
    for samples in read_dataset(data_dir).values():
        for s in samples:
            if s.id == sample_id:
                return s
    raise DataError(f"sample {sample_id!r} not in dataset {os.fspath(data_dir)}")
