"""Desk-scale parallel-beam CT simulation.

Images are row-major rasters with row 0 at the top.  A ray with angle
``theta`` and detector offset ``s`` is the line
``s * (cos theta, sin theta) + t * (-sin theta, cos theta)`` in a frame
where ``x`` grows with the column index and ``y`` grows upwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .operators import Partition, SparseOperator, partition_rows

__all__ = [
    "Phantom",
    "CtGeometry",
    "CtObservation",
    "SHEPP_LOGAN_ELLIPSES",
    "shepp_logan",
    "build_radon",
    "ray_pixel_lengths",
    "poisson_observe",
    "partition_by_angle",
]

# (value, semi-axis a, semi-axis b, x0, y0, rotation in degrees); modified
# (Toft) contrast so the attenuation map stays within [0, 1].
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


@dataclass(frozen=True)
class Phantom:
    width: int
    height: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64).ravel()
        if px.size != self.width * self.height:
            raise ValueError("pixel count does not match width*height")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("phantom values must be finite and within [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def image(self):
        return self.pixels.reshape(self.height, self.width)


@dataclass(frozen=True)
class CtGeometry:
    """Parallel-beam geometry; angles uniform over ``[0, pi)``."""

    num_angles: int
    num_detectors: int
    detector_spacing: float = 1.0

    @classmethod
    def for_image(cls, width, num_angles, num_detectors=None):
        if num_detectors is None:
            num_detectors = math.ceil(math.sqrt(2.0) * width)
        return cls(num_angles, num_detectors)

    @property
    def angles(self):
        return np.arange(self.num_angles) * (np.pi / self.num_angles)

    @property
    def offsets(self):
        return (np.arange(self.num_detectors) - 0.5 * (self.num_detectors - 1)) * self.detector_spacing

    @property
    def num_rays(self):
        return self.num_angles * self.num_detectors

    def ray_index(self, angle_index, detector_index):
        return angle_index * self.num_detectors + detector_index


@dataclass(frozen=True)
class CtObservation:
    counts: np.ndarray = field(repr=False)
    I0: float
    log_sino: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)


def shepp_logan(width, height=None):
    """Modified Shepp-Logan phantom sampled at pixel centres, clipped to [0, 1]."""
    height = width if height is None else height
    if width < 8 or height < 8:
        raise ValueError("phantom needs width, height >= 8")
    x = (2.0 * np.arange(width) + 1.0 - width) / width
    y = (height - 1.0 - 2.0 * np.arange(height)) / height
    X, Y = np.meshgrid(x, y)
    img = np.zeros((height, width))
    for value, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
        c, s = math.cos(math.radians(phi)), math.sin(math.radians(phi))
        xr = (X - x0) * c + (Y - y0) * s
        yr = -(X - x0) * s + (Y - y0) * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return Phantom(width, height, np.clip(img, 0.0, 1.0))


def ray_pixel_lengths(theta, s, width, height, pixel_size=1.0):
    """Siddon traversal of one ray.

    Returns ``(pixel_indices, lengths)``.  A ray running exactly along an
    interior grid line is split evenly between the two neighbouring pixel
    columns (or rows).
    """
    ct, st = math.cos(theta), math.sin(theta)
    dx, dy = -st, ct
    if abs(dx) < 1e-12:
        dx = 0.0
    if abs(dy) < 1e-12:
        dy = 0.0
    px, py = s * ct, s * st
    hw, hh = 0.5 * width * pixel_size, 0.5 * height * pixel_size

    if dx == 0.0 or dy == 0.0:
        return _axis_ray(px, py, dx, width, height, pixel_size)

    # param values where the ray crosses the box boundaries
    tx = np.sort(np.array([(-hw - px) / dx, (hw - px) / dx]))
    ty = np.sort(np.array([(-hh - py) / dy, (hh - py) / dy]))
    t_in, t_out = max(tx[0], ty[0]), min(tx[1], ty[1])
    if t_out <= t_in:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    xs = (np.arange(width + 1) * pixel_size - hw - px) / dx
    ys = (np.arange(height + 1) * pixel_size - hh - py) / dy
    t = np.concatenate(([t_in, t_out], xs, ys))
    t = np.unique(t[(t >= t_in) & (t <= t_out)])
    seg = np.diff(t)
    keep = seg > 1e-12 * pixel_size
    tm = 0.5 * (t[:-1] + t[1:])[keep]
    seg = seg[keep]
    col = np.floor((px + tm * dx + hw) / pixel_size).astype(np.int64)
    row = np.floor((hh - (py + tm * dy)) / pixel_size).astype(np.int64)
    np.clip(col, 0, width - 1, out=col)
    np.clip(row, 0, height - 1, out=row)
    return row * width + col, seg


def _axis_ray(px, py, dx, width, height, pixel_size):
    # vertical rays (dx == 0) sit at x = px and sum a column; horizontal at y = py
    if dx == 0.0:
        pos, n_lines, n_along = px + 0.5 * width * pixel_size, width, height
    else:
        pos, n_lines, n_along = 0.5 * height * pixel_size - py, height, width
    u = pos / pixel_size
    if u < 0.0 or u > n_lines:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    k = math.floor(u)
    if abs(u - round(u)) < 1e-9:
        k = int(round(u))
        lines = [(j, 0.5) for j in (k - 1, k) if 0 <= j < n_lines]
    else:
        lines = [(k, 1.0)]
    idx, lens = [], []
    along = np.arange(n_along)
    for j, frac in lines:
        if dx == 0.0:
            idx.append(along * width + j)
        else:
            idx.append(j * width + along)
        lens.append(np.full(n_along, frac * pixel_size))
    return np.concatenate(idx), np.concatenate(lens)


def build_radon(geom, width, height=None, pixel_size=1.0):
    """Assemble the ray-pixel intersection-length matrix for ``geom``.

    Row ``a * num_detectors + j`` holds ray ``(angles[a], offsets[j])``.
    """
    height = width if height is None else height
    rows, cols, vals = [], [], []
    offsets = geom.offsets * pixel_size
    for a, theta in enumerate(geom.angles):
        for j, s in enumerate(offsets):
            idx, lens = ray_pixel_lengths(theta, s, width, height, pixel_size)
            if idx.size:
                rows.append(np.full(idx.size, geom.ray_index(a, j), dtype=np.int64))
                cols.append(idx)
                vals.append(lens)
    n, d = geom.num_rays, width * height
    if not rows:
        return SparseOperator(sp.csr_matrix((n, d)))
    return SparseOperator.from_triplets(n, d, np.concatenate(rows),
                                        np.concatenate(cols), np.concatenate(vals))


def poisson_observe(op, x_true, I0, rng):
    """Photon counts ``y ~ Poisson(I0 exp(-A x))`` plus log-sinogram and PWLS weights.

    Weights are ``y / I0`` clipped to ``[0, 1]``; a zero count yields a zero
    weight and ``log(I0)`` in the log-sinogram.
    """
    if not I0 > 0:
        raise ValueError("I0 must be positive")
    x = x_true.pixels if isinstance(x_true, Phantom) else np.asarray(x_true, dtype=np.float64)
    proj = op.apply(x)
    with np.errstate(over="raise"):
        try:
            rate = I0 * np.exp(-proj)
        except FloatingPointError as exc:
            raise OverflowError("projection too negative; exp(-Ax) overflows") from exc
    if not np.all(np.isfinite(rate)):
        raise OverflowError("non-finite Poisson rate")
    counts = rng.poisson(rate).astype(np.int64)
    log_sino = np.log(I0 / np.maximum(counts, 1))
    weights = np.minimum(counts / I0, 1.0)
    return CtObservation(counts=counts, I0=float(I0), log_sino=log_sino, weights=weights)


def partition_by_angle(geom, K, rng=None, strategy="strided"):
    """Group sinogram rows into ``K`` minibatches of whole projection views.

    The strategy is applied to the view (angle) indices, so ``strided``
    gives ordered-subset style interleaved views.
    """
    views = partition_rows(geom.num_angles, K, rng, strategy)
    det = np.arange(geom.num_detectors, dtype=np.int64)
    blocks = tuple(np.sort((v[:, None] * geom.num_detectors + det[None, :]).ravel())
                   for v in views.blocks)
    return Partition(geom.num_rays, blocks)
