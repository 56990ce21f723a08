"""Flow smoothness regularizers over multi-stage flow predictions.

Four losses share one structure: a per-stage penalty on the spatial gradients of
the two flow channels, summed over stages with weight ``gamma ** (n - i - 1)``
so the final stage counts fully and earlier stages progressively less.

* ``tvr``   total variation with Sobel kernels divided by 8.
* ``fdr``   forward flow differences restricted to a background mask.
* ``migar`` per-pixel weights ``base ** -G`` from the first frame's Sobel
  gradient magnitude ``G``, with ``base = exp(mean G)``.
* ``igvar`` the same as ``migar`` with ``base = max(Var(G on mask) / 100, e)``.

Grids are indexed ``[y, x]``; "horizontal" always means along the width axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyMask, TooSmall

DEFAULT_LAMBDA = 0.05
DEFAULT_STRIDE = 1
DEFAULT_GAMMA = 0.8

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


class GradientPair(NamedTuple):
    gx: np.ndarray
    gy: np.ndarray


@dataclass
class StageSequence:
    """Flow predictions of an iterative estimator, earliest stage first."""

    stages: Sequence[np.ndarray]
    gamma: float = DEFAULT_GAMMA
    lambda_n: float = DEFAULT_LAMBDA
    _arrays: list = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ValueError("need at least one stage")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.lambda_n < 0:
            raise ValueError("lambda_n must be non-negative")
        self._arrays = [np.asarray(s, dtype=np.float64) for s in self.stages]
        shape = self._arrays[0].shape
        if len(shape) != 3 or shape[2] != 2:
            raise DimensionMismatch(f"stages must have shape (H, W, 2), got {shape}")
        if any(a.shape != shape for a in self._arrays):
            raise DimensionMismatch("all stages must share one shape")

    @property
    def n(self) -> int:
        return len(self._arrays)

    @property
    def shape(self) -> tuple[int, int]:
        return self._arrays[0].shape[:2]

    def weighted(self):
        """Yield ``(gamma ** (n - i - 1), stage)`` pairs."""
        n = self.n
        for i, stage in enumerate(self._arrays):
            yield self.gamma ** (n - i - 1), stage


def sobel(channel, normalized: bool = False) -> GradientPair:
    """3x3 Sobel responses (cross-correlation), replicate-padded to the input size."""
    c = np.asarray(channel, dtype=np.float64)
    if c.ndim != 2 or min(c.shape) < 3:
        raise TooSmall(f"sobel needs a 2-D grid of at least 3x3, got {c.shape}")
    p = np.pad(c, 1, mode="edge")
    h, w = c.shape

    def shifted(dy, dx):
        return p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    gx = (shifted(-1, 1) - shifted(-1, -1)) + 2.0 * (shifted(0, 1) - shifted(0, -1)) \
        + (shifted(1, 1) - shifted(1, -1))
    gy = (shifted(1, -1) - shifted(-1, -1)) + 2.0 * (shifted(1, 0) - shifted(-1, 0)) \
        + (shifted(1, 1) - shifted(-1, 1))
    if normalized:
        gx = gx / 8.0
        gy = gy / 8.0
    return GradientPair(gx, gy)


def flow_difference(channel, stride: int = DEFAULT_STRIDE) -> GradientPair:
    """Forward differences divided by ``stride``; the grids shrink by ``stride`` columns / rows."""
    c = np.asarray(channel, dtype=np.float64)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if c.ndim != 2 or c.shape[0] <= stride or c.shape[1] <= stride:
        raise TooSmall(f"grid {c.shape} too small for stride {stride}")
    gx = (c[:, stride:] - c[:, :-stride]) / stride
    gy = (c[stride:, :] - c[:-stride, :]) / stride
    return GradientPair(gx, gy)


def _check_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask).astype(bool)
    if m.shape != tuple(shape):
        raise DimensionMismatch(f"mask {m.shape} vs flow {tuple(shape)}")
    if not m.any():
        raise EmptyMask("mask selects no pixels")
    return m


def total_variation(channel) -> float:
    g = sobel(channel, normalized=True)
    return float(np.mean(np.abs(g.gx) + np.abs(g.gy)))


def tvr(seq: StageSequence) -> float:
    total = 0.0
    for weight, stage in seq.weighted():
        total += weight * (total_variation(stage[..., 0]) + total_variation(stage[..., 1]))
    return seq.lambda_n * total


def fdr(seq: StageSequence, mask, stride: int = DEFAULT_STRIDE) -> float:
    """Masked flow-difference penalty.

    For each channel the absolute horizontal differences are averaged over the
    mask with its last ``stride`` columns removed, the vertical ones over the
    mask with its last ``stride`` rows removed. A reduced mask with no valid
    entry contributes 0.
    """
    m = _check_mask(mask, seq.shape)
    mx = m[:, :-stride]
    my = m[:-stride, :]
    total = 0.0
    for weight, stage in seq.weighted():
        term = 0.0
        for ch in range(2):
            d = flow_difference(stage[..., ch], stride)
            if mx.any():
                term += float(np.mean(np.abs(d.gx[mx])))
            if my.any():
                term += float(np.mean(np.abs(d.gy[my])))
        total += weight * term
    return seq.lambda_n * total


def grad_magnitude(image) -> np.ndarray:
    """Channel-averaged magnitude of unnormalized Sobel gradients of an (H, W, 3) image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch(f"image must have shape (H, W, 3), got {img.shape}")
    acc = np.zeros(img.shape[:2])
    for ch in range(3):
        g = sobel(img[..., ch])
        acc += np.sqrt(g.gx * g.gx + g.gy * g.gy)
    return acc / 3.0


def migar_base(grad_mag) -> float:
    return math.exp(float(np.mean(grad_mag)))


def igvar_base(grad_mag, mask) -> float:
    g = np.asarray(grad_mag, dtype=np.float64)
    m = _check_mask(mask, g.shape)
    return max(float(np.var(g[m])) / 100.0, math.e)


def pixel_weights(grad_mag, base: float) -> np.ndarray:
    if base < 1.0:
        raise ValueError(f"base must be >= 1, got {base}")
    return np.exp(-np.asarray(grad_mag, dtype=np.float64) * math.log(base))


def total_mask(mask, literal: bool = False) -> np.ndarray:
    """Background mask restricted by its own Sobel gradients.

    ``literal=True`` keeps pixels where both gradients are strictly positive,
    which removes every interior pixel of a mask. The default keeps pixels
    where both gradients vanish, i.e. the mask interior minus a one-pixel band
    along its boundary.
    """
    m = np.asarray(mask).astype(np.float64)
    g = sobel(m)
    if literal:
        keep = (g.gx > 0) & (g.gy > 0)
    else:
        keep = (g.gx == 0) & (g.gy == 0)
    return (m > 0) & keep


def weighted_variation(channel, weights, mtotal) -> float:
    g = sobel(np.asarray(channel, dtype=np.float64) * mtotal)
    return float(np.mean(weights * (np.abs(g.gx) + np.abs(g.gy))))


def migar(seq: StageSequence, first_image, mask, mode: str = "migar",
          literal_mask: bool = False) -> float:
    """Image-gradient-weighted variation; ``mode`` picks the ``migar`` or ``igvar`` base.

    No ``lambda_n`` factor is applied.
    """
    m = _check_mask(mask, seq.shape)
    g = grad_magnitude(first_image)
    if g.shape != seq.shape:
        raise DimensionMismatch(f"image {g.shape} vs flow {seq.shape}")
    if mode == "migar":
        base = migar_base(g)
    elif mode == "igvar":
        base = igvar_base(g, m)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    w = pixel_weights(g, base)
    mtotal = total_mask(m, literal=literal_mask).astype(np.float64)
    total = 0.0
    for weight, stage in seq.weighted():
        total += weight * (weighted_variation(stage[..., 0], w, mtotal)
                           + weighted_variation(stage[..., 1], w, mtotal))
    return total


def igvar(seq: StageSequence, first_image, mask, literal_mask: bool = False) -> float:
    return migar(seq, first_image, mask, mode="igvar", literal_mask=literal_mask)
