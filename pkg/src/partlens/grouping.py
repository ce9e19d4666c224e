"""Pixel-to-part grouping: soft assignment, smoothing, part detection.

A feature map is compared against a learned dictionary of part vectors; each
pixel gets a softmax distribution over parts from the scaled squared
distances.  Per-part occurrence scores are the spatial max of the smoothed
assignment channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class PartDictionary:
    """K learnable part vectors with a per-part smoothing factor.

    The smoothing factor sigma_k must stay in (0, 1); it is parameterized as
    sigmoid of an unconstrained value, initialized at 0 so sigma_k = 0.5.
    """

    parts: Tensor          # K x D
    raw_smoothing: Tensor  # K, sigma_k = sigmoid(raw_smoothing[k])

    def __post_init__(self):
        if self.parts.ndim != 2 or min(self.parts.shape) < 1:
            raise ValueError(f"parts must be K x D with K, D >= 1, "
                             f"got {self.parts.shape}")
        if self.raw_smoothing.shape != (self.parts.shape[0],):
            raise ValueError(
                f"raw_smoothing shape {self.raw_smoothing.shape} does not "
                f"match K={self.parts.shape[0]}")

    @property
    def count(self) -> int:
        return self.parts.shape[0]

    @property
    def dim(self) -> int:
        return self.parts.shape[1]

    def smoothing(self) -> Tensor:
        """sigma as a differentiable (0, 1) vector."""
        return T.sigmoid(self.raw_smoothing)

    @classmethod
    def initialize(cls, count: int, dim: int,
                   rng: np.random.Generator) -> "PartDictionary":
        # fan-in scaled: zero-mean Gaussian with variance 2/D
        parts = Tensor(rng.normal(0.0, np.sqrt(2.0 / dim), size=(count, dim)),
                       requires_grad=True)
        raw = Tensor(np.zeros(count), requires_grad=True)
        return cls(parts, raw)


@dataclass(frozen=True)
class SmoothingKernel:
    """Normalized 2D Gaussian weights used to denoise assignment channels."""

    size: int
    bandwidth: float
    weights: np.ndarray

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, "
                             f"got {self.size}")
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        w = self.weights
        if w.shape != (self.size, self.size) or (w < 0).any():
            raise ValueError("weights must be a nonnegative size x size grid")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")


def gaussian_kernel(size: int = 3, bandwidth: float = 1.0) -> SmoothingKernel:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    weights = np.exp(-(yy * yy + xx * xx) / (2.0 * bandwidth * bandwidth))
    weights /= weights.sum()
    return SmoothingKernel(size, bandwidth, weights)


def assign(features: Tensor, dictionary: PartDictionary) -> Tensor:
    """Soft part assignment: per pixel, softmax over parts of
    -||(x - d_k) / sigma_k||^2 / 2.

    Accepts D x H x W or N x D x H x W features and returns K x H x W or
    N x K x H x W probabilities that sum to 1 over parts at every pixel.
    """
    squeeze = features.ndim == 3
    x = T.reshape(features, (1,) + features.shape) if squeeze else features
    if x.ndim != 4:
        raise ValueError(f"features must be (N,)D x H x W, got {features.shape}")
    n, d, h, w = x.shape
    k = dictionary.count
    if d != dictionary.dim:
        raise ValueError(f"feature dimension {d} does not match dictionary "
                         f"dimension {dictionary.dim}")
    pixels = T.reshape(x, (n, 1, d, h * w))
    parts = T.reshape(dictionary.parts, (1, k, d, 1))
    inv_sigma = T.div(1.0, T.reshape(dictionary.smoothing(), (1, k, 1, 1)))
    scaled = T.mul(T.sub(pixels, parts), inv_sigma)
    sq_dist = T.tsum(T.mul(scaled, scaled), axis=2)          # N x K x HW
    q = T.softmax(T.mul(sq_dist, -0.5), axis=1)
    # Extreme distance gaps make the softmax round to exactly 0 or 1 in
    # float64; nudge back inside the open interval.  The shift is far below
    # the 1e-10 simplex tolerance and the affected entries already have zero
    # gradient through the saturated softmax.
    q = T.clip(q, 1e-300, 1.0 - 1e-12)
    q = T.reshape(q, (n, k, h, w))
    return T.reshape(q, (k, h, w)) if squeeze else q


def smooth(assignment: Tensor, kernel: SmoothingKernel) -> Tensor:
    """Convolve each assignment channel with the kernel, renormalizing the
    in-image kernel mass at the borders so constants (and the (0, 1) range)
    are preserved."""
    squeeze = assignment.ndim == 3
    q = T.reshape(assignment, (1,) + assignment.shape) if squeeze else assignment
    n, k, h, w = q.shape
    if kernel.size > min(h, w):
        raise ValueError(f"kernel size {kernel.size} exceeds map extent "
                         f"{(h, w)}")
    weights = Tensor(kernel.weights[None, None])
    flat = T.reshape(q, (n * k, 1, h, w))
    raw = T.conv2d(flat, weights, stride=1, padding="same")
    # in-image kernel mass per position; constant w.r.t. the graph
    mass = T.conv2d(Tensor(np.ones((1, 1, h, w))), weights, stride=1,
                    padding="same")
    out = T.reshape(T.div(raw, mass), (n, k, h, w))
    return T.reshape(out, (k, h, w)) if squeeze else out


def occurrence(smoothed: Tensor) -> Tensor:
    """Per-part occurrence scores: the spatial maximum of each channel.

    The gradient routes to the argmax location, first in row-major order on
    ties.  Returns K (single map) or N x K scores.
    """
    if smoothed.ndim not in (3, 4):
        raise ValueError(f"expected (N x) K x H x W, got {smoothed.shape}")
    return T.amax(smoothed, axis=(-2, -1))
