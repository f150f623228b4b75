"""Laplacian sharpening of benign images, applied before any attack is crafted.

The robustified image is ``x + alpha * (K * x)`` where ``K`` is a zero-sum Laplacian
stencil with a positive center, applied per channel with replicate padding.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .image import Image, PerceptualBudget, clip01, perceptual_distance
from .errors import ShapeError

ALPHA_GRID = (0.00, 0.05, 0.10, 0.15, 0.20, 0.25)


@dataclass(frozen=True, eq=False)
class Kernel:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ShapeError(f"kernel must be k x k with odd k, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def to_text(self) -> str:
        rows = [" ".join(repr(float(v)) for v in row) for row in self.weights]
        return f"{self.size}\n" + "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Kernel":
        """Parse ``k`` followed by ``k*k`` row-major floats, whitespace separated."""
        parts = text.split()
        if not parts:
            raise ValueError("empty kernel text")
        k = int(parts[0])
        values = [float(p) for p in parts[1:]]
        if len(values) != k * k:
            raise ValueError(f"kernel of size {k} needs {k * k} weights, got {len(values)}")
        return cls(np.array(values).reshape(k, k))


def laplacian8() -> Kernel:
    return Kernel([[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]])


def laplacian4() -> Kernel:
    return Kernel([[0, -1, 0], [-1, 4, -1], [0, -1, 0]])


@dataclass(frozen=True)
class SharpenConfig:
    alpha: float = 0.15
    kernel: Kernel = field(default_factory=laplacian8)
    clamp_output: bool = True

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


def _as_array(image) -> np.ndarray:
    return image.pixels if isinstance(image, Image) else np.asarray(image)


def conv2d(image, kernel: Kernel, padding: str = "replicate") -> np.ndarray:
    """Per-channel 2-D cross-correlation with edge-replicate padding.

    Accepts an Image or an (H, W, C) / (N, H, W, C) array and returns an unclamped
    float32 array of the same shape. The result is a texture map and may be negative.
    """
    if padding != "replicate":
        raise ValueError(f"unsupported padding {padding!r}")
    x = _as_array(image)
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected (H, W, C) or (N, H, W, C), got {x.shape}")
    r = kernel.size // 2
    pad = [(r, r), (r, r), (0, 0)]
    if x.ndim == 4:
        pad = [(0, 0)] + pad
    padded = np.pad(x.astype(np.float64), pad, mode="edge")
    h, w = x.shape[-3], x.shape[-2]
    out = np.zeros(x.shape, dtype=np.float64)
    for i in range(kernel.size):
        for j in range(kernel.size):
            wij = kernel.weights[i, j]
            if wij != 0.0:
                out += wij * padded[..., i : i + h, j : j + w, :]
    return out.astype(np.float32)


def sharpen_array(x: np.ndarray, alpha: float, kernel: Kernel | None = None, clamp: bool = True):
    """Array-level sharpening for single images or batches."""
    kernel = kernel or laplacian8()
    x = np.asarray(x, dtype=np.float32)
    raw = x.astype(np.float64) + alpha * conv2d(x, kernel).astype(np.float64)
    if clamp:
        return clip01(raw)
    return raw.astype(np.float32)


def sharpen(image: Image, config: SharpenConfig = SharpenConfig()):
    """Return the sharpened Image, or the raw float32 array when ``clamp_output`` is off."""
    out = sharpen_array(_as_array(image), config.alpha, config.kernel, config.clamp_output)
    return Image(out) if config.clamp_output else out


def check_budget(original: Image, robustified, budget: PerceptualBudget) -> bool:
    return perceptual_distance(original, robustified, budget.metric) <= budget.epsilon_r


def timed_robustify(image: Image, config: SharpenConfig, tau: float):
    """Sharpen ``image`` and report (result, seconds, seconds <= tau).

    The time budget is only measured; the result is returned either way.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    start = time.perf_counter()
    result = sharpen(image, config)
    elapsed = max(0.0, time.perf_counter() - start)
    return result, elapsed, elapsed <= tau
