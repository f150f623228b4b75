"""Pixel-domain JPEG simulation: 8x8 block DCT, quality-scaled quantization, inverse.

No entropy coding and no chroma subsampling; RGB channels are treated like
independent luminance planes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .image import Image, clip01

# ITU-T T.81 Annex K.1 luminance table, natural (row-major) order.
BASE_LUMINANCE_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)


def _dct_matrix(n=8):
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    m[0] /= np.sqrt(2.0)
    return m


DCT8 = _dct_matrix()


def dct8_forward(block) -> np.ndarray:
    """Orthonormal 2-D DCT-II of an 8x8 block (or a stack of them, last two axes)."""
    b = np.asarray(block, dtype=np.float64)
    if b.shape[-2:] != (8, 8):
        raise ValueError(f"expected 8x8 blocks, got {b.shape}")
    return DCT8 @ b @ DCT8.T


def dct8_inverse(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape[-2:] != (8, 8):
        raise ValueError(f"expected 8x8 blocks, got {c.shape}")
    return DCT8.T @ c @ DCT8


def quant_table(quality: int, base=BASE_LUMINANCE_TABLE) -> np.ndarray:
    """IJG quality scaling of ``base``; Q=50 returns it unchanged."""
    if not isinstance(quality, (int, np.integer)) or not 1 <= quality <= 100:
        raise ValueError(f"quality must be an integer in [1, 100], got {quality!r}")
    # integer arithmetic throughout, as in libjpeg's jpeg_quality_scaling
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((np.asarray(base) * scale + 50) // 100, 1, 255).astype(np.int64)


@dataclass(frozen=True)
class JpegConfig:
    quality: int = 75
    table: np.ndarray = field(default_factory=lambda: BASE_LUMINANCE_TABLE.copy())

    def __post_init__(self):
        if not 1 <= self.quality <= 100:
            raise ValueError(f"quality must lie in [1, 100], got {self.quality}")
        t = np.asarray(self.table)
        if t.shape != (8, 8) or (t < 1).any() or not np.array_equal(t, np.round(t)):
            raise ValueError("quantization table must be 8x8 positive integers")


def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def jpeg_array(x: np.ndarray, config: JpegConfig) -> np.ndarray:
    """Round-trip an (H, W, C) or (N, H, W, C) array; returns float32 in [0, 1]."""
    x = np.asarray(x, dtype=np.float32)
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    n, h, w, c = x.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(x.astype(np.float64), [(0, 0), (0, ph), (0, pw), (0, 0)], mode="edge")
    H, W = h + ph, w + pw
    levels = padded * 255.0 - 128.0
    blocks = levels.reshape(n, H // 8, 8, W // 8, 8, c).transpose(0, 1, 3, 5, 2, 4)
    table = quant_table(config.quality, config.table).astype(np.float64)
    coeffs = _round_half_away(dct8_forward(blocks) / table) * table
    rec = dct8_inverse(coeffs).transpose(0, 1, 4, 2, 5, 3).reshape(n, H, W, c)
    out = clip01((rec[:, :h, :w, :] + 128.0) / 255.0)
    return out if batched else out[0]


def jpeg_roundtrip(image: Image, config: JpegConfig) -> Image:
    return Image(jpeg_array(image.pixels, config))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; inf when identical."""
    pa = a.pixels if isinstance(a, Image) else np.asarray(a)
    pb = b.pixels if isinstance(b, Image) else np.asarray(b)
    mse = np.mean((pa.astype(np.float64) - pb.astype(np.float64)) ** 2)
    return float("inf") if mse == 0 else float(10 * np.log10(1.0 / mse))
