"""Images, labeled sets, raster I/O and perceptual distances.

Pixels live in [0, 1] as float32 arrays of shape (H, W, C) with C in {1, 3}.
Eight-bit values only appear at file boundaries.
"""

from __future__ import annotations

import enum
import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, DomainError, FormatError, ShapeError, TruncationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable H x W x C raster with float32 pixels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float32, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3) or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"expected H x W x {{1,3}} pixels, got shape {np.shape(self.pixels)}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("image contains non-finite pixels")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("image pixels must lie in [0, 1]; use clamp01 for raw arrays")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"Image({self.height}x{self.width}x{self.channels})"


class Metric(str, enum.Enum):
    LINF = "linf"
    RMSE = "rmse"


@dataclass(frozen=True)
class PerceptualBudget:
    metric: Metric
    epsilon_r: float

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if not self.epsilon_r >= 0:
            raise ValueError(f"epsilon_r must be >= 0, got {self.epsilon_r}")

    @classmethod
    def parse(cls, text: str) -> "PerceptualBudget":
        """Parse ``"linf:0.1"`` or ``"rmse:0.05"``."""
        try:
            metric, value = text.split(":")
            return cls(Metric(metric.strip().lower()), float(value))
        except ValueError as exc:
            raise ValueError(f"bad budget {text!r}, expected metric:value") from exc


@dataclass(eq=False)
class LabeledSet:
    """A stack of same-shape images with integer labels.

    ``images`` is an (N, H, W, C) float32 array; indexing yields (Image, label) pairs.
    """

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    image_shape: tuple = field(default=None)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if len(self.images) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConsistencyError(
                f"labels must lie in [0, {self.class_count}), found {self.labels.max()}"
            )
        if self.images.ndim == 4:
            self.image_shape = tuple(self.images.shape[1:])
        elif len(self.images) == 0 and self.image_shape is not None:
            self.images = self.images.reshape((0, *self.image_shape))
        else:
            raise ShapeError(f"images must be (N, H, W, C), got {self.images.shape}")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return Image(self.images[i]), int(self.labels[i])

    def subset(self, indices) -> "LabeledSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledSet(self.images[indices], self.labels[indices], self.class_count, self.image_shape)


def clip01(values: np.ndarray) -> np.ndarray:
    """Array-level projection onto [0, 1]; rejects NaN."""
    values = np.asarray(values)
    if np.isnan(values).any():
        raise DomainError("cannot clamp NaN pixels")
    return np.clip(values, 0.0, 1.0).astype(np.float32, copy=False)


def clamp01(values) -> Image:
    """Clamp raw pixel values (an Image or any array-like) into a valid Image.

    One-dimensional input is treated as a single row of grayscale pixels.
    """
    if isinstance(values, Image):
        return values
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1, 1)
    return Image(clip01(arr))


def quantize8(pixels: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to bytes, rounding half away from zero on v * 255."""
    scaled = np.asarray(pixels, dtype=np.float64) * 255.0
    return np.clip(np.floor(np.abs(scaled) + 0.5) * np.sign(scaled), 0, 255).astype(np.uint8)


def perceptual_distance(a: Image, b: Image, metric: Metric | str = Metric.LINF) -> float:
    pa = a.pixels if isinstance(a, Image) else np.asarray(a, dtype=np.float32)
    pb = b.pixels if isinstance(b, Image) else np.asarray(b, dtype=np.float32)
    if pa.shape != pb.shape:
        raise ShapeError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    diff = pa.astype(np.float64) - pb.astype(np.float64)
    metric = Metric(metric)
    if diff.size == 0:
        return 0.0
    if metric is Metric.LINF:
        return float(np.max(np.abs(diff)))
    return float(np.sqrt(np.mean(diff * diff)))


# --- netpbm -----------------------------------------------------------------


def _read_header_tokens(data: bytes, count: int):
    """Return ``count`` whitespace-separated header tokens and the payload offset."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated netpbm header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise FormatError("netpbm header must end with a single whitespace byte")
    return tokens, pos + 1


def load_pgm_ppm(path) -> Image:
    """Read a binary P5 (grayscale) or P6 (RGB) file with maxval 255."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file (magic {data[:2]!r})")
    channels = 1 if data[:2] == b"P5" else 3
    tokens, offset = _read_header_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header {tokens}") from exc
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    payload = data[2 + offset :]
    need = width * height * channels
    if len(payload) < need:
        raise TruncationError(f"{path}: expected {need} pixel bytes, found {len(payload)}")
    raw = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width, channels)
    return Image(raw.astype(np.float32) / np.float32(255.0))


def save_pgm_ppm(image: Image, path) -> None:
    magic = b"P5" if image.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    with open(path, "wb") as f:
        f.write(header)
        f.write(quantize8(image.pixels).tobytes())


# --- IDX ----------------------------------------------------------------------


def _read_maybe_gzip(path) -> bytes:
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def load_idx(images_path, labels_path, class_count: int = 10) -> LabeledSet:
    """Load an IDX image/label pair (optionally gzipped) into a LabeledSet."""
    img = _read_maybe_gzip(images_path)
    lab = _read_maybe_gzip(labels_path)
    if len(img) < 16 or len(lab) < 8:
        raise TruncationError(f"IDX header truncated in {images_path} or {labels_path}")
    magic, n, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad IDX image magic 0x{magic:08x}")
    lmagic, ln = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad IDX label magic 0x{lmagic:08x}")
    if n != ln:
        raise ConsistencyError(f"{n} images but {ln} labels")
    need = n * rows * cols
    if len(img) - 16 < need:
        raise TruncationError(f"{images_path}: expected {need} pixel bytes, found {len(img) - 16}")
    if len(lab) - 8 < n:
        raise TruncationError(f"{labels_path}: expected {n} labels, found {len(lab) - 8}")
    pixels = np.frombuffer(img, dtype=np.uint8, count=need, offset=16)
    images = pixels.reshape(n, rows, cols, 1).astype(np.float32) / np.float32(255.0)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    return LabeledSet(images, labels, class_count, image_shape=(rows, cols, 1))


def save_idx(data: LabeledSet, images_path, labels_path) -> None:
    """Write a grayscale LabeledSet as uncompressed IDX files."""
    n, rows, cols, ch = (len(data), *data.image_shape)
    if ch != 1:
        raise ShapeError("IDX export supports grayscale images only")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(quantize8(data.images).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(data.labels.astype(np.uint8).tobytes())


def default_mnist_paths(root=None):
    """Locate the bundled MNIST subset (``data/mnist5k``) relative to the repo or ``root``."""
    candidates = [root] if root else [
        os.environ.get("PRESHARP_MNIST"),
        os.path.join(os.getcwd(), "data", "mnist5k"),
        os.path.join(os.path.dirname(__file__), "..", "..", "data", "mnist5k"),
    ]
    for c in candidates:
        if c and os.path.exists(os.path.join(c, "train-images-idx3-ubyte.gz")):
            c = os.path.abspath(c)
            return {
                "train_images": os.path.join(c, "train-images-idx3-ubyte.gz"),
                "train_labels": os.path.join(c, "train-labels-idx1-ubyte.gz"),
                "eval_images": os.path.join(c, "t10k-images-idx3-ubyte.gz"),
                "eval_labels": os.path.join(c, "t10k-labels-idx1-ubyte.gz"),
            }
    return None
