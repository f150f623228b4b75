"""Texture-bearing toy datasets.

Each class owns a fixed template built from a few mid-frequency plane waves.
Samples are the template at a jittered contrast around mid-gray plus smooth noise,
so classes are linearly separable and carry texture that sharpening can amplify.
"""

from __future__ import annotations

import numpy as np

from .image import LabeledSet

WAVES_PER_CLASS = 4


def _template(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    t = np.zeros((h, w))
    for _ in range(WAVES_PER_CLASS):
        cycles = rng.uniform(2.0, 5.0)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        fy, fx = cycles * np.sin(theta) / h, cycles * np.cos(theta) / w
        t += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    return t / np.abs(t).max()


def _smooth_noise(rng, n, h, w, sigma):
    noise = rng.normal(0.0, 1.0, size=(n, h, w))
    # 3x3 box blur with wraparound keeps the noise below the template band
    acc = sum(np.roll(np.roll(noise, dy, axis=1), dx, axis=2) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
    return sigma * acc / 3.0


def generate_synthetic_dataset(classes: int, per_class: int, size=(28, 28), seed: int = 0,
                               amplitude: float = 0.25, noise: float = 0.15) -> LabeledSet:
    """Balanced grayscale set of ``classes * per_class`` images, shuffled deterministically."""
    if classes < 1 or per_class < 0 or min(size) < 1:
        raise ValueError("classes and size must be positive, per_class nonnegative")
    h, w = size
    template_rng = np.random.default_rng([seed, 0])
    sample_rng = np.random.default_rng([seed, 1])
    templates = np.stack([_template(template_rng, h, w) for _ in range(classes)])
    labels = np.repeat(np.arange(classes), per_class)
    n = len(labels)
    gain = sample_rng.uniform(0.7, 1.3, size=(n, 1, 1))
    images = 0.5 + amplitude * gain * templates[labels] + _smooth_noise(sample_rng, n, h, w, noise)
    order = sample_rng.permutation(n)
    images = np.clip(images[order], 0.0, 1.0).astype(np.float32)[..., None]
    return LabeledSet(images, labels[order], classes, image_shape=(h, w, 1))
