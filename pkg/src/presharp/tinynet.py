"""Small numpy classifiers with exact reverse-mode gradients.

Tensors are plain numpy arrays in NHWC layout. Models compute in float32 by default;
``model.astype(np.float64)`` gives a copy for gradient verification.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, FormatError, ShapeError, TruncationError
from .image import Image, LabeledSet


def _glorot(rng, shape, fan_in, fan_out, dtype):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}

    def build(self, rng, in_shape, dtype):
        return in_shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv2d(Layer):
    """Valid (unpadded) convolution; weights stored as (C_in, k, k, C_out)."""

    kind = "conv"

    def __init__(self, out_channels, k=3, stride=1):
        super().__init__()
        self.out_channels = out_channels
        self.k = k
        self.stride = stride

    def build(self, rng, in_shape, dtype):
        h, w, c = in_shape
        k, o = self.k, self.out_channels
        if h < k or w < k:
            raise ShapeError(f"conv kernel {k} larger than input {in_shape}")
        self.params = {
            "W": _glorot(rng, (c, k, k, o), c * k * k, o * k * k, dtype),
            "b": np.zeros(o, dtype=dtype),
        }
        return ((h - k) // self.stride + 1, (w - k) // self.stride + 1, o)

    def forward(self, x):
        s = self.stride
        win = sliding_window_view(x, (self.k, self.k), axis=(1, 2))[:, ::s, ::s]
        y = np.tensordot(win, self.params["W"], axes=([3, 4, 5], [0, 1, 2])) + self.params["b"]
        return y, (x.shape, win)

    def backward(self, dy, cache):
        x_shape, win = cache
        W, s, k = self.params["W"], self.stride, self.k
        grads = {
            "W": np.tensordot(win, dy, axes=([0, 1, 2], [0, 1, 2])),
            "b": dy.sum(axis=(0, 1, 2)),
        }
        ho, wo = dy.shape[1], dy.shape[2]
        dx = np.zeros(x_shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, i : i + s * ho : s, j : j + s * wo : s, :] += dy @ W[:, i, j, :].T
        return dx, grads

    def __repr__(self):
        return f"Conv2d({self.out_channels}, k={self.k}, stride={self.stride})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0), x > 0

    def backward(self, dy, cache):
        return dy * cache, {}


class MaxPool(Layer):
    """2x2 max pooling, floor mode. Gradient goes to the first maximum in each window."""

    kind = "maxpool"

    def build(self, rng, in_shape, dtype):
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise ShapeError(f"cannot pool input {in_shape}")
        return (h // 2, w // 2, c)

    def forward(self, x):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        blocks = x[:, : 2 * h2, : 2 * w2, :].reshape(n, h2, 2, w2, 2, c)
        blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy, cache):
        x_shape, idx = cache
        n, h, w, c = x_shape
        h2, w2 = h // 2, w // 2
        spread = np.zeros((n, h2, w2, c, 4), dtype=dy.dtype)
        np.put_along_axis(spread, idx[..., None], dy[..., None], axis=-1)
        spread = spread.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, : 2 * h2, : 2 * w2, :] = spread.reshape(n, 2 * h2, 2 * w2, c)
        return dx, {}


class Flatten(Layer):
    kind = "flatten"

    def build(self, rng, in_shape, dtype):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(len(x), -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, out_features):
        super().__init__()
        self.out_features = out_features

    def build(self, rng, in_shape, dtype):
        if len(in_shape) != 1:
            raise ShapeError(f"Dense expects flat input, got {in_shape}")
        (d,) = in_shape
        self.params = {
            "W": _glorot(rng, (d, self.out_features), d, self.out_features, dtype),
            "b": np.zeros(self.out_features, dtype=dtype),
        }
        return (self.out_features,)

    def forward(self, x):
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, dy, cache):
        return dy @ self.params["W"].T, {"W": cache.T @ dy, "b": dy.sum(axis=0)}

    def __repr__(self):
        return f"Dense({self.out_features})"


ARCH_IDS = {"custom": 0, "cnn-a": 1, "mlp-b": 2, "linear": 3}


def _arch_layers(arch, class_count):
    if arch == "cnn-a":
        return [Conv2d(8, 3), ReLU(), MaxPool(), Conv2d(16, 3), ReLU(), MaxPool(), Flatten(),
                Dense(class_count)]
    if arch == "mlp-b":
        return [Flatten(), Dense(128), ReLU(), Dense(class_count)]
    if arch == "linear":
        return [Flatten(), Dense(class_count)]
    raise ConfigError(f"unknown architecture {arch!r}; choose from cnn-a, mlp-b, linear")


@dataclass(eq=False)
class Classifier:
    layers: list
    input_shape: tuple
    class_count: int
    seed: int = 0
    arch: str = "custom"
    dtype: type = np.float32
    name: str = field(default="")

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        rng = np.random.default_rng(self.seed)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.build(rng, shape, self.dtype)
        if shape != (self.class_count,):
            raise ShapeError(f"architecture ends in shape {shape}, expected ({self.class_count},)")
        if not self.name:
            self.name = f"{self.arch}-s{self.seed}"

    def parameters(self):
        """(layer index, name, array) triples in checkpoint order."""
        return [(i, k, layer.params[k]) for i, layer in enumerate(self.layers) for k in ("W", "b")
                if k in layer.params]

    def copy(self) -> "Classifier":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Classifier":
        model = self.copy()
        model.dtype = dtype
        for layer in model.layers:
            layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
        return model

    def _check_input(self, x):
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"model {self.name} expects inputs {self.input_shape}, got {x.shape[1:]}")
        return x.astype(self.dtype, copy=False)

    def forward_cached(self, x):
        x = self._check_input(x)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dlogits):
        """Return (input gradient, list of per-layer param-grad dicts)."""
        grads = [None] * len(self.layers)
        dy = dlogits.astype(self.dtype, copy=False)
        for i in range(len(self.layers) - 1, -1, -1):
            dy, grads[i] = self.layers[i].backward(dy, caches[i])
        return dy, grads

    def __call__(self, x):
        return self.forward_cached(x)[0]


def build_model(arch: str, input_shape, class_count: int, seed: int, name: str = "") -> Classifier:
    return Classifier(_arch_layers(arch, class_count), input_shape, class_count, seed, arch, name=name)


def linear_model(weights, bias, input_shape, dtype=np.float64) -> Classifier:
    """A Flatten -> Dense classifier with the given (d, classes) weights and bias."""
    weights = np.asarray(weights, dtype=dtype)
    model = Classifier([Flatten(), Dense(weights.shape[1])], input_shape, weights.shape[1],
                       arch="linear", dtype=dtype)
    model.layers[1].params = {"W": weights.copy(), "b": np.asarray(bias, dtype=dtype).copy()}
    return model


# --- inference and losses ----------------------------------------------------


def _pixels(image):
    return image.pixels if isinstance(image, Image) else np.asarray(image)


def forward(model: Classifier, batch) -> np.ndarray:
    return model(batch)


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class.
    return np.argmax(logits, axis=-1)


def predict(model: Classifier, image) -> int:
    return int(argmax_lowest(model(_pixels(image)))[0])


def predict_batch(model: Classifier, x: np.ndarray, batch_size: int = 500) -> np.ndarray:
    out = [argmax_lowest(model(x[i : i + batch_size])) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def softmax_ce(logits: np.ndarray, labels: np.ndarray):
    """Per-sample cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(len(labels))
    loss = -logp[rows, labels]
    d = np.exp(logp)
    d[rows, labels] -= 1
    return loss, d


def _check_labels(labels, class_count):
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ValueError(f"label out of range for {class_count} classes: {labels.max()}")
    return labels


def ensemble_loss_grad(models, x: np.ndarray, labels):
    """Summed CE of the averaged logits and its input gradient, for a batch.

    A single model is the one-member ensemble. The per-sample gradients are
    independent of batch composition.
    """
    models = _as_model_list(models)
    x = models[0]._check_input(x)
    labels = _check_labels(labels, models[0].class_count)
    runs = [m.forward_cached(x) for m in models]
    logits = runs[0][0] if len(models) == 1 else sum(r[0] for r in runs) / len(models)
    loss, dlogits = softmax_ce(logits, labels)
    grad = None
    for m, (_, caches) in zip(models, runs):
        dx, _ = m.backward(caches, dlogits if len(models) == 1 else dlogits / len(models))
        grad = dx if grad is None else grad + dx
    return loss, grad


def loss_and_input_grad(model: Classifier, image, label: int, targeted: bool = False):
    """Cross-entropy of ``model`` at ``image`` w.r.t. ``label`` and its input gradient.

    With ``targeted`` the label is the attack target; the loss is the same CE and
    targeted attacks descend it instead of ascending.
    """
    loss, grad = ensemble_loss_grad([model], _pixels(image), [label])
    return float(loss[0]), grad[0]


def loss_and_param_grads(model: Classifier, x: np.ndarray, labels):
    """Mean CE over the batch and per-layer parameter gradients."""
    labels = _check_labels(labels, model.class_count)
    logits, caches = model.forward_cached(x)
    loss, dlogits = softmax_ce(logits, labels)
    _, grads = model.backward(caches, dlogits / len(labels))
    return float(loss.mean()), grads


def _as_model_list(models):
    if isinstance(models, Classifier):
        return [models]
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    first = models[0]
    for m in models[1:]:
        if m.class_count != first.class_count or m.input_shape != first.input_shape:
            raise ValueError("ensemble members must share class_count and input shape")
    return models


def ensemble_logits(models, image) -> np.ndarray:
    models = _as_model_list(models)
    x = _pixels(image)
    if len(models) == 1:
        return models[0](x)
    return sum(m(x) for m in models) / len(models)


# --- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate >= 0:
            raise ConfigError(f"invalid training config {self}")


def train(model: Classifier, data: LabeledSet, config: TrainConfig = TrainConfig()) -> Classifier:
    """Minibatch SGD on softmax cross-entropy. Returns a trained copy."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.class_count > model.class_count:
        raise ValueError("dataset has more classes than the model")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    lr = model.dtype(config.learning_rate)
    for _ in range(config.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            _, grads = loss_and_param_grads(model, data.images[idx], data.labels[idx])
            for layer, g in zip(model.layers, grads):
                for k in layer.params:
                    layer.params[k] -= lr * g[k].astype(model.dtype, copy=False)
    return model


def accuracy(model: Classifier, data: LabeledSet) -> float:
    if len(data) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict_batch(model, data.images) == data.labels))


# --- checkpoints ---------------------------------------------------------------

CHECKPOINT_MAGIC = b"TNCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sHHqIIIII")


def save_model(model: Classifier, path) -> None:
    """Write a versioned header then little-endian float32 params in layer order."""
    if model.arch not in ARCH_IDS or model.arch == "custom":
        raise ConfigError(f"cannot checkpoint custom architecture {model.name}")
    params = model.parameters()
    h, w, c = model.input_shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, ARCH_IDS[model.arch],
                             model.seed, model.class_count, h, w, c, len(params)))
        for _, _, p in params:
            f.write(p.astype("<f4").tobytes())


def load_model(path, name: str = "") -> Classifier:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise TruncationError(f"{path}: checkpoint header truncated")
    magic, version, arch_id, seed, classes, h, w, c, count = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    arch = {v: k for k, v in ARCH_IDS.items()}.get(arch_id)
    if arch in (None, "custom"):
        raise FormatError(f"{path}: unknown architecture id {arch_id}")
    model = build_model(arch, (h, w, c), classes, seed, name=name)
    params = model.parameters()
    if len(params) != count:
        raise FormatError(f"{path}: expected {len(params)} parameter blocks, header says {count}")
    offset = _HEADER.size
    for i, k, p in params:
        n = p.size * 4
        if offset + n > len(data):
            raise TruncationError(f"{path}: parameter block truncated")
        block = np.frombuffer(data, dtype="<f4", count=p.size, offset=offset)
        model.layers[i].params[k] = block.reshape(p.shape).astype(np.float32)
        offset += n
    return model
