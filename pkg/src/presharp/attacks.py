"""Sign-gradient l-infinity attacks: FGSM, I-FGSM, MI-FGSM and their ensemble forms.

Every attack works on a batch internally. The l-infinity ball is always centered
on the input handed to the attack (the robustified image when sharpening ran
first), and each step is followed by projection onto that ball and onto [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .image import Image
from .tinynet import Classifier, _as_model_list, argmax_lowest, ensemble_loss_grad

ATTACKS = ("fgsm", "ifgsm", "mifgsm", "ens-ifgsm")


@dataclass(frozen=True)
class AttackConfig:
    epsilon_a: float = 10 / 255
    iterations: int = 10
    step_size: float | None = None
    momentum_decay: float = 0.0
    targeted: bool = False
    target_label: int | None = None

    def __post_init__(self):
        if not 0 < self.epsilon_a <= 1:
            raise ValueError(f"epsilon_a must lie in (0, 1], got {self.epsilon_a}")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon_a / self.iterations)
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.momentum_decay < 0:
            raise ValueError("momentum_decay must be >= 0")
        if self.targeted and self.target_label is None:
            raise ValueError("targeted attacks need a target_label")


@dataclass(frozen=True, eq=False)
class AttackResult:
    adversarial: Image
    linf_norm: float
    queries: int
    success: bool


def _project(x_adv, x0, eps):
    # float32 pixels: eps is rounded once so that the ball edge is representable.
    eps = np.float32(eps)
    return np.clip(np.clip(x_adv, x0 - eps, x0 + eps), np.float32(0), np.float32(1))


def _direction(models, x, labels, targeted):
    _, grad = ensemble_loss_grad(models, x, labels)
    return -grad if targeted else grad


def _attack_labels(config: AttackConfig, labels, class_count):
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if config.targeted:
        if not 0 <= config.target_label < class_count:
            raise ValueError(f"target_label {config.target_label} outside [0, {class_count})")
        return np.full_like(labels, config.target_label)
    return labels


def fgsm_batch(models, x, labels, config: AttackConfig):
    """Single-step attack: ``x +/- eps * sign(grad)``, sign(0) = 0. Returns (x_adv, queries)."""
    models = _as_model_list(models)
    x0 = np.asarray(x, dtype=np.float32)
    y = _attack_labels(config, labels, models[0].class_count)
    d = _direction(models, x0, y, config.targeted)
    step = np.float32(config.epsilon_a) * np.sign(d).astype(np.float32)
    return _project(x0 + step, x0, config.epsilon_a), len(models)


def ifgsm_batch(models, x, labels, config: AttackConfig):
    """Iterative sign attack with optional momentum; no random start.

    With ``momentum_decay`` > 0 the direction is ``g <- mu * g + grad / ||grad||_1``
    (per sample); a zero-norm gradient contributes nothing that step.
    """
    models = _as_model_list(models)
    x0 = np.asarray(x, dtype=np.float32)
    y = _attack_labels(config, labels, models[0].class_count)
    mu = config.momentum_decay
    step = np.float32(config.step_size)
    x_adv = x0.copy()
    g = np.zeros_like(x0)
    for _ in range(config.iterations):
        d = _direction(models, x_adv, y, config.targeted)
        if mu > 0:
            norm = np.abs(d).reshape(len(d), -1).sum(axis=1).reshape(-1, *([1] * (d.ndim - 1)))
            safe = np.where(norm > 0, norm, 1)
            g = np.float32(mu) * g + np.where(norm > 0, d / safe, 0).astype(np.float32)
            d = g
        x_adv = _project(x_adv + step * np.sign(d).astype(np.float32), x0, config.epsilon_a)
    return x_adv, config.iterations * len(models)


def mifgsm_batch(models, x, labels, config: AttackConfig):
    return ifgsm_batch(models, x, labels, config)


def _result(models, image, x_adv, label, config, queries):
    x0 = image.pixels
    pred = int(argmax_lowest(_ensemble_predict_logits(models, x_adv[None]))[0])
    success = pred == config.target_label if config.targeted else pred != label
    linf = float(np.max(np.abs(x_adv.astype(np.float64) - x0))) if x0.size else 0.0
    return AttackResult(Image(x_adv), linf, queries, bool(success))


def _ensemble_predict_logits(models, x):
    models = _as_model_list(models)
    return sum(m(x) for m in models) / len(models) if len(models) > 1 else models[0](x)


def _single(batch_fn, models, image, label, config):
    x_adv, queries = batch_fn(models, image.pixels[None], [label], config)
    return _result(models, image, x_adv[0], label, config, queries)


def fgsm(model: Classifier, image: Image, label: int, config: AttackConfig) -> AttackResult:
    return _single(fgsm_batch, [model], image, label, config)


def ifgsm(model: Classifier, image: Image, label: int, config: AttackConfig) -> AttackResult:
    return _single(ifgsm_batch, [model], image, label, config)


def mifgsm(model: Classifier, image: Image, label: int, config: AttackConfig) -> AttackResult:
    return _single(mifgsm_batch, [model], image, label, config)


def targeted_attack(model: Classifier, image: Image, target_label: int, config: AttackConfig,
                    label: int | None = None) -> AttackResult:
    """Descend CE toward ``target_label``; success iff the model then predicts it."""
    if not 0 <= target_label < model.class_count:
        raise ValueError(f"target_label {target_label} outside [0, {model.class_count})")
    config = replace(config, targeted=True, target_label=target_label)
    return _single(ifgsm_batch, [model], image, target_label if label is None else label, config)


def ensemble_attack(models, image: Image, label: int, config: AttackConfig) -> AttackResult:
    """I-FGSM (or MI-FGSM when momentum is set) on the averaged-logit loss."""
    return _single(ifgsm_batch, _as_model_list(models), image, label, config)


def run_attack_batch(name: str, models, x, labels, config: AttackConfig):
    """Dispatch by CLI name. Returns (x_adv, queries per sample)."""
    if name == "fgsm":
        return fgsm_batch(models, x, labels, config)
    if name in ("ifgsm", "ens-ifgsm"):
        return ifgsm_batch(models, x, labels, config)
    if name == "mifgsm":
        if config.momentum_decay <= 0:
            config = replace(config, momentum_decay=1.0)
        return ifgsm_batch(models, x, labels, config)
    raise ValueError(f"unknown attack {name!r}; choose from {', '.join(ATTACKS)}")
