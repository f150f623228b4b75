"""Experiment specifications and their flat ``section.key = value`` text format.

Example::

    seed = 0
    dataset.kind = mnist
    surrogate = cnn-a:1
    targets = cnn-a:2, mlp-b:3
    attack.names = ifgsm, mifgsm
    attack.epsilons = 10/255, 25/255, 40/255
    sharpen.alpha_grid = 0, 0.05, 0.10, 0.15, 0.20, 0.25

Lists are comma separated and numbers may be written as fractions.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from fractions import Fraction

from .attacks import ATTACKS
from .errors import ConfigError
from .image import PerceptualBudget
from .sharpen import ALPHA_GRID


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    seed: int
    checkpoint: str | None = None

    @property
    def name(self) -> str:
        return f"{self.arch}-s{self.seed}"

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        parts = text.strip().split(":", 2)
        if len(parts) < 2:
            raise ConfigError(f"model descriptor {text!r} must look like arch:seed[:checkpoint]")
        try:
            seed = int(parts[1])
        except ValueError as exc:
            raise ConfigError(f"bad seed in model descriptor {text!r}") from exc
        return cls(parts[0].strip(), seed, parts[2].strip() if len(parts) == 3 else None)

    def __str__(self):
        return f"{self.arch}:{self.seed}" + (f":{self.checkpoint}" if self.checkpoint else "")


@dataclass(frozen=True)
class ExperimentSpec:
    master_seed: int = 0
    output_dir: str = "out"
    whitebox: bool = True
    # dataset
    dataset: str = "mnist"
    train_images: str | None = None
    train_labels: str | None = None
    eval_images: str | None = None
    eval_labels: str | None = None
    train_count: int = 0
    eval_count: int = 1000
    synthetic_classes: int = 10
    synthetic_per_class: int = 400
    synthetic_size: tuple = (28, 28)
    synthetic_eval_fraction: float = 0.25
    # models
    surrogate: ModelSpec = ModelSpec("cnn-a", 1)
    targets: tuple = (ModelSpec("cnn-a", 2), ModelSpec("mlp-b", 3))
    ensemble: tuple = ()
    model_dir: str | None = None
    train_if_missing: bool = True
    train_epochs: int = 5
    train_batch_size: int = 32
    train_learning_rate: float = 0.05
    # attacks
    attacks: tuple = ("ifgsm", "mifgsm")
    epsilons: tuple = (10 / 255, 25 / 255, 40 / 255)
    iterations: int = 10
    step_size: float | None = None
    momentum: float = 1.0
    target_label: int | None = None
    quantize_adversarial: bool = False
    # robustification
    alpha_grid: tuple = ALPHA_GRID
    kernel: str = "laplacian8"
    jpeg_q: tuple = (0,)
    jpeg_stage: str = "pre"
    perceptual_budget: PerceptualBudget | None = None
    time_budget_tau: float | None = None

    def __post_init__(self):
        if not self.alpha_grid or not self.epsilons or not self.attacks or not self.jpeg_q:
            raise ConfigError("alpha, epsilon, attack and jpeg grids must be nonempty")
        if min(self.alpha_grid) < 0:
            raise ConfigError("alpha values must be >= 0")
        for a in self.attacks:
            if a not in ATTACKS:
                raise ConfigError(f"unknown attack {a!r}; choose from {', '.join(ATTACKS)}")
        for e in self.epsilons:
            if not 0 < e <= 1:
                raise ConfigError(f"epsilon {e} outside (0, 1]")
        for q in self.jpeg_q:
            if not 0 <= q <= 100:
                raise ConfigError(f"jpeg quality {q} outside [0, 100] (0 disables)")
        if self.jpeg_stage not in ("pre", "post"):
            raise ConfigError("jpeg.stage must be 'pre' or 'post'")
        if self.dataset not in ("mnist", "idx", "synthetic"):
            raise ConfigError(f"unknown dataset kind {self.dataset!r}")
        crafting = {self.surrogate.name} | {m.name for m in self.ensemble}
        if crafting & {t.name for t in self.targets}:
            raise ConfigError("crafting models must not also be black-box targets")
        if not self.targets and not self.whitebox:
            raise ConfigError("nothing to evaluate: no targets and whitebox disabled")
        if self.time_budget_tau is not None and not self.time_budget_tau > 0:
            raise ConfigError("time budget tau must be positive")

    def with_env(self, environ=os.environ) -> "ExperimentSpec":
        """Apply the SEED environment override to ``master_seed``."""
        if "SEED" in environ and environ["SEED"].strip():
            try:
                return replace(self, master_seed=int(environ["SEED"]))
            except ValueError as exc:
                raise ConfigError(f"SEED must be an integer, got {environ['SEED']!r}") from exc
        return self


def default_spec(**overrides) -> ExperimentSpec:
    return replace(ExperimentSpec(), **overrides)


# --- text format ---------------------------------------------------------------


def _num(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def _int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError as exc:
        raise ConfigError(f"not an integer: {text!r}") from exc


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _list(text: str):
    return [p.strip() for p in text.split(",") if p.strip()]


def _opt(conv):
    return lambda t: None if t.strip().lower() in ("", "none") else conv(t)


def _size(text: str):
    try:
        h, w = text.lower().split("x")
        return (int(h), int(w))
    except ValueError as exc:
        raise ConfigError(f"size must look like 28x28, got {text!r}") from exc


# key -> (spec field, converter, formatter)
_KEYS = {
    "seed": ("master_seed", _int, str),
    "output_dir": ("output_dir", str, str),
    "whitebox": ("whitebox", _bool, lambda v: str(v).lower()),
    "dataset.kind": ("dataset", str, str),
    "dataset.train_images": ("train_images", _opt(str), str),
    "dataset.train_labels": ("train_labels", _opt(str), str),
    "dataset.eval_images": ("eval_images", _opt(str), str),
    "dataset.eval_labels": ("eval_labels", _opt(str), str),
    "dataset.train_count": ("train_count", _int, str),
    "dataset.eval_count": ("eval_count", _int, str),
    "dataset.classes": ("synthetic_classes", _int, str),
    "dataset.per_class": ("synthetic_per_class", _int, str),
    "dataset.size": ("synthetic_size", _size, lambda v: f"{v[0]}x{v[1]}"),
    "dataset.eval_fraction": ("synthetic_eval_fraction", _num, repr),
    "surrogate": ("surrogate", ModelSpec.parse, str),
    "targets": ("targets", lambda t: tuple(ModelSpec.parse(p) for p in _list(t)),
                lambda v: ", ".join(str(m) for m in v)),
    "ensemble": ("ensemble", lambda t: tuple(ModelSpec.parse(p) for p in _list(t)),
                 lambda v: ", ".join(str(m) for m in v)),
    "models.dir": ("model_dir", _opt(str), str),
    "models.train_if_missing": ("train_if_missing", _bool, lambda v: str(v).lower()),
    "train.epochs": ("train_epochs", _int, str),
    "train.batch_size": ("train_batch_size", _int, str),
    "train.learning_rate": ("train_learning_rate", _num, repr),
    "attack.names": ("attacks", lambda t: tuple(_list(t)), ", ".join),
    "attack.epsilons": ("epsilons", lambda t: tuple(_num(p) for p in _list(t)),
                        lambda v: ", ".join(repr(x) for x in v)),
    "attack.iterations": ("iterations", _int, str),
    "attack.step_size": ("step_size", _opt(_num), repr),
    "attack.momentum": ("momentum", _num, repr),
    "attack.target_label": ("target_label", _opt(_int), str),
    "attack.quantize": ("quantize_adversarial", _bool, lambda v: str(v).lower()),
    "sharpen.alpha_grid": ("alpha_grid", lambda t: tuple(_num(p) for p in _list(t)),
                           lambda v: ", ".join(repr(x) for x in v)),
    "sharpen.kernel": ("kernel", str, str),
    "jpeg.q": ("jpeg_q", lambda t: tuple(_int(p) for p in _list(t)),
               lambda v: ", ".join(str(x) for x in v)),
    "jpeg.stage": ("jpeg_stage", str, str),
    "budget.perceptual": ("perceptual_budget", _opt(PerceptualBudget.parse),
                          lambda v: f"{v.metric.value}:{v.epsilon_r!r}"),
    "budget.tau": ("time_budget_tau", _opt(_num), repr),
}


def parse_spec(text: str, base: ExperimentSpec | None = None) -> ExperimentSpec:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name, conv, _ = _KEYS[key]
        try:
            values[name] = conv(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    return replace(base or ExperimentSpec(), **values)


def load_spec(path) -> ExperimentSpec:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from exc
    return parse_spec(text)


def format_spec(spec: ExperimentSpec) -> str:
    lines = []
    for key, (name, _, fmt) in _KEYS.items():
        value = getattr(spec, name)
        lines.append(f"{key} = {'none' if value is None else fmt(value)}")
    return "\n".join(lines) + "\n"

