"""Experiment orchestration: sharpen, optionally compress, attack, evaluate.

Every cell of the sweep (alpha, epsilon, attack, model) is computed on the same
evaluation samples, so per-sample indicator differences between an alpha row and
its alpha = 0 baseline are well defined.
"""

from __future__ import annotations

import hashlib
import logging
import os
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .attacks import AttackConfig, run_attack_batch
from .config import ExperimentSpec, ModelSpec
from .errors import ConfigError, DataError
from .image import LabeledSet, default_mnist_paths, load_idx, quantize8
from .jpeg import JpegConfig, jpeg_array
from .sharpen import Kernel, laplacian4, laplacian8, sharpen_array
from .synthetic import generate_synthetic_dataset
from .tinynet import TrainConfig, build_model, load_model, predict_batch, save_model, train

log = logging.getLogger(__name__)

ROW_FIELDS = (
    "alpha", "epsilon_a", "attack_name", "model_name", "setting", "clean_accuracy",
    "adversarial_accuracy", "asr", "mean_linf", "mean_runtime", "jpeg_q", "n_samples",
    "sample_hash",
)
CRAFT_BATCH = 250


@dataclass(frozen=True)
class ReportRow:
    alpha: float
    epsilon_a: float
    attack_name: str
    model_name: str
    setting: str
    clean_accuracy: float
    adversarial_accuracy: float
    asr: float
    mean_linf: float
    mean_runtime: float
    jpeg_q: int = 0
    n_samples: int = 0
    sample_hash: str = ""

    def cell(self):
        """Identity of the row up to alpha; its alpha = 0 counterpart shares this key."""
        return (self.jpeg_q, self.epsilon_a, self.attack_name, self.model_name, self.setting)

    def sort_key(self):
        return (self.alpha, self.epsilon_a, self.attack_name, self.model_name, self.setting,
                self.jpeg_q)


@dataclass
class EvalReport:
    rows: list
    gamma_hat: float = 0.0
    time_violations: int | None = None
    budget_violations: dict | None = None
    standard_accuracy: list = field(default_factory=list)


def robustness_margin(acc_robustified: float, acc_baseline: float) -> float:
    """Accuracy gain of robustified over baseline inputs.

    The subtraction is done on the decimal values, so 0.560 - 0.413 gives 0.147 and
    k1/n - k2/n equals (k1 - k2)/n for decimal-representable n.
    """
    for v in (acc_robustified, acc_baseline):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracy {v} outside [0, 1]")
    return float(Fraction(repr(float(acc_robustified))) - Fraction(repr(float(acc_baseline))))


def indicator_margin(correct_robustified, correct_baseline) -> float:
    """Sample mean of per-sample indicator differences (paired design)."""
    a = np.asarray(correct_robustified, dtype=np.int64)
    b = np.asarray(correct_baseline, dtype=np.int64)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("indicator vectors must be nonempty and paired")
    return float(Fraction(int((a - b).sum()), a.size))


def compute_gamma_hat(rows) -> float:
    """Mean adversarial-accuracy gain of every alpha > 0 row over its alpha = 0 row."""
    baseline = {r.cell(): r for r in rows if r.alpha == 0}
    gains = []
    for r in rows:
        if r.alpha > 0:
            base = baseline.get(r.cell())
            if base is None:
                raise ValueError(f"row {r.cell()} at alpha={r.alpha} has no alpha=0 baseline")
            gains.append(r.adversarial_accuracy - base.adversarial_accuracy)
    return float(np.mean(gains)) if gains else 0.0


# --- data and models -----------------------------------------------------------------


def resolve_kernel(name: str) -> Kernel:
    if name == "laplacian8":
        return laplacian8()
    if name == "laplacian4":
        return laplacian4()
    try:
        with open(name) as f:
            return Kernel.from_text(f.read())
    except OSError as exc:
        raise ConfigError(f"kernel {name!r} is neither a built-in name nor a readable file") from exc
    except ValueError as exc:
        raise ConfigError(f"bad kernel file {name}: {exc}") from exc


def load_datasets(spec: ExperimentSpec):
    """Return (train, eval) LabeledSets; the eval set is already subset to ``eval_count``."""
    if spec.dataset == "synthetic":
        full = generate_synthetic_dataset(spec.synthetic_classes, spec.synthetic_per_class,
                                          spec.synthetic_size, seed=spec.master_seed)
        n_eval = int(round(len(full) * spec.synthetic_eval_fraction))
        train_set = full.subset(range(len(full) - n_eval))
        eval_set = full.subset(range(len(full) - n_eval, len(full)))
    else:
        paths = {
            "train_images": spec.train_images, "train_labels": spec.train_labels,
            "eval_images": spec.eval_images, "eval_labels": spec.eval_labels,
        }
        if not all(paths.values()):
            if spec.dataset == "idx":
                raise ConfigError("dataset.kind = idx needs all four IDX paths")
            found = default_mnist_paths()
            if found is None:
                raise DataError("bundled MNIST subset not found; run scripts/make_mnist_idx.py "
                                "or set PRESHARP_MNIST")
            paths = {k: v or found[k] for k, v in paths.items()}
        try:
            train_set = load_idx(paths["train_images"], paths["train_labels"])
            eval_set = load_idx(paths["eval_images"], paths["eval_labels"])
        except OSError as exc:
            raise DataError(f"cannot read dataset: {exc}") from exc
    if spec.train_count and spec.train_count < len(train_set):
        train_set = train_set.subset(range(spec.train_count))
    if spec.eval_count and spec.eval_count < len(eval_set):
        rng = np.random.default_rng([spec.master_seed, 7])
        eval_set = eval_set.subset(np.sort(rng.choice(len(eval_set), spec.eval_count, replace=False)))
    return train_set, eval_set


def _checkpoint_path(mspec: ModelSpec, spec: ExperimentSpec):
    if mspec.checkpoint:
        return mspec.checkpoint
    if spec.model_dir:
        return os.path.join(spec.model_dir, f"{mspec.name}-m{spec.master_seed}.tnck")
    return None


def obtain_model(mspec: ModelSpec, spec: ExperimentSpec, train_set: LabeledSet):
    path = _checkpoint_path(mspec, spec)
    if path and os.path.exists(path):
        model = load_model(path, name=mspec.name)
        if model.input_shape != train_set.image_shape:
            raise ConfigError(f"checkpoint {path} expects {model.input_shape}, "
                              f"data is {train_set.image_shape}")
        return model
    if not spec.train_if_missing:
        raise ConfigError(f"checkpoint for {mspec.name} missing ({path}) and training disabled")
    seed = int(np.random.SeedSequence([spec.master_seed, mspec.seed]).generate_state(1)[0])
    config = TrainConfig(spec.train_epochs, spec.train_batch_size, spec.train_learning_rate, seed)
    log.info("training %s on %d samples", mspec.name, len(train_set))
    model = build_model(mspec.arch, train_set.image_shape, train_set.class_count, mspec.seed,
                        name=mspec.name)
    model = train(model, train_set, config)
    if path:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        save_model(model, path)
        # reload so trained and cached runs see identical float32 parameters
        model = load_model(path, name=mspec.name)
    return model


def obtain_models(spec: ExperimentSpec, train_set: LabeledSet):
    specs = [spec.surrogate, *spec.ensemble, *spec.targets]
    return {m.name: obtain_model(m, spec, train_set) for m in specs}


# --- the sweep -------------------------------------------------------------------


def _sample_hash(x: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return h.hexdigest()[:16]


def _robustify(spec, x, alpha, kernel, sharpen_stage):
    """Return (x_r, per-image runtimes or None)."""
    if not sharpen_stage:
        return x, None
    if spec.time_budget_tau is None:
        return sharpen_array(x, alpha, kernel), None
    out = np.empty_like(x)
    runtimes = np.empty(len(x))
    for i in range(len(x)):
        start = time.perf_counter()
        out[i] = sharpen_array(x[i], alpha, kernel)
        runtimes[i] = time.perf_counter() - start
    return out, runtimes


def _craft(attack, crafting, x, labels, config):
    parts = [run_attack_batch(attack, crafting, x[i : i + CRAFT_BATCH], labels[i : i + CRAFT_BATCH],
                              config)[0] for i in range(0, len(x), CRAFT_BATCH)]
    return np.concatenate(parts) if parts else x.copy()


def _attack_config(spec, attack, eps):
    targeted = spec.target_label is not None
    return AttackConfig(
        epsilon_a=eps,
        iterations=1 if attack == "fgsm" else spec.iterations,
        step_size=spec.step_size,
        momentum_decay=spec.momentum if attack == "mifgsm" else 0.0,
        targeted=targeted,
        target_label=spec.target_label,
    )


def run_experiment(spec: ExperimentSpec, models=None, data=None, sharpen_stage: bool = True):
    """Run the full sweep and return an EvalReport.

    ``models`` (name -> Classifier) and ``data`` ((train, eval) pair) may be passed to
    reuse already-built objects. With ``sharpen_stage=False`` the robustification step
    is removed from the pipeline entirely.
    """
    train_set, eval_set = data if data is not None else load_datasets(spec)
    if len(eval_set) == 0:
        raise DataError("evaluation set is empty")
    if models is None:
        models = obtain_models(spec, train_set)
    kernel = resolve_kernel(spec.kernel)
    surrogate = models[spec.surrogate.name]
    ensemble = [surrogate] + [models[m.name] for m in spec.ensemble]
    evaluated = ([(spec.surrogate.name, "whitebox")] if spec.whitebox else []) + [
        (t.name, "blackbox") for t in spec.targets]
    x, y = eval_set.images, eval_set.labels
    n = len(y)
    sample_hash = _sample_hash(x, y)
    target = spec.target_label

    rows = []
    time_violations = 0 if spec.time_budget_tau is not None else None
    budget_violations = {} if spec.perceptual_budget is not None else None
    alphas = spec.alpha_grid if sharpen_stage else (0.0,)
    for q in spec.jpeg_q:
        jpeg = JpegConfig(q) if q else None
        for alpha in alphas:
            xr, runtimes = _robustify(spec, x, alpha, kernel, sharpen_stage)
            mean_runtime = float(runtimes.mean()) if runtimes is not None else 0.0
            if runtimes is not None:
                time_violations += int((runtimes > spec.time_budget_tau).sum())
            if budget_violations is not None:
                diff = (xr.astype(np.float64) - x).reshape(n, -1)
                if spec.perceptual_budget.metric.value == "linf":
                    dist = np.abs(diff).max(axis=1)
                else:
                    dist = np.sqrt((diff ** 2).mean(axis=1))
                budget_violations[alpha] = int((dist > spec.perceptual_budget.epsilon_r).sum())
            if jpeg and spec.jpeg_stage == "pre":
                xr = jpeg_array(xr, jpeg)
            clean = {name: predict_batch(models[name], xr) for name, _ in evaluated}
            for attack in spec.attacks:
                crafting = ensemble if attack == "ens-ifgsm" else [surrogate]
                for eps in spec.epsilons:
                    config = _attack_config(spec, attack, eps)
                    log.info("q=%d alpha=%.2f attack=%s eps=%.4f", q, alpha, attack, eps)
                    x_adv = _craft(attack, crafting, xr, y, config)
                    linf = np.abs(x_adv.astype(np.float64) - xr).reshape(n, -1).max(axis=1)
                    x_eval = x_adv
                    if jpeg and spec.jpeg_stage == "post":
                        x_eval = jpeg_array(x_eval, jpeg)
                    if spec.quantize_adversarial:
                        x_eval = quantize8(x_eval).astype(np.float32) / np.float32(255)
                    for name, setting in evaluated:
                        pred = predict_batch(models[name], x_eval)
                        initially = clean[name] == y
                        if target is None:
                            pool = initially
                            hits = pred != y
                        else:
                            pool = y != target
                            hits = pred == target
                        asr = float(hits[pool].mean()) if pool.any() else 0.0
                        rows.append(ReportRow(
                            alpha=float(alpha), epsilon_a=float(eps), attack_name=attack,
                            model_name=name, setting=setting,
                            clean_accuracy=float(initially.mean()),
                            adversarial_accuracy=float((pred == y).mean()),
                            asr=asr, mean_linf=float(linf.mean()), mean_runtime=mean_runtime,
                            jpeg_q=int(q), n_samples=n, sample_hash=sample_hash,
                        ))
    rows.sort(key=ReportRow.sort_key)
    return EvalReport(rows, compute_gamma_hat(rows), time_violations, budget_violations)


def standard_accuracy_sweep(spec: ExperimentSpec, models=None, data=None):
    """[(alpha, model_name, clean_accuracy)] on sharpened, unattacked eval images."""
    train_set, eval_set = data if data is not None else load_datasets(spec)
    if models is None:
        models = obtain_models(spec, train_set)
    kernel = resolve_kernel(spec.kernel)
    names = [spec.surrogate.name, *(m.name for m in spec.ensemble), *(t.name for t in spec.targets)]
    table = []
    for alpha in spec.alpha_grid:
        xr = sharpen_array(eval_set.images, alpha, kernel)
        for name in names:
            acc = float(np.mean(predict_batch(models[name], xr) == eval_set.labels))
            table.append((float(alpha), name, acc))
    return table
