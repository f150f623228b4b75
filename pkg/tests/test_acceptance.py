"""Acceptance criteria, one test per criterion.

Each test records a "[PASS] ACn ..." or "[FAIL] ACn ..." line that is printed in the
terminal summary, then asserts. The end-to-end criteria (AC1, AC10) train models
and run the default sweep, so they take a few minutes.
"""

import dataclasses
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from presharp.attacks import AttackConfig, fgsm_batch, ifgsm_batch, run_attack_batch
from presharp.config import ExperimentSpec, ModelSpec, default_spec
from presharp.geometry import boundary_distance_bisect, linear_margin, margin_vs_alpha
from presharp.harness import (ROW_FIELDS, compute_gamma_hat, indicator_margin, load_datasets,
                              obtain_models, robustness_margin, run_experiment, standard_accuracy_sweep)
from presharp.image import Image
from presharp.jpeg import BASE_LUMINANCE_TABLE, JpegConfig, dct8_forward, dct8_inverse, jpeg_array, psnr, \
    quant_table
from presharp.report import load_results_csv, run_and_emit
from presharp.sharpen import ALPHA_GRID, Kernel, conv2d, laplacian8, sharpen_array
from presharp.synthetic import generate_synthetic_dataset
from presharp.tinynet import (Classifier, Conv2d, Dense, Flatten, MaxPool, ReLU, build_model,
                              ensemble_loss_grad, linear_model, loss_and_param_grads, predict,
                              predict_batch)

BUDGET_TOL = 2.0 ** -20


def record(n, ok, text):
    ACCEPTANCE_LINES.append((n, f"[{'PASS' if ok else 'FAIL'}] AC{n} {text}"))
    return ok


def binary_linear(w, b, shape):
    w = np.asarray(w, dtype=np.float64).ravel()
    return linear_model(np.stack([np.zeros_like(w), w], axis=1), [0.0, b], shape)


# --- AC1 and AC10: end-to-end runs ------------------------------------------------------


@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    """Two independent default runs (own model caches and output dirs), same SEED."""
    seed = os.environ.get("SEED", "0")
    runs = []
    for k in range(2):
        root = tmp_path_factory.mktemp(f"run{k}")
        spec = dataclasses.replace(ExperimentSpec(), output_dir=str(root / "out"),
                                   model_dir=str(root / "models")).with_env({"SEED": seed})
        start = time.perf_counter()
        report = run_and_emit(spec)
        runs.append((spec, report, time.perf_counter() - start))
    return runs


@pytest.mark.slow
def test_ac1_identity_pipeline(default_runs):
    spec, report, _ = default_runs[0]
    start = time.perf_counter()
    data = load_datasets(spec)
    models = obtain_models(spec, data[0])
    plain = run_experiment(spec, models, data, sharpen_stage=False).rows
    elapsed = time.perf_counter() - start
    alpha0 = [r for r in report.rows if r.alpha == 0]
    ok = alpha0 == plain and len(plain) > 0 and elapsed < 300
    record(1, ok, f"identity pipeline: {len(plain)} alpha=0 rows bit-identical to the unsharpened "
                  f"pipeline ({elapsed:.0f}s)")
    assert alpha0 == plain
    assert elapsed < 300


def _tree_bytes(directory):
    out = {}
    for root, _, files in os.walk(directory):
        for name in files:
            path = os.path.join(root, name)
            with open(path, "rb") as f:
                out[os.path.relpath(path, directory)] = f.read()
    return out


def _well_formed(spec, report):
    out = spec.output_dir
    rows = load_results_csv(os.path.join(out, "results.csv"))
    n_settings = int(spec.whitebox) + len(spec.targets)
    expected = len(spec.alpha_grid) * len(spec.attacks) * len(spec.epsilons) * n_settings
    baseline = {r.cell() for r in rows if r.alpha == 0}
    checks = [
        len(rows) == expected,
        all(r.cell() in baseline for r in rows),
        len({r.sample_hash for r in rows}) == 1,
        all(0 <= v <= 1 for r in rows for v in (r.clean_accuracy, r.adversarial_accuracy, r.asr)),
        all(r.mean_linf <= r.epsilon_a + BUDGET_TOL for r in report.rows),
        abs(compute_gamma_hat(report.rows) - report.gamma_hat) <= 1e-9,
    ]
    with open(os.path.join(out, "summary.md")) as f:
        summary = f.read()
    checks.append(all(f"## {a}" in summary for a in spec.attacks) and "gamma_hat" in summary)
    plots = os.listdir(os.path.join(out, "plotdata"))
    checks.append(len(plots) == len(spec.attacks) * 2)
    for name in plots:
        with open(os.path.join(out, "plotdata", name)) as f:
            lines = f.read().splitlines()
        cols = len(lines[0].split("\t"))
        checks.append(len(lines) == 1 + len(spec.alpha_grid)
                      and all(len(line.split("\t")) == cols for line in lines))
    return all(checks)


@pytest.fixture(scope="module")
def synthetic_standard_accuracy(tmp_path_factory):
    spec = default_spec(dataset="synthetic", eval_count=0,
                        model_dir=str(tmp_path_factory.mktemp("synthetic_models")))
    data = load_datasets(spec)
    models = obtain_models(spec, data[0])
    return standard_accuracy_sweep(spec, models, data)


@pytest.mark.slow
def test_ac10_end_to_end(default_runs, synthetic_standard_accuracy):
    (spec_a, report_a, t_a), (spec_b, report_b, t_b) = default_runs
    same = _tree_bytes(spec_a.output_dir) == _tree_bytes(spec_b.output_dir)
    formed = _well_formed(spec_a, report_a)
    fast = max(t_a, t_b) < 15 * 60

    table = synthetic_standard_accuracy
    def avg(alpha):
        accs = [acc for a, _, acc in table if a == alpha]
        return sum(accs) / len(accs)
    drop = 100 * (avg(0.0) - avg(0.25))
    ok = same and formed and fast and drop <= 5
    record(10, ok, f"end-to-end: {len(report_a.rows)} rows, runs {t_a:.0f}s/{t_b:.0f}s, "
                   f"byte-identical={same}, well-formed={formed}, synthetic clean AVG "
                   f"{100 * avg(0.0):.1f} -> {100 * avg(0.25):.1f} (drop {drop:.2f}pp)")
    assert same and formed and fast
    assert drop <= 5


# --- AC2: budget invariants -------------------------------------------------------------


def test_ac2_budget_invariants():
    rng = np.random.default_rng(20)
    violations = invocations = 0
    for _ in range(1000):
        shape = (int(rng.integers(10, 15)), int(rng.integers(10, 15)), int(rng.choice([1, 3])))
        classes = int(rng.integers(2, 5))
        attack = str(rng.choice(["fgsm", "ifgsm", "mifgsm", "ens-ifgsm"]))
        archs = ["linear", "mlp-b", "cnn-a"] if attack == "ens-ifgsm" else [str(rng.choice(["linear", "mlp-b"]))]
        models = [build_model(a, shape, classes, seed=int(rng.integers(1 << 30))) for a in archs]
        x = rng.random((2, *shape), dtype=np.float32)
        x[1] = np.where(rng.random(shape) < 0.5, 0.0, 1.0)
        if rng.random() < 0.5:
            x = sharpen_array(x, float(rng.choice(ALPHA_GRID[1:])))
        eps = float(rng.uniform(1e-4, 1.0))
        step = None if rng.random() < 0.5 else float(rng.uniform(1e-4, 0.5))
        cfg = AttackConfig(eps, int(rng.integers(1, 8)), step,
                           momentum_decay=float(rng.choice([0.0, 0.5, 1.0])))
        adv, _ = run_attack_batch(attack, models, x, rng.integers(0, classes, 2), cfg)
        invocations += 1
        dist = np.abs(adv.astype(np.float64) - x).max()
        if dist > eps + BUDGET_TOL or adv.min() < 0 or adv.max() > 1:
            violations += 1
    record(2, violations == 0, f"budget invariants: {violations} violations in {invocations} attack "
                               f"invocations (ball centered on the attacked input)")
    assert violations == 0


# --- AC3: gradients --------------------------------------------------------------------


def _random_small_model(rng, k):
    c = int(rng.choice([1, 2]))
    classes = int(rng.integers(2, 5))
    kind = k % 4
    if kind == 0:
        layers, shape = [Flatten(), Dense(classes)], (3, 3, c)
    elif kind == 1:
        layers, shape = [Flatten(), Dense(5), ReLU(), Dense(classes)], (3, 3, c)
    elif kind == 2:
        layers, shape = [Conv2d(2, 3), ReLU(), Flatten(), Dense(classes)], (5, 5, c)
    else:
        layers, shape = [Conv2d(2, 3), MaxPool(), Flatten(), Dense(classes)], (6, 6, c)
    return Classifier(layers, shape, classes, seed=int(rng.integers(1 << 30)), dtype=np.float64)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)


def test_ac3_gradient_correctness():
    rng = np.random.default_rng(30)
    h = 1e-4
    worst = 0.0
    start = time.perf_counter()
    for k in range(20):
        model = _random_small_model(rng, k)
        x = rng.random((2, *model.input_shape))
        y = rng.integers(0, model.class_count, 2)
        _, gx = ensemble_loss_grad([model], x, y)
        num = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            num[i] = (ensemble_loss_grad([model], xp, y)[0].sum()
                      - ensemble_loss_grad([model], xm, y)[0].sum()) / (2 * h)
        worst = max(worst, _rel(gx, num))
        _, pgrads = loss_and_param_grads(model, x, y)
        for layer, grads in zip(model.layers, pgrads):
            for name, p in layer.params.items():
                num = np.zeros_like(p)
                for i in np.ndindex(p.shape):
                    old = p[i]
                    p[i] = old + h
                    lp = loss_and_param_grads(model, x, y)[0]
                    p[i] = old - h
                    lm = loss_and_param_grads(model, x, y)[0]
                    p[i] = old
                    num[i] = (lp - lm) / (2 * h)
                worst = max(worst, _rel(grads[name], num))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 60
    record(3, ok, f"gradient correctness: max relative error {worst:.2e} over 20 models ({elapsed:.1f}s)")
    assert worst < 1e-5 and elapsed < 60


# --- AC4: convolution oracle --------------------------------------------------------------


def _naive_conv(img, kern):
    h, w, c = img.shape
    k = kern.shape[0]
    r = k // 2
    out = np.zeros((h, w, c))
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                s = 0.0
                for u in range(k):
                    for v in range(k):
                        ii = min(max(i + u - r, 0), h - 1)
                        jj = min(max(j + v - r, 0), w - 1)
                        s += kern[u, v] * img[ii, jj, ch]
                out[i, j, ch] = s
    return out


def test_ac4_convolution_oracle():
    rng = np.random.default_rng(40)
    worst = 0.0
    for _ in range(100):
        shape = (int(rng.integers(1, 17)), int(rng.integers(1, 17)), int(rng.choice([1, 3])))
        img = rng.random(shape, dtype=np.float32)
        k = int(rng.choice([1, 3, 5]))
        kern = rng.normal(size=(k, k))
        got = conv2d(img, Kernel(kern))
        worst = max(worst, float(np.abs(got - _naive_conv(img.astype(np.float64), kern)).max()))
    record(4, worst <= 1e-6, f"convolution oracle: max abs error {worst:.2e} on 100 random pairs")
    assert worst <= 1e-6


# --- AC5 and AC6: geometry -----------------------------------------------------------------


def test_ac5_linear_geometry():
    rng = np.random.default_rng(50)
    shape = (3, 3, 1)
    tol = 1e-4
    worst, flip_errors = 0.0, 0
    for _ in range(200):
        x = Image(rng.uniform(0.3, 0.7, size=shape))
        xv = x.pixels.astype(np.float64).ravel()
        w = rng.normal(size=xv.size)
        b = rng.choice([-1.0, 1.0]) * rng.uniform(0.005, 0.1) * np.abs(w).sum() - w @ xv
        model = binary_linear(w, b, shape)
        label = predict(model, x)
        exact = linear_margin(w, b, xv)
        est = boundary_distance_bisect(model, x, label, "fgsm", tol=tol).epsilon_star
        worst = max(worst, abs(est - exact))
        # float32 pixels: bracket the flip point by 1e-6
        below = predict_batch(model, fgsm_batch([model], x.pixels[None], [label],
                                                AttackConfig(exact - 1e-6, 1))[0])[0] != label
        above = predict_batch(model, fgsm_batch([model], x.pixels[None], [label],
                                                AttackConfig(exact + 1e-6, 1))[0])[0] != label
        flip_errors += int(below) + int(not above)
    ok = worst <= tol + 1e-6 and flip_errors == 0
    record(5, ok, f"linear geometry: max |eps* - closed form| {worst:.2e} (tol {tol}); "
                  f"fgsm flip bracket errors {flip_errors} of 400")
    assert worst <= tol + 1e-6
    assert flip_errors == 0


def test_ac6_margin_monotonicity():
    rng = np.random.default_rng(60)
    shape = (8, 8, 1)
    violations, clamped = 0, 0
    for _ in range(50):
        t = rng.uniform(-1, 1, size=shape)
        x = Image(0.5 + 0.03 * t)
        w = conv2d(t, laplacian8()).astype(np.float64).ravel()
        b = 0.02 * np.abs(w).sum() - w @ x.pixels.astype(np.float64).ravel()
        for alpha in ALPHA_GRID:
            raw = x.pixels + alpha * conv2d(x.pixels, laplacian8())
            clamped += int(raw.min() <= 0 or raw.max() >= 1)
        eps = [e for _, e in margin_vs_alpha(binary_linear(w, b, shape), x, 1, ALPHA_GRID, tol=1e-4)]
        violations += sum(e2 < e1 for e1, e2 in zip(eps, eps[1:]))
    ok = violations == 0 and clamped == 0
    record(6, ok, f"margin monotonicity: {violations} decreases of eps* over alpha on 50 texture-aligned "
                  f"instances (pre-clamp: {clamped == 0})")
    assert clamped == 0
    assert violations == 0


# --- AC7: reductions ---------------------------------------------------------------------


def test_ac7_reduction_identities():
    rng = np.random.default_rng(70)
    mismatches = 0
    for _ in range(100):
        arch = str(rng.choice(["linear", "mlp-b", "cnn-a"]))
        shape = (int(rng.integers(10, 15)), int(rng.integers(10, 15)), int(rng.choice([1, 3])))
        classes = int(rng.integers(2, 6))
        model = build_model(arch, shape, classes, seed=int(rng.integers(1 << 30)))
        x = rng.random((3, *shape), dtype=np.float32)
        y = rng.integers(0, classes, 3)
        eps = float(rng.uniform(1e-3, 0.3))
        iters = int(rng.integers(1, 10))
        a, _ = ifgsm_batch([model], x, y, AttackConfig(eps, iters))
        b, _ = ifgsm_batch([model], x, y, AttackConfig(eps, iters, momentum_decay=0.0))
        c, _ = fgsm_batch([model], x, y, AttackConfig(eps, 1))
        d, _ = ifgsm_batch([model], x, y, AttackConfig(eps, 1, step_size=eps))
        mismatches += int(not np.array_equal(a, b)) + int(not np.array_equal(c, d))
    record(7, mismatches == 0, f"reduction identities: {mismatches} mismatches in 200 bit-exact comparisons")
    assert mismatches == 0


# --- AC8: margin arithmetic ------------------------------------------------------------------


def test_ac8_margin_arithmetic():
    exact = robustness_margin(0.560, 0.413) == 0.147
    data = generate_synthetic_dataset(3, 30, size=(12, 12), seed=8)
    x, y = data.images[:50], data.labels[:50]
    model = build_model("mlp-b", (12, 12, 1), 3, seed=8)
    cfg = AttackConfig(10 / 255, 5)
    xr = sharpen_array(x, 0.15)
    correct_r = predict_batch(model, ifgsm_batch([model], xr, y, cfg)[0]) == y
    correct_b = predict_batch(model, ifgsm_batch([model], x, y, cfg)[0]) == y
    per_sample = indicator_margin(correct_r, correct_b)
    aggregate = robustness_margin(correct_r.mean(), correct_b.mean())
    brute = float(Fraction(sum(int(a) - int(b) for a, b in zip(correct_r, correct_b)), len(y)))
    ok = exact and per_sample == aggregate == brute
    record(8, ok, f"margin arithmetic: 0.560 - 0.413 == 0.147 is {exact}; indicator {per_sample!r} "
                  f"vs aggregate {aggregate!r} on 50 samples")
    assert exact
    assert per_sample == aggregate == brute


# --- AC9: JPEG fidelity ------------------------------------------------------------------------


def test_ac9_jpeg_fidelity():
    rng = np.random.default_rng(90)
    blocks = rng.uniform(-128, 127, size=(1000, 8, 8))
    roundtrip = float(np.abs(dct8_inverse(dct8_forward(blocks)) - blocks).max())
    data = generate_synthetic_dataset(5, 10, size=(28, 28), seed=9)
    means = []
    for q in (10, 40, 70, 95):
        out = jpeg_array(data.images, JpegConfig(quality=q))
        means.append(float(np.mean([psnr(o, i) for o, i in zip(out, data.images)])))
    monotone = means == sorted(means)
    table = np.array_equal(quant_table(50), BASE_LUMINANCE_TABLE)
    ok = roundtrip <= 1e-5 and monotone and table
    record(9, ok, f"jpeg fidelity: DCT round trip {roundtrip:.1e}; mean PSNR at Q=10/40/70/95 "
                  f"{'/'.join(f'{m:.1f}' for m in means)} dB; Q=50 table is base: {table}")
    assert roundtrip <= 1e-5
    assert monotone and table
