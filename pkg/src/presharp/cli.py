"""Command line entry point: ``presharp {sharpen,train,attack,eval,boundary,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from fractions import Fraction

from . import attacks as atk
from .config import ExperimentSpec, load_spec
from .errors import ConfigError, DataError
from .geometry import margin_vs_alpha, write_margin_csv
from .harness import resolve_kernel
from .image import PerceptualBudget, load_idx, load_pgm_ppm, perceptual_distance, save_pgm_ppm
from .report import emit_report, report_from_csv, run_and_emit
from .sharpen import SharpenConfig, check_budget, timed_robustify
from .synthetic import generate_synthetic_dataset
from .tinynet import TrainConfig, accuracy, build_model, load_model, predict, save_model, train

log = logging.getLogger("presharp")


def _number(text):
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def _float_list(text):
    return [_number(p) for p in text.split(",") if p.strip()]


def cmd_sharpen(args):
    image = load_pgm_ppm(args.input)
    kernel = resolve_kernel(args.kernel_file) if args.kernel_file else resolve_kernel("laplacian8")
    config = SharpenConfig(alpha=args.alpha, kernel=kernel)
    out, seconds, within = timed_robustify(image, config, args.tau)
    save_pgm_ppm(out, args.output)
    print(f"linf={perceptual_distance(image, out, 'linf'):.6g} "
          f"rmse={perceptual_distance(image, out, 'rmse'):.6g} runtime={seconds:.3g}s "
          f"within_tau={within}")
    if args.budget:
        budget = PerceptualBudget.parse(args.budget)
        ok = check_budget(image, out, budget)
        print(f"budget {args.budget}: {'ok' if ok else 'exceeded'}")
    return 0


def _load_training_data(args):
    if args.data == "synthetic":
        full = generate_synthetic_dataset(args.classes, args.per_class, seed=args.seed)
        return full
    if not args.labels:
        raise ConfigError("--labels is required with an IDX --data file")
    return load_idx(args.data, args.labels)


def cmd_train(args):
    data = _load_training_data(args)
    model = build_model(args.arch, data.image_shape, data.class_count, args.seed)
    model = train(model, data, TrainConfig(args.epochs, args.batch_size, args.lr, args.seed))
    save_model(model, args.out)
    print(f"{model.name}: train accuracy {accuracy(model, data):.4f} -> {args.out}")
    return 0


def cmd_attack(args):
    model = load_model(args.model)
    image = load_pgm_ppm(args.image)
    label = args.label if args.label is not None else predict(model, image)
    targeted = args.target_label is not None
    config = atk.AttackConfig(
        epsilon_a=args.eps, iterations=1 if args.attack == "fgsm" else args.iters,
        step_size=args.step, momentum_decay=args.mu if args.attack == "mifgsm" else 0.0,
        targeted=targeted, target_label=args.target_label,
    )
    if targeted:
        result = atk.targeted_attack(model, image, args.target_label, config, label=label)
    elif args.attack == "fgsm":
        result = atk.fgsm(model, image, label, config)
    elif args.attack == "mifgsm":
        result = atk.mifgsm(model, image, label, config)
    elif args.attack in ("ifgsm", "ens-ifgsm"):
        members = [model] + [load_model(p) for p in args.ensemble]
        result = atk.ensemble_attack(members, image, label, config)
    else:
        raise ConfigError(f"unknown attack {args.attack!r}")
    if args.out:
        save_pgm_ppm(result.adversarial, args.out)
    print(f"label={label} adv_pred={predict(model, result.adversarial)} success={result.success} "
          f"linf={result.linf_norm:.6g} queries={result.queries}")
    return 0


def cmd_eval(args):
    spec = load_spec(args.spec) if args.spec else ExperimentSpec()
    if args.out:
        spec = replace(spec, output_dir=args.out)
    spec = spec.with_env()
    report = run_and_emit(spec, with_standard=not args.no_standard)
    print(f"wrote {len(report.rows)} rows to {spec.output_dir}; gamma_hat={report.gamma_hat:.6g}")
    return 0


def cmd_boundary(args):
    model = load_model(args.model)
    image = load_pgm_ppm(args.image)
    label = args.label if args.label is not None else predict(model, image)
    rows = margin_vs_alpha(model, image, label, args.alpha_grid, args.attack, args.iters, args.tol)
    if args.out:
        write_margin_csv(rows, args.out)
    else:
        print("alpha,epsilon_star")
        for a, e in rows:
            print(f"{a:.6g},{e:.6g}")
    return 0


def cmd_report(args):
    report = report_from_csv(args.input)
    emit_report(report, args.out)
    print(f"regenerated report for {len(report.rows)} rows in {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="presharp", description="Laplacian pre-sharpening against "
                                "transferable l-infinity attacks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sharpen", help="sharpen one PGM/PPM image")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--alpha", type=_number, default=0.15)
    s.add_argument("--kernel-file")
    s.add_argument("--budget", help="perceptual budget, e.g. linf:0.1")
    s.add_argument("--tau", type=float, default=1.0, help="time budget in seconds")
    s.set_defaults(func=cmd_sharpen)

    s = sub.add_parser("train", help="train a classifier and write a checkpoint")
    s.add_argument("--arch", choices=["cnn-a", "mlp-b", "linear"], default="cnn-a")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--data", required=True, help="IDX images file, or 'synthetic'")
    s.add_argument("--labels", help="IDX labels file")
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--per-class", type=int, default=300)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("attack", help="attack one image")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--label", type=int)
    s.add_argument("--attack", choices=atk.ATTACKS, default="ifgsm")
    s.add_argument("--eps", type=_number, default=10 / 255)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--step", type=_number)
    s.add_argument("--mu", type=float, default=1.0)
    s.add_argument("--target-label", type=int)
    s.add_argument("--ensemble", nargs="*", default=[], help="extra checkpoints for ens-ifgsm")
    s.add_argument("--out")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("eval", help="run a sweep from a spec file")
    s.add_argument("--spec")
    s.add_argument("--out")
    s.add_argument("--no-standard", action="store_true", help="skip the standard-accuracy table")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("boundary", help="epsilon_star versus alpha for one image")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--label", type=int)
    s.add_argument("--alpha-grid", type=_float_list, default=[0, 0.05, 0.1, 0.15, 0.2, 0.25])
    s.add_argument("--attack", choices=["fgsm", "ifgsm", "mifgsm"], default="fgsm")
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_boundary)

    s = sub.add_parser("report", help="regenerate summary and plot data from results.csv")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, DataError):
            print(f"data error: {exc}", file=sys.stderr)
            return 3
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
