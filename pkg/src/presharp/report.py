"""Write and re-read sweep results: results.csv, summary.md and plotdata/*.tsv."""

from __future__ import annotations

import csv
import os
from collections import defaultdict

from .errors import DataError
from .harness import (ROW_FIELDS, EvalReport, ReportRow, compute_gamma_hat, load_datasets,
                      obtain_models, run_experiment, standard_accuracy_sweep)

_FLOAT_FIELDS = {"alpha", "epsilon_a", "clean_accuracy", "adversarial_accuracy", "asr",
                 "mean_linf", "mean_runtime"}
_INT_FIELDS = {"jpeg_q", "n_samples"}


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _eps_label(eps):
    k = eps * 255
    return f"{round(k)}/255" if abs(k - round(k)) < 1e-6 else f"{eps:.6g}"


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ROW_FIELDS)
        for r in rows:
            writer.writerow([_fmt(getattr(r, k)) for k in ROW_FIELDS])


def load_results_csv(path) -> list:
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != ROW_FIELDS:
                raise DataError(f"{path}: unexpected header {reader.fieldnames}")
            rows = []
            for rec in reader:
                kwargs = {}
                for k, v in rec.items():
                    kwargs[k] = float(v) if k in _FLOAT_FIELDS else int(v) if k in _INT_FIELDS else v
                rows.append(ReportRow(**kwargs))
            return rows
    except OSError as exc:
        raise DataError(f"cannot read results {path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed row: {exc}") from exc


def _pivot(rows, attack, q):
    """Markdown table: rows alpha, columns (model, setting, eps), adversarial accuracy."""
    sel = [r for r in rows if r.attack_name == attack and r.jpeg_q == q]
    cols = sorted({(r.setting, r.model_name, r.epsilon_a) for r in sel},
                  key=lambda c: (c[0] != "whitebox", c[1], c[2]))
    alphas = sorted({r.alpha for r in sel})
    cell = {(r.alpha, r.setting, r.model_name, r.epsilon_a): r.adversarial_accuracy for r in sel}
    head = "| alpha | " + " | ".join(f"{m} ({s[0]}) {_eps_label(e)}" for s, m, e in cols) + " |"
    out = [head, "|" + "---|" * (len(cols) + 1)]
    for a in alphas:
        vals = [cell.get((a, s, m, e)) for s, m, e in cols]
        out.append(f"| {a:.2f} | " + " | ".join("" if v is None else f"{100 * v:.1f}" for v in vals)
                   + " |")
    return out


def _gamma_by_alpha(rows):
    baseline = {r.cell(): r.adversarial_accuracy for r in rows if r.alpha == 0}
    gains = defaultdict(list)
    for r in rows:
        if r.alpha > 0 and r.cell() in baseline:
            gains[r.alpha].append(r.adversarial_accuracy - baseline[r.cell()])
    return {a: sum(g) / len(g) for a, g in sorted(gains.items())}


def summary_markdown(report: EvalReport) -> str:
    rows = report.rows
    lines = ["# Sweep summary", ""]
    if rows:
        lines.append(f"Samples per cell: {rows[0].n_samples} (sample hash `{rows[0].sample_hash}`)")
        lines.append("")
    lines.append(f"gamma_hat (mean adversarial-accuracy gain over alpha=0): {report.gamma_hat:.6g}")
    lines.append("")
    by_alpha = _gamma_by_alpha(rows)
    if by_alpha:
        lines += ["| alpha | gamma_hat |", "|---|---|"]
        lines += [f"| {a:.2f} | {g:+.4f} |" for a, g in by_alpha.items()]
        lines.append("")
    for q in sorted({r.jpeg_q for r in rows}):
        for attack in sorted({r.attack_name for r in rows}):
            title = f"## {attack}" + (f", JPEG Q={q}" if q else "")
            lines += [title, "", "Adversarial accuracy (%), w = white-box, b = black-box.", ""]
            lines += _pivot(rows, attack, q)
            lines.append("")
    if rows:
        worst = max(r.mean_linf - r.epsilon_a for r in rows)
        lines.append(f"Budget audit: max(mean_linf - epsilon_a) = {worst:.3g}")
    if report.time_violations is not None:
        lines.append(f"Time audit: {report.time_violations} sharpening calls exceeded tau")
    if report.budget_violations is not None:
        parts = ", ".join(f"alpha={a:.2f}: {c}" for a, c in sorted(report.budget_violations.items()))
        lines.append(f"Perceptual budget violations: {parts}")
    if report.standard_accuracy:
        lines += ["", "## Standard accuracy on sharpened images (%)", ""]
        models = list(dict.fromkeys(m for _, m, _ in report.standard_accuracy))
        table = {(a, m): acc for a, m, acc in report.standard_accuracy}
        lines += ["| alpha | " + " | ".join(models) + " | AVG |", "|" + "---|" * (len(models) + 2)]
        for a in sorted({a for a, _, _ in report.standard_accuracy}):
            accs = [table[(a, m)] for m in models]
            lines.append(f"| {a:.2f} | " + " | ".join(f"{100 * v:.1f}" for v in accs)
                         + f" | {100 * sum(accs) / len(accs):.1f} |")
    return "\n".join(lines).rstrip() + "\n"


def write_plotdata(rows, directory) -> list:
    """One TSV per (setting, attack, jpeg_q): alpha vs mean accuracy per epsilon."""
    os.makedirs(directory, exist_ok=True)
    groups = defaultdict(list)
    for r in rows:
        groups[(r.setting, r.attack_name, r.jpeg_q)].append(r)
    written = []
    for (setting, attack, q), sel in sorted(groups.items()):
        eps = sorted({r.epsilon_a for r in sel})
        alphas = sorted({r.alpha for r in sel})
        acc = defaultdict(list)
        for r in sel:
            acc[(r.alpha, r.epsilon_a)].append(r.adversarial_accuracy)
        name = f"{setting}_{attack}" + (f"_q{q}" if q else "") + ".tsv"
        path = os.path.join(directory, name)
        with open(path, "w") as f:
            f.write("alpha\t" + "\t".join(f"eps={_eps_label(e)}" for e in eps) + "\n")
            for a in alphas:
                vals = [acc.get((a, e)) for e in eps]
                f.write(f"{a:.6g}\t" + "\t".join(
                    "" if v is None else f"{sum(v) / len(v):.6g}" for v in vals) + "\n")
        written.append(path)
    return written


def emit_report(report: EvalReport, directory) -> None:
    try:
        os.makedirs(directory, exist_ok=True)
        write_results_csv(report.rows, os.path.join(directory, "results.csv"))
        with open(os.path.join(directory, "summary.md"), "w") as f:
            f.write(summary_markdown(report))
        write_plotdata(report.rows, os.path.join(directory, "plotdata"))
    except OSError as exc:
        raise OSError(f"cannot write report to {directory}: {exc}") from exc


def report_from_csv(path) -> EvalReport:
    rows = load_results_csv(path)
    return EvalReport(rows, compute_gamma_hat(rows))


def run_and_emit(spec, with_standard: bool = True) -> EvalReport:
    """Build data and models once, run the sweep (plus the standard-accuracy table) and emit."""
    data = load_datasets(spec)
    models = obtain_models(spec, data[0])
    report = run_experiment(spec, models=models, data=data)
    if with_standard:
        report.standard_accuracy = standard_accuracy_sweep(spec, models=models, data=data)
    emit_report(report, spec.output_dir)
    return report
