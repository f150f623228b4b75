import os
import subprocess
import sys

import numpy as np
import pytest

from presharp.cli import main
from presharp.image import Image, load_pgm_ppm, save_pgm_ppm
from presharp.report import load_results_csv


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    img = Image(np.random.default_rng(0).random((28, 28)))
    save_pgm_ppm(img, d / "in.pgm")
    assert main(["train", "--arch", "mlp-b", "--data", "synthetic", "--classes", "3", "--per-class", "20",
                 "--epochs", "1", "--out", str(d / "m.tnck")]) == 0
    return d


def test_sharpen(workdir, capsys):
    out = workdir / "sharp.pgm"
    assert main(["sharpen", str(workdir / "in.pgm"), str(out), "--alpha", "3/20", "--budget", "linf:0.5"]) == 0
    text = capsys.readouterr().out
    assert "linf=" in text and "budget linf:0.5" in text
    assert load_pgm_ppm(out).shape == (28, 28, 1)


def test_sharpen_kernel_file(workdir):
    (workdir / "k.txt").write_text("3\n0 -1 0\n-1 4 -1\n0 -1 0\n")
    assert main(["sharpen", str(workdir / "in.pgm"), str(workdir / "k.pgm"),
                 "--kernel-file", str(workdir / "k.txt")]) == 0


@pytest.mark.parametrize("attack", ["fgsm", "ifgsm", "mifgsm"])
def test_attack(workdir, capsys, attack):
    out = workdir / f"{attack}.pgm"
    assert main(["attack", "--model", str(workdir / "m.tnck"), "--image", str(workdir / "in.pgm"),
                 "--attack", attack, "--eps", "10/255", "--iters", "3", "--out", str(out)]) == 0
    assert "queries=" in capsys.readouterr().out
    diff = np.abs(load_pgm_ppm(out).pixels - load_pgm_ppm(workdir / "in.pgm").pixels)
    assert diff.max() <= 10 / 255 + 1 / 255


def test_targeted_attack(workdir, capsys):
    assert main(["attack", "--model", str(workdir / "m.tnck"), "--image", str(workdir / "in.pgm"),
                 "--target-label", "2", "--eps", "0.3"]) == 0
    assert main(["attack", "--model", str(workdir / "m.tnck"), "--image", str(workdir / "in.pgm"),
                 "--target-label", "9"]) == 2


def test_boundary(workdir, capsys):
    out = workdir / "b.csv"
    assert main(["boundary", "--model", str(workdir / "m.tnck"), "--image", str(workdir / "in.pgm"),
                 "--alpha-grid", "0,0.1", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "alpha,epsilon_star"


def test_eval_and_report(workdir, capsys):
    spec = workdir / "sweep.cfg"
    spec.write_text(f"""\
dataset.kind = synthetic
dataset.classes = 3
dataset.per_class = 20
dataset.size = 16x16
dataset.eval_count = 0
surrogate = mlp-b:1
targets = linear:2
models.dir = {workdir / 'models'}
train.epochs = 1
attack.names = fgsm
attack.epsilons = 10/255
sharpen.alpha_grid = 0, 0.25
""")
    out = workdir / "sweep"
    assert main(["eval", "--spec", str(spec), "--out", str(out)]) == 0
    rows = load_results_csv(out / "results.csv")
    assert len(rows) == 4
    assert main(["report", "--in", str(out / "results.csv"), "--out", str(workdir / "again")]) == 0
    assert (workdir / "again" / "summary.md").exists()


def test_config_error_exit_code(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("attack.names = pgd\n")
    assert main(["eval", "--spec", str(tmp_path / "bad.cfg")]) == 2
    assert "configuration error" in capsys.readouterr().err
    assert main(["sharpen", "a.pgm", "b.pgm", "--budget", "l7:1"]) in (2, 3)


def test_data_error_exit_code(tmp_path, capsys):
    (tmp_path / "bad.pgm").write_bytes(b"P9\n1 1\n255\n\x00")
    assert main(["sharpen", str(tmp_path / "bad.pgm"), str(tmp_path / "o.pgm")]) == 3
    assert main(["sharpen", str(tmp_path / "missing.pgm"), str(tmp_path / "o.pgm")]) == 3
    assert main(["report", "--in", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 3
    assert "data error" in capsys.readouterr().err


def test_console_script_module(tmp_path):
    env = dict(os.environ)
    res = subprocess.run([sys.executable, "-m", "presharp.cli", "--help"], capture_output=True, text=True,
                         env=env)
    assert res.returncode == 0 and "sharpen" in res.stdout
