"""Laplacian sharpening of benign inputs before attack, with desk-scale attack sweeps."""

from .attacks import AttackConfig, AttackResult, ensemble_attack, fgsm, ifgsm, mifgsm, targeted_attack
from .geometry import BoundaryEstimate, boundary_distance_bisect, linear_margin, margin_vs_alpha
from .image import (Image, LabeledSet, Metric, PerceptualBudget, clamp01, load_idx, load_pgm_ppm,
                    perceptual_distance, save_pgm_ppm)
from .jpeg import JpegConfig, dct8_forward, dct8_inverse, jpeg_roundtrip, quant_table
from .sharpen import (ALPHA_GRID, Kernel, SharpenConfig, check_budget, conv2d, laplacian4,
                      laplacian8, sharpen, timed_robustify)
from .tinynet import (Classifier, TrainConfig, accuracy, build_model, ensemble_logits, forward,
                      loss_and_input_grad, predict, train)

__version__ = "0.1.0"
