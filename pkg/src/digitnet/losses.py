"""Losses: categorical cross-entropy, mean squared error, binary cross-entropy."""

import numpy as np

from .errors import ShapeError
from .layers import softmax
from .tensor import DTYPE

EPS = 1e-12


def _check(a, b, name):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def categorical_crossentropy(probs, target):
    """-sum(target * ln(probs)), averaged over rows when given a batch."""
    probs, target = _check(probs, target, "categorical_crossentropy")
    per_sample = -np.sum(target * np.log(np.clip(probs, EPS, 1.0 - EPS)), axis=-1)
    return float(np.mean(per_sample))


def softmax_ce_grad(logits, target):
    """Gradient of the batch-mean softmax cross-entropy w.r.t. the logits."""
    logits, target = _check(logits, target, "softmax_ce_grad")
    g = softmax(logits) - target
    if g.ndim > 1:
        g /= g.shape[0]
    return g


def mse(a, b):
    a, b = _check(a, b, "mse")
    return float(np.mean((a - b) ** 2))


def mse_grad(a, b):
    """d mse(a, b) / d a."""
    a, b = _check(a, b, "mse")
    return 2.0 * (a - b) / a.size


def binary_crossentropy(recon, target):
    """Per-sample BCE summed over the trailing axis; returns an array for batches."""
    recon, target = _check(recon, target, "binary_crossentropy")
    r = np.clip(recon, EPS, 1.0 - EPS)
    return -np.sum(target * np.log(r) + (1.0 - target) * np.log(1.0 - r), axis=-1)
