"""Evaluation, gradient-conflict probe and rounds-to-target."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, augment
from .losses import cross_entropy, pseudo_label_loss
from .numerics import ModelParams, backward, cosine_similarity, forward, softmax_rows

UNDEFINED = "undefined"
NEVER = "None"


@dataclass
class RoundReport:
    round: int
    method: str
    test_acc: float
    sup_loss: float | None = None
    unsup_loss: float | None = None
    align_loss: float | None = None
    pseudo_mask_rate: float | None = None
    # float cosine, UNDEFINED when a gradient vanished, None when not probed
    probe_cos: float | str | None = None
    sampled_clients: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.test_acc <= 1.0:
            raise ValueError(f"accuracy {self.test_acc} outside [0, 1]")
        if isinstance(self.probe_cos, float) and not -1.0 <= self.probe_cos <= 1.0:
            raise ValueError(f"probe cosine {self.probe_cos} outside [-1, 1]")


def predict(w_s: ModelParams, x) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return forward(w_s, x).output.argmax(axis=1)


def evaluate(w_s: ModelParams, test: Dataset) -> float:
    if len(test) == 0:
        raise ValueError("empty test set")
    if not test.labeled_mask.all():
        raise ValueError("test set must be fully labeled")
    return float((predict(w_s, test.features) == test.labels).mean())


def labeled_gradient(w: ModelParams, x, y) -> np.ndarray:
    tr = forward(w, x)
    return backward(tr, cross_entropy(tr.output, y).grad)


def unlabeled_gradient(w: ModelParams, x, threshold, policy, rng) -> np.ndarray:
    """Gradient of the single-model pseudo-label consistency loss."""
    probs = softmax_rows(forward(w, x).output)
    tr = forward(w, augment(x, policy, rng))
    return backward(tr, pseudo_label_loss(probs, tr.output, threshold).grad)


def gradient_conflict_probe(w: ModelParams, labeled_batch, unlabeled_batch, cfg, rng=None,
                            unlabeled_grad=None):
    """Cosine between labeled-loss and unlabeled-loss gradients at the same weights.

    ``labeled_batch`` is ``(x, y)``; ``unlabeled_batch`` is ``x``. Returns
    :data:`UNDEFINED` when either gradient is numerically zero.
    ``unlabeled_grad(w, x, rng)`` overrides the unlabeled gradient.
    """
    x_l, y_l = labeled_batch
    if len(x_l) == 0 or len(unlabeled_batch) == 0:
        raise ValueError("probe batches must be non-empty")
    rng = np.random.default_rng(0) if rng is None else rng
    g_l = labeled_gradient(w, x_l, y_l)
    if unlabeled_grad is None:
        g_u = unlabeled_gradient(w, unlabeled_batch, cfg.hyper.threshold, cfg.augment, rng)
    else:
        g_u = unlabeled_grad(w, unlabeled_batch, rng)
    if np.linalg.norm(g_l) < 1e-12 or np.linalg.norm(g_u) < 1e-12:
        return UNDEFINED
    return cosine_similarity(g_l, g_u)


def rounds_to_target(history, target: float):
    """First 1-based round reaching ``target``, or ``"None"``."""
    if len(history) == 0:
        raise ValueError("empty accuracy history")
    if not 0.0 < target <= 1.0:
        raise ValueError("target must lie in (0, 1]")
    for i, acc in enumerate(history, start=1):
        if acc >= target:
            return i
    return NEVER
