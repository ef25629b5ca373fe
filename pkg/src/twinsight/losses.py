"""Objective terms for twin-model semi-supervised training.

Every loss returns a :class:`LossValue` carrying the scalar and the gradient
with respect to each matrix input, so the composite objectives can chain them
into :func:`twinsight.numerics.backward` without an autodiff engine.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import AugmentPolicy, augment
from .numerics import (
    DimensionError,
    ModelParams,
    as_matrix,
    backward,
    forward,
    l2_normalize_rows,
    log_softmax_rows,
    normalize_backward,
    softmax_rows,
)


@dataclass
class LossValue:
    loss: float
    grads: tuple
    mask: np.ndarray | None = None

    @property
    def grad(self) -> np.ndarray:
        return self.grads[0]


@dataclass(frozen=True)
class TwinHyper:
    lambda_u: float = 1.0
    lambda_d: float = 1.0
    temperature: float = 0.5
    threshold: float = 0.95
    # "mean" averages the squared Gram difference over n^2 entries, "sum" does not
    alignment_reduction: str = "mean"
    # use the clean forward for both the pseudo-label and the trained prediction
    pseudo_same_input: bool = False

    def __post_init__(self):
        if self.lambda_u < 0 or self.lambda_d < 0:
            raise ValueError("lambda_u and lambda_d must be non-negative")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.alignment_reduction not in ("mean", "sum"):
            raise ValueError("alignment_reduction must be 'mean' or 'sum'")


def cross_entropy(logits, labels) -> LossValue:
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"{labels.size} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    logp = log_softmax_rows(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return LossValue(float(loss), (grad / n,))


def pseudo_label_loss(clean_probs, train_logits, r: float) -> LossValue:
    """Confidence-weighted cross-entropy against argmax pseudo-labels.

    Rows whose top clean probability does not exceed ``r`` contribute zero but
    still count in the mean. ``clean_probs`` is treated as a constant.
    """
    clean_probs = as_matrix(clean_probs, "clean_probs")
    train_logits = as_matrix(train_logits, "train_logits")
    if clean_probs.shape != train_logits.shape:
        raise DimensionError(f"shape mismatch {clean_probs.shape} vs {train_logits.shape}")
    n = clean_probs.shape[0]
    conf = clean_probs.max(axis=1)
    target = clean_probs.argmax(axis=1)
    mask = conf > r
    weight = np.where(mask, conf, 0.0)
    logp = log_softmax_rows(train_logits)
    rows = np.arange(n)
    loss = float(-(weight * logp[rows, target]).sum() / n)
    grad = np.exp(logp)
    grad[rows, target] -= 1.0
    grad *= weight[:, None] / n
    grad[~mask] = 0.0
    return LossValue(loss, (grad,), mask)


def nt_xent(embeddings, temperature: float) -> LossValue:
    """Instance-discrimination loss; rows 2k and 2k+1 are two views of sample k."""
    z = as_matrix(embeddings, "embeddings")
    m = z.shape[0]
    if m < 2 or m % 2:
        raise DimensionError(f"nt_xent needs an even row count >= 2, got {m}")
    z_hat, norms = l2_normalize_rows(z)
    sim = z_hat @ z_hat.T / temperature
    np.fill_diagonal(sim, -np.inf)
    partner = np.arange(m) ^ 1
    rows = np.arange(m)
    row_max = sim.max(axis=1, keepdims=True)
    e = np.exp(sim - row_max)
    denom = e.sum(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(denom[:, 0])
    loss = float((lse - sim[rows, partner]).mean())

    g = e / denom
    g[rows, partner] -= 1.0
    g /= m
    grad_hat = (g + g.T) @ z_hat / temperature
    return LossValue(loss, (normalize_backward(z_hat, norms, grad_hat),))


def neighborhood_matrix(z) -> np.ndarray:
    z_hat, _ = l2_normalize_rows(z)
    return np.clip(z_hat @ z_hat.T, -1.0, 1.0)


def alignment_loss(z_s, z_u, reduction: str = "mean") -> LossValue:
    """Squared difference between the cosine Gram matrices of two embeddings."""
    z_s = as_matrix(z_s, "z_s")
    z_u = as_matrix(z_u, "z_u")
    n = z_s.shape[0]
    if z_u.shape[0] != n:
        raise DimensionError(f"row count mismatch {n} vs {z_u.shape[0]}")
    hs, ns = l2_normalize_rows(z_s)
    hu, nu = l2_normalize_rows(z_u)
    diff = np.clip(hs @ hs.T, -1.0, 1.0) - np.clip(hu @ hu.T, -1.0, 1.0)
    scale = 1.0 / (n * n) if reduction == "mean" else 1.0
    loss = float(scale * (diff * diff).sum())
    # d/dM_s = 2*scale*D and M = H H^T with D symmetric
    dhs = 4.0 * scale * diff @ hs
    dhu = -4.0 * scale * diff @ hu
    return LossValue(loss, (normalize_backward(hs, ns, dhs), normalize_backward(hu, nu, dhu)))


@dataclass
class ObjectiveResult:
    total: float
    grad_s: np.ndarray
    grad_u: np.ndarray
    components: dict = field(default_factory=dict)
    terms: dict | None = None


def _two_views(x, policy, rng):
    v1 = augment(x, policy, rng)
    v2 = augment(x, policy, rng)
    views = np.empty((2 * x.shape[0], x.shape[1]))
    views[0::2] = v1
    views[1::2] = v2
    return views


def _twin_terms(x, clean_s, w_u, hyper, policy, rng):
    """Contrastive term on w_u and alignment term on both models.

    Returns (nt-xent loss, alignment loss, contrastive grad for w_u,
    alignment grad for w_u, alignment feature grad for w_s); grads are
    already scaled by their lambda.
    """
    zeros = np.zeros(w_u.spec.n_params)
    g_ntx, g_align, feat_grad_s = zeros, zeros, None
    ntx = align = 0.0
    if hyper.lambda_u > 0:
        tr = forward(w_u, _two_views(x, policy, rng))
        ok = np.linalg.norm(tr.output, axis=1) > 1e-12
        pair_ok = np.repeat(ok[0::2] & ok[1::2], 2)
        if pair_ok.any():
            lv = nt_xent(tr.output[pair_ok], hyper.temperature)
            ntx = lv.loss
            out_grad = np.zeros_like(tr.output)
            out_grad[pair_ok] = hyper.lambda_u * lv.grad
            g_ntx = backward(tr, out_grad)
    if hyper.lambda_d > 0:
        tr = forward(w_u, x)
        zs, zu = clean_s.features, tr.features
        # rows with an all-zero relu code have no direction; leave them out of the Gram
        keep = (np.linalg.norm(zs, axis=1) > 1e-12) & (np.linalg.norm(zu, axis=1) > 1e-12)
        fs, fu = np.zeros_like(zs), np.zeros_like(zu)
        if keep.any():
            lv = alignment_loss(zs[keep], zu[keep], hyper.alignment_reduction)
            align = lv.loss
            fs[keep], fu[keep] = lv.grads
        feat_grad_s = hyper.lambda_d * fs
        g_align = backward(tr, np.zeros_like(tr.output), hyper.lambda_d * fu)
    return ntx, align, g_ntx, g_align, feat_grad_s


def _assemble(sup_loss, ntx, align, hyper, sup_grad_s, clean_s, feat_grad_s,
              g_ntx, g_align, components, keep_terms):
    zeros_s = np.zeros_like(sup_grad_s)
    zeros_u = np.zeros_like(g_ntx)
    if feat_grad_s is None:
        align_grad_s = zeros_s
    else:
        align_grad_s = backward(clean_s, np.zeros_like(clean_s.output), feat_grad_s)
    total = sup_loss + hyper.lambda_u * ntx + hyper.lambda_d * align
    out = ObjectiveResult(total, sup_grad_s + align_grad_s, g_ntx + g_align, components)
    if keep_terms:
        out.terms = {
            "sup": (sup_grad_s, zeros_u),
            "unsup": (zeros_s, g_ntx),
            "align": (align_grad_s, g_align),
        }
    return out


def labeled_objective(x, labels, w_s: ModelParams, w_u: ModelParams, hyper: TwinHyper,
                      rng, policy: AugmentPolicy | None = None,
                      keep_terms: bool = False) -> ObjectiveResult:
    """CE on the supervised model + weighted contrastive and alignment terms.

    With ``keep_terms`` the result also holds each term's (grad_s, grad_u).
    """
    x = as_matrix(x, "batch")
    policy = policy or AugmentPolicy()
    clean_s = forward(w_s, x)
    ce = cross_entropy(clean_s.output, labels)
    ntx, align, g_ntx, g_align, feat_grad_s = _twin_terms(x, clean_s, w_u, hyper, policy, rng)
    sup_grad_s = backward(clean_s, ce.grad)
    return _assemble(ce.loss, ntx, align, hyper, sup_grad_s, clean_s, feat_grad_s,
                     g_ntx, g_align, {"sup": ce.loss, "unsup": ntx, "align": align},
                     keep_terms)


def unlabeled_objective(x, w_s: ModelParams, w_u: ModelParams, hyper: TwinHyper, rng,
                        policy: AugmentPolicy | None = None,
                        teacher: ModelParams | None = None,
                        keep_terms: bool = False) -> ObjectiveResult:
    """Pseudo-label term on the supervised model + contrastive and alignment terms.

    Pseudo-labels come from a clean forward pass of ``teacher`` (default:
    ``w_s`` itself) and carry no gradient; the trained prediction is taken on
    an augmented view unless ``hyper.pseudo_same_input`` is set.
    """
    x = as_matrix(x, "batch")
    policy = policy or AugmentPolicy()
    clean_s = forward(w_s, x)
    teacher_out = clean_s.output if teacher is None else forward(teacher, x).output
    probs = softmax_rows(teacher_out)
    train = clean_s if hyper.pseudo_same_input else forward(w_s, augment(x, policy, rng))
    pl = pseudo_label_loss(probs, train.output, hyper.threshold)
    ntx, align, g_ntx, g_align, feat_grad_s = _twin_terms(x, clean_s, w_u, hyper, policy, rng)
    sup_grad_s = backward(train, pl.grad)
    components = {"sup": pl.loss, "unsup": ntx, "align": align,
                  "mask_rate": float(pl.mask.mean())}
    return _assemble(pl.loss, ntx, align, hyper, sup_grad_s, clean_s, feat_grad_s,
                     g_ntx, g_align, components, keep_terms)
