"""Dense MLP forward/backward in float64 and SGD with momentum.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. A model is
a flat parameter vector plus an :class:`MlpSpec` describing the layer widths;
layers are stored back to back as ``W`` (in x out, row-major) then ``b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh")
HEAD_KINDS = ("classifier", "embedding")


class NumericError(ValueError):
    """Raised when an operation would produce NaN/Inf."""


class DimensionError(ValueError):
    """Raised on shape or length mismatches."""


class DegenerateEmbeddingError(NumericError):
    """Raised when a row cannot be l2-normalized."""


def check_finite(x, what="result"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def as_matrix(x, what="matrix"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"{what} must be 2-D, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activation: str = "relu"
    head: str = "classifier"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("MlpSpec needs at least input and output widths")
        if min(self.widths) < 1:
            raise ValueError(f"all widths must be >= 1, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.head not in HEAD_KINDS:
            raise ValueError(f"head must be one of {HEAD_KINDS}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    @property
    def feature_dim(self) -> int:
        """Width of the encoder output (input to the head layer)."""
        return self.widths[-2]

    def layer_slices(self):
        """(weight slice, bias slice, in width, out width) for every layer."""
        out, off = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            w = slice(off, off + a * b)
            off += a * b
            bias = slice(off, off + b)
            off += b
            out.append((w, bias, a, b))
        return out


@dataclass
class ModelParams:
    spec: MlpSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size != self.spec.n_params:
            raise DimensionError(
                f"expected {self.spec.n_params} parameters, got {self.values.size}"
            )

    def unflatten(self):
        """List of (W, b) views into ``values``."""
        return [
            (self.values[ws].reshape(a, b), self.values[bs])
            for ws, bs, a, b in self.spec.layer_slices()
        ]

    @classmethod
    def flatten(cls, spec: MlpSpec, layers) -> "ModelParams":
        parts = []
        for (W, b), (_, _, a, o) in zip(layers, spec.layer_slices()):
            W = np.asarray(W, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if W.shape != (a, o) or b.shape != (o,):
                raise DimensionError(f"layer shapes {W.shape}, {b.shape} != {(a, o)}, {(o,)}")
            parts += [W.ravel(), b]
        return cls(spec, np.concatenate(parts))

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, self.values.copy())


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ModelParams:
    """He-uniform weights for relu, Glorot-uniform for tanh; zero biases."""
    layers = []
    for a, b in zip(spec.widths[:-1], spec.widths[1:]):
        if spec.activation == "relu":
            bound = np.sqrt(6.0 / a)
        else:
            bound = np.sqrt(6.0 / (a + b))
        layers.append((rng.uniform(-bound, bound, size=(a, b)), np.zeros(b)))
    return ModelParams.flatten(spec, layers)


@dataclass
class ForwardTrace:
    params: ModelParams
    # activations[0] is the batch; activations[l] is the input of layer l
    activations: list
    preacts: list
    output: np.ndarray

    @property
    def features(self) -> np.ndarray:
        """Encoder output, i.e. the input of the head layer."""
        return self.activations[-1]


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    # relu'(0) := 0
    return (z > 0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def forward(params: ModelParams, batch) -> ForwardTrace:
    batch = as_matrix(batch, "batch")
    spec = params.spec
    if batch.shape[1] != spec.widths[0]:
        raise DimensionError(f"batch has {batch.shape[1]} columns, model expects {spec.widths[0]}")
    layers = params.unflatten()
    acts, pre = [batch], []
    h = batch
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        pre.append(z)
        if i < len(layers) - 1:
            h = _act(z, spec.activation)
            acts.append(h)
        else:
            h = z
    check_finite(h, "forward output")
    return ForwardTrace(params, acts, pre, h)


def backward(trace: ForwardTrace, output_grad, feature_grad=None) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat parameters.

    ``output_grad`` is dL/d(output). ``feature_grad``, if given, is an extra
    dL/d(features) term entering at the encoder output.
    """
    output_grad = as_matrix(output_grad, "output_grad")
    if output_grad.shape != trace.output.shape:
        raise DimensionError(f"output_grad shape {output_grad.shape} != {trace.output.shape}")
    spec = trace.params.spec
    layers = trace.params.unflatten()
    slices = spec.layer_slices()
    grad = np.zeros(spec.n_params)
    delta = output_grad
    for i in range(spec.n_layers - 1, -1, -1):
        W, _ = layers[i]
        ws, bs, _, _ = slices[i]
        grad[ws] = (trace.activations[i].T @ delta).ravel()
        grad[bs] = delta.sum(axis=0)
        if i == 0:
            break
        dh = delta @ W.T
        if i == spec.n_layers - 1 and feature_grad is not None:
            fg = as_matrix(feature_grad, "feature_grad")
            if fg.shape != dh.shape:
                raise DimensionError(f"feature_grad shape {fg.shape} != {dh.shape}")
            dh = dh + fg
        delta = dh * _act_grad(trace.preacts[i - 1], trace.activations[i], spec.activation)
    # single-layer nets: features are the raw batch, so feature_grad has no parameters to reach
    return grad


@dataclass
class SgdState:
    velocity: np.ndarray
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")

    @classmethod
    def zeros(cls, n: int, **kw) -> "SgdState":
        return cls(np.zeros(n), **kw)


def sgd_step(params: ModelParams, grad, state: SgdState):
    """One heavy-ball step with L2 weight decay folded into the gradient.

    v <- momentum * v + grad + weight_decay * w ;  w <- w - lr * v
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape or state.velocity.shape != params.values.shape:
        raise DimensionError("gradient/velocity length does not match parameters")
    v = state.momentum * state.velocity + grad + state.weight_decay * params.values
    w = params.values - state.lr * v
    check_finite(w, "sgd_step parameters")
    return (
        ModelParams(params.spec, w),
        SgdState(v, state.lr, state.momentum, state.weight_decay),
    )


def softmax_rows(logits) -> np.ndarray:
    logits = check_finite(as_matrix(logits, "logits"), "logits")
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(logits) -> np.ndarray:
    logits = check_finite(as_matrix(logits, "logits"), "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def l2_normalize_rows(z, eps=1e-12):
    """Return (normalized rows, row norms)."""
    z = check_finite(as_matrix(z, "embeddings"), "embeddings")
    norms = np.sqrt((z * z).sum(axis=1))
    bad = np.flatnonzero(norms <= eps)
    if bad.size:
        raise DegenerateEmbeddingError(f"rows {bad.tolist()} have near-zero norm")
    return z / norms[:, None], norms


def normalize_backward(z_hat, norms, grad_hat):
    """Pull dL/d(z_hat) back through z_hat = z / ||z||."""
    radial = (z_hat * grad_hat).sum(axis=1, keepdims=True)
    return (grad_hat - z_hat * radial) / norms[:, None]


def cosine_similarity(u, v, eps=1e-12) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"length mismatch {u.size} vs {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= eps or nv <= eps:
        raise NumericError("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
