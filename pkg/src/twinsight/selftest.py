"""Finite-difference gradient checks and loss oracles, runnable without pytest."""
from __future__ import annotations

import math

import numpy as np

from .data import AugmentPolicy
from .losses import (
    TwinHyper,
    alignment_loss,
    cross_entropy,
    labeled_objective,
    nt_xent,
    pseudo_label_loss,
    unlabeled_objective,
)
from .numerics import MlpSpec, ModelParams, init_params

H = 1e-6
TOL = 1e-5


def _fd(f, x):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    xf, gf = x.reshape(-1), g.reshape(-1)
    for i in range(xf.size):
        old = xf[i]
        xf[i] = old + H
        up = f(x)
        xf[i] = old - H
        down = f(x)
        xf[i] = old
        gf[i] = (up - down) / (2 * H)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)


def _model(rng, widths, head="classifier"):
    p = init_params(MlpSpec(widths, "tanh", head), rng)
    return ModelParams(p.spec, p.values + 0.1 * rng.normal(size=p.values.size))


def _naive_nt_xent(z, tau):
    u = z / np.linalg.norm(z, axis=1, keepdims=True)
    m, total = len(z), 0.0
    for i in range(m):
        j = i ^ 1
        den = sum(math.exp(u[i] @ u[k] / tau) for k in range(m) if k != i)
        total -= math.log(math.exp(u[i] @ u[j] / tau) / den)
    return total / m


def gradient_checks(n_instances=50, seed=0):
    """Worst relative error per loss over random small instances."""
    rng = np.random.default_rng(seed)
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    pol = AugmentPolicy(0.1, 0.1, (0.9, 1.1))
    for k in range(n_instances):
        n, c, d = rng.integers(1, 9), rng.integers(2, 9), rng.integers(2, 9)
        logits, y = rng.normal(size=(n, c)), rng.integers(0, c, n)
        note("cross_entropy", _rel(cross_entropy(logits, y).grad,
                                   _fd(lambda L: cross_entropy(L, y).loss, logits)))

        probs = rng.dirichlet(np.full(c, 0.3), size=n)
        note("pseudo_label_loss", _rel(pseudo_label_loss(probs, logits, 0.5).grad,
                                       _fd(lambda L: pseudo_label_loss(probs, L, 0.5).loss, logits)))

        z = rng.normal(size=(2 * rng.integers(1, 5), d))
        note("nt_xent", _rel(nt_xent(z, 0.5).grad, _fd(lambda Z: nt_xent(Z, 0.5).loss, z)))

        zs, zu = rng.normal(size=(n + 1, d)), rng.normal(size=(n + 1, c))
        gs, gu = alignment_loss(zs, zu).grads
        note("alignment_loss", max(_rel(gs, _fd(lambda Z: alignment_loss(Z, zu).loss, zs)),
                                   _rel(gu, _fd(lambda Z: alignment_loss(zs, Z).loss, zu))))

        hidden = int(rng.integers(2, 8))
        w_s = _model(rng, (d, hidden, c))
        w_u = _model(rng, (d, hidden, int(rng.integers(2, 8))), "embedding")
        x = 2 * rng.normal(size=(int(rng.integers(2, 9)), d))
        yx = rng.integers(0, c, len(x))
        hyper = TwinHyper(0.7, 1.3, 0.5, 0.4)

        def lab(ws, wu):
            return labeled_objective(x, yx, ws, wu, hyper, np.random.default_rng(k), pol)

        def unl(ws, wu, teacher=None):
            return unlabeled_objective(x, ws, wu, hyper, np.random.default_rng(k), pol, teacher=teacher)

        for name, fn in (("labeled_objective", lab), ("unlabeled_objective", unl)):
            res = fn(w_s, w_u)
            if fn is unl:
                # pseudo-targets are stop-gradient: freeze the teacher while perturbing w_s
                f_s = lambda v: unl(ModelParams(w_s.spec, v), w_u, teacher=w_s).total
            else:
                f_s = lambda v: fn(ModelParams(w_s.spec, v), w_u).total
            f_u = lambda v: fn(w_s, ModelParams(w_u.spec, v)).total
            note(name, max(_rel(res.grad_s, _fd(f_s, w_s.values)),
                           _rel(res.grad_u, _fd(f_u, w_u.values))))
    return worst


def nt_xent_oracle_checks():
    """Max deviation from the naive double loop over N = 1..8 plus the closed forms."""
    rng = np.random.default_rng(1)
    dev = 0.0
    for N in range(1, 9):
        z = rng.normal(size=(2 * N, 5))
        dev = max(dev, abs(nt_xent(z, 0.5).loss - _naive_nt_xent(z, 0.5)))
    single = nt_xent(rng.normal(size=(2, 3)), 0.5).loss
    ident = max(abs(nt_xent(np.ones((2 * N, 3)), 0.5).loss - math.log(2 * N - 1)) for N in range(1, 9))
    return dev, single, ident


def run_selftest(stream=None) -> bool:
    import sys

    stream = stream or sys.stdout
    ok = True
    for name, err in gradient_checks().items():
        passed = err <= TOL
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} gradient {name}: max rel err {err:.2e}", file=stream)
    dev, single, ident = nt_xent_oracle_checks()
    for label, passed in (
        (f"nt_xent vs naive loop: max dev {dev:.2e}", dev <= 1e-10),
        (f"nt_xent single pair = {single!r}", single == 0.0),
        (f"nt_xent identical rows vs ln(2N-1): max dev {ident:.2e}", ident <= 1e-10),
    ):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {label}", file=stream)
    return ok
