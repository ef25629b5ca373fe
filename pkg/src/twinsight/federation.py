"""Round-based federated protocol: sampling, local training strategies, FedAvg."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from .data import AugmentPolicy, ClientShard, Dataset, augment
from .diagnostics import RoundReport, evaluate, gradient_conflict_probe
from .losses import (
    TwinHyper,
    cross_entropy,
    labeled_objective,
    pseudo_label_loss,
    unlabeled_objective,
)
from .numerics import (
    DimensionError,
    MlpSpec,
    ModelParams,
    SgdState,
    backward,
    check_finite,
    forward,
    init_params,
    sgd_step,
    softmax_rows,
)

log = logging.getLogger(__name__)

METHODS = ("twin_sight", "fedavg_lower", "fedavg_pseudo")

# stream tags for per-round seed derivation
_SAMPLING, _CLIENT, _PROBE, _INIT = 0, 1, 2, 3


@dataclass
class GlobalState:
    w_s: ModelParams
    w_u: ModelParams
    round: int = 0

    def __post_init__(self):
        check_finite(self.w_s.values, "w_s")
        check_finite(self.w_u.values, "w_u")
        if self.w_s.spec.widths[:-1] != self.w_u.spec.widths[:-1]:
            raise DimensionError("supervised and unsupervised encoders must share widths")


@dataclass
class ClientUpdate:
    client_id: int
    w_s: ModelParams
    w_u: ModelParams | None
    n_samples: int
    losses: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("a client update needs n_samples >= 1")


@dataclass(frozen=True)
class MethodConfig:
    method: str = "twin_sight"
    local_epochs: int = 1
    batch_size: int = 64
    hyper: TwinHyper = field(default_factory=TwinHyper)
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    sample_rate: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0 < self.sample_rate <= 1:
            raise ValueError("sample_rate must lie in (0, 1]")

    def sgd(self, n):
        return SgdState.zeros(n, lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay)


def init_global_state(dim, num_classes, hidden, proj_dim, seed, activation="relu") -> GlobalState:
    """Fresh supervised (classifier) and unsupervised (embedding) models."""
    rng_s, rng_u = np.random.default_rng([seed, _INIT]).spawn(2)
    spec_s = MlpSpec((dim, *hidden, num_classes), activation, "classifier")
    spec_u = MlpSpec((dim, *hidden, proj_dim), activation, "embedding")
    return GlobalState(init_params(spec_s, rng_s), init_params(spec_u, rng_u), 0)


def derive_rng(seed, round_idx, stream, client_id=0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(round_idx), stream, int(client_id)])


def sample_clients(K: int, S: float, rng: np.random.Generator) -> list[int]:
    """floor(S*K) distinct ids, sorted."""
    if not 0 < S <= 1:
        raise ValueError("sampling rate must lie in (0, 1]")
    m = int(math.floor(S * K + 1e-9))
    if m == 0:
        raise ValueError(f"sampling rate {S} selects no client out of {K}")
    return sorted(rng.choice(K, size=m, replace=False).tolist())


def minibatches(n: int, batch_size: int, rng: np.random.Generator, min_rows: int = 1):
    """Shuffled index batches; a short final batch is merged into its predecessor."""
    if n < min_rows:
        raise ValueError(f"need at least {min_rows} samples for a mini-batch, got {n}")
    perm = rng.permutation(n)
    cuts = list(range(batch_size, n, batch_size))
    if cuts and n - cuts[-1] < batch_size:
        cuts.pop()
    return np.split(perm, cuts)


class _LossMeter:
    def __init__(self):
        self.sums, self.counts = {}, {}

    def add(self, key, value, weight=1):
        self.sums[key] = self.sums.get(key, 0.0) + value * weight
        self.counts[key] = self.counts.get(key, 0) + weight

    def means(self):
        return {k: self.sums[k] / self.counts[k] for k in self.sums if self.counts[k]}


def local_train_twin(shard: ClientShard, globals_: GlobalState, cfg: MethodConfig,
                     rng: np.random.Generator) -> ClientUpdate:
    """Joint local training of the supervised and unsupervised models."""
    ds = shard.dataset
    hyper = cfg.hyper
    shuffle_rng, aug_rng = rng.spawn(2)
    w_s, w_u = globals_.w_s.copy(), globals_.w_u.copy()
    opt_s, opt_u = cfg.sgd(w_s.values.size), cfg.sgd(w_u.values.size)
    twin_active = hyper.lambda_u > 0 or hyper.lambda_d > 0
    meter = _LossMeter()
    for _ in range(cfg.local_epochs):
        for idx in minibatches(len(ds), cfg.batch_size, shuffle_rng):
            x, y = ds.features[idx], ds.labels[idx]
            lab = ds.labeled_mask[idx]
            g_s = np.zeros(w_s.values.size)
            g_u = np.zeros(w_u.values.size)
            step_s = False
            if lab.any():
                res = labeled_objective(x[lab], y[lab], w_s, w_u, hyper, aug_rng, cfg.augment)
                g_s += res.grad_s
                g_u += res.grad_u
                step_s = True
                meter.add("sup", res.components["sup"], int(lab.sum()))
                _add_twin(meter, res, int(lab.sum()), hyper)
            if not lab.all():
                unl = ~lab
                res = unlabeled_objective(x[unl], w_s, w_u, hyper, aug_rng, cfg.augment)
                g_s += res.grad_s
                g_u += res.grad_u
                step_s = step_s or res.components["mask_rate"] > 0 or hyper.lambda_d > 0
                meter.add("sup", res.components["sup"], int(unl.sum()))
                meter.add("mask_rate", res.components["mask_rate"], int(unl.sum()))
                _add_twin(meter, res, int(unl.sum()), hyper)
            # a model with no active term this batch is not stepped (no decay-only drift)
            if step_s:
                w_s, opt_s = sgd_step(w_s, g_s, opt_s)
            if twin_active:
                w_u, opt_u = sgd_step(w_u, g_u, opt_u)
    return ClientUpdate(shard.client_id, w_s, w_u, len(ds), meter.means())


def _add_twin(meter, res, n, hyper):
    if hyper.lambda_u > 0:
        meter.add("unsup", res.components["unsup"], n)
    if hyper.lambda_d > 0:
        meter.add("align", res.components["align"], n)


def local_train_lower(shard: ClientShard, globals_: GlobalState, cfg: MethodConfig,
                      rng: np.random.Generator) -> ClientUpdate:
    """Supervised-only training on the labeled rows; w_u passes through."""
    ds = shard.dataset
    lab_idx = np.flatnonzero(ds.labeled_mask)
    if lab_idx.size == 0:
        raise ValueError(f"client {shard.client_id} has no labeled samples")
    x_all, y_all = ds.features[lab_idx], ds.labels[lab_idx]
    shuffle_rng, _ = rng.spawn(2)
    w_s = globals_.w_s.copy()
    opt = cfg.sgd(w_s.values.size)
    meter = _LossMeter()
    for _ in range(cfg.local_epochs):
        for idx in minibatches(lab_idx.size, cfg.batch_size, shuffle_rng):
            tr = forward(w_s, x_all[idx])
            ce = cross_entropy(tr.output, y_all[idx])
            meter.add("sup", ce.loss, idx.size)
            w_s, opt = sgd_step(w_s, backward(tr, ce.grad), opt)
    return ClientUpdate(shard.client_id, w_s, globals_.w_u, int(lab_idx.size), meter.means())


def local_train_pseudo(shard: ClientShard, globals_: GlobalState, cfg: MethodConfig,
                       rng: np.random.Generator) -> ClientUpdate:
    """Single supervised model: CE on labeled rows, pseudo-labels on unlabeled rows."""
    ds = shard.dataset
    hyper = cfg.hyper
    shuffle_rng, aug_rng = rng.spawn(2)
    w_s = globals_.w_s.copy()
    opt = cfg.sgd(w_s.values.size)
    meter = _LossMeter()
    for _ in range(cfg.local_epochs):
        for idx in minibatches(len(ds), cfg.batch_size, shuffle_rng):
            x, y = ds.features[idx], ds.labels[idx]
            lab = ds.labeled_mask[idx]
            g = np.zeros(w_s.values.size)
            active = False
            if lab.any():
                tr = forward(w_s, x[lab])
                ce = cross_entropy(tr.output, y[lab])
                g += backward(tr, ce.grad)
                active = True
                meter.add("sup", ce.loss, int(lab.sum()))
            if not lab.all():
                xu = x[~lab]
                clean = forward(w_s, xu)
                train = clean if hyper.pseudo_same_input else forward(w_s, augment(xu, cfg.augment, aug_rng))
                pl = pseudo_label_loss(softmax_rows(clean.output), train.output, hyper.threshold)
                g += backward(train, pl.grad)
                active = active or bool(pl.mask.any())
                meter.add("sup", pl.loss, xu.shape[0])
                meter.add("mask_rate", float(pl.mask.mean()), xu.shape[0])
            if active:
                w_s, opt = sgd_step(w_s, g, opt)
    return ClientUpdate(shard.client_id, w_s, globals_.w_u, len(ds), meter.means())


LOCAL_TRAINERS = {
    "twin_sight": local_train_twin,
    "fedavg_lower": local_train_lower,
    "fedavg_pseudo": local_train_pseudo,
}


def aggregation_weights(updates) -> np.ndarray:
    n = np.array([u.n_samples for u in updates], dtype=np.float64)
    return n / n.sum()


def fedavg_aggregate(updates, stream: str = "supervised") -> ModelParams:
    """Sample-count weighted mean of one model stream, summed in list order."""
    if not updates:
        raise ValueError("no client updates to aggregate")
    if stream not in ("supervised", "unsupervised"):
        raise ValueError(f"unknown stream {stream!r}")
    models = [u.w_s if stream == "supervised" else u.w_u for u in updates]
    if any(m is None for m in models):
        raise ValueError(f"some updates carry no {stream} model")
    spec = models[0].spec
    if any(m.values.size != spec.n_params for m in models):
        raise DimensionError("parameter lengths differ across updates")
    beta = aggregation_weights(updates)
    acc = np.zeros(spec.n_params)
    for b, m in zip(beta, models):
        acc += b * m.values
    return ModelParams(spec, acc)


def _eligible_clients(shards, method):
    if method == "fedavg_lower":
        return [s.client_id for s in shards if s.dataset.labeled_mask.any()]
    return [s.client_id for s in shards]


def _probe(globals_, shards_by_id, sampled, cfg, rng):
    lab_client = next((c for c in sampled if shards_by_id[c].dataset.labeled_mask.any()), None)
    unl_client = next((c for c in sampled if not shards_by_id[c].dataset.labeled_mask.all()), None)
    if lab_client is None or unl_client is None:
        return None
    ds_l, ds_u = shards_by_id[lab_client].dataset, shards_by_id[unl_client].dataset
    li = np.flatnonzero(ds_l.labeled_mask)
    ui = np.flatnonzero(~ds_u.labeled_mask)
    li = rng.choice(li, size=min(cfg.batch_size, li.size), replace=False)
    ui = rng.choice(ui, size=min(cfg.batch_size, ui.size), replace=False)
    return gradient_conflict_probe(
        globals_.w_s, (ds_l.features[li], ds_l.labels[li]), ds_u.features[ui], cfg, rng
    )


def _weighted_component(updates, key):
    pairs = [(u.losses[key], u.n_samples) for u in updates if key in u.losses]
    if not pairs:
        return None
    tot = sum(n for _, n in pairs)
    return sum(v * n for v, n in pairs) / tot


def run_round(globals_: GlobalState, shards, test: Dataset, cfg: MethodConfig, seed,
              workers: int = 1, reproducible: bool = True, probe: bool = True):
    """One communication round; returns the new GlobalState and its RoundReport.

    Client RNG streams are derived from (seed, round, client id), so results do
    not depend on scheduling. In reproducible mode updates are reduced in
    sorted client order; otherwise in completion order.
    """
    r = globals_.round + 1
    by_id = {s.client_id: s for s in shards}
    eligible = _eligible_clients(shards, cfg.method)
    if not eligible:
        raise ValueError(f"no client is eligible for {cfg.method}")
    picks = sample_clients(len(eligible), cfg.sample_rate, derive_rng(seed, r, _SAMPLING))
    sampled = sorted(eligible[i] for i in picks)

    probe_cos = None
    if probe and cfg.method != "fedavg_lower":
        probe_cos = _probe(globals_, by_id, sampled, cfg, derive_rng(seed, r, _PROBE))

    train = LOCAL_TRAINERS[cfg.method]

    def job(cid):
        return train(by_id[cid], globals_, cfg, derive_rng(seed, r, _CLIENT, cid))

    if workers > 1 and len(sampled) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(job, c) for c in sampled]
            updates = [f.result() for f in as_completed(futures)]
    else:
        updates = [job(c) for c in sampled]
    if reproducible:
        updates.sort(key=lambda u: u.client_id)

    w_s = fedavg_aggregate(updates, "supervised")
    w_u = fedavg_aggregate(updates, "unsupervised") if cfg.method == "twin_sight" else globals_.w_u
    new_state = GlobalState(w_s, w_u, r)
    report = RoundReport(
        round=r,
        method=cfg.method,
        test_acc=evaluate(w_s, test),
        sup_loss=_weighted_component(updates, "sup"),
        unsup_loss=_weighted_component(updates, "unsup"),
        align_loss=_weighted_component(updates, "align"),
        pseudo_mask_rate=_weighted_component(updates, "mask_rate"),
        probe_cos=probe_cos,
        sampled_clients=sampled,
    )
    return new_state, report


def run_federation(globals_: GlobalState, shards, test: Dataset, cfg: MethodConfig, rounds: int,
                   seed, workers: int = 1, reproducible: bool = True, probe: bool = True):
    reports = []
    for _ in range(rounds):
        globals_, rep = run_round(globals_, shards, test, cfg, seed, workers, reproducible, probe)
        log.debug("%s round %d acc=%.4f", cfg.method, rep.round, rep.test_acc)
        reports.append(rep)
    return globals_, reports
