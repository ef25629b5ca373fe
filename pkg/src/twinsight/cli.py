"""Config-driven experiment runner.

    twinsight run --config exp.yaml [--out DIR] [--workers N] [--reproducible]
    twinsight partition-stats --config exp.yaml
    twinsight selftest

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .data import AugmentPolicy, blobs_split, build_scenario, dirichlet_partition, load_csv
from .diagnostics import NEVER, rounds_to_target
from .federation import METHODS, MethodConfig, init_global_state, run_round
from .losses import TwinHyper
from .numerics import NumericError

log = logging.getLogger("twinsight")

CSV_COLUMNS = ["method", "seed", "round", "test_acc", "sup_loss", "unsup_loss", "align_loss",
               "pseudo_mask_rate", "probe_cos", "sampled_clients"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


class RunFailure(RuntimeError):
    def __init__(self, method, seed, round_idx, cause):
        super().__init__(f"{method} seed={seed} round={round_idx}: {cause}")
        self.method, self.seed, self.round = method, seed, round_idx


@dataclass
class DatasetConfig:
    kind: str = "blobs"
    n_train: int = 4000
    n_test: int = 1000
    classes: int = 4
    dim: int = 16
    spread: float = 0.6
    train_path: str | None = None
    test_path: str | None = None


@dataclass
class HyperConfig:
    lambda_u: float = 1.0
    lambda_d: float = 1.0
    temperature: float = 0.5
    threshold: float = 0.95
    alignment_reduction: str = "mean"
    pseudo_same_input: bool = False


@dataclass
class AugmentConfig:
    noise_std: float = 0.1
    dropout: float = 0.1
    jitter: list = field(default_factory=lambda: [0.8, 1.2])


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    clients: int = 10
    gamma: float = 0.1
    alpha: float | None = 0.6
    labeled_ratio: float | None = None
    sample_rate: float = 0.5
    rounds: int = 100
    local_epochs: int = 1
    batch_size: int = 64
    methods: list = field(default_factory=lambda: list(METHODS))
    hidden: list = field(default_factory=lambda: [64])
    proj_dim: int = 32
    activation: str = "relu"
    hyper: HyperConfig = field(default_factory=HyperConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs/default"
    reproducible: bool = True
    workers: int = 1
    probe: bool = True
    # None: use the lower-bound method's final mean accuracy
    target_accuracy: float | None = None

    def to_dict(self):
        return dataclasses.asdict(self)

    def method_config(self, method) -> MethodConfig:
        h = self.hyper
        return MethodConfig(
            method=method,
            local_epochs=self.local_epochs,
            batch_size=self.batch_size,
            hyper=TwinHyper(h.lambda_u, h.lambda_d, h.temperature, h.threshold,
                            h.alignment_reduction, h.pseudo_same_input),
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            augment=AugmentPolicy(self.augment.noise_std, self.augment.dropout, tuple(self.augment.jitter)),
            sample_rate=self.sample_rate,
        )


_NESTED = {"dataset": DatasetConfig, "hyper": HyperConfig, "augment": AugmentConfig}


def _coerce(key, value, default):
    """Type-check ``value`` against the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
    return value


_OPTIONAL_FLOATS = {"alpha", "labeled_ratio", "target_accuracy"}
_OPTIONAL_STRS = {"dataset.train_path", "dataset.test_path"}


def _build(cls, raw, prefix=""):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a mapping")
    obj = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in raw.items():
        full = prefix + str(key)
        if key not in names:
            raise ConfigError(full, "unknown key")
        if key in _NESTED and cls is ExperimentConfig:
            setattr(obj, key, _build(_NESTED[key], value, full + "."))
            continue
        default = getattr(obj, key)
        if full in _OPTIONAL_FLOATS or full in _OPTIONAL_STRS:
            if value is not None:
                want = str if full in _OPTIONAL_STRS else float
                value = _coerce(full, value, want())
        else:
            value = _coerce(full, value, default)
        setattr(obj, key, value)
    return obj


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    d = cfg.dataset
    if d.kind not in ("blobs", "csv"):
        raise ConfigError("dataset.kind", "must be 'blobs' or 'csv'")
    if d.kind == "blobs":
        for k in ("n_train", "n_test", "classes", "dim"):
            if getattr(d, k) < (2 if k in ("classes", "dim") else 1):
                raise ConfigError(f"dataset.{k}", "too small")
        if d.spread < 0:
            raise ConfigError("dataset.spread", "must be non-negative")
    elif not d.train_path or not d.test_path:
        raise ConfigError("dataset.train_path", "csv datasets need train_path and test_path")
    if cfg.clients < 1:
        raise ConfigError("clients", "must be >= 1")
    if not cfg.gamma > 0:
        raise ConfigError("gamma", "must be > 0")
    if (cfg.alpha is None) == (cfg.labeled_ratio is None):
        raise ConfigError("alpha", "set exactly one of alpha or labeled_ratio")
    if cfg.alpha is not None:
        t = cfg.alpha * cfg.clients
        if not 0 <= cfg.alpha < 1 or abs(t - round(t)) > 1e-9:
            raise ConfigError("alpha", f"alpha * clients = {t} must be an integer number of clients in [0, K)")
    if cfg.labeled_ratio is not None and not 0 < cfg.labeled_ratio <= 1:
        raise ConfigError("labeled_ratio", "must lie in (0, 1]")
    if not 0 < cfg.sample_rate <= 1:
        raise ConfigError("sample_rate", "must lie in (0, 1]")
    if int(cfg.sample_rate * cfg.clients + 1e-9) < 1:
        raise ConfigError("sample_rate", "selects no client")
    if cfg.rounds < 1:
        raise ConfigError("rounds", "must be >= 1")
    if cfg.local_epochs < 1:
        raise ConfigError("local_epochs", "must be >= 1")
    if cfg.batch_size < 2:
        raise ConfigError("batch_size", "must be >= 2")
    if not cfg.methods or any(m not in METHODS for m in cfg.methods):
        raise ConfigError("methods", f"must be a non-empty subset of {list(METHODS)}")
    if len(set(cfg.methods)) != len(cfg.methods):
        raise ConfigError("methods", "duplicate entries")
    if not cfg.hidden or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in cfg.hidden):
        raise ConfigError("hidden", "must be a non-empty list of positive integers")
    if cfg.proj_dim < 1:
        raise ConfigError("proj_dim", "must be >= 1")
    if cfg.activation not in ("relu", "tanh"):
        raise ConfigError("activation", "must be 'relu' or 'tanh'")
    if not cfg.seeds or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in cfg.seeds):
        raise ConfigError("seeds", "must be a non-empty list of non-negative integers")
    if cfg.lr < 0:
        raise ConfigError("lr", "must be non-negative")
    if not 0 <= cfg.momentum < 1:
        raise ConfigError("momentum", "must lie in [0, 1)")
    if cfg.weight_decay < 0:
        raise ConfigError("weight_decay", "must be non-negative")
    if cfg.workers < 1:
        raise ConfigError("workers", "must be >= 1")
    if cfg.target_accuracy is not None and not 0 < cfg.target_accuracy <= 1:
        raise ConfigError("target_accuracy", "must lie in (0, 1]")
    if len(cfg.augment.jitter) != 2:
        raise ConfigError("augment.jitter", "must be [lo, hi]")
    # delegate remaining range checks to the domain types
    for key, build in (("hyper", lambda: cfg.method_config(cfg.methods[0]).hyper),
                       ("augment", lambda: cfg.method_config(cfg.methods[0]).augment)):
        try:
            build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, str(exc)) from None
    return cfg


def config_from_dict(raw) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, raw))


def parse_config(path) -> ExperimentConfig:
    """Load a YAML/JSON config; an empty file yields all defaults."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw)


def echo_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- running ----------------------------------------------------------------------------

def load_data(cfg: ExperimentConfig, seed):
    d = cfg.dataset
    if d.kind == "blobs":
        return blobs_split(d.n_train, d.n_test, d.classes, d.dim, d.spread, seed)
    train = load_csv(d.train_path)
    test = load_csv(d.test_path, num_classes=train.num_classes)
    return train, test


def build_clients(cfg: ExperimentConfig, train, seed):
    shards = dirichlet_partition(train, cfg.clients, cfg.gamma, seed)
    if cfg.alpha is not None:
        return build_scenario(shards, alpha=cfg.alpha, seed=seed)
    return build_scenario(shards, labeled_ratio=cfg.labeled_ratio, seed=seed)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_row(seed, rep):
    return [rep.method, seed, rep.round, _fmt(rep.test_acc), _fmt(rep.sup_loss), _fmt(rep.unsup_loss),
            _fmt(rep.align_loss), _fmt(rep.pseudo_mask_rate), _fmt(rep.probe_cos),
            ";".join(str(c) for c in rep.sampled_clients)]


def run_method(cfg: ExperimentConfig, method, seed, train, test, shards):
    mcfg = cfg.method_config(method)
    state = init_global_state(train.dim, train.num_classes, tuple(cfg.hidden), cfg.proj_dim, seed,
                              cfg.activation)
    reports = []
    for r in range(1, cfg.rounds + 1):
        try:
            state, rep = run_round(state, shards, test, mcfg, seed, cfg.workers, cfg.reproducible, cfg.probe)
        except NumericError as exc:
            raise RunFailure(method, seed, r, exc) from exc
        reports.append(rep)
    return reports


def summarize(cfg: ExperimentConfig, histories):
    """histories: {method: {seed: [acc per round]}}."""
    target = cfg.target_accuracy
    if target is None and "fedavg_lower" in histories:
        target = float(np.mean([h[-1] for h in histories["fedavg_lower"].values()]))
    summary = {}
    for method, per_seed in histories.items():
        finals = [h[-1] for h in per_seed.values()]
        mean_curve = np.mean([h for h in per_seed.values()], axis=0)
        rtt = NEVER
        if target is not None and target > 0:
            rtt = rounds_to_target(mean_curve.tolist(), min(target, 1.0))
        summary[method] = {
            "final_acc_mean": float(np.mean(finals)),
            "final_acc_std": float(np.std(finals)),
            "rounds_to_target": rtt,
            "target_accuracy": target,
        }
    return summary


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Run every (method, seed) pair; writes config.json, metrics.csv, summary.json."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out / "config.json")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    histories = {m: {} for m in cfg.methods}
    for seed in cfg.seeds:
        train, test = load_data(cfg, seed)
        shards = build_clients(cfg, train, seed)
        for method in cfg.methods:
            t0 = time.perf_counter()
            reports = run_method(cfg, method, seed, train, test, shards)
            for rep in reports:
                writer.writerow(report_row(seed, rep))
            histories[method][seed] = [rep.test_acc for rep in reports]
            log.info("%s seed=%d final_acc=%.4f (%.1fs)", method, seed, reports[-1].test_acc,
                     time.perf_counter() - t0)
    (out / "metrics.csv").write_text(buf.getvalue(), encoding="utf-8", newline="")
    summary = summarize(cfg, histories)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def partition_stats(cfg: ExperimentConfig, stream=None):
    stream = stream or sys.stdout
    seed = cfg.seeds[0]
    train, _ = load_data(cfg, seed)
    shards = build_clients(cfg, train, seed)
    classes = train.num_classes
    header = ["client", "designation", "n"] + [f"c{c}" for c in range(classes)]
    print("\t".join(header), file=stream)
    for s in shards:
        # histogram of the underlying classes, including hidden labels
        counts = np.bincount(train.labels[s.source_index], minlength=classes)
        print("\t".join([str(s.client_id), s.designation, str(len(s))] + [str(c) for c in counts]),
              file=stream)
    return shards


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="twinsight", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out")
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--reproducible", action="store_true")
    p_stats = sub.add_parser("partition-stats", help="print per-client class histograms")
    p_stats.add_argument("--config", required=True)
    sub.add_parser("selftest", help="gradient checks and loss oracles")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")

    if args.command == "selftest":
        from .selftest import run_selftest
        return 0 if run_selftest() else 1

    try:
        cfg = parse_config(args.config)
        if args.command == "run":
            if args.workers is not None:
                if args.workers < 1:
                    raise ConfigError("workers", "must be >= 1")
                cfg.workers = args.workers
            if args.reproducible:
                cfg.reproducible = True
            if args.out:
                cfg.out_dir = args.out
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "partition-stats":
        partition_stats(cfg)
        return EXIT_OK
    try:
        summary = run_experiment(cfg)
    except RunFailure as exc:
        log.error("numeric failure: %s", exc)
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
