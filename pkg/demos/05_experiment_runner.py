# coding: utf-8
# # Config-driven runs
#
# The runner takes a YAML/JSON config, writes `config.json`, one CSV row per
# (method, seed, round) and a `summary.json` with rounds-to-target. The same
# thing is available from the shell as `twinsight run --config file.yaml`.

# %%
import csv
import json
import tempfile
from pathlib import Path

from twinsight import config_from_dict, rounds_to_target, run_experiment

cfg = config_from_dict({
    "dataset": {"n_train": 1000, "n_test": 300},
    "rounds": 10,
    "seeds": [0, 1],
})
print(cfg.methods, cfg.gamma, cfg.alpha, cfg.lr)

# %%
out = Path(tempfile.mkdtemp()) / "run"
summary = run_experiment(cfg, out)
print(json.dumps(summary, indent=1))

# %%
rows = list(csv.DictReader(open(out / "metrics.csv")))
print(len(rows), "rows;", list(rows[0]))

# %% [markdown]
# `rounds_to_target` gives the first round reaching the target, or the
# string "None" if it never does.

# %%
print(rounds_to_target([0.2, 0.5, 0.7, 0.6], 0.65), rounds_to_target([0.2, 0.3], 0.9))

# %% [markdown]
# Unknown keys and inconsistent values are rejected with the offending key.

# %%
from twinsight import ConfigError

for bad in ({"alpah": 0.6}, {"alpha": 0.55}):
    try:
        config_from_dict(bad)
    except ConfigError as exc:
        print("ConfigError:", exc.key, "-", exc)
