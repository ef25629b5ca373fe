# coding: utf-8
# # Label-skewed clients
#
# A Dirichlet(gamma) draw per class decides how that class is spread across
# clients. Small gamma concentrates each class on a few clients.

# %%
import numpy as np

from twinsight import blobs_split, build_scenario, dirichlet_partition

train, test = blobs_split(4000, 1000, classes=4, dim=16, spread=0.6, seed=0)
print(train.features.shape, np.bincount(train.labels))

# %%
for gamma in (0.1, 1.0, 1e6):
    shards = dirichlet_partition(train, 10, gamma, seed=0)
    share = np.mean([s.dataset.class_counts().max() / len(s) for s in shards])
    print(f"gamma={gamma:g}: sizes {[len(s) for s in shards]}, mean largest-class share {share:.2f}")

# %% [markdown]
# Two ways of hiding labels. With `alpha` a fraction of clients loses every
# label; with `labeled_ratio` each client keeps a ceil'd fraction of its own.

# %%
shards = dirichlet_partition(train, 10, 0.1, seed=0)
for s in build_scenario(shards, alpha=0.6, seed=0):
    print(s.client_id, s.designation, len(s), s.dataset.class_counts())

# %%
for s in build_scenario(shards, labeled_ratio=0.1, seed=0)[:3]:
    print(s.client_id, s.designation, int(s.dataset.labeled_mask.sum()), "of", len(s))

# %% [markdown]
# `alpha * K` has to be a whole number of clients.

# %%
try:
    build_scenario(shards, alpha=0.55)
except ValueError as exc:
    print("rejected:", exc)
