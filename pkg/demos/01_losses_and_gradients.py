# coding: utf-8
# # Losses and their hand-written gradients
#
# Every objective in `twinsight` returns its value together with the gradient,
# so training needs no autodiff. Here we poke at the three building blocks and
# check one gradient against finite differences.

# %%
import numpy as np

from twinsight import alignment_loss, cross_entropy, nt_xent, pseudo_label_loss

rng = np.random.default_rng(0)

# %% [markdown]
# Cross-entropy on a tiny batch; the gradient w.r.t. the logits is
# `softmax - onehot`, averaged over rows.

# %%
logits = rng.normal(size=(4, 3))
labels = np.array([0, 2, 1, 1])
ce = cross_entropy(logits, labels)
print("CE", ce.loss)
print(ce.grad)

# %% [markdown]
# Pseudo-labels: only rows whose clean confidence is strictly above the
# threshold count, and they are weighted by that confidence.

# %%
probs = np.array([[0.97, 0.02, 0.01], [0.5, 0.3, 0.2]])
pl = pseudo_label_loss(probs, np.log(np.array([[0.8, 0.1, 0.1], [0.4, 0.4, 0.2]])), 0.95)
print("mask", pl.mask, "loss", pl.loss, "= 0.97 * -ln(0.8) / 2 =", 0.97 * -np.log(0.8) / 2)

# %% [markdown]
# NT-Xent treats rows 2k and 2k+1 as two views of the same sample. A single
# pair has nothing to contrast against, so the loss is exactly zero; identical
# rows give ln(2N - 1).

# %%
print("single pair:", nt_xent(rng.normal(size=(2, 5)), 0.5).loss)
print("identical rows, N=4:", nt_xent(np.ones((8, 5)), 0.5).loss, np.log(7))

# %% [markdown]
# The alignment loss compares cosine Gram matrices, so any rotation of the
# embedding leaves it at zero -- only neighbourhood structure matters.

# %%
z = rng.normal(size=(6, 4))
Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
print("rotated:", alignment_loss(z, z @ Q).loss)
print("unrelated:", alignment_loss(z, rng.normal(size=(6, 7))).loss)

# %% [markdown]
# Finite-difference check of the NT-Xent gradient.

# %%
z = rng.normal(size=(6, 3))
h = 1e-6
fd = np.zeros_like(z)
for i in np.ndindex(z.shape):
    zp, zm = z.copy(), z.copy()
    zp[i] += h
    zm[i] -= h
    fd[i] = (nt_xent(zp, 0.5).loss - nt_xent(zm, 0.5).loss) / (2 * h)
g = nt_xent(z, 0.5).grad
print("relative error:", np.linalg.norm(g - fd) / np.linalg.norm(fd))
