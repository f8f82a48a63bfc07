# %% [markdown]
# # A two-layer GCN from scratch
#
# We build a small citation-like graph with planted classes, train the
# two-layer graph convolutional network on a handful of labels per class,
# and look at what Monte Carlo dropout does to the predictions.

# %%
import numpy as np

from bayesgcn import gcn
from bayesgcn import graph as G

ds = G.synthetic_dataset(n_per_class=100, n_classes=4, feature_dim=200, seed=0)
X = G.row_normalize(ds.features)
labels = G.make_split(ds.labels, per_class=5, mode="fixed")
print(ds.graph)
print("train nodes:", labels.train_mask.sum(), " test nodes:", labels.test_mask.sum())

# %% [markdown]
# The propagation matrix is the symmetrically normalized adjacency with self
# loops. Every row mixes a node with its neighbours.

# %%
A = G.normalize_adjacency(ds.graph)
print("row sums of A (first five):", np.round(np.asarray(A.sum(axis=1)).ravel()[:5], 3))

# %% [markdown]
# Training: Adam, Glorot init, dropout on both layers, L2 on the first
# weight matrix. `history` collects the per-epoch loss.

# %%
cfg = gcn.GcnnConfig(seed=0)
history = []
w = gcn.train(None, X, labels, cfg, A=A, history=history)
print(f"loss: epoch 0 {history[0]:.3f} -> epoch {len(history) - 1} {history[-1]:.3f}")
Z = gcn.predict(w, A, X)
print(f"test accuracy {gcn.accuracy(Z, labels):.3f}")

# %% [markdown]
# With dropout kept on at inference time, each forward pass is a different
# weight sample. Averaging them changes little on accuracy but exposes how
# unsure the model is about individual nodes.

# %%
samples = np.stack(gcn.mc_dropout_predict(w, A, X, 20, cfg.dropout_rate, seed=1))
mean = samples.mean(axis=0)
spread = samples.std(axis=0).max(axis=1)
print(f"MC-dropout accuracy {gcn.accuracy(mean, labels):.3f}")
test = labels.test_idx
wrong = test[mean[test].argmax(axis=1) != labels.y[test]]
right = test[mean[test].argmax(axis=1) == labels.y[test]]
print(f"mean per-node spread: correct {spread[right].mean():.3f}, wrong {spread[wrong].mean():.3f}")
