"""Two-layer graph convolutional network with hand-written backprop.

The forward pass is

    H1 = act(A (X * m_in) W0)
    logits = A (H1 * m_hid) W1
    Z = softmax(logits)

where ``m_in`` and ``m_hid`` are inverted-dropout masks. For sparse ``X``
the input mask covers the stored entries only.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Graph, normalize_adjacency

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
WEIGHTS_FORMAT = "bayesgcn.gcn_weights"
WEIGHTS_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class GcnnConfig:
    hidden_units: int = 16
    learning_rate: float = 0.01
    l2_coeff: float = 5e-4
    dropout_rate: float = 0.5
    epochs: int = 200
    activation: str = "relu"
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True, eq=False)
class GcnnWeights:
    W0: np.ndarray
    W1: np.ndarray

    def __post_init__(self):
        for name in ("W0", "W1"):
            w = np.array(getattr(self, name), dtype=np.float64)
            if w.ndim != 2:
                raise ValueError(f"{name} must be a matrix")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"{name} has non-finite entries")
            w.setflags(write=False)
            object.__setattr__(self, name, w)
        if self.W0.shape[1] != self.W1.shape[0]:
            raise ValueError("hidden dimensions of W0 and W1 disagree")

    def flat(self):
        return np.concatenate([self.W0.ravel(), self.W1.ravel()])

    def __eq__(self, other):
        return (isinstance(other, GcnnWeights) and np.array_equal(self.W0, other.W0)
                and np.array_equal(self.W1, other.W1))


@dataclass(frozen=True, eq=False)
class DropoutMask:
    """Inverted dropout masks; entries are 0 or ``1 / (1 - p)``."""

    inputs: np.ndarray
    hidden: np.ndarray


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(pre):
    return (pre > 0).astype(np.float64)


def _tanh_grad(pre):
    return 1.0 - np.tanh(pre) ** 2


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "linear": (lambda x: x, lambda pre: np.ones_like(pre)),
    "tanh": (np.tanh, _tanh_grad),
}


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def glorot_init(n_features, hidden, n_classes, rng):
    def uniform(fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=(fan_in, fan_out))

    return GcnnWeights(uniform(n_features, hidden), uniform(hidden, n_classes))


def _as_propagation(A):
    return normalize_adjacency(A) if isinstance(A, Graph) else A


def sample_masks(X, hidden_units, rate, rng):
    keep = 1.0 - rate
    n_in = X.nnz if sp.issparse(X) else np.asarray(X).size
    inputs = (rng.random(n_in) < keep) / keep
    hidden = (rng.random((X.shape[0], hidden_units)) < keep) / keep
    if not sp.issparse(X):
        inputs = inputs.reshape(np.shape(X))
    return DropoutMask(inputs, hidden)


def _masked_inputs(X, masks):
    if masks is None:
        return X
    if sp.issparse(X):
        Xd = X.copy()
        Xd.data = Xd.data * masks.inputs
        return Xd
    return np.asarray(X) * masks.inputs


def _check_shapes(w, A, X):
    n = X.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"propagation matrix shape {A.shape} does not match {n} nodes")
    if w.W0.shape[0] != X.shape[1]:
        raise ValueError(f"W0 expects {w.W0.shape[0]} features, X has {X.shape[1]}")


def _forward_cache(w, A, X, masks, activation):
    _check_shapes(w, A, X)
    act, _ = ACTIVATIONS[activation]
    Xd = _masked_inputs(X, masks)
    pre = A @ (Xd @ w.W0)
    H1 = act(pre)
    Hd = H1 if masks is None else H1 * masks.hidden
    logits = A @ (Hd @ w.W1)
    return Xd, pre, H1, Hd, np.asarray(logits)


def forward(w, A, X, masks=None, activation="relu"):
    """Return ``(H1, logits, Z)``. Without masks this is the deterministic
    inference pass."""
    A = _as_propagation(A)
    _, _, H1, _, logits = _forward_cache(w, A, X, masks, activation)
    return H1, logits, softmax(logits)


def _train_index(labels):
    idx = labels.train_idx
    return idx, labels.y[idx]


def loss(Z, labels, w, l2):
    """Mean cross-entropy over training nodes plus ``l2/2 * ||W0||^2``.

    An empty training set contributes zero cross-entropy.
    """
    idx, y = _train_index(labels)
    ce = 0.0
    if len(idx):
        p = np.maximum(Z[idx, y], LOG_FLOOR)
        ce = float(-np.mean(np.log(p)))
    return ce + 0.5 * l2 * float(np.sum(w.W0 ** 2))


def backward(w, A, X, labels, l2, masks=None, activation="relu"):
    """Exact gradients ``(dW0, dW1)`` of :func:`loss` for fixed masks."""
    _, dW0, dW1 = _loss_and_grad(w, _as_propagation(A), X, labels, l2, masks, activation)
    return dW0, dW1


def _loss_and_grad(w, A, X, labels, l2, masks, activation):
    _, grad = ACTIVATIONS[activation]
    Xd, pre, H1, Hd, logits = _forward_cache(w, A, X, masks, activation)
    Z = softmax(logits)
    value = loss(Z, labels, w, l2)
    idx, y = _train_index(labels)
    d_logits = np.zeros_like(Z)
    if len(idx):
        d_logits[idx] = Z[idx]
        d_logits[idx, y] -= 1.0
        d_logits /= len(idx)
    # A is symmetric, so A^T = A
    dR = A @ d_logits
    dW1 = Hd.T @ dR
    dH1 = (dR @ w.W1.T) * masks.hidden if masks is not None else dR @ w.W1.T
    dP = A @ (dH1 * grad(pre))
    dW0 = np.asarray(Xd.T @ dP) + l2 * w.W0
    return value, dW0, np.asarray(dW1)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        lr_t = self.lr * np.sqrt(1 - self.beta2 ** self.t) / (1 - self.beta1 ** self.t)
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            out.append(p - lr_t * m / (np.sqrt(v) + self.eps))
        return out


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        return [p - self.lr * g for p, g in zip(params, grads)]


def train(graph, X, labels, cfg, init=None, A=None, rng=None, history=None):
    """Fit a GCN for ``cfg.epochs`` full-batch steps, fresh dropout each step.

    ``graph`` may be a :class:`Graph` or ``None`` when a propagation matrix is
    passed as ``A``. ``init`` warm-starts from existing weights. Pass a list as
    ``history`` to collect the per-epoch training loss.
    """
    A = normalize_adjacency(graph) if A is None else A
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if init is None:
        w = glorot_init(X.shape[1], cfg.hidden_units, labels.n_classes, rng)
    else:
        w = init
    opt = Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)
    params = [np.array(w.W0), np.array(w.W1)]
    for epoch in range(cfg.epochs):
        masks = sample_masks(X, params[0].shape[1], cfg.dropout_rate, rng) \
            if cfg.dropout_rate > 0 else None
        value, g0, g1 = _loss_and_grad(GcnnWeights(*params), A, X, labels, cfg.l2_coeff,
                                       masks, cfg.activation)
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
        if history is not None:
            history.append(value)
        params = opt.step(params, [g0, g1])
    try:
        return GcnnWeights(*params)
    except ValueError as exc:
        raise TrainingDivergedError(f"non-finite weights after epoch {cfg.epochs - 1}") from exc


def predict(w, A, X, activation="relu"):
    return forward(w, A, X, None, activation)[2]


def mc_dropout_predict(w, A, X, S, dropout_rate, seed=0, activation="relu"):
    """``S`` stochastic forward passes with independent dropout masks."""
    if S < 1:
        raise ValueError("S must be at least 1")
    A = _as_propagation(A)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(S):
        masks = sample_masks(X, w.W0.shape[1], dropout_rate, rng) if dropout_rate > 0 else None
        out.append(forward(w, A, X, masks, activation)[2])
    return out


def accuracy(Z, labels, mask=None):
    mask = labels.test_mask if mask is None else mask
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return float("nan")
    return float(np.mean(Z[idx].argmax(axis=1) == labels.y[idx]))


def save_weights(w, path, config=None):
    """Versioned JSON checkpoint with shape headers and row-major data."""
    doc = {
        "format": WEIGHTS_FORMAT,
        "version": WEIGHTS_VERSION,
        "config": asdict(config) if config is not None else None,
        "W0": {"shape": list(w.W0.shape), "data": w.W0.ravel().tolist()},
        "W1": {"shape": list(w.W1.shape), "data": w.W1.ravel().tolist()},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_weights(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != WEIGHTS_FORMAT:
        raise ValueError(f"{path}: not a GCN weight checkpoint")
    if doc.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    mats = [np.asarray(doc[k]["data"], dtype=np.float64).reshape(doc[k]["shape"])
            for k in ("W0", "W1")]
    return GcnnWeights(*mats)
