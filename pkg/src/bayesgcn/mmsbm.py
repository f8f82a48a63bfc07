"""MAP inference for the assortative mixed-membership stochastic block model.

Parameters are kept in the expanded-mean form: non-negative ``theta``
(K x 2, columns ``theta_k0, theta_k1``) and ``phi`` (N x K). The block model
parameters follow by normalization::

    beta_k = theta_k1 / (theta_k0 + theta_k1)
    pi_a   = phi_a / sum(phi_a)

With both indicators of a pair collapsed, a pair's likelihood is::

    p(y=1) = sum_k s_k beta_k + (1 - sum_k s_k) delta,   s_k = pi_ak pi_bk

so ``p(y) = f(y; delta) + (2y - 1) sum_k s_k (beta_k - delta)`` with
``f(1; q) = q`` and ``f(0; q) = 1 - q``. Every gradient below is the chain
rule applied to that expression.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln, xlogy

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-15
PARAMS_FORMAT = "bayesgcn.mmsbm_params"
PARAMS_VERSION = 1


class NonFiniteParameterError(RuntimeError):
    pass


@dataclass(frozen=True)
class MmsbmHyper:
    eta: float = 1.0
    alpha: float = 1.0
    rho: float = 0.001
    delta: float = 1e-4
    n_minibatch: int = 500
    eps0: float = 1.0
    tau: float = 1024.0
    kappa: float = 0.5
    nonedge_fraction: float = 0.01
    # phi row sums set the phi step size relative to pi; larger values slow
    # the sharpening of pi away from the initial softmax
    c_phi: float = 1.0
    c_theta: float = 1.0

    def __post_init__(self):
        for name in ("eta", "alpha", "rho", "n_minibatch", "eps0", "tau", "kappa",
                     "nonedge_fraction", "c_phi", "c_theta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.nonedge_fraction > 1:
            raise ValueError("nonedge_fraction must be at most 1")


@dataclass(frozen=True, eq=False)
class ExpandedParams:
    theta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        phi = np.array(self.phi, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[1] != 2:
            raise ValueError("theta must have shape (K, 2)")
        if phi.ndim != 2 or phi.shape[1] != theta.shape[0]:
            raise ValueError("phi must have shape (N, K)")
        if np.any(theta < 0) or np.any(phi < 0):
            raise ValueError("expanded parameters must be non-negative")
        theta.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    @property
    def n_nodes(self):
        return self.phi.shape[0]

    @property
    def n_communities(self):
        return self.theta.shape[0]

    def is_finite(self):
        return bool(np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.phi)))


@dataclass(frozen=True, eq=False)
class BlockParams:
    pi: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=np.float64)
        beta = np.array(self.beta, dtype=np.float64).ravel()
        if pi.ndim != 2 or pi.shape[1] != len(beta):
            raise ValueError("pi must have shape (N, K) matching beta")
        if np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("rows of pi must lie on the simplex")
        if np.any(beta < 0) or np.any(beta > 1):
            raise ValueError("beta must lie in [0, 1]")
        pi.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "beta", beta)

    def digest(self):
        import hashlib

        h = hashlib.sha256()
        h.update(self.pi.tobytes())
        h.update(self.beta.tobytes())
        return h.hexdigest()[:16]


def to_block_params(p):
    t_sum = p.theta.sum(axis=1)
    f_sum = p.phi.sum(axis=1)
    if np.any(t_sum <= 0):
        raise ZeroDivisionError(f"theta rows {np.flatnonzero(t_sum <= 0).tolist()} sum to zero")
    if np.any(f_sum <= 0):
        raise ZeroDivisionError(f"phi rows {np.flatnonzero(f_sum <= 0)[:10].tolist()} sum to zero")
    return BlockParams(p.phi / f_sum[:, None], p.theta[:, 1] / t_sum)


def effective_pairs(pi):
    """``sum_{a<b} pi_ak pi_bk`` per community."""
    col = pi.sum(axis=0)
    return 0.5 * (col ** 2 - (pi ** 2).sum(axis=0))


def to_expanded(bp, hyper):
    """Map block parameters to expanded form.

    ``phi = c_phi * pi``. Each ``theta_k`` row gets magnitude
    ``c_theta * max(1, M_k)`` with ``M_k`` the effective number of
    within-community pairs, so that a preconditioned step moves ``beta_k`` by
    a fraction of its distance to the optimum instead of overshooting.
    """
    mag = hyper.c_theta * np.maximum(effective_pairs(bp.pi), 1.0)
    theta = np.column_stack([mag * (1.0 - bp.beta), mag * bp.beta])
    return ExpandedParams(theta, hyper.c_phi * bp.pi)


# ---------------------------------------------------------------------------
# Likelihood and gradients
# ---------------------------------------------------------------------------


def _pair_prob(y, pa, pb, beta, delta):
    """Unclamped ``p(y_ab | pi_a, pi_b, beta)`` for stacked pairs."""
    sign = 2.0 * y - 1.0
    base = np.where(y == 1, delta, 1.0 - delta)
    return base + sign * ((pa * pb) @ (beta - delta))


def edge_loglik(y, pi_a, pi_b, beta, delta):
    """Collapsed log-likelihood of one pair (vectorizes over leading axes)."""
    y = np.asarray(y)
    p = _pair_prob(y, np.asarray(pi_a, dtype=np.float64), np.asarray(pi_b, dtype=np.float64),
                   np.asarray(beta, dtype=np.float64), delta)
    return np.log(np.maximum(p, PROB_FLOOR))


def _pair_terms(y, pa, pb, beta, delta):
    """Shared pieces for pair gradients: ``(sign / p)`` with clamped pairs zeroed."""
    p = _pair_prob(y, pa, pb, beta, delta)
    sign = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    inv = np.where(p > PROB_FLOOR, sign / np.maximum(p, PROB_FLOOR), 0.0)
    return inv


def _dbeta_dtheta(theta):
    s2 = theta.sum(axis=1) ** 2
    return np.column_stack([-theta[:, 1] / s2, theta[:, 0] / s2])


def _theta_grad_sum(y, pa, pb, beta, delta, theta, weights=None):
    """Sum over pairs of d log p / d theta, shape (K, 2)."""
    inv = _pair_terms(y, pa, pb, beta, delta)
    if weights is not None:
        inv = inv * weights
    dbeta = inv @ (pa * pb)  # (K,)
    return dbeta[:, None] * _dbeta_dtheta(theta)


def _pi_grad(y, pa, pb, beta, delta):
    """Per-pair d log p / d pi_a, shape (m, K)."""
    inv = _pair_terms(y, pa, pb, beta, delta)
    return inv[:, None] * pb * (beta - delta)


def _phi_grad_from_pi_grad(g_pi, pi_a, phi_sum):
    """Chain rule through ``pi_a = phi_a / sum(phi_a)`` (row-wise)."""
    return (g_pi - np.sum(g_pi * pi_a, axis=-1, keepdims=True)) / phi_sum[..., None]


def grad_theta(y, a, b, p, hyper):
    """Gradient of the log-likelihood of pair ``(a, b)`` w.r.t. theta, (K, 2)."""
    bp = to_block_params(p)
    return _theta_grad_sum(np.atleast_1d(y), bp.pi[[a]], bp.pi[[b]], bp.beta,
                           hyper.delta, p.theta)


def grad_phi(y, a, b, p, hyper):
    """Gradient of the log-likelihood of pair ``(a, b)`` w.r.t. ``phi_a``, (K,)."""
    bp = to_block_params(p)
    g_pi = _pi_grad(np.atleast_1d(y), bp.pi[[a]], bp.pi[[b]], bp.beta, hyper.delta)[0]
    return _phi_grad_from_pi_grad(g_pi, bp.pi[a], np.asarray(p.phi[a].sum()))


def step_size(t, hyper):
    if t < 0:
        raise ValueError("iteration index must be non-negative")
    return hyper.eps0 * (t + hyper.tau) ** (-hyper.kappa)


# ---------------------------------------------------------------------------
# Pair sampling
# ---------------------------------------------------------------------------


def all_nonedges(g):
    """Every non-adjacent pair ``a < b``; intended for small graphs."""
    a, b = np.triu_indices(g.n_nodes, k=1)
    keep = ~g.has_edges(a, b)
    return np.column_stack([a[keep], b[keep]])


def n_nonedges(g):
    n = g.n_nodes
    return n * (n - 1) // 2 - g.n_edges


def sample_nonedges(g, m, rng):
    """``m`` non-edges drawn uniformly with replacement by rejection."""
    n = g.n_nodes
    if n_nonedges(g) <= 0:
        raise ValueError("graph has no non-edges")
    out = np.zeros((0, 2), dtype=np.int64)
    while len(out) < m:
        need = m - len(out)
        draw = int(need * 1.2) + 8
        a = rng.integers(0, n, size=draw)
        b = rng.integers(0, n, size=draw)
        ok = a != b
        a, b = a[ok], b[ok]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        ok = ~g.has_edges(lo, hi)
        out = np.concatenate([out, np.column_stack([lo[ok], hi[ok]])])
    return out[:m]


def _nonneighbor_counts(blocked, m, rng):
    """Row-wise uniform draws with replacement among the unblocked columns.

    Returns a matrix with the number of times each column was drawn; row ``r``
    receives ``m[r]`` draws. Draws index into the flat list of open slots,
    so there is no rejection loop.
    """
    rows, n = blocked.shape
    open_pos = np.flatnonzero(~blocked.ravel())
    n_open = n - blocked.sum(axis=1)
    offset = np.cumsum(n_open) - n_open
    u = rng.integers(0, np.repeat(n_open, m))
    pos = open_pos[np.repeat(offset, m) + u]
    return np.bincount(pos, minlength=rows * n).reshape(rows, n)


# ---------------------------------------------------------------------------
# Updates
# ---------------------------------------------------------------------------


def theta_bracket(p, g, hyper, rng=None):
    """The bracketed ascent direction of the theta update.

    ``eta - 1 - rho*theta + theta * sum_{a<b} g_ab(theta)``. With ``rng`` the
    non-edge part of the sum is estimated from a ``nonedge_fraction`` sample
    scaled by the inverse sampling rate; ``rng=None`` computes it exactly.
    """
    bp = to_block_params(p)
    e = g.edges
    total = _theta_grad_sum(np.ones(len(e)), bp.pi[e[:, 0]], bp.pi[e[:, 1]],
                            bp.beta, hyper.delta, p.theta)
    n_non = n_nonedges(g)
    if n_non > 0:
        if rng is None:
            pairs, scale = all_nonedges(g), 1.0
        else:
            m = max(1, int(round(hyper.nonedge_fraction * n_non)))
            pairs, scale = sample_nonedges(g, m, rng), n_non / m
        total = total + scale * _theta_grad_sum(
            np.zeros(len(pairs)), bp.pi[pairs[:, 0]], bp.pi[pairs[:, 1]],
            bp.beta, hyper.delta, p.theta)
    return hyper.eta - 1.0 - hyper.rho * p.theta + p.theta * total


def phi_bracket(p, g, nodes, hyper, rng=None, chunk=512):
    """Bracketed ascent direction for the phi rows of ``nodes``.

    ``alpha - 1 - rho*phi_a + phi_a * sum_{b != a} g_ab(phi_a)``. Neighbour
    terms are exact; with ``rng`` the non-neighbour terms come from
    ``n - |N(a)|`` uniform draws scaled by ``(N - 1 - |N(a)|) / (n - |N(a)|)``,
    where ``n`` is the batch size. Nodes with ``n <= |N(a)|`` (or a batch
    covering the whole graph) fall back to the exact non-neighbour sum.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes) > chunk:
        return np.concatenate([phi_bracket(p, g, nodes[i:i + chunk], hyper, rng, chunk)
                               for i in range(0, len(nodes), chunk)])
    bp = to_block_params(p)
    n = g.n_nodes
    n_batch = min(hyper.n_minibatch, n) if rng is not None else n
    rows = np.arange(len(nodes))
    linked = g.adjacency[nodes].toarray() > 0
    blocked = linked.copy()
    blocked[rows, nodes] = True

    deg = g.degree[nodes]
    n_non = n - 1 - deg
    m = n_batch - deg
    sampled = (n_non > 0) & (m > 0) & (m < n_non) & (rng is not None)
    weight = (~blocked).astype(np.float64)
    if sampled.any():
        idx = np.flatnonzero(sampled)
        counts = _nonneighbor_counts(blocked[idx], m[idx], rng)
        weight[idx] = counts * (n_non[idx] / m[idx])[:, None]

    d = bp.beta - hyper.delta
    s = (bp.pi[nodes] * d) @ bp.pi.T
    p1 = hyper.delta + s
    p0 = 1.0 - p1
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(linked, np.where(p1 > PROB_FLOOR, 1.0 / p1, 0.0), 0.0) \
            - np.where(p0 > PROB_FLOOR, weight / p0, 0.0)
    acc = (coef @ bp.pi) * d
    phi = p.phi[nodes]
    g_phi = _phi_grad_from_pi_grad(acc, bp.pi[nodes], phi.sum(axis=1))
    return hyper.alpha - 1.0 - hyper.rho * phi + phi * g_phi


def update_theta(p, g, t, hyper, seed=None, full_batch=False):
    """One preconditioned stochastic step on theta; returns new params."""
    rng = None if full_batch else np.random.default_rng(seed)
    new = np.abs(p.theta + step_size(t, hyper) * theta_bracket(p, g, hyper, rng))
    return ExpandedParams(new, p.phi)


def update_phi(p, g, node_batch, t, hyper, seed=None, full_batch=False):
    """One preconditioned step on the phi rows in ``node_batch``; other rows
    are returned untouched."""
    rng = None if full_batch else np.random.default_rng(seed)
    node_batch = np.asarray(node_batch, dtype=np.int64)
    phi = np.array(p.phi)
    phi[node_batch] = np.abs(phi[node_batch] + step_size(t, hyper)
                             * phi_bracket(p, g, node_batch, hyper, rng))
    return ExpandedParams(p.theta, phi)


def gamma_logpdf(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + xlogy(shape - 1.0, x) - rate * x


def log_prior(p, hyper):
    return float(gamma_logpdf(p.theta, hyper.eta, hyper.rho).sum()
                 + gamma_logpdf(p.phi, hyper.alpha, hyper.rho).sum())


def edge_probability_matrix(bp, delta, rows=None):
    """Dense link probabilities for ``rows`` (all nodes by default) against
    every node; the diagonal is meaningless."""
    pi = bp.pi if rows is None else bp.pi[rows]
    return delta + (pi * (bp.beta - delta)) @ bp.pi.T


def log_likelihood(p, g, hyper, chunk=1024):
    """Full-batch ``sum_{a<b} log p(y_ab | pi, beta)``."""
    bp = to_block_params(p)
    n = g.n_nodes
    adj = g.adjacency
    total = 0.0
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        prob = edge_probability_matrix(bp, hyper.delta, rows)
        y = adj[rows].toarray() > 0
        ll = np.log(np.maximum(np.where(y, prob, 1.0 - prob), PROB_FLOOR))
        upper = np.arange(n)[None, :] > rows[:, None]
        total += float(ll[upper].sum())
    return total


def log_joint(p, g, hyper):
    """Gamma log-priors on theta and phi plus the full-batch log-likelihood."""
    return log_prior(p, hyper) + log_likelihood(p, g, hyper)


@dataclass(frozen=True, eq=False)
class EvalPairs:
    """Fixed evaluation subsample: all edges plus a seeded non-edge sample."""

    nonedges: np.ndarray
    scale: float

    @classmethod
    def build(cls, g, size=20000, seed=0):
        n_non = n_nonedges(g)
        if n_non == 0:
            return cls(np.zeros((0, 2), dtype=np.int64), 0.0)
        if n_non <= size:
            return cls(all_nonedges(g) if g.n_nodes <= 2000 else
                       sample_nonedges(g, n_non, np.random.default_rng(seed)), 1.0)
        return cls(sample_nonedges(g, size, np.random.default_rng(seed)), n_non / size)


def log_joint_estimate(p, g, hyper, pairs):
    """Log joint with the non-edge sum estimated on a fixed subsample."""
    bp = to_block_params(p)
    e = g.edges
    ll = edge_loglik(np.ones(len(e)), bp.pi[e[:, 0]], bp.pi[e[:, 1]], bp.beta, hyper.delta).sum()
    ne = pairs.nonedges
    if len(ne):
        ll += pairs.scale * edge_loglik(np.zeros(len(ne)), bp.pi[ne[:, 0]], bp.pi[ne[:, 1]],
                                        bp.beta, hyper.delta).sum()
    return log_prior(p, hyper) + float(ll)


# ---------------------------------------------------------------------------
# Inference driver
# ---------------------------------------------------------------------------


@dataclass
class Trace:
    """Diagnostic trace of ``(iteration, log_joint_estimate, step_size)``."""

    every: int = 10
    eval_size: int = 20000
    seed: int = 0
    rows: list = field(default_factory=list)
    _pairs: EvalPairs = None

    def record(self, t, p, g, hyper):
        if self._pairs is None:
            self._pairs = EvalPairs.build(g, self.eval_size, self.seed)
        self.rows.append((int(t), log_joint_estimate(p, g, hyper, self._pairs),
                          step_size(t, hyper)))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "log_joint", "step_size"])
            for t, lj, eps in self.rows:
                w.writerow([t, repr(lj), repr(eps)])


def map_inference(g, init, iters, hyper, seed=0, start_iter=0, trace=None, full_batch=False):
    """Run ``iters`` sweeps of (theta update, phi batch update).

    ``init`` is either :class:`BlockParams` (mapped via :func:`to_expanded`)
    or :class:`ExpandedParams` (warm start). ``start_iter`` offsets the step
    size schedule so that a warm-started chain continues its decay.
    """
    p = to_expanded(init, hyper) if isinstance(init, BlockParams) else init
    if p.n_nodes != g.n_nodes:
        raise ValueError("parameter and graph node counts differ")
    rng = np.random.default_rng(seed)
    n_batch = min(hyper.n_minibatch, g.n_nodes)
    for it in range(iters):
        t = start_iter + it
        if full_batch:
            p = update_theta(p, g, t, hyper, full_batch=True)
            p = update_phi(p, g, np.arange(g.n_nodes), t, hyper, full_batch=True)
        else:
            p = update_theta(p, g, t, hyper, seed=rng.integers(2**63))
            batch = np.sort(rng.choice(g.n_nodes, size=n_batch, replace=False))
            p = update_phi(p, g, batch, t, hyper, seed=rng.integers(2**63))
        if not p.is_finite():
            raise NonFiniteParameterError(f"non-finite MMSBM parameter at iteration {t}")
        if np.any(p.theta.sum(axis=1) == 0) or np.any(p.phi.sum(axis=1) == 0):
            raise NonFiniteParameterError(f"degenerate all-zero parameter row at iteration {t}")
        if trace is not None and (t % trace.every == 0 or it == iters - 1):
            trace.record(t, p, g, hyper)
    return p


def init_from_softmax(Z, g, hyper):
    """Initialize from a GCN softmax output.

    ``phi = c_phi * Z`` so that ``pi`` reproduces ``Z``. Each ``beta_k`` is
    the observed link rate among pairs whose most probable community is
    ``k``; a node whose maximum is tied belongs to every tied community. The
    rate is clamped to ``[delta, 1 - 10 delta]``; a community with no pairs
    gets ``delta``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[0] != g.n_nodes:
        raise ValueError("softmax rows must match the graph's nodes")
    if not np.allclose(Z.sum(axis=1), 1.0, atol=1e-9) or np.any(Z < 0):
        raise ValueError("Z must be row-stochastic")
    member = Z == Z.max(axis=1, keepdims=True)
    e = g.edges
    counts = member.sum(axis=0).astype(np.float64)
    pairs = counts * (counts - 1) / 2
    links = (member[e[:, 0]] & member[e[:, 1]]).sum(axis=0)
    beta = np.full(Z.shape[1], hyper.delta)
    has = pairs > 0
    beta[has] = np.clip(links[has] / pairs[has], hyper.delta, 1.0 - 10.0 * hyper.delta)
    return to_expanded(BlockParams(Z / Z.sum(axis=1, keepdims=True), beta), hyper)


def save_params(p, path, hyper=None, extra=None):
    doc = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "hyper": asdict(hyper) if hyper is not None else None,
        "theta": p.theta.tolist(),
        "phi": p.phi.tolist(),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_params(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != PARAMS_FORMAT:
        raise ValueError(f"{path}: not an MMSBM parameter checkpoint")
    if doc.get("version") != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")
    hyper = MmsbmHyper(**doc["hyper"]) if doc.get("hyper") else None
    return ExpandedParams(np.asarray(doc["theta"]), np.asarray(doc["phi"])), hyper
