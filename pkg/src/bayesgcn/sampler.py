"""Draw graphs from a fitted assortative MMSBM.

Two samplers share one target: every pair ``a < b`` links independently with
probability ``sum_k pi_ak pi_bk beta_k + (1 - sum_k pi_ak pi_bk) delta``.

``exact`` evaluates that probability for all pairs, in row chunks.

``fast`` avoids the quadratic sweep. Candidate pairs come from independent
Poisson processes, one per community with pair intensity
``c * beta_k * pi_ak * pi_bk`` and one uniform background with intensity
``c * delta``. A pair with total intensity ``c * q_ab`` becomes a candidate
with probability ``1 - exp(-c q_ab)``, and ``c`` is chosen so that this
never falls below the target probability. Each candidate is then kept with
probability ``target / (1 - exp(-c q_ab))``, so the result has exactly the
target marginals with independent pairs. Expected work is
``O(N K + E + delta N^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .mmsbm import BlockParams, edge_probability_matrix

FAST_MAX_Q = 0.9


@dataclass(frozen=True, eq=False)
class SampledGraph:
    graph: Graph
    source: str
    seed: object
    method: str

    @property
    def n_nodes(self):
        return self.graph.n_nodes

    @property
    def edges(self):
        return self.graph.edges


def edge_probability(pi_a, pi_b, beta, delta):
    s = np.asarray(pi_a) * np.asarray(pi_b)
    return np.sum(s * beta, axis=-1) + (1.0 - np.sum(s, axis=-1)) * delta


def _sample_exact(bp, delta, rng, chunk=512):
    n = bp.pi.shape[0]
    found = []
    for start in range(0, n - 1, chunk):
        rows = np.arange(start, min(start + chunk, n - 1))
        prob = edge_probability_matrix(bp, delta, rows)
        u = rng.random(prob.shape)
        hit = (u < prob) & (np.arange(n)[None, :] > rows[:, None])
        r, c = np.nonzero(hit)
        found.append(np.column_stack([rows[r], c]))
    edges = np.concatenate(found) if found else np.zeros((0, 2), dtype=np.int64)
    return Graph(n, edges) if len(edges) == 0 or _is_canonical(edges, n) else Graph.from_edges(n, edges)


def _is_canonical(edges, n):
    keys = edges[:, 0] * n + edges[:, 1]
    return bool(np.all(np.diff(keys) > 0))


def _poisson_pairs(weights, rate, rng):
    """Unordered pairs from a Poisson process with pair intensity
    ``rate * w_a * w_b`` (diagonal discarded)."""
    total = weights.sum()
    if total <= 0 or rate <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    count = rng.poisson(0.5 * rate * total ** 2)
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    a = np.searchsorted(cdf, rng.random(count), side="right")
    b = np.searchsorted(cdf, rng.random(count), side="right")
    n = len(weights)
    a = np.minimum(a, n - 1)
    b = np.minimum(b, n - 1)
    keep = a != b
    return np.sort(np.column_stack([a[keep], b[keep]]), axis=1)


def _sample_fast(bp, delta, rng):
    n, k = bp.pi.shape
    q_max = float(bp.beta.max()) + delta
    if q_max >= FAST_MAX_Q:
        return _sample_exact(bp, delta, rng)
    if q_max <= 0:
        return Graph(n, np.zeros((0, 2), dtype=np.int64))
    c = -np.log1p(-q_max) / q_max
    parts = [_poisson_pairs(bp.pi[:, j], c * bp.beta[j], rng) for j in range(k)]
    parts.append(_poisson_pairs(np.ones(n), c * delta, rng))
    cand = np.concatenate(parts)
    if len(cand) == 0:
        return Graph(n, np.zeros((0, 2), dtype=np.int64))
    cand = np.unique(cand, axis=0)
    pa, pb = bp.pi[cand[:, 0]], bp.pi[cand[:, 1]]
    target = edge_probability(pa, pb, bp.beta, delta)
    q = np.sum(pa * pb * bp.beta, axis=1) + delta
    accept = target / -np.expm1(-c * q)
    keep = rng.random(len(cand)) < accept
    return Graph(n, cand[keep])


def sample_graph(bp, delta, seed=0, method="exact"):
    """Draw one graph ``G ~ p(G | pi, beta)``."""
    if not isinstance(bp, BlockParams):
        raise TypeError("sample_graph expects BlockParams")
    rng = np.random.default_rng(seed)
    if method == "exact":
        g = _sample_exact(bp, delta, rng)
    elif method == "fast":
        g = _sample_fast(bp, delta, rng)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    return SampledGraph(g, bp.digest(), seed, method)


def expected_edge_count(bp, delta):
    n = bp.pi.shape[0]
    total = 0.0
    for start in range(0, n, 1024):
        rows = np.arange(start, min(start + 1024, n))
        prob = edge_probability_matrix(bp, delta, rows)
        total += float(prob[np.arange(n)[None, :] > rows[:, None]].sum())
    return total
