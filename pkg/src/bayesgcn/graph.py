"""Graph, feature and label containers, dataset I/O and synthetic SBM graphs.

Datasets live in a small portable container: a JSON manifest next to three
CSV files (edges, features, labels). See ``load_dataset`` for the layout.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

CONTAINER_VERSION = 1
ROLES = ("train_pool", "test", "unlabeled")


class DatasetFormatError(ValueError):
    """Raised when a dataset container cannot be parsed."""


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def canonical_edges(edges, n_nodes=None):
    """Return unique undirected edges as an ``(E, 2)`` int array with ``a < b``.

    Self-loops are dropped. Rows are sorted lexicographically.
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if n_nodes is not None and e.size and (e.min() < 0 or e.max() >= n_nodes):
        raise ValueError(f"edge endpoint out of range [0, {n_nodes})")
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if len(e) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph.

    ``edges`` holds each unordered pair once, as ``(a, b)`` with ``a < b``.
    Construct through :meth:`from_edges` unless the edge array is already
    canonical.
    """

    n_nodes: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n_nodes < 0:
            raise ValueError("n_nodes must be non-negative")
        if len(e):
            if e.min() < 0 or e.max() >= self.n_nodes:
                raise ValueError(f"edge endpoint out of range [0, {self.n_nodes})")
            if np.any(e[:, 0] >= e[:, 1]):
                raise ValueError("edges must satisfy a < b (no self-loops)")
            keys = e[:, 0] * self.n_nodes + e[:, 1]
            if np.any(np.diff(keys) <= 0):
                raise ValueError("edges must be unique and sorted; use Graph.from_edges")
        object.__setattr__(self, "edges", _frozen(e))

    @classmethod
    def from_edges(cls, n_nodes, edges):
        return cls(int(n_nodes), canonical_edges(edges, n_nodes))

    @classmethod
    def from_adjacency(cls, adj):
        adj = sp.coo_matrix(adj)
        upper = adj.row < adj.col
        return cls.from_edges(adj.shape[0], np.column_stack([adj.row[upper], adj.col[upper]]))

    @property
    def n_edges(self):
        return len(self.edges)

    @cached_property
    def adjacency(self):
        """Symmetric 0/1 adjacency as CSR with sorted column indices."""
        n = self.n_nodes
        a, b = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([a, b])
        cols = np.concatenate([b, a])
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        adj.sort_indices()
        return adj

    @cached_property
    def degree(self):
        return np.diff(self.adjacency.indptr)

    def neighbors(self, a):
        adj = self.adjacency
        return adj.indices[adj.indptr[a]:adj.indptr[a + 1]]

    @cached_property
    def edge_keys(self):
        """Sorted ``a * n + b`` keys of the edges, for fast membership tests."""
        return self.edges[:, 0] * self.n_nodes + self.edges[:, 1]

    def has_edges(self, a, b):
        """Vectorized membership test for unordered pairs."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keys = lo * self.n_nodes + hi
        pos = np.searchsorted(self.edge_keys, keys)
        pos = np.minimum(pos, max(len(self.edge_keys) - 1, 0))
        if len(self.edge_keys) == 0:
            return np.zeros(keys.shape, dtype=bool)
        return self.edge_keys[pos] == keys

    def with_edges(self, edges):
        return Graph.from_edges(self.n_nodes, edges)

    def permute(self, perm):
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        return Graph.from_edges(self.n_nodes, perm[self.edges])

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n_nodes == other.n_nodes and np.array_equal(self.edges, other.edges)

    def __hash__(self):
        return hash((self.n_nodes, self.edges.tobytes()))

    def __repr__(self):
        return f"Graph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


def normalize_adjacency(g):
    """Renormalized propagation matrix ``D^-1/2 (A + I) D^-1/2`` as CSR."""
    a_hat = g.adjacency + sp.identity(g.n_nodes, format="csr")
    d = np.asarray(a_hat.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(d)
    scale = sp.diags(d_inv_sqrt)
    out = (scale @ a_hat @ scale).tocsr()
    out.sort_indices()
    return out


def row_normalize(features):
    """L1-normalize feature rows; all-zero rows stay zero."""
    if sp.issparse(features):
        f = sp.csr_matrix(features, dtype=np.float64)
        s = np.asarray(abs(f).sum(axis=1)).ravel()
        inv = np.divide(1.0, s, out=np.zeros_like(s), where=s > 0)
        return (sp.diags(inv) @ f).tocsr()
    f = np.asarray(features, dtype=np.float64)
    s = np.abs(f).sum(axis=1, keepdims=True)
    return np.divide(f, s, out=np.zeros_like(f), where=s > 0)


@dataclass(frozen=True, eq=False)
class LabelSet:
    """Partial node labels plus train/test masks.

    ``y[i] == -1`` marks an unlabeled node. ``order`` lists labeled nodes in
    container order and drives the deterministic ``fixed`` split.
    """

    y: np.ndarray
    n_classes: int
    train_mask: np.ndarray
    test_mask: np.ndarray
    pool_mask: np.ndarray = None
    order: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        n = len(y)
        train = np.asarray(self.train_mask, dtype=bool)
        test = np.asarray(self.test_mask, dtype=bool)
        pool = train.copy() if self.pool_mask is None else np.asarray(self.pool_mask, dtype=bool)
        order = np.flatnonzero(y >= 0) if self.order is None else np.asarray(self.order, dtype=np.int64)
        if not (len(train) == len(test) == len(pool) == n):
            raise ValueError("label arrays must share the node dimension")
        if np.any(y >= self.n_classes) or np.any(y < -1):
            raise ValueError(f"class indices must lie in [0, {self.n_classes})")
        if np.any(train & test):
            raise ValueError("train and test masks overlap")
        if np.any((train | test) & (y < 0)):
            raise ValueError("every masked node needs a label")
        for name, value in (("y", y), ("train_mask", train), ("test_mask", test),
                            ("pool_mask", pool), ("order", order)):
            object.__setattr__(self, name, _frozen(value))

    @property
    def n_nodes(self):
        return len(self.y)

    @property
    def train_idx(self):
        return np.flatnonzero(self.train_mask)

    @property
    def test_idx(self):
        return np.flatnonzero(self.test_mask)

    def one_hot(self):
        out = np.zeros((self.n_nodes, self.n_classes))
        known = self.y >= 0
        out[np.flatnonzero(known), self.y[known]] = 1.0
        return out

    def permute(self, perm):
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return LabelSet(self.y[inv], self.n_classes, self.train_mask[inv],
                        self.test_mask[inv], self.pool_mask[inv], perm[self.order])


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    features: object
    labels: LabelSet
    name: str = "dataset"
    n_edge_rows: int = None
    meta: dict = field(default_factory=dict)

    @property
    def feature_dim(self):
        return self.features.shape[1]


def make_split(labels, per_class, mode="fixed", seed=0):
    """Pick ``per_class`` training nodes per class from the training pool.

    ``fixed`` takes the first nodes of each class in container order;
    ``random`` draws them uniformly without replacement. The test mask is
    left as designated by the container.
    """
    if mode not in ("fixed", "random"):
        raise ValueError(f"unknown split mode {mode!r}")
    order = labels.order[labels.pool_mask[labels.order]]
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(labels.n_classes):
        members = order[labels.y[order] == c]
        if len(members) < per_class:
            raise ValueError(
                f"class {c} has only {len(members)} labeled pool nodes, need {per_class}")
        if mode == "fixed":
            chosen.append(members[:per_class])
        else:
            chosen.append(rng.choice(members, size=per_class, replace=False))
    train = np.zeros(labels.n_nodes, dtype=bool)
    if chosen:
        train[np.concatenate(chosen)] = True
    return replace(labels, train_mask=train)


def _check_simplex_rows(pi):
    if np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("membership rows must lie on the probability simplex")


def generate_sbm(n, k, pi, beta, delta, seed=0):
    """Sample a graph from the assortative MMSBM generative process.

    For every pair ``a < b`` the community indicators ``z_ab ~ pi[a]`` and
    ``z_ba ~ pi[b]`` are drawn; the link is Bernoulli(beta[k]) when both
    equal ``k`` and Bernoulli(delta) otherwise.
    """
    pi = np.asarray(pi, dtype=np.float64).reshape(n, k)
    beta = np.asarray(beta, dtype=np.float64).reshape(k)
    _check_simplex_rows(pi)
    if np.any((beta < 0) | (beta > 1)) or not 0 <= delta <= 1:
        raise ValueError("beta and delta must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(pi, axis=1)
    cdf[:, -1] = 1.0
    found = []
    for a in range(n - 1):
        b = np.arange(a + 1, n)
        z_ab = np.minimum((rng.random(len(b))[:, None] > cdf[a]).sum(axis=1), k - 1)
        u = rng.random(len(b))[:, None]
        z_ba = np.minimum((u > cdf[b]).sum(axis=1), k - 1)
        p = np.where(z_ab == z_ba, beta[z_ab], delta)
        link = rng.random(len(b)) < p
        if link.any():
            found.append(np.column_stack([np.full(link.sum(), a), b[link]]))
    edges = np.concatenate(found) if found else np.zeros((0, 2), dtype=np.int64)
    return Graph.from_edges(n, edges)


def planted_partition(sizes, p_in, p_out, seed=0):
    """Hard-membership SBM; returns ``(graph, block_labels)``."""
    sizes = list(sizes)
    k = len(sizes)
    z = np.repeat(np.arange(k), sizes)
    pi = np.eye(k)[z]
    beta = np.broadcast_to(np.asarray(p_in, dtype=np.float64), (k,))
    return generate_sbm(len(z), k, pi, beta, p_out, seed=seed), z


def synthetic_dataset(n_per_class=100, n_classes=4, feature_dim=200, p_in=0.05,
                      p_out=0.002, words_per_node=12, topic_words=0.4,
                      n_test=None, seed=0):
    """Small citation-like benchmark with planted communities.

    Each node carries a sparse binary bag of words: a ``topic_words``
    fraction of its words come from a class-specific vocabulary slice, the
    rest are uniform over the whole vocabulary. Roles are shuffled so that
    ``n_test`` nodes form the test set and the rest form the training pool.
    """
    rng = np.random.default_rng(seed)
    g, y = planted_partition([n_per_class] * n_classes, p_in, p_out,
                             seed=int(rng.integers(2**31)))
    n = len(y)
    vocab = np.array_split(np.arange(feature_dim), n_classes)
    rows, cols = [], []
    for i in range(n):
        n_topic = rng.binomial(words_per_node, topic_words)
        words = np.concatenate([
            rng.choice(vocab[y[i]], size=n_topic),
            rng.integers(0, feature_dim, size=words_per_node - n_topic),
        ])
        words = np.unique(words)
        rows.append(np.full(len(words), i))
        cols.append(words)
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    x = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, feature_dim))
    perm = rng.permutation(n)
    n_test = n // 2 if n_test is None else n_test
    test = np.zeros(n, dtype=bool)
    test[perm[:n_test]] = True
    order = perm[n_test:]
    labels = LabelSet(y, n_classes, np.zeros(n, dtype=bool), test, ~test,
                      np.concatenate([order, perm[:n_test]]))
    return Dataset(g, x, labels, name="synthetic", n_edge_rows=g.n_edges)


# ---------------------------------------------------------------------------
# Container format
# ---------------------------------------------------------------------------


def _read_csv(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file, expected header {','.join(header)}")
        if [h.strip() for h in first[:len(header)]] != list(header):
            raise DatasetFormatError(
                f"{path}:1: expected header {','.join(header)!r}, got {','.join(first)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            yield lineno, first, row


def _parse_int(path, lineno, field_name, value):
    try:
        return int(value)
    except ValueError:
        raise DatasetFormatError(
            f"{path}:{lineno}: field {field_name!r}: expected an integer, got {value!r}") from None


def _load_edges(path, n_nodes):
    rows = []
    for lineno, _, row in _read_csv(path, ("src", "dst")):
        if len(row) != 2:
            raise DatasetFormatError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        a = _parse_int(path, lineno, "src", row[0])
        b = _parse_int(path, lineno, "dst", row[1])
        for name, v in (("src", a), ("dst", b)):
            if not 0 <= v < n_nodes:
                raise DatasetFormatError(
                    f"{path}:{lineno}: field {name!r}: node id {v} outside [0, {n_nodes})")
        rows.append((a, b))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def _load_features(path, n_nodes, feature_dim):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "node":
            raise DatasetFormatError(f"{path}:1: expected header starting with 'node'")
        if len(header) - 1 != feature_dim:
            raise DatasetFormatError(
                f"{path}:1: header has {len(header) - 1} feature columns, manifest says {feature_dim}")
        rows, cols, vals = [], [], []
        seen = np.zeros(n_nodes, dtype=bool)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != feature_dim + 1:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {feature_dim + 1} fields, got {len(row)}")
            node = _parse_int(path, lineno, "node", row[0])
            if not 0 <= node < n_nodes or seen[node]:
                raise DatasetFormatError(f"{path}:{lineno}: invalid or repeated node id {node}")
            seen[node] = True
            try:
                v = np.asarray(row[1:], dtype=np.float64)
            except ValueError:
                bad = next(j for j, s in enumerate(row[1:]) if not _is_float(s))
                raise DatasetFormatError(
                    f"{path}:{lineno}: field {header[bad + 1]!r}: not a number: {row[bad + 1]!r}") from None
            nz = np.flatnonzero(v)
            rows.append(np.full(len(nz), node))
            cols.append(nz)
            vals.append(v[nz])
    if not seen.all():
        raise DatasetFormatError(f"{path}: missing feature rows for {int((~seen).sum())} nodes")
    cat = (lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt))
    return sp.csr_matrix((cat(vals, np.float64), (cat(rows, np.int64), cat(cols, np.int64))),
                         shape=(n_nodes, feature_dim))


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _load_labels(path, n_nodes, n_classes):
    y = np.full(n_nodes, -1, dtype=np.int64)
    role = np.full(n_nodes, "unlabeled", dtype=object)
    order = []
    for lineno, _, row in _read_csv(path, ("node", "class", "role")):
        if len(row) != 3:
            raise DatasetFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        node = _parse_int(path, lineno, "node", row[0])
        if not 0 <= node < n_nodes:
            raise DatasetFormatError(f"{path}:{lineno}: field 'node': id {node} outside [0, {n_nodes})")
        r = row[2].strip()
        if r not in ROLES:
            raise DatasetFormatError(f"{path}:{lineno}: field 'role': {r!r} not one of {ROLES}")
        cls = row[1].strip()
        if cls in ("", "-1"):
            if r != "unlabeled":
                raise DatasetFormatError(f"{path}:{lineno}: role {r!r} requires a class")
            continue
        c = _parse_int(path, lineno, "class", cls)
        if not 0 <= c < n_classes:
            raise DatasetFormatError(f"{path}:{lineno}: field 'class': {c} outside [0, {n_classes})")
        y[node] = c
        role[node] = r
        order.append(node)
    test = role == "test"
    pool = role == "train_pool"
    return LabelSet(y, n_classes, np.zeros(n_nodes, dtype=bool), test, pool,
                    np.asarray(order, dtype=np.int64))


def load_dataset(path, normalize_features=True):
    """Load a dataset container from its manifest (or the directory holding
    ``manifest.json``).

    Edge rows are read as undirected pairs; a pair listed in both directions
    or more than once collapses to one edge. ``Dataset.n_edge_rows`` keeps the
    raw row count.
    """
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{manifest_path}: cannot read manifest: {exc}") from exc
    for key in ("n_nodes", "n_classes", "feature_dim", "files"):
        if key not in manifest:
            raise DatasetFormatError(f"{manifest_path}: manifest missing field {key!r}")
    root = manifest_path.parent
    files = manifest["files"]
    n, k, d = int(manifest["n_nodes"]), int(manifest["n_classes"]), int(manifest["feature_dim"])
    raw = _load_edges(root / files["edges"], n)
    if "n_edges" in manifest and int(manifest["n_edges"]) != len(raw):
        raise DatasetFormatError(f"{manifest_path}: manifest lists {manifest['n_edges']} edge rows, "
                                 f"{files['edges']} has {len(raw)}")
    if len(raw):
        directed = set(map(tuple, raw.tolist()))
        reciprocal = sum(1 for a, b in directed if a < b and (b, a) in directed)
        if reciprocal:
            logger.info("%s: %d pairs listed in both directions; keeping one undirected edge each",
                        files["edges"], reciprocal)
        if np.any(raw[:, 0] == raw[:, 1]):
            logger.warning("%s: dropping %d self-loops", files["edges"],
                           int((raw[:, 0] == raw[:, 1]).sum()))
    graph = Graph.from_edges(n, raw)
    features = _load_features(root / files["features"], n, d)
    if normalize_features:
        features = row_normalize(features)
    labels = _load_labels(root / files["labels"], n, k)
    return Dataset(graph, features, labels, name=manifest.get("name", root.name),
                   n_edge_rows=len(raw), meta=manifest)


def save_dataset(dataset, directory, edge_rows=None):
    """Write ``dataset`` as a container under ``directory``; returns the
    manifest path. ``edge_rows`` overrides the canonical edge list (used to
    keep a raw directed list verbatim)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    edges = dataset.graph.edges if edge_rows is None else np.asarray(edge_rows).reshape(-1, 2)
    n = dataset.graph.n_nodes
    x = dataset.features
    files = {"edges": "edges.csv", "features": "features.csv", "labels": "labels.csv"}

    with open(directory / files["edges"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        w.writerows(edges.tolist())

    dense = x.toarray() if sp.issparse(x) else np.asarray(x)
    with open(directory / files["features"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node"] + [f"f{j}" for j in range(dense.shape[1])])
        for i in range(n):
            w.writerow([i] + [_fmt(v) for v in dense[i]])

    lab = dataset.labels
    with open(directory / files["labels"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "class", "role"])
        listed = set()
        for node in lab.order.tolist():
            role = "test" if lab.test_mask[node] else ("train_pool" if lab.pool_mask[node] else "unlabeled")
            w.writerow([node, int(lab.y[node]), role])
            listed.add(node)
        for node in range(n):
            if node not in listed:
                w.writerow([node, -1, "unlabeled"])

    manifest = {
        "format": "bayesgcn.dataset",
        "version": CONTAINER_VERSION,
        "name": dataset.name,
        "n_nodes": n,
        "n_edges": int(len(edges)),
        "n_classes": lab.n_classes,
        "feature_dim": int(dense.shape[1]),
        "files": files,
    }
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, directory / "manifest.json")
    return directory / "manifest.json"


def _fmt(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_edges_csv(graph, path):
    """Dump a graph's edges in the container ``edges.csv`` format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        w.writerows(graph.edges.tolist())
