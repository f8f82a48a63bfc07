"""Bayesian GCN ensemble: MMSBM-sampled graphs times MC-dropout weights.

Random streams are derived from one master seed with
``numpy.random.SeedSequence(master, spawn_key=(stream, i, s))``. The stream
ids are fixed constants (see ``STREAMS``), so the draws for ensemble member
``i`` never depend on how many other members ran or in which order.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gcn, mmsbm
from .graph import normalize_adjacency
from .sampler import edge_probability, sample_graph

logger = logging.getLogger(__name__)

STREAMS = {"base": 0, "mmsbm": 1, "graph": 2, "train": 3, "dropout": 4, "split": 5}


def stream(master, name, *index):
    """Independent ``SeedSequence`` for ``(name, *index)`` under ``master``."""
    return np.random.SeedSequence(master, spawn_key=(STREAMS[name],) + tuple(int(i) for i in index))


def stream_rng(master, name, *index):
    return np.random.default_rng(stream(master, name, *index))


def stream_int(master, name, *index):
    return int(stream(master, name, *index).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    n_graphs: int = 10
    n_dropout_samples: int = 5
    n_mmsbm_iters: int = 200
    gcnn: gcn.GcnnConfig = field(default_factory=gcn.GcnnConfig)
    mmsbm: mmsbm.MmsbmHyper = field(default_factory=mmsbm.MmsbmHyper)
    seed: int = 0
    warm_start: bool = True
    sampler: str = "exact"
    keep_samples: bool = True

    def __post_init__(self):
        if self.n_graphs < 1 or self.n_dropout_samples < 1:
            raise ValueError("n_graphs and n_dropout_samples must be at least 1")
        if self.n_mmsbm_iters < 0:
            raise ValueError("n_mmsbm_iters must be non-negative")
        if self.sampler not in ("exact", "fast"):
            raise ValueError(f"unknown sampler {self.sampler!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "gcnn" in d and isinstance(d["gcnn"], dict):
            d["gcnn"] = gcn.GcnnConfig(**d["gcnn"])
        if "mmsbm" in d and isinstance(d["mmsbm"], dict):
            d["mmsbm"] = mmsbm.MmsbmHyper(**d["mmsbm"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EnsemblePrediction:
    mean: np.ndarray
    samples: np.ndarray = None
    history: list = None
    base_softmax: np.ndarray = None
    info: dict = field(default_factory=dict)

    @property
    def labels(self):
        return self.mean.argmax(axis=1)

    def predictive_entropy(self):
        return -np.sum(_xlogx(self.mean), axis=1)

    def mutual_information(self):
        """Entropy of the mean minus mean per-sample entropy.

        Non-negative, and zero exactly when every sample agrees on a node.
        """
        if self.samples is None:
            raise ValueError("sample stack was not kept")
        per_sample = -np.sum(_xlogx(self.samples), axis=2).mean(axis=0)
        return np.maximum(self.predictive_entropy() - per_sample, 0.0)


def _xlogx(p):
    return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def aggregate(samples, keep=True):
    """Average a stack of softmax matrices in a fixed left-to-right order."""
    samples = [np.asarray(s, dtype=np.float64) for s in samples]
    if not samples:
        raise ValueError("aggregate needs at least one sample")
    shape = samples[0].shape
    if any(s.shape != shape for s in samples):
        raise ValueError("all samples must share one shape")
    total = np.zeros(shape)
    for s in samples:
        total += s
    stack = np.stack(samples) if keep else None
    return EnsemblePrediction(total / len(samples), stack)


def train_base(graph, X, labels, cfg):
    """Train the plain GCN on the observed graph (also the baseline model)."""
    A = normalize_adjacency(graph)
    w = gcn.train(None, X, labels, cfg.gcnn, A=A, rng=stream_rng(cfg.seed, "base"))
    return w, gcn.predict(w, A, X, cfg.gcnn.activation)


def run(graph, X, labels, cfg, base=None):
    """Bayesian GCN prediction for every node.

    1. train a GCN on the observed graph; its softmax initializes the MMSBM
       and its weights initialize every per-graph GCN;
    2. for each of ``n_graphs`` members: ``n_mmsbm_iters`` MAP sweeps, one
       graph drawn from the block model, one GCN trained on that graph and
       ``n_dropout_samples`` MC-dropout softmax outputs;
    3. average all ``n_graphs * n_dropout_samples`` outputs.

    ``base`` may carry a precomputed ``(weights, softmax)`` pair from
    :func:`train_base` with the same config.
    """
    t_start = time.perf_counter()
    hyper = cfg.mmsbm
    base_w, z0 = train_base(graph, X, labels, cfg) if base is None else base
    init = mmsbm.init_from_softmax(z0, graph, hyper)
    params, t = init, 0
    samples, history, graph_sizes = [], [], []
    for i in range(cfg.n_graphs):
        if not cfg.warm_start:
            params, t = init, 0
        try:
            params = mmsbm.map_inference(graph, params, cfg.n_mmsbm_iters, hyper,
                                         seed=stream_int(cfg.seed, "mmsbm", i), start_iter=t)
        except mmsbm.NonFiniteParameterError as exc:
            raise EnsembleError(f"ensemble member {i}: {exc}") from exc
        t += cfg.n_mmsbm_iters
        history.append(params)
        bp = mmsbm.to_block_params(params)
        sampled = sample_graph(bp, hyper.delta, seed=stream(cfg.seed, "graph", i),
                               method=cfg.sampler)
        graph_sizes.append(sampled.graph.n_edges)
        A_i = normalize_adjacency(sampled.graph)
        try:
            w_i = gcn.train(None, X, labels, cfg.gcnn, init=base_w, A=A_i,
                            rng=stream_rng(cfg.seed, "train", i))
        except gcn.TrainingDivergedError as exc:
            raise EnsembleError(f"ensemble member {i}: {exc}") from exc
        for s in range(cfg.n_dropout_samples):
            samples.extend(gcn.mc_dropout_predict(
                w_i, A_i, X, 1, cfg.gcnn.dropout_rate, seed=stream(cfg.seed, "dropout", i, s),
                activation=cfg.gcnn.activation))
    pred = aggregate(samples, keep=cfg.keep_samples)
    info = {"wall_clock_s": time.perf_counter() - t_start, "sampled_edges": graph_sizes,
            "mmsbm_iterations": t}
    return EnsemblePrediction(pred.mean, pred.samples, history, z0, info)


def result_record(pred, labels, cfg, baseline=None):
    """Experiment result document (JSON-ready)."""
    per_sample = []
    if pred.samples is not None:
        per_sample = [gcn.accuracy(s, labels) for s in pred.samples]
    doc = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "accuracy": gcn.accuracy(pred.mean, labels),
        "per_sample_accuracy": per_sample,
        "wall_clock_s": pred.info.get("wall_clock_s"),
    }
    if pred.base_softmax is not None:
        doc["base_gcn_accuracy"] = gcn.accuracy(pred.base_softmax, labels)
    if baseline is not None:
        doc["baseline_accuracy"] = baseline
    return doc


def _mean_block_params(history):
    if isinstance(history, mmsbm.ExpandedParams):
        history = [history]
    return [mmsbm.to_block_params(p) for p in history]


def posterior_edge_report(history, g, top_m, delta, labels=None, low_degree=2):
    """Rank observed edges by ascending and non-edges by descending posterior
    link probability, averaged over a parameter history.

    Each entry records the endpoints, the probability, whether the endpoint
    labels agree (``None`` when unknown) and both degrees.
    """
    bps = _mean_block_params(history)
    e = g.edges
    p_edges = np.mean([edge_probability(bp.pi[e[:, 0]], bp.pi[e[:, 1]], bp.beta, delta)
                       for bp in bps], axis=0) if len(e) else np.zeros(0)
    order = np.lexsort((e[:, 1], e[:, 0], p_edges)) if len(e) else np.zeros(0, dtype=int)
    weak = order[:top_m]

    n = g.n_nodes
    best_p = np.zeros(0)
    best_pairs = np.zeros((0, 2), dtype=np.int64)
    chunk = 512
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        prob = np.mean([mmsbm.edge_probability_matrix(bp, delta, rows) for bp in bps], axis=0)
        r, c = np.nonzero(np.arange(n)[None, :] > rows[:, None])
        a, b = rows[r], c
        pv = prob[r, c]
        keep = ~g.has_edges(a, b)
        a, b, pv = a[keep], b[keep], pv[keep]
        if len(pv) > top_m:
            sel = np.argpartition(-pv, top_m)[:top_m]
            a, b, pv = a[sel], b[sel], pv[sel]
        best_p = np.concatenate([best_p, pv])
        best_pairs = np.concatenate([best_pairs, np.column_stack([a, b])])
    order_ne = np.lexsort((best_pairs[:, 1], best_pairs[:, 0], -best_p))[:top_m]

    deg = g.degree
    y = None if labels is None else labels.y

    def entry(a, b, prob):
        same = None
        if y is not None and y[a] >= 0 and y[b] >= 0:
            same = bool(y[a] == y[b])
        return {"a": int(a), "b": int(b), "probability": float(prob), "same_label": same,
                "degree_a": int(deg[a]), "degree_b": int(deg[b])}

    weak_edges = [entry(e[j, 0], e[j, 1], p_edges[j]) for j in weak]
    strong = [entry(best_pairs[j, 0], best_pairs[j, 1], best_p[j]) for j in order_ne]
    summary = {
        "weak_inter_or_low_degree": sum(
            1 for x in weak_edges
            if x["same_label"] is False or min(x["degree_a"], x["degree_b"]) < low_degree),
        "strong_intra": sum(1 for x in strong if x["same_label"] is True),
    }
    return {"weak_edges": weak_edges, "strong_nonedges": strong, "summary": summary,
            "edge_order": e[order].tolist()}
