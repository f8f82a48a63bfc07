"""Random node attacks in poisoning mode.

A target ``v`` of degree ``d`` receives ``Delta = d + 2`` edge flips: half
of them remove existing neighbours, the other half connect ``v`` to nodes of
a different class. The graph is perturbed before training, and every model
is retrained from scratch on the perturbed graph.

Targets are chosen from test nodes using the classification margin
``score(true) - max_{c != true} score(c)``, averaged over a few preliminary
trainings on the clean graph. Margins of exactly 0 count as misclassified.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ensemble, gcn
from .graph import Graph

logger = logging.getLogger(__name__)

ALGORITHMS = ("gcnn", "bayesian")
ATTACK_STREAMS = {"select": 10, "eval": 11, "plan": 12, "random": 13}


class AttackError(RuntimeError):
    pass


def classification_margin(scores, true_class):
    """True-class score minus the best competing score."""
    scores = np.asarray(scores, dtype=np.float64)
    others = np.delete(scores, true_class)
    return float(scores[true_class] - others.max())


def margins(Z, y, nodes):
    """Vectorized :func:`classification_margin` for ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    s = np.array(Z[nodes], dtype=np.float64)
    t = np.asarray(y)[nodes]
    true = s[np.arange(len(nodes)), t]
    s[np.arange(len(nodes)), t] = -np.inf
    return true - s.max(axis=1)


@dataclass(frozen=True)
class MarginRecord:
    node: int
    true_class: int
    scores: tuple
    margin: float

    @classmethod
    def from_scores(cls, node, scores, true_class):
        return cls(int(node), int(true_class), tuple(float(v) for v in scores),
                   classification_margin(scores, true_class))

    @property
    def correct(self):
        return self.margin > 0


@dataclass(frozen=True, eq=False)
class AttackPlan:
    target: int
    removals: np.ndarray
    additions: np.ndarray
    budget: int

    def __post_init__(self):
        for name in ("removals", "additions"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2))

    @property
    def size(self):
        return len(self.removals) + len(self.additions)

    def validate(self, g, y):
        v = self.target
        nbrs = set(g.neighbors(v).tolist())
        for a, b in self.removals:
            if v not in (a, b) or (b if a == v else a) not in nbrs:
                raise AttackError(f"removal ({a}, {b}) is not an edge of target {v}")
        for a, b in self.additions:
            other = b if a == v else a
            if v not in (a, b) or other in nbrs or other == v:
                raise AttackError(f"addition ({a}, {b}) is not a new edge of target {v}")
            if y[other] < 0 or y[other] == y[v]:
                raise AttackError(f"addition ({a}, {b}) does not cross communities")
        if self.size != self.budget:
            raise AttackError(f"plan uses {self.size} flips, budget is {self.budget}")


def budget_split(degree, budget=None):
    """``(n_remove, n_add)`` for a target of the given degree.

    Odd budgets round removals down and additions up. Removals beyond the
    degree move to the additions.
    """
    total = degree + 2 if budget is None else int(budget)
    n_remove = min(total // 2, degree)
    return n_remove, total - n_remove


def plan_attack(g, target, y, seed=0, budget=None):
    """Uniform random plan: removed neighbours and added cross-label nodes
    are drawn without replacement."""
    rng = np.random.default_rng(seed)
    y = np.asarray(y)
    target = int(target)
    nbrs = g.neighbors(target)
    n_remove, n_add = budget_split(len(nbrs), budget)
    removed = np.sort(rng.choice(nbrs, size=n_remove, replace=False)) if n_remove else nbrs[:0]
    eligible = (y >= 0) & (y != y[target])
    eligible[nbrs] = False
    eligible[target] = False
    pool = np.flatnonzero(eligible)
    if len(pool) < n_add:
        raise AttackError(f"target {target}: {len(pool)} cross-label candidates, need {n_add}")
    added = np.sort(rng.choice(pool, size=n_add, replace=False)) if n_add else pool[:0]

    def pairs(other):
        return np.sort(np.column_stack([np.full(len(other), target), other]), axis=1)

    return AttackPlan(target, pairs(removed), pairs(added), n_remove + n_add)


def perturb(g, plan):
    """Graph with the plan's removals deleted and additions inserted."""
    if plan.size == 0:
        return g
    edges = g.edges
    if len(plan.removals):
        keys = plan.removals[:, 0] * g.n_nodes + plan.removals[:, 1]
        edges = edges[~np.isin(g.edge_keys, keys)]
    return Graph.from_edges(g.n_nodes, np.concatenate([edges, plan.additions]))


def _top(records, k, key):
    return [r.node for r in sorted(records, key=key)[:k]]


def select_targets(records, seed=0, n_high=10, n_low=10, n_random=20):
    """Per algorithm: highest margins, lowest positive margins, plus a shared
    random draw from nodes every algorithm classifies correctly.

    ``records`` maps algorithm name to a list of :class:`MarginRecord`. Ties
    in margin are broken by node id. The random nodes exclude every node
    already picked as an extreme by any algorithm.
    """
    picks, correct_sets = {}, []
    for alg, recs in records.items():
        correct = [r for r in recs if r.correct]
        need = n_high + n_low + n_random
        if len(correct) < need:
            raise AttackError(f"{alg}: {len(correct)} correctly classified candidates, need {need}")
        high = _top(correct, n_high, lambda r: (-r.margin, r.node))
        rest = [r for r in correct if r.node not in set(high)]
        low = _top(rest, n_low, lambda r: (r.margin, r.node))
        picks[alg] = (high, low)
        correct_sets.append({r.node for r in correct})
    extremes = {n for high, low in picks.values() for n in high + low}
    shared = sorted(set.intersection(*correct_sets) - extremes)
    if len(shared) < n_random:
        raise AttackError(f"{len(shared)} shared correctly classified nodes outside the "
                          f"extremes, need {n_random}")
    rng = np.random.default_rng(seed)
    rand = sorted(int(v) for v in rng.choice(shared, size=n_random, replace=False))
    return {alg: {"high": high, "low": low, "random": rand} for alg, (high, low) in picks.items()}


@dataclass(frozen=True)
class AttackConfig:
    model: ensemble.EnsembleConfig = field(default_factory=ensemble.EnsembleConfig)
    algorithms: tuple = ALGORITHMS
    n_select_trials: int = 10
    n_eval_trials: int = 5
    n_high: int = 10
    n_low: int = 10
    n_random: int = 20
    budget: int = None
    seed: int = 0

    def __post_init__(self):
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad:
            raise ValueError(f"unknown algorithms {sorted(bad)}")
        object.__setattr__(self, "algorithms", tuple(self.algorithms))

    def to_dict(self):
        d = asdict(self)
        d["algorithms"] = list(self.algorithms)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("model"), dict):
            d["model"] = ensemble.EnsembleConfig.from_dict(d["model"])
        return cls(**d)


def _seed(master, name, *index):
    return int(np.random.SeedSequence(master, spawn_key=(ATTACK_STREAMS[name],) + index)
               .generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def predict_all(algorithms, graph, X, labels, model_cfg, seed):
    """Softmax output per algorithm for one model seed.

    The Bayesian run trains the same base GCN as the plain baseline, so when
    both are requested the baseline comes for free and the pair is matched.
    """
    cfg = replace(model_cfg, seed=seed)
    out = {}
    base = None
    if "gcnn" in algorithms or "bayesian" in algorithms:
        base = ensemble.train_base(graph, X, labels, cfg)
    if "gcnn" in algorithms:
        out["gcnn"] = base[1]
    if "bayesian" in algorithms:
        out["bayesian"] = ensemble.run(graph, X, labels, cfg, base=base).mean
    return out


def _selection_margins(graph, X, labels, cfg):
    test = labels.test_idx
    total = {alg: np.zeros(len(test)) for alg in cfg.algorithms}
    scores = {alg: np.zeros((len(test), labels.n_classes)) for alg in cfg.algorithms}
    for j in range(cfg.n_select_trials):
        Z = predict_all(cfg.algorithms, graph, X, labels, cfg.model, _seed(cfg.seed, "select", j))
        for alg in cfg.algorithms:
            total[alg] += margins(Z[alg], labels.y, test)
            scores[alg] += Z[alg][test]
    n = max(cfg.n_select_trials, 1)
    records = {}
    for alg in cfg.algorithms:
        records[alg] = [MarginRecord(int(v), int(labels.y[v]), tuple(s / n), float(m / n))
                        for v, s, m in zip(test, scores[alg], total[alg])]
    return records


def run_attack_experiment(graph, X, labels, cfg=None, targets=None):
    """Select targets, then run ``n_eval_trials`` poisoning trials.

    Trial ``t`` uses one model seed for every algorithm and every target, on
    both the clean and the perturbed graph, so a zero budget reproduces the
    clean result exactly. ``targets`` (alg -> group -> nodes) skips the
    selection phase.
    """
    cfg = AttackConfig() if cfg is None else cfg
    y = labels.y
    selection = None
    if targets is None:
        selection = _selection_margins(graph, X, labels, cfg)
        targets = select_targets(selection, seed=_seed(cfg.seed, "random"), n_high=cfg.n_high,
                                 n_low=cfg.n_low, n_random=cfg.n_random)
    by_node = {}
    for alg, groups in targets.items():
        for group, nodes in groups.items():
            for v in nodes:
                by_node.setdefault(int(v), {})[alg] = group

    rows = []
    for t in range(cfg.n_eval_trials):
        seed = _seed(cfg.seed, "eval", t)
        clean = predict_all(cfg.algorithms, graph, X, labels, cfg.model, seed)
        for v in sorted(by_node):
            algs = tuple(a for a in cfg.algorithms if a in by_node[v])
            plan = plan_attack(graph, v, y, seed=_seed(cfg.seed, "plan", v, t), budget=cfg.budget)
            plan.validate(graph, y)
            attacked = perturb(graph, plan)
            post = predict_all(algs, attacked, X, labels, cfg.model, seed) if plan.size else clean
            for alg in algs:
                pre_m = float(margins(clean[alg], y, [v])[0])
                post_m = float(margins(post[alg], y, [v])[0])
                rows.append({"target": v, "trial": t, "algorithm": alg, "group": by_node[v][alg],
                             "degree": int(graph.degree[v]), "budget": plan.budget,
                             "pre_margin": pre_m, "post_margin": post_m,
                             "pre_correct": pre_m > 0, "post_correct": post_m > 0})
        logger.info("attack trial %d done", t)
    return AttackReport(rows, summarize(rows), targets, cfg, selection)


def summarize(rows):
    """Accuracy and mean margin without and with the attack, per algorithm."""
    out = {}
    for alg in sorted({r["algorithm"] for r in rows}):
        sub = [r for r in rows if r["algorithm"] == alg]
        pre_acc = float(np.mean([r["pre_correct"] for r in sub]))
        post_acc = float(np.mean([r["post_correct"] for r in sub]))
        out[alg] = {
            "n_targets": len({r["target"] for r in sub}),
            "n_cells": len(sub),
            "no_attack_accuracy": pre_acc,
            "attack_accuracy": post_acc,
            "accuracy_drop": pre_acc - post_acc,
            "no_attack_mean_margin": float(np.mean([r["pre_margin"] for r in sub])),
            "attack_mean_margin": float(np.mean([r["post_margin"] for r in sub])),
        }
    return out


def per_target_margins(rows):
    """Trial-averaged margins per (algorithm, target); the boxplot input."""
    acc = {}
    for r in rows:
        key = (r["algorithm"], r["target"])
        acc.setdefault(key, {"pre": [], "post": []})
        acc[key]["pre"].append(r["pre_margin"])
        acc[key]["post"].append(r["post_margin"])
    return [{"algorithm": a, "target": v, "pre_margin": float(np.mean(m["pre"])),
             "post_margin": float(np.mean(m["post"]))} for (a, v), m in sorted(acc.items())]


REPORT_FIELDS = ["target", "trial", "algorithm", "group", "degree", "budget",
                 "pre_margin", "post_margin", "pre_correct", "post_correct"]


@dataclass(eq=False)
class AttackReport:
    rows: list
    summary: dict
    targets: dict
    config: AttackConfig
    selection: dict = None

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "attack_report.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k])
                            for k in REPORT_FIELDS})
        doc = {"summary": self.summary, "targets": self.targets,
               "config": self.config.to_dict()}
        (directory / "attack_summary.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
        return directory


def read_report_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                "target": int(r["target"]), "trial": int(r["trial"]), "algorithm": r["algorithm"],
                "group": r["group"], "degree": int(r["degree"]), "budget": int(r["budget"]),
                "pre_margin": float(r["pre_margin"]), "post_margin": float(r["post_margin"]),
                "pre_correct": r["pre_correct"] == "True",
                "post_correct": r["post_correct"] == "True",
            })
    return rows
