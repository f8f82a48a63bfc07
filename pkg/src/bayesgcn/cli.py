"""Experiment driver: ``convert``, ``train``, ``attack`` and ``report``.

Run as ``python -m bayesgcn <verb> ...``. Every verb takes the flags below
or a JSON config (``--config``); flags override the file, and ``--set
section.key=value`` reaches any nested field. Exit codes: 0 success,
1 invalid input or config, 2 failure during the run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import __version__, attack, ensemble, gcn, mmsbm
from .graph import Dataset, DatasetFormatError, Graph, LabelSet, load_dataset, make_split, save_dataset

logger = logging.getLogger(__name__)

TASKS = ("train_gcnn", "train_bayesian", "mmsbm_fit", "attack", "report")
TASK_ALIASES = {"gcnn": "train_gcnn", "bayesian": "train_bayesian", "mmsbm": "mmsbm_fit"}
REP_STREAM = 20


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    per_class: int = 20
    mode: str = "fixed"
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = None
    task: str = "train_gcnn"
    output: str = "runs"
    split: SplitSpec = field(default_factory=SplitSpec)
    repetitions: int = 10
    seed: int = 0
    jobs: int = 1
    gcnn: gcn.GcnnConfig = field(default_factory=gcn.GcnnConfig)
    mmsbm: mmsbm.MmsbmHyper = field(default_factory=mmsbm.MmsbmHyper)
    ensemble: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)
    runs: tuple = ()

    def to_dict(self):
        d = asdict(self)
        d["runs"] = list(self.runs)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            for name, typ in (("split", SplitSpec), ("gcnn", gcn.GcnnConfig),
                              ("mmsbm", mmsbm.MmsbmHyper)):
                if isinstance(d.get(name), dict):
                    d[name] = typ(**d[name])
            if "runs" in d:
                d["runs"] = tuple(d["runs"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def identity(self):
        """The fields that define the experiment. Output and report paths and
        the worker count do not change results and are left out."""
        d = self.to_dict()
        for k in ("output", "runs", "jobs"):
            d.pop(k)
        return d

    def digest(self):
        """SHA-256 of the canonical JSON form; insensitive to key order."""
        return config_hash(self.identity())

    def ensemble_config(self, seed=None):
        opts = dict(self.ensemble)
        try:
            return ensemble.EnsembleConfig(gcnn=self.gcnn, mmsbm=self.mmsbm,
                                           seed=self.seed if seed is None else seed, **opts)
        except TypeError as exc:
            raise ConfigError(f"invalid ensemble options: {exc}") from exc

    def attack_config(self):
        opts = dict(self.attack)
        try:
            return attack.AttackConfig(model=self.ensemble_config(), seed=self.seed, **opts)
        except TypeError as exc:
            raise ConfigError(f"invalid attack options: {exc}") from exc

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.task == "report":
            if not self.runs:
                raise ConfigError("report needs at least one run path")
            for p in self.runs:
                if not Path(p).exists():
                    raise ConfigError(f"run path {p} does not exist")
            return self
        if not self.dataset:
            raise ConfigError(f"task {self.task} needs a dataset path")
        path = Path(self.dataset)
        if not (path / "manifest.json").exists() and not (path.is_file() and path.suffix == ".json"):
            raise ConfigError(f"dataset container {self.dataset} not found (no manifest.json)")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.split.per_class < 1:
            raise ConfigError("split.per_class must be at least 1")
        if self.split.mode not in ("fixed", "random"):
            raise ConfigError(f"unknown split mode {self.split.mode!r}")
        self.ensemble_config()
        if self.task == "attack":
            self.attack_config()
        return self


def config_hash(d):
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def version_string():
    """Package version plus the short commit id when run from a checkout."""
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5, check=True).stdout.strip()
        return f"{__version__}+g{sha}" if sha else __version__
    except (OSError, subprocess.SubprocessError):
        return __version__


@dataclass
class RunRecord:
    config_hash: str
    version: str
    seeds: list
    metrics: dict
    timestamps: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _write_json(path, doc):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def repetition_seed(master, r):
    return int(np.random.SeedSequence(master, spawn_key=(REP_STREAM, r))
               .generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _prepare(cfg):
    ds = load_dataset(cfg.dataset)
    labels = make_split(ds.labels, cfg.split.per_class, cfg.split.mode, cfg.split.seed)
    return ds, labels


def community_agreement(z, y):
    """Fraction of labeled nodes matched under the best community-to-class map."""
    known = y >= 0
    z, y = z[known], y[known]
    if len(y) == 0:
        return float("nan")
    k = max(z.max(), y.max()) + 1
    table = np.zeros((k, k))
    np.add.at(table, (z, y), 1)
    r, c = linear_sum_assignment(-table)
    return float(table[r, c].sum() / len(y))


def _one_repetition(cfg, r, out_dir):
    ds, labels = _prepare(cfg)
    seed = repetition_seed(cfg.seed, r)
    ecfg = cfg.ensemble_config(seed)
    started = _now()
    t0 = time.perf_counter()
    metrics = {}
    if cfg.task == "train_gcnn":
        w, Z = ensemble.train_base(ds.graph, ds.features, labels, ecfg)
        metrics["accuracy"] = gcn.accuracy(Z, labels)
        metrics["train_accuracy"] = gcn.accuracy(Z, labels, labels.train_mask)
    elif cfg.task == "train_bayesian":
        pred = ensemble.run(ds.graph, ds.features, labels, ecfg)
        metrics["accuracy"] = gcn.accuracy(pred.mean, labels)
        metrics["baseline_accuracy"] = gcn.accuracy(pred.base_softmax, labels)
        metrics["mean_sampled_edges"] = float(np.mean(pred.info["sampled_edges"]))
    elif cfg.task == "mmsbm_fit":
        _, Z = ensemble.train_base(ds.graph, ds.features, labels, ecfg)
        init = mmsbm.init_from_softmax(Z, ds.graph, cfg.mmsbm)
        iters = ecfg.n_mmsbm_iters * ecfg.n_graphs
        trace = mmsbm.Trace(every=max(1, iters // 50), seed=seed)
        p = mmsbm.map_inference(ds.graph, init, iters, cfg.mmsbm,
                                seed=ensemble.stream_int(seed, "mmsbm", 0), trace=trace)
        bp = mmsbm.to_block_params(p)
        metrics["log_joint_estimate"] = trace.rows[-1][1] if trace.rows else float("nan")
        metrics["community_agreement"] = community_agreement(bp.pi.argmax(axis=1), labels.y)
        metrics["init_agreement"] = community_agreement(Z.argmax(axis=1), labels.y)
        mmsbm.save_params(p, out_dir / f"mmsbm_{r:03d}.json", cfg.mmsbm)
        trace.write_csv(out_dir / f"mmsbm_trace_{r:03d}.csv")
    else:
        raise ConfigError(f"task {cfg.task} is not a training task")
    elapsed = time.perf_counter() - t0
    rec = RunRecord(cfg.digest(), version_string(), [int(cfg.seed), r, seed], metrics,
                    {"started": started, "finished": _now(), "wall_clock_s": elapsed})
    _write_json(out_dir / f"run_{r:03d}.json", rec.to_dict())
    return rec


def _summary(cfg, records):
    """Aggregate metrics; no timestamps or timings, so equal inputs give
    byte-identical files."""
    names = sorted(records[0].metrics)
    metrics = {}
    for name in names:
        vals = [rec.metrics[name] for rec in records]
        metrics[name] = {"mean": float(np.mean(vals)), "sd": float(np.std(vals)), "values": vals}
    return {
        "task": cfg.task,
        "config_hash": cfg.digest(),
        "config": cfg.identity(),
        "version": records[0].version,
        "repetitions": len(records),
        "seeds": [rec.seeds for rec in records],
        "metrics": metrics,
    }


def cmd_train(cfg):
    """Run ``cfg.repetitions`` repetitions of a training task; returns the
    summary document (also written to ``summary.json``)."""
    cfg.validate()
    load_dataset(cfg.dataset)
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    reps = range(cfg.repetitions)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(_one_repetition, [cfg] * len(reps), reps, [out_dir] * len(reps)))
    else:
        records = [_one_repetition(cfg, r, out_dir) for r in reps]
    summary = _summary(cfg, records)
    _write_json(out_dir / "summary.json", summary)
    _write_json(out_dir / "config.json", cfg.to_dict())
    return summary


def cmd_attack(cfg):
    cfg = replace(cfg, task="attack").validate()
    ds, labels = _prepare(cfg)
    started = _now()
    report = attack.run_attack_experiment(ds.graph, ds.features, labels, cfg.attack_config())
    out_dir = report.write(cfg.output)
    rec = RunRecord(cfg.digest(), version_string(), [int(cfg.seed)], report.summary,
                    {"started": started, "finished": _now()})
    _write_json(out_dir / "record.json", rec.to_dict())
    _write_json(out_dir / "config.json", cfg.to_dict())
    return report


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _collect(paths):
    summaries, attack_rows, attack_summaries = [], [], []
    for p in paths:
        p = Path(p)
        files = sorted(p.iterdir()) if p.is_dir() else [p]
        for f in files:
            if f.name == "summary.json":
                summaries.append(json.loads(f.read_text(encoding="utf-8")))
            elif f.name == "attack_report.csv":
                attack_rows.extend(attack.read_report_csv(f))
            elif f.name == "attack_summary.json":
                attack_summaries.append(json.loads(f.read_text(encoding="utf-8")))
    return summaries, attack_rows, attack_summaries


def accuracy_table(summaries):
    """``{(method, per_class): [accuracies]}`` from training summaries."""
    cells = {}
    for s in summaries:
        per_class = s["config"]["split"]["per_class"]
        m = s["metrics"]
        if s["task"] == "train_gcnn":
            cells.setdefault(("GCNN", per_class), []).extend(m["accuracy"]["values"])
        elif s["task"] == "train_bayesian":
            cells.setdefault(("Bayesian GCNN", per_class), []).extend(m["accuracy"]["values"])
            cells.setdefault(("GCNN (paired)", per_class), []).extend(m["baseline_accuracy"]["values"])
    return cells


def quartiles(values):
    v = np.asarray(values, dtype=np.float64)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), (float(x) for x in q)))


def cmd_report(cfg):
    """Format accuracy and attack tables plus boxplot data; inputs are read
    only, outputs go to ``cfg.output``."""
    cfg = replace(cfg, task="report").validate()
    summaries, rows, _ = _collect(cfg.runs)
    if not summaries and not rows:
        raise ConfigError("no summary.json or attack_report.csv found under the run paths")
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []

    cells = accuracy_table(summaries)
    if cells:
        methods = sorted({m for m, _ in cells})
        labels_per_class = sorted({k for _, k in cells})
        lines.append("| method | " + " | ".join(f"{k} labels/class" for k in labels_per_class) + " |")
        lines.append("|---" * (len(labels_per_class) + 1) + "|")
        with open(out_dir / "accuracy_table.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "per_class", "n", "mean", "sd"])
            for m in methods:
                row = []
                for k in labels_per_class:
                    vals = cells.get((m, k))
                    if vals is None:
                        row.append("")
                        continue
                    mean, sd = 100 * float(np.mean(vals)), 100 * float(np.std(vals))
                    row.append(f"{mean:.1f} ± {sd:.1f}")
                    w.writerow([m, k, len(vals), repr(mean), repr(sd)])
                lines.append(f"| {m} | " + " | ".join(row) + " |")
        lines.append("")

    if rows:
        summary = attack.summarize(rows)
        lines.append("| algorithm | no attack acc | attack acc | no attack margin | attack margin |")
        lines.append("|---|---|---|---|---|")
        for alg, s in sorted(summary.items()):
            lines.append(f"| {alg} | {100 * s['no_attack_accuracy']:.2f}% | "
                         f"{100 * s['attack_accuracy']:.2f}% | {s['no_attack_mean_margin']:.3f} | "
                         f"{s['attack_mean_margin']:.3f} |")
        lines.append("")
        per_target = attack.per_target_margins(rows)
        with open(out_dir / "per_target_margins.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["algorithm", "target", "pre_margin", "post_margin"])
            for r in per_target:
                w.writerow([r["algorithm"], r["target"], repr(r["pre_margin"]), repr(r["post_margin"])])
        with open(out_dir / "margin_boxplot.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["algorithm", "phase", "n", "min", "q1", "median", "q3", "max"])
            for alg in sorted({r["algorithm"] for r in per_target}):
                for phase in ("pre", "post"):
                    vals = [r[f"{phase}_margin"] for r in per_target if r["algorithm"] == alg]
                    q = quartiles(vals)
                    w.writerow([alg, phase, len(vals)] + [repr(q[k]) for k in
                                                          ("min", "q1", "median", "q3", "max")])
    text = "\n".join(lines)
    (out_dir / "tables.md").write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------------------
# convert
# ---------------------------------------------------------------------------


def _read_raw_csv(path, min_fields):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetFormatError(f"{path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < min_fields:
                raise DatasetFormatError(f"{path}:{lineno}: expected at least {min_fields} fields, "
                                         f"got {len(row)}")
            yield lineno, header, row


def _read_linqs(raw):
    content = sorted(raw.glob("*.content"))
    cites = sorted(raw.glob("*.cites"))
    if len(content) != 1 or len(cites) != 1:
        raise DatasetFormatError(f"{raw}: expected one .content and one .cites file")
    ids, feats, classes = [], [], []
    width = None
    with open(content[0], encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if width is None:
                width = len(parts)
            if len(parts) != width:
                raise DatasetFormatError(f"{content[0]}:{lineno}: expected {width} fields, got {len(parts)}")
            try:
                feats.append([float(v) for v in parts[1:-1]])
            except ValueError:
                raise DatasetFormatError(f"{content[0]}:{lineno}: non-numeric feature value") from None
            ids.append(parts[0])
            classes.append(parts[-1])
    pairs = []
    with open(cites[0], encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetFormatError(f"{cites[0]}:{lineno}: expected 2 fields, got {len(parts)}")
            pairs.append((lineno, parts[0], parts[1]))
    return ids, np.asarray(feats), classes, None, pairs, str(cites[0])


def _read_raw_tables(raw):
    ids, feats = [], []
    for lineno, _, row in _read_raw_csv(raw / "features.csv", 1):
        try:
            feats.append([float(v) for v in row[1:]])
        except ValueError:
            raise DatasetFormatError(f"{raw / 'features.csv'}:{lineno}: non-numeric feature value") from None
        ids.append(row[0].strip())
    widths = {len(f) for f in feats}
    if len(widths) > 1:
        raise DatasetFormatError(f"{raw / 'features.csv'}: rows have differing widths {sorted(widths)}")
    classes = {}
    roles = {}
    for lineno, header, row in _read_raw_csv(raw / "labels.csv", 2):
        classes[row[0].strip()] = (lineno, row[1].strip())
        if len(row) > 2:
            roles[row[0].strip()] = row[2].strip()
    label_list = [classes.get(i, (None, ""))[1] for i in ids]
    for node_id, (lineno, _) in classes.items():
        if node_id not in set(ids):
            raise DatasetFormatError(f"{raw / 'labels.csv'}:{lineno}: unknown node {node_id!r}")
    pairs = [(lineno, row[0].strip(), row[1].strip())
             for lineno, _, row in _read_raw_csv(raw / "edges.csv", 2)]
    role_list = [roles.get(i) for i in ids] if roles else None
    return ids, np.asarray(feats), label_list, role_list, pairs, str(raw / "edges.csv")


def cmd_convert(raw_dir, out_dir, name=None, test_size=1000, expect_nodes=None, expect_edges=None):
    """Convert a raw dataset into the container format and re-validate it.

    Two raw layouts are read. ``edges.csv`` (two id columns),
    ``features.csv`` (id then feature columns) and ``labels.csv`` (id, class
    name, optional role), each with a header row; or a LINQS-style
    ``*.content`` / ``*.cites`` pair. Node ids may be arbitrary strings; they
    are numbered in feature-file order. Without explicit roles the last
    ``test_size`` labeled nodes become the test set. Edges naming unknown
    nodes are dropped with a warning.
    """
    raw = Path(raw_dir)
    if not raw.is_dir():
        raise ConfigError(f"raw dataset directory {raw} not found")
    if list(raw.glob("*.content")):
        ids, X, classes, roles, pairs, edge_file = _read_linqs(raw)
    elif (raw / "features.csv").exists():
        ids, X, classes, roles, pairs, edge_file = _read_raw_tables(raw)
    else:
        raise ConfigError(f"{raw}: no features.csv or *.content file")
    index = {v: i for i, v in enumerate(ids)}
    if len(index) != len(ids):
        raise DatasetFormatError(f"{raw}: duplicate node ids in the feature file")
    rows, dropped = [], 0
    for lineno, a, b in pairs:
        if a not in index or b not in index:
            dropped += 1
            continue
        rows.append((index[a], index[b]))
    if dropped:
        logger.warning("%s: dropped %d edge rows naming unknown nodes", edge_file, dropped)
    edge_rows = np.asarray(rows, dtype=np.int64).reshape(-1, 2)

    names = sorted({c for c in classes if c})
    cmap = {c: k for k, c in enumerate(names)}
    n = len(ids)
    y = np.array([cmap[c] if c else -1 for c in classes], dtype=np.int64)
    labeled = np.flatnonzero(y >= 0)
    test = np.zeros(n, dtype=bool)
    pool = np.zeros(n, dtype=bool)
    if roles is not None:
        for i, r in enumerate(roles):
            r = r or ("train_pool" if y[i] >= 0 else "unlabeled")
            if r not in ("train_pool", "test", "unlabeled"):
                raise DatasetFormatError(f"{raw}: node {ids[i]!r} has unknown role {r!r}")
            test[i] = r == "test"
            pool[i] = r == "train_pool"
    else:
        cut = max(len(labeled) - int(test_size), 0)
        pool[labeled[:cut]] = True
        test[labeled[cut:]] = True
    labels = LabelSet(y, len(names), np.zeros(n, dtype=bool), test, pool, labeled)
    graph = Graph.from_edges(n, edge_rows)
    ds = Dataset(graph, X, labels, name=name or raw.name, n_edge_rows=len(edge_rows))
    manifest = save_dataset(ds, out_dir, edge_rows=edge_rows)
    back = load_dataset(manifest, normalize_features=False)
    doc = json.loads(Path(manifest).read_text(encoding="utf-8"))
    if back.graph.n_nodes != doc["n_nodes"] or back.n_edge_rows != doc["n_edges"]:
        raise DatasetFormatError(f"{manifest}: round-trip counts disagree with the manifest")
    for label, want, got in (("nodes", expect_nodes, doc["n_nodes"]), ("edges", expect_edges, doc["n_edges"])):
        if want is not None and int(want) != got:
            raise DatasetFormatError(f"{manifest}: expected {want} {label}, converted {got}")
    doc["class_names"] = names
    doc["unique_undirected_edges"] = back.graph.n_edges
    _write_json(manifest, doc)
    return doc


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(d, assignments):
    for item in assignments or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.split(".")
        target = d
        for p in parts[:-1]:
            target = target.setdefault(p, {})
            if not isinstance(target, dict):
                raise ConfigError(f"--set {key}: {p} is not a section")
        target[parts[-1]] = _parse_value(value)
    return d


def build_config(args, task):
    d = {}
    if getattr(args, "config", None):
        try:
            d = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    for k in ("split", "gcnn", "mmsbm", "ensemble", "attack"):
        d.setdefault(k, {})
        d[k] = dict(d[k]) if not isinstance(d[k], dict) else d[k]
    if task is not None:
        d["task"] = TASK_ALIASES.get(task, task)
    for flag, key in (("dataset", "dataset"), ("output", "output"), ("repetitions", "repetitions"),
                      ("seed", "seed"), ("jobs", "jobs")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    for flag, key in (("per_class", "per_class"), ("split_mode", "mode"), ("split_seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            d["split"][key] = v
    if getattr(args, "runs", None):
        d["runs"] = args.runs
    _apply_overrides(d, getattr(args, "set", None))
    return ExperimentConfig.from_dict(d)


def _common(p, dataset=True):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    if dataset:
        p.add_argument("--dataset", help="container directory or manifest")
        p.add_argument("--per-class", type=int, dest="per_class")
        p.add_argument("--split-mode", choices=("fixed", "random"), dest="split_mode")
        p.add_argument("--split-seed", type=int, dest="split_seed")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--jobs", type=int)
    p.add_argument("--output", help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a nested field, e.g. gcnn.epochs=100")


def make_parser():
    parser = argparse.ArgumentParser(prog="python -m bayesgcn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("convert", help="raw dataset -> container")
    p.add_argument("raw", help="raw dataset directory")
    p.add_argument("output", help="container directory to write")
    p.add_argument("--name")
    p.add_argument("--test-size", type=int, default=1000, dest="test_size")
    p.add_argument("--expect-nodes", type=int, dest="expect_nodes")
    p.add_argument("--expect-edges", type=int, dest="expect_edges")

    p = sub.add_parser("train", help="repeated GCNN / Bayesian GCNN / MMSBM runs")
    _common(p)
    p.add_argument("--task", default=None,
                   help="train_gcnn (gcnn), train_bayesian (bayesian) or mmsbm_fit (mmsbm)")
    p.add_argument("--repetitions", type=int)

    p = sub.add_parser("attack", help="random node-attack experiment")
    _common(p)

    p = sub.add_parser("report", help="tables and boxplot data from run directories")
    _common(p, dataset=False)
    p.add_argument("runs", nargs="+", help="run directories or files")
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "convert":
            doc = cmd_convert(args.raw, args.output, args.name, args.test_size,
                              args.expect_nodes, args.expect_edges)
            print(f"{doc['name']}: {doc['n_nodes']} nodes, {doc['n_edges']} edge rows, "
                  f"{doc['n_classes']} classes, {doc['feature_dim']} features")
            return 0
        if args.verb == "train":
            cfg = build_config(args, args.task or None)
            if cfg.task not in ("train_gcnn", "train_bayesian", "mmsbm_fit"):
                raise ConfigError(f"train does not run task {cfg.task!r}")
            cfg.validate()
            summary = cmd_train(cfg)
            for name, m in summary["metrics"].items():
                print(f"{name}: {m['mean']:.4f} ± {m['sd']:.4f} (n={len(m['values'])})")
            return 0
        if args.verb == "attack":
            report = cmd_attack(build_config(args, "attack"))
            print(json.dumps(report.summary, indent=2, sort_keys=True))
            return 0
        if args.verb == "report":
            print(cmd_report(build_config(args, "report")))
            return 0
    except (ConfigError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("run failed", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 1
