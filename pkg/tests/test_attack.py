import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayesgcn import attack as A
from bayesgcn import ensemble as E
from bayesgcn import gcn
from bayesgcn import graph as G
from bayesgcn import mmsbm as M
from conftest import random_graph


# --- margins ------------------------------------------------------------------


def test_margin_examples():
    assert A.classification_margin([0.7, 0.2, 0.1], 0) == pytest.approx(0.5, abs=1e-15)
    assert A.classification_margin([0.2, 0.7, 0.1], 0) == pytest.approx(-0.5, abs=1e-15)
    assert A.classification_margin([0.5, 0.5], 1) == 0.0
    assert not A.MarginRecord.from_scores(3, [0.5, 0.5], 0).correct


def test_margins_vectorized(rng):
    Z = rng.dirichlet(np.ones(4), 30)
    y = rng.integers(0, 4, 30)
    nodes = np.arange(0, 30, 3)
    want = [A.classification_margin(Z[v], y[v]) for v in nodes]
    assert np.allclose(A.margins(Z, y, nodes), want, atol=1e-15)


# --- budget and plans ---------------------------------------------------------


@pytest.mark.parametrize("degree,expect", [(4, (3, 3)), (0, (0, 2)), (1, (1, 2)), (5, (3, 4))])
def test_budget_split(degree, expect):
    assert A.budget_split(degree) == expect
    assert sum(A.budget_split(degree)) == degree + 2


def test_budget_split_override():
    assert A.budget_split(4, 0) == (0, 0)
    assert A.budget_split(2, 9) == (2, 7)


def labelled_graph(n, k, p, seed):
    rng = np.random.default_rng(seed)
    return random_graph(n, p, rng), rng.integers(0, k, n)


def test_degree_four_plan():
    g = G.Graph.from_edges(12, [[0, 1], [0, 2], [0, 3], [0, 4], [5, 6]])
    y = np.array([0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 0, 0])
    plan = A.plan_attack(g, 0, y, seed=1)
    assert len(plan.removals) == 3 and len(plan.additions) == 3
    plan.validate(g, y)
    h = A.perturb(g, plan)
    assert h.degree[0] == 4
    others = h.neighbors(0)
    assert np.all(y[np.setdiff1d(others, g.neighbors(0))] != 0)


def test_empty_plan_returns_graph():
    g, y = labelled_graph(20, 3, 0.2, 0)
    plan = A.plan_attack(g, 4, y, budget=0)
    assert plan.size == 0
    assert A.perturb(g, plan) == g


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(15, 40))
def test_perturb_invariants(seed, n):
    g, y = labelled_graph(n, 3, 0.2, seed)
    v = int(np.random.default_rng(seed).integers(0, n))
    try:
        plan = A.plan_attack(g, v, y, seed=seed)
    except A.AttackError:
        return
    plan.validate(g, y)
    h = A.perturb(g, plan)
    assert plan.size == g.degree[v] + 2
    before = {tuple(e) for e in g.edges.tolist()}
    after = {tuple(e) for e in h.edges.tolist()}
    changed = before ^ after
    assert all(v in e for e in changed)
    assert len(changed) == plan.size
    assert {tuple(e) for e in plan.removals.tolist()} == before - after
    assert {tuple(e) for e in plan.additions.tolist()} == after - before
    assert all(y[a if b == v else b] != y[v] for a, b in plan.additions)


def test_plan_too_few_candidates():
    g = G.Graph.from_edges(3, [[0, 1]])
    with pytest.raises(A.AttackError, match="1 cross-label candidates, need 3"):
        A.plan_attack(g, 0, np.array([0, 1, 1]), budget=4)


def test_validate_rejects_bad_plan():
    g = G.Graph.from_edges(4, [[0, 1]])
    y = np.array([0, 0, 1, 1])
    with pytest.raises(A.AttackError):
        A.AttackPlan(0, [[0, 2]], [], 1).validate(g, y)
    with pytest.raises(A.AttackError):
        A.AttackPlan(0, [], [[0, 1]], 1).validate(g, y)
    with pytest.raises(A.AttackError):
        A.AttackPlan(0, [[0, 1]], [[0, 2]], 3).validate(g, y)


# --- select_targets -------------------------------------------------------------


def records_from(m):
    return [A.MarginRecord(i, 0, (), float(v)) for i, v in enumerate(m)]


def test_select_targets_sort_oracle():
    rng = np.random.default_rng(0)
    m = {"gcnn": rng.uniform(-1, 1, 200), "bayesian": rng.uniform(-1, 1, 200)}
    sel = A.select_targets({k: records_from(v) for k, v in m.items()}, seed=3)
    extremes = set()
    for alg, v in m.items():
        pos = [i for i in np.argsort(-v) if v[i] > 0]
        assert sel[alg]["high"] == [int(i) for i in pos[:10]]
        assert sel[alg]["low"] == [int(i) for i in pos[::-1][:10]]
        extremes |= set(pos[:10]) | set(pos[::-1][:10])
    rand = sel["gcnn"]["random"]
    assert rand == sel["bayesian"]["random"] and len(set(rand)) == 20
    assert all(m["gcnn"][i] > 0 and m["bayesian"][i] > 0 and i not in extremes for i in rand)
    assert sel == A.select_targets({k: records_from(v) for k, v in m.items()}, seed=3)
    assert sel != A.select_targets({k: records_from(v) for k, v in m.items()}, seed=4)


def test_select_targets_too_few():
    with pytest.raises(A.AttackError, match="gcnn: 30 correctly classified candidates, need 40"):
        A.select_targets({"gcnn": records_from(np.linspace(0.1, 1, 30))})
    # correct sets 0..59 and 40..99 share 20 nodes, some of them extremes
    idx = np.arange(100)
    gc = np.where(idx < 60, 1.0 + idx, -1.0)
    bay = np.where(idx >= 40, 1.0 + idx, -1.0)
    with pytest.raises(A.AttackError, match=r"\d+ shared correctly classified nodes .* need 20"):
        A.select_targets({"gcnn": records_from(gc), "bayesian": records_from(bay)})


# --- experiment -----------------------------------------------------------------


def attack_cfg(**kw):
    model = E.EnsembleConfig(n_graphs=1, n_dropout_samples=2, n_mmsbm_iters=5,
                             gcnn=gcn.GcnnConfig(epochs=15), mmsbm=M.MmsbmHyper(delta=1e-3))
    base = dict(model=model, n_select_trials=1, n_eval_trials=2, n_high=2, n_low=2, n_random=2, seed=5)
    base.update(kw)
    return A.AttackConfig(**base)


def test_zero_budget_matches_clean(small_dataset):
    ds, X, labels = small_dataset
    rep = A.run_attack_experiment(ds.graph, X, labels, attack_cfg(budget=0))
    for r in rep.rows:
        assert r["pre_margin"] == r["post_margin"]
        assert r["budget"] == 0
    for s in rep.summary.values():
        assert s["accuracy_drop"] == 0.0


def test_attack_deterministic_and_roundtrip(small_dataset, tmp_path):
    ds, X, labels = small_dataset
    cfg = attack_cfg()
    a = A.run_attack_experiment(ds.graph, X, labels, cfg)
    b = A.run_attack_experiment(ds.graph, X, labels, cfg)
    assert a.rows == b.rows and a.summary == b.summary
    assert all(s["n_targets"] == 6 for s in a.summary.values())
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    for name in ("attack_report.csv", "attack_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert A.read_report_csv(tmp_path / "a" / "attack_report.csv") == a.rows
    assert A.AttackConfig.from_dict(cfg.to_dict()) == cfg


def test_summary_oracle():
    rows = [
        {"target": 1, "algorithm": "gcnn", "pre_margin": 0.4, "post_margin": -0.2,
         "pre_correct": True, "post_correct": False},
        {"target": 2, "algorithm": "gcnn", "pre_margin": 0.6, "post_margin": 0.2,
         "pre_correct": True, "post_correct": True},
    ]
    s = A.summarize(rows)["gcnn"]
    assert s["no_attack_accuracy"] == 1.0 and s["attack_accuracy"] == 0.5
    assert s["accuracy_drop"] == 0.5
    assert s["no_attack_mean_margin"] == pytest.approx(0.5)
    assert s["attack_mean_margin"] == pytest.approx(0.0)
    assert A.per_target_margins(rows)[0] == {"algorithm": "gcnn", "target": 1,
                                             "pre_margin": 0.4, "post_margin": -0.2}


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        A.AttackConfig(algorithms=("gat",))
