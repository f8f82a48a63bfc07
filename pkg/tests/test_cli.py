import json
import statistics

import numpy as np
import pytest

from bayesgcn import cli
from bayesgcn import graph as G


@pytest.fixture(scope="module")
def container(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "synth"
    ds = G.synthetic_dataset(n_per_class=30, n_classes=3, feature_dim=40, p_in=0.12, p_out=0.01, seed=2)
    G.save_dataset(ds, d)
    return d


def config(container, out, **kw):
    d = {"dataset": str(container), "output": str(out), "repetitions": 2, "seed": 3,
         "split": {"per_class": 4}, "gcnn": {"epochs": 15},
         "ensemble": {"n_graphs": 1, "n_dropout_samples": 2, "n_mmsbm_iters": 5}}
    d.update(kw)
    return cli.ExperimentConfig.from_dict(d)


# --- config --------------------------------------------------------------------


def test_hash_ignores_key_order():
    a = {"x": 1, "y": {"b": 2, "a": [1, 2]}}
    b = {"y": {"a": [1, 2], "b": 2}, "x": 1}
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.config_hash(a) != cli.config_hash({"x": 2, "y": {"b": 2, "a": [1, 2]}})


def test_digest_ignores_output_and_jobs(container, tmp_path):
    a = config(container, tmp_path / "a")
    b = config(container, tmp_path / "b", jobs=4)
    assert a.digest() == b.digest()
    assert a.digest() != config(container, tmp_path / "a", seed=4).digest()


def test_config_roundtrip_and_unknown_field(container, tmp_path):
    cfg = config(container, tmp_path)
    assert cli.ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(cli.ConfigError, match="unknown config fields"):
        cli.ExperimentConfig.from_dict({"datset": "x"})


def test_validate_errors(container, tmp_path):
    with pytest.raises(cli.ConfigError, match="not found"):
        config(tmp_path / "missing", tmp_path).validate()
    with pytest.raises(cli.ConfigError, match="repetitions"):
        config(container, tmp_path, repetitions=0).validate()
    with pytest.raises(cli.ConfigError, match="unknown task"):
        config(container, tmp_path, task="fit").validate()
    with pytest.raises(cli.ConfigError, match="ensemble"):
        config(container, tmp_path, ensemble={"n_grafs": 2}).validate()


def test_overrides():
    d = cli._apply_overrides({"gcnn": {}}, ["gcnn.epochs=100", "mmsbm.delta=0.001", "dataset=x"])
    assert d == {"gcnn": {"epochs": 100}, "mmsbm": {"delta": 0.001}, "dataset": "x"}
    with pytest.raises(cli.ConfigError):
        cli._apply_overrides({}, ["noequals"])


# --- train ---------------------------------------------------------------------


def test_train_deterministic(container, tmp_path):
    s1 = cli.cmd_train(config(container, tmp_path / "a"))
    s2 = cli.cmd_train(config(container, tmp_path / "b"))
    assert s1 == s2
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    runs = [json.loads((tmp_path / "a" / f"run_{r:03d}.json").read_text()) for r in range(2)]
    vals = [r["metrics"]["accuracy"] for r in runs]
    assert s1["metrics"]["accuracy"]["mean"] == pytest.approx(np.mean(vals), abs=1e-15)
    assert s1["metrics"]["accuracy"]["values"] == vals
    assert all(r["config_hash"] == s1["config_hash"] for r in runs)
    assert runs[0]["seeds"] != runs[1]["seeds"]


def test_train_bayesian_and_mmsbm(container, tmp_path):
    s = cli.cmd_train(config(container, tmp_path / "b", task="train_bayesian", repetitions=1))
    assert {"accuracy", "baseline_accuracy", "mean_sampled_edges"} <= set(s["metrics"])
    s = cli.cmd_train(config(container, tmp_path / "m", task="mmsbm_fit", repetitions=1))
    assert 0 <= s["metrics"]["community_agreement"]["mean"] <= 1
    assert (tmp_path / "m" / "mmsbm_000.json").exists()
    assert (tmp_path / "m" / "mmsbm_trace_000.csv").exists()


def test_community_agreement():
    z = np.array([1, 1, 0, 0, 2])
    y = np.array([0, 0, 1, 1, -1])
    assert cli.community_agreement(z, y) == 1.0
    assert cli.community_agreement(np.array([0, 0, 0, 0]), np.array([0, 1, 0, 1])) == 0.5


# --- report --------------------------------------------------------------------


def test_report_single_cell(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    summary = {"task": "train_gcnn", "config": {"split": {"per_class": 20}},
               "metrics": {"accuracy": {"values": [0.8, 0.82]}}}
    (run / "summary.json").write_text(json.dumps(summary))
    cfg = cli.ExperimentConfig(task="report", output=str(tmp_path / "rep"), runs=(str(run),))
    text = cli.cmd_report(cfg)
    assert "| GCNN | 81.0 ± 1.0 |" in text
    assert text == cli.cmd_report(cfg)


@pytest.mark.parametrize("seed", range(5))
def test_quartiles_oracle(seed):
    v = list(np.random.default_rng(seed).normal(size=int(np.random.default_rng(seed).integers(2, 40))))
    q = cli.quartiles(v)
    q1, med, q3 = statistics.quantiles(v, n=4, method="inclusive")
    assert q["q1"] == pytest.approx(q1, abs=1e-12)
    assert q["median"] == pytest.approx(med, abs=1e-12)
    assert q["q3"] == pytest.approx(q3, abs=1e-12)
    assert (q["min"], q["max"]) == (min(v), max(v))


def test_report_attack_rows(tmp_path):
    run = tmp_path / "att"
    run.mkdir()
    lines = ["target,trial,algorithm,group,degree,budget,pre_margin,post_margin,pre_correct,post_correct"]
    for t in range(2):
        lines.append(f"1,{t},gcnn,high,3,5,0.5,-0.1,True,False")
        lines.append(f"2,{t},gcnn,low,2,4,0.1,0.05,True,True")
    (run / "attack_report.csv").write_text("\n".join(lines) + "\n")
    out = tmp_path / "rep"
    text = cli.cmd_report(cli.ExperimentConfig(task="report", output=str(out), runs=(str(run),)))
    assert "| gcnn | 100.00% | 50.00% |" in text
    box = (out / "margin_boxplot.csv").read_text().splitlines()
    assert box[0] == "algorithm,phase,n,min,q1,median,q3,max"
    assert box[1].startswith("gcnn,pre,2,0.1,")


def test_report_requires_inputs(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.cmd_report(cli.ExperimentConfig(task="report", output=str(tmp_path), runs=(str(tmp_path),)))


# --- convert ---------------------------------------------------------------------


def write_raw(d, edges="a,b\nn1,n2\nn2,n3\nn3,n1\n"):
    d.mkdir()
    (d / "features.csv").write_text("id,f0,f1\nn1,1,0\nn2,0,1\nn3,1,1\nn4,0,0\n")
    (d / "labels.csv").write_text("id,class\nn1,red\nn2,blue\nn3,red\nn4,blue\n")
    (d / "edges.csv").write_text(edges)
    return d


def test_convert_roundtrip(tmp_path):
    raw = write_raw(tmp_path / "raw")
    doc = cli.cmd_convert(raw, tmp_path / "out", test_size=2, expect_nodes=4, expect_edges=3)
    assert doc["class_names"] == ["blue", "red"]
    ds = G.load_dataset(tmp_path / "out", normalize_features=False)
    assert ds.graph.edges.tolist() == [[0, 1], [0, 2], [1, 2]]
    assert ds.labels.y.tolist() == [1, 0, 1, 0]
    assert ds.labels.test_mask.tolist() == [False, False, True, True]
    assert ds.features.toarray().tolist() == [[1, 0], [0, 1], [1, 1], [0, 0]]


def test_convert_count_mismatch(tmp_path):
    raw = write_raw(tmp_path / "raw")
    with pytest.raises(G.DatasetFormatError, match="expected 5 edges, converted 3"):
        cli.cmd_convert(raw, tmp_path / "out", expect_edges=5)


def test_convert_malformed_line(tmp_path):
    raw = write_raw(tmp_path / "raw", edges="a,b\nn1,n2\nn3\n")
    with pytest.raises(G.DatasetFormatError, match=r"edges.csv:3"):
        cli.cmd_convert(raw, tmp_path / "out")


def test_convert_linqs(tmp_path):
    raw = tmp_path / "linqs"
    raw.mkdir()
    (raw / "toy.content").write_text("p1\t1\t0\tA\np2\t0\t1\tB\np3\t1\t1\tA\n")
    (raw / "toy.cites").write_text("p1\tp2\np3\tp2\np9\tp1\n")
    doc = cli.cmd_convert(raw, tmp_path / "out", test_size=1)
    assert doc["n_nodes"] == 3 and doc["n_edges"] == 2


# --- entry point -----------------------------------------------------------------


def test_main_exit_codes(container, tmp_path, capsys):
    assert cli.main(["train", "--dataset", str(tmp_path / "nope")]) == 1
    assert "error:" in capsys.readouterr().err
    assert cli.main(["train", "--dataset", str(container), "--output", str(tmp_path / "o"),
                     "--repetitions", "1", "--per-class", "4", "--set", "gcnn.epochs=5"]) == 0
    assert "accuracy:" in capsys.readouterr().out
    # diverging training is a runtime failure
    with np.errstate(all="ignore"):
        code = cli.main(["train", "--dataset", str(container), "--output", str(tmp_path / "d"),
                         "--repetitions", "1", "--per-class", "4", "--set", "gcnn.epochs=30",
                         "--set", "gcnn.optimizer=\"sgd\"", "--set", "gcnn.learning_rate=1e200",
                         "--set", "gcnn.dropout_rate=0.0"])
    assert code == 2
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])
