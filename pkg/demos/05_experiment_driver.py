# %% [markdown]
# # The experiment driver
#
# `python -m bayesgcn` exposes four verbs: `convert`, `train`, `attack` and
# `report`. The same functions are importable, which is what we use here.
# Raw datasets come in as three CSV files or a LINQS `.content`/`.cites`
# pair and leave as a validated container directory. Without a role
# column the last `test_size` labeled nodes in file order become the test
# set, so the file order should not follow the classes.

# %%
import tempfile
from pathlib import Path

import numpy as np

from bayesgcn import cli

work = Path(tempfile.mkdtemp())
raw = work / "raw"
raw.mkdir()
rng = np.random.default_rng(0)
n, k = 90, 3
y = rng.permutation(np.repeat(np.arange(k), n // k))
words = (rng.random((n, 30)) < 0.05) | (np.arange(30)[None, :] // 10 == y[:, None]) & (rng.random((n, 30)) < 0.12)
edges = [(a, b) for a in range(n) for b in range(a + 1, n)
         if rng.random() < (0.15 if y[a] == y[b] else 0.03)]
(raw / "features.csv").write_text("id," + ",".join(f"w{j}" for j in range(30)) + "\n" + "".join(
    f"doc{i}," + ",".join(str(int(v)) for v in words[i]) + "\n" for i in range(n)))
(raw / "labels.csv").write_text("id,class\n" + "".join(f"doc{i},topic{y[i]}\n" for i in range(n)))
(raw / "edges.csv").write_text("src,dst\n" + "".join(f"doc{a},doc{b}\n" for a, b in edges))

doc = cli.cmd_convert(raw, work / "toy", test_size=30)
print({key: doc[key] for key in ("n_nodes", "n_edges", "n_classes", "feature_dim")})

# %% [markdown]
# A training run is one `ExperimentConfig`. Each repetition gets its own
# seed derived from the master seed and writes `run_XXX.json`; the summary
# carries the config hash so results can be matched to settings.

# %%
cfg = cli.ExperimentConfig.from_dict({
    "dataset": str(work / "toy"), "task": "train_bayesian", "output": str(work / "runs"),
    "split": {"per_class": 3}, "repetitions": 3, "seed": 0,
    "ensemble": {"n_graphs": 3, "n_dropout_samples": 3, "n_mmsbm_iters": 50}})
summary = cli.cmd_train(cfg)
print("config hash", summary["config_hash"][:12])
for name, m in summary["metrics"].items():
    print(f"{name:20s} {m['mean']:.3f} +- {m['sd']:.3f}")

# %% [markdown]
# `report` turns run directories into a markdown table (plus CSVs).

# %%
print(cli.cmd_report(cli.ExperimentConfig(task="report", output=str(work / "report"),
                                          runs=(str(work / "runs"),))))
