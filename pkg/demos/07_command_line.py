"""
Driving experiments from the command line
=========================================

The ``midgn`` command wraps training, evaluation, ablations and sweeps.  The
same calls are made here through ``midgn.cli.main``; from a shell they read
``midgn train --dataset DIR --out runs/x ...``.
"""

import csv
import json
import os
import tempfile

from midgn import SynthConfig, generate_synthetic, save_synthetic
from midgn.cli import main

work = tempfile.mkdtemp()
data = os.path.join(work, "data")
ds, truth = generate_synthetic(SynthConfig(n_users=80, n_bundles=60, items_per_intent=20, seed=4))
save_synthetic(ds, truth, data)

fast = ["--dim", "16", "--intents", "4", "--layers", "2", "--epochs", "3", "--batch-size", "256", "--lr", "0.01"]
main(["train", "--dataset", data, "--out", os.path.join(work, "train"), *fast])
print(sorted(os.listdir(os.path.join(work, "train"))))
print(json.load(open(os.path.join(work, "train", "run.json")))["config"]["k"])

main(["evaluate", "--dataset", data, "--out", os.path.join(work, "eval"),
      "--checkpoint", os.path.join(work, "train", "best.npz")])

main(["ablate", "--dataset", data, "--out", os.path.join(work, "ablate"), *fast])
with open(os.path.join(work, "ablate", "results.csv")) as fh:
    for row in csv.DictReader(fh):
        if row["seed"] == "mean" and row["k"] == "20" and row["metric"] == "recall":
            print(f'{row["config"]:<12} Recall@20 {float(row["value"]):.4f}')

# errors come back as a nonzero status and one JSON line on stderr
status = main(["train", "--dataset", os.path.join(work, "missing")])
print("exit status", status)
