"""Command-line entry point.

Subcommands: ``train``, ``evaluate``, ``ablate``, ``sweep-layers``,
``sweep-intents``, ``synth-check`` and ``stats``.  Settings resolve as
defaults < ``--config`` JSON file < flags.  Every run writes ``run.json``
to ``--out``; tables are CSV and logs line-JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from . import __version__
from .data import load_dataset, split_interactions, validate_stats
from .errors import ConfigError, MIDGNError
from .graph import num_threads
from .metrics import evaluate
from .model import ModelConfig, build_graphs, full_forward
from .params import load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_synthetic, intent_alignment, save_synthetic
from .training import fit

logger = logging.getLogger("midgn")

COMMANDS = ("train", "evaluate", "ablate", "sweep-layers", "sweep-intents", "synth-check", "stats")
ABLATIONS = {"contrast": "no_contrast", "local": "no_local", "global": "no_global"}
LAYER_GRID = (1, 2, 3, 4)
INTENT_GRID = (1, 2, 4, 8)
TABLE_FIELDS = ["dataset", "config", "seed", "k", "metric", "value"]

# flag dest -> ModelConfig field
FLAG_FIELDS = {
    "seed": "seed",
    "intents": "k",
    "layers": "layers",
    "routing_iters": "routing_iters",
    "lr": "lr",
    "lam": "l2",
    "tau": "tau",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "dim": "d",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="midgn", description="Multi-view intent disentangling for bundle recommendation.")
    parser.add_argument("--version", action="version", version=f"midgn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--dataset", help="directory with user_bundle.txt, bundle_item.txt, user_item.txt; "
                                         "'synth' generates planted-intent data")
        p.add_argument("--config", help="JSON file with model keys and optional 'dataset' / 'synth' sections")
        p.add_argument("--out", help="output directory (default runs/<command>)")
        p.add_argument("--seed", type=int)
        p.add_argument("--intents", type=int, help="K")
        p.add_argument("--layers", type=int, help="L")
        p.add_argument("--routing-iters", type=int, help="T")
        p.add_argument("--dim", type=int, help="embedding size d")
        p.add_argument("--lr", type=float)
        p.add_argument("--lambda", dest="lam", type=float, help="L2 coefficient")
        p.add_argument("--tau", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--ablate", choices=sorted(ABLATIONS), help="drop one component")
        p.add_argument("--seeds", help="comma-separated seeds for ablate / sweeps (default: --seed)")
        p.add_argument("--jobs", type=int, default=1, help="run sweep configurations in N processes")
        p.add_argument("--checkpoint", help="checkpoint for evaluate (default <out>/best.npz)")
        p.add_argument("--checkpoint-every", type=int, default=0)
        p.add_argument("--synth-seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve(args):
    """Merge defaults, config file and flags into ``(ModelConfig, settings)``."""
    file_cfg = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    file_cfg = dict(file_cfg)
    dataset = file_cfg.pop("dataset", None)
    synth = file_cfg.pop("synth", {})
    values = ModelConfig().to_dict()
    values.update(file_cfg)
    for flag, key in FLAG_FIELDS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    if args.ablate:
        values[ABLATIONS[args.ablate]] = True
    cfg = ModelConfig.from_dict(values)
    if args.dataset is not None:
        dataset = args.dataset
    synth = dict(synth)
    if args.synth_seed is not None:
        synth["seed"] = args.synth_seed
    SynthConfig(**synth)  # validate early
    seeds = [cfg.seed] if not args.seeds else [int(s) for s in args.seeds.split(",") if s.strip()]
    out = args.out or os.path.join("runs", args.command)
    return cfg, {"dataset": dataset, "synth": synth, "seeds": seeds, "out": out}


def get_dataset(settings, command):
    path = settings["dataset"]
    if command == "synth-check" or path == "synth":
        ds, truth = generate_synthetic(SynthConfig(**settings["synth"]))
        return ds, truth
    if not path:
        raise ConfigError("--dataset is required")
    if not os.path.isdir(path):
        raise ConfigError(f"dataset directory not found: {path}")
    return load_dataset(path), None


def write_run_json(out, command, cfg, settings, extra=None):
    os.makedirs(out, exist_ok=True)
    record = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "dataset": settings["dataset"],
        "synth": asdict(SynthConfig(**settings["synth"])) if settings["synth"] or command == "synth-check" else None,
        "seeds": {"seed": cfg.seed, "split_seed": cfg.split_seed, "seeds": settings["seeds"]},
        "threads": num_threads(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "argv": sys.argv[1:],
    }
    record.update(extra or {})
    with open(os.path.join(out, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return record


def write_table(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def table_rows(report, dataset, label, seed):
    return [dict(row, seed=seed) for row in report.csv_rows(dataset, label)]


def mean_rows(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["config"], r["k"], r["metric"]), []).append(r["value"])
    return [{"dataset": d, "config": c, "seed": "mean", "k": k, "metric": m, "value": math.fsum(v) / len(v)}
            for (d, c, k, m), v in groups.items()]


def _fit_job(job):
    """One training run in a (possibly separate) process."""
    settings, values, label, seed, out = job
    cfg = ModelConfig.from_dict(values)
    ds, _ = get_dataset(settings, "train")
    res = fit(ds, cfg, out_dir=out)
    return label, seed, res.test, res.best_epoch


def cmd_train(cfg, settings):
    out = settings["out"]
    ds, _ = get_dataset(settings, "train")
    write_run_json(out, "train", cfg, settings)
    res = fit(ds, cfg, out_dir=out, checkpoint_every=settings.get("checkpoint_every", 0))
    if res.best_val is None:
        # no validation pairs: the last state is the selected one
        save_checkpoint(res.store, os.path.join(out, "best.npz"), cfg.to_dict(), extra={"epoch": res.best_epoch})
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(res.test.to_json(indent=2))
    write_table(os.path.join(out, "metrics.csv"), table_rows(res.test, ds.name, cfg.variant, cfg.seed))
    return {"best_epoch": res.best_epoch, "test": res.test.to_dict()}


def cmd_evaluate(cfg, settings, checkpoint):
    out = settings["out"]
    checkpoint = checkpoint or os.path.join(out, "best.npz")
    if not os.path.isfile(checkpoint):
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    store, meta = load_checkpoint(checkpoint)
    if meta.get("config"):
        cfg = ModelConfig.from_dict(meta["config"])
    ds, _ = get_dataset(settings, "evaluate")
    split = split_interactions(ds.user_bundle, cfg.split_ratios, cfg.split_seed)
    graphs = build_graphs(ds, split)
    report = evaluate(full_forward(store, graphs, cfg, keep_tape=False), split, cfg.ks)
    write_run_json(out, "evaluate", cfg, settings, {"checkpoint": os.path.abspath(checkpoint)})
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json(indent=2, include_lists=True))
    write_table(os.path.join(out, "metrics.csv"), table_rows(report, ds.name, cfg.variant, cfg.seed))
    return {"test": report.to_dict()}


def _grid(cfg, command):
    base = cfg.to_dict()
    for f in ABLATIONS.values():
        base[f] = False
    if command == "ablate":
        yield "MIDGN", dict(base)
        for f in ("no_contrast", "no_global", "no_local"):
            yield ModelConfig.from_dict(dict(base, **{f: True})).variant, dict(base, **{f: True})
    elif command == "sweep-layers":
        for L in LAYER_GRID:
            yield f"L={L}", dict(cfg.to_dict(), layers=L)
    else:
        for K in INTENT_GRID:
            yield f"K={K}", dict(cfg.to_dict(), k=K)


def cmd_grid(cfg, settings, command, jobs):
    out = settings["out"]
    ds, _ = get_dataset(settings, command)
    write_run_json(out, command, cfg, settings)
    runs = []
    for label, values in _grid(cfg, command):
        for seed in settings["seeds"]:
            v = dict(values, seed=seed)
            ModelConfig.from_dict(v)  # fail before any training starts
            sub = os.path.join(out, label.replace("/", "").replace(" ", "_").replace(".", "") + f"_seed{seed}")
            runs.append((settings, v, label, seed, sub))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_fit_job, runs))
    else:
        results = [_fit_job(r) for r in runs]
    rows = []
    for label, seed, report, _ in results:
        rows.extend(table_rows(report, ds.name, label, seed))
    summary = mean_rows(rows)
    write_table(os.path.join(out, "results.csv"), rows + summary)
    with open(os.path.join(out, "summary.jsonl"), "w", encoding="utf-8") as fh:
        for r in summary:
            fh.write(json.dumps(r) + "\n")
    return {"rows": summary}


def cmd_synth_check(cfg, settings):
    out = settings["out"]
    ds, truth = get_dataset(settings, "synth-check")
    write_run_json(out, "synth-check", cfg, settings)
    save_synthetic(ds, truth, os.path.join(out, "data"))
    res = fit(ds, cfg, out_dir=out)
    fwd = full_forward(res.store, res.graphs, cfg, keep_tape=False, record_confidences=True)
    result = {
        "alignment": intent_alignment(fwd.user_confidences[-1], truth.ui_labels),
        "alignment_local": intent_alignment(fwd.bundle_confidences[-1], truth.bi_labels),
        "uniform_baseline": 1.0 / SynthConfig(**settings["synth"]).true_intents,
        "test": res.test.to_dict(),
    }
    with open(os.path.join(out, "synth_report.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2)
    return result


def cmd_stats(cfg, settings):
    ds, _ = get_dataset(settings, "stats")
    report = validate_stats(ds.user_bundle, ds.bundle_item, ds.user_item, ds.name)
    write_run_json(settings["out"], "stats", cfg, settings)
    with open(os.path.join(settings["out"], "stats.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    return json.loads(report.to_json())


def run_experiment(argv=None):
    """Parse ``argv`` and run one command; returns the result summary dict."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg, settings = resolve(args)
    settings["checkpoint_every"] = args.checkpoint_every
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    if args.command == "train":
        return cmd_train(cfg, settings)
    if args.command == "evaluate":
        return cmd_evaluate(cfg, settings, args.checkpoint)
    if args.command in ("ablate", "sweep-layers", "sweep-intents"):
        return cmd_grid(cfg, settings, args.command, args.jobs)
    if args.command == "synth-check":
        return cmd_synth_check(cfg, settings)
    return cmd_stats(cfg, settings)


def main(argv=None):
    try:
        result = run_experiment(argv)
    except (MIDGNError, ValueError, IndexError, OSError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, OSError)) else 1
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
