"""Experiment command line: ``dagad {inject,train,eval,ablation,sweep}``.

Settings resolve as CLI flag > ``--config`` JSON file > built-in default.
Every output file carries the SHA-256 fingerprint of the resolved settings,
and repeat ``i`` of a run uses seed ``base + i``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .detector import TrainConfig, load_checkpoint, predict, save_checkpoint, train
from .errors import BundleError, CheckpointError, ConfigError, NumericalError
from .evaluation import aggregate_runs, metric_report, roc_auc
from .fsutil import atomic_write
from .graph import inject_anomalies, load_bundle, make_split, random_graph, save_bundle
from .losses import LossConfig

log = logging.getLogger("dagad")

DEFAULT_ALPHA_GRID = (1.0, 1.2, 1.4, 1.5, 1.6, 1.8, 2.0)
DEFAULT_BETA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9, 1.1)
METRIC_KEYS = ("precision", "recall", "f1", "auc")
OUTPUT_DIM = 2

# rows in the order of the published ablation table
VARIANTS = (
    ("-AUG-IMB", {"disable_augmentation": True, "disable_classwise": True}),
    ("-IMB", {"disable_augmentation": False, "disable_classwise": True}),
    ("full", {"disable_augmentation": False, "disable_classwise": False}),
)

DEFAULTS = {
    "bundle": None, "out": None, "seed": 0,
    # training
    "encoder": "gcn", "epochs": 200, "lr": 0.005, "alpha": 1.5, "beta": 0.5, "q": 0.7,
    "d": 64, "hidden": 32, "heads": 8, "dropout": 0.0, "weight_decay": 0.0,
    "aggregator": "symmetric", "normalize_features": False,
    "repeat": 10, "no_aug": False, "no_classwise": False,
    "split_seed": None, "resplit": False, "train_fraction": 0.2,
    # eval / ablation / sweep
    "checkpoint": None, "eval_split": "test", "encoders": ["gcn"],
    "alpha_grid": list(DEFAULT_ALPHA_GRID), "beta_grid": list(DEFAULT_BETA_GRID),
    # inject
    "nodes": 1000, "attrs": 50, "edge_prob": 0.01, "communities": 10, "homophily": 0.9,
    "attr_noise": 0.5, "cliques": 10, "clique_size": 5, "attr_anoms": 0, "candidate_pool": 50,
    "name": "synthetic",
}


# ---------------------------------------------------------------------------
# settings and fingerprints

def resolve_settings(args):
    """Merge defaults, the optional JSON config file and explicit flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: top level must be a JSON object")
        unknown = sorted(set(doc) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {unknown}")
        settings.update(doc)
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            settings[key] = value
    if int(settings["repeat"]) < 1:
        raise ConfigError("repeat must be at least 1")
    return settings


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(payload):
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def bundle_digest(path):
    """Content hash over the files of a bundle directory."""
    path = Path(path)
    if not path.is_dir():
        raise BundleError(f"{path} is not a bundle directory")
    h = hashlib.sha256()
    for name in ("meta.json", "edges.tsv", "features.bin", "labels.tsv", "splits.json"):
        f = path / name
        if f.is_file():
            h.update(name.encode() + b"\0" + f.read_bytes())
    return h.hexdigest()


def train_config(settings, **overrides):
    try:
        cfg = TrainConfig(
            encoder_kind=settings["encoder"], d=int(settings["d"]),
            hidden=int(settings["hidden"]), heads=int(settings["heads"]),
            lr=float(settings["lr"]), epochs=int(settings["epochs"]), seed=int(settings["seed"]),
            loss=LossConfig(float(settings["alpha"]), float(settings["beta"]),
                            float(settings["q"])),
            disable_augmentation=bool(settings["no_aug"]),
            disable_classwise=bool(settings["no_classwise"]),
            dropout=float(settings["dropout"]), weight_decay=float(settings["weight_decay"]),
            normalize_features=bool(settings["normalize_features"]),
            aggregator=settings["aggregator"],
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return replace(cfg, **overrides) if overrides else cfg


def _split_payload(settings):
    return {"split_seed": settings["split_seed"], "resplit": bool(settings["resplit"]),
            "train_fraction": float(settings["train_fraction"])}


def experiment_fingerprint(digest, cfg, settings):
    """Identity of a train-style experiment; shared by train and sweep cells."""
    return fingerprint({"bundle": digest, "train": cfg.to_dict(), "output_dim": OUTPUT_DIM,
                        "repeat": int(settings["repeat"]), **_split_payload(settings)})


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path, doc):
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# run execution

_BUNDLE_CACHE = {}


def _prepared_bundle(path, digest, split_seed, train_fraction):
    key = (str(path), digest, split_seed, train_fraction)
    if key not in _BUNDLE_CACHE:
        bundle = load_bundle(path)
        if split_seed is not None:
            bundle = bundle.with_split(make_split(bundle.labels, train_fraction, split_seed))
        elif bundle.split is None:
            raise BundleError(f"{path} has no train/test split; pass --split-seed to draw one")
        _BUNDLE_CACHE.clear()
        _BUNDLE_CACHE[key] = bundle
    return _BUNDLE_CACHE[key]


def _run_job(job):
    """One training run from a plain-dict description (picklable for worker processes)."""
    bundle = _prepared_bundle(job["bundle"], job["digest"], job["split_seed"],
                              job["train_fraction"])
    cfg = TrainConfig.from_dict(job["config"])
    model, report = train(bundle, cfg)
    result = {"fingerprint": job["fingerprint"], "run": job["run"], "seed": cfg.seed,
              "split_seed": job["split_seed"], "metrics": report.metrics,
              "final_loss": report.records[-1]["total"], "wall_clock": report.wall_clock,
              "timestamp": _now()}
    run_dir = job.get("run_dir")
    if run_dir:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, run_dir / "checkpoint.dagad", fingerprint=job["fingerprint"])
        lines = (canonical_json({"fingerprint": job["fingerprint"], "seed": cfg.seed, **rec})
                 for rec in report.records)
        atomic_write(run_dir / "train_log.jsonl", "".join(line + "\n" for line in lines))
        _write_json(run_dir / "metrics.json", result)
    return result


def num_workers(num_jobs):
    raw = os.environ.get("DAGAD_NUM_WORKERS")
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError as exc:
        raise ConfigError(f"DAGAD_NUM_WORKERS must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ConfigError("DAGAD_NUM_WORKERS must be at least 1")
    return max(1, min(cap, num_jobs))


def run_jobs(jobs):
    """Run jobs serially or in worker processes; results come back in job order."""
    workers = num_workers(len(jobs))
    if workers == 1:
        return [_run_job(j) for j in jobs]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(_run_job, jobs))


def _jobs_for(settings, digest, cfg, fp, out_dir=None):
    base_split = settings["split_seed"]
    if settings["resplit"] and base_split is None:
        base_split = int(settings["seed"])
    jobs = []
    for i in range(int(settings["repeat"])):
        split_seed = base_split + i if settings["resplit"] else base_split
        jobs.append({
            "bundle": str(Path(settings["bundle"]).resolve()), "digest": digest,
            "split_seed": split_seed, "train_fraction": float(settings["train_fraction"]),
            "config": replace(cfg, seed=cfg.seed + i).to_dict(), "fingerprint": fp, "run": i,
            "run_dir": str(Path(out_dir) / f"run_{i}") if out_dir else None,
        })
    return jobs


def _summary(results):
    return aggregate_runs([r["metrics"] for r in results], METRIC_KEYS)


def _require(settings, *keys):
    for key in keys:
        if settings.get(key) is None:
            raise ConfigError(f"--{key.replace('_', '-')} is required")


# ---------------------------------------------------------------------------
# commands

def cmd_inject(settings):
    _require(settings, "out")
    try:
        if settings["bundle"]:
            source = load_bundle(settings["bundle"])
            graph, origin = source.graph, {"source": bundle_digest(settings["bundle"])}
        else:
            graph = random_graph(int(settings["nodes"]), int(settings["attrs"]),
                                 float(settings["edge_prob"]), seed=int(settings["seed"]),
                                 communities=int(settings["communities"]),
                                 homophily=float(settings["homophily"]),
                                 attr_noise=float(settings["attr_noise"]))
            origin = {k: settings[k] for k in ("nodes", "attrs", "edge_prob", "communities",
                                               "homophily", "attr_noise")}
        bundle = inject_anomalies(graph, int(settings["clique_size"]), int(settings["cliques"]),
                                  int(settings["attr_anoms"]), int(settings["candidate_pool"]),
                                  seed=int(settings["seed"]), name=settings["name"])
    except BundleError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    split_seed = settings["split_seed"]
    split_seed = int(settings["seed"]) if split_seed is None else int(split_seed)
    bundle = bundle.with_split(make_split(bundle.labels, float(settings["train_fraction"]),
                                          split_seed))
    fp = fingerprint({"command": "inject", "graph": origin, "seed": int(settings["seed"]),
                      "split_seed": split_seed, "train_fraction": float(settings["train_fraction"]),
                      **{k: settings[k] for k in ("cliques", "clique_size", "attr_anoms",
                                                  "candidate_pool", "name")}})
    save_bundle(bundle, settings["out"], fingerprint=fp)
    print(f"wrote {settings['out']}: {graph.num_nodes} nodes, {bundle.graph.num_edges} edges, "
          f"{bundle.labels.num_anomalies} anomalies (fingerprint {fp[:12]})")
    return 0


def cmd_train(settings):
    _require(settings, "bundle", "out")
    digest = bundle_digest(settings["bundle"])
    cfg = train_config(settings)
    fp = experiment_fingerprint(digest, cfg, settings)
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    results = run_jobs(_jobs_for(settings, digest, cfg, fp, out_dir=out))
    summary = _summary(results)
    doc = {"fingerprint": fp, "config": cfg.to_dict(), "output_dim": OUTPUT_DIM,
           "repeat": len(results), "seeds": [r["seed"] for r in results],
           "split": _split_payload(settings), "summary": summary,
           "runs": [{k: r[k] for k in ("run", "seed", "split_seed", "metrics", "final_loss")}
                    for r in results],
           "timestamp": _now()}
    _write_json(out / "aggregate.json", doc)
    print(_format_summary(f"DAGAD-{cfg.encoder_kind.upper()}", summary, len(results)))
    return 0


def cmd_eval(settings):
    _require(settings, "bundle", "checkpoint", "out")
    bundle = load_bundle(settings["bundle"])
    if settings["split_seed"] is not None:
        bundle = bundle.with_split(make_split(bundle.labels, float(settings["train_fraction"]),
                                              int(settings["split_seed"])))
    model = load_checkpoint(settings["checkpoint"], expect_attrs=bundle.graph.num_attrs)
    which = settings["eval_split"]
    if which == "all":
        ids = np.arange(bundle.graph.num_nodes)
    elif bundle.split is None:
        raise BundleError(f"{settings['bundle']} has no split; use --split all or --split-seed")
    else:
        ids = np.asarray(bundle.split.train_ids if which == "train" else bundle.split.test_ids)
    ids = ids[bundle.labels.observed_mask[ids]]
    pred, scores = predict(model, bundle)
    truth = bundle.labels.labels[ids]
    report = metric_report(pred[ids], scores[ids], truth)
    ckpt_digest = hashlib.sha256(Path(settings["checkpoint"]).read_bytes()).hexdigest()
    fp = fingerprint({"command": "eval", "bundle": bundle_digest(settings["bundle"]),
                      "checkpoint": ckpt_digest, "split": which,
                      "split_seed": settings["split_seed"]})
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", {"fingerprint": fp, "split": which, "metrics": report})
    if report["auc"] is not None:
        curve, auc = roc_auc(scores[ids], truth)
        atomic_write(out / "roc.csv", curve.to_csv(fingerprint=fp))
        atomic_write(out / "roc.svg", curve.to_svg(auc, title="ROC", fingerprint=fp))
    else:
        log.warning("evaluation set has a single class; ROC files not written")
    auc_txt = "n/a" if report["auc"] is None else f"{report['auc']:.4f}"
    print(f"{which}: precision={report['precision']:.4f} recall={report['recall']:.4f} "
          f"f1={report['f1']:.4f} auc={auc_txt}")
    return 0


def cmd_ablation(settings):
    _require(settings, "bundle", "out")
    digest = bundle_digest(settings["bundle"])
    encoders = list(dict.fromkeys(settings["encoders"]))
    base = train_config(settings)
    fp = fingerprint({"command": "ablation", "bundle": digest, "encoders": encoders,
                      "train": replace(base, encoder_kind="gcn").to_dict(),
                      "repeat": int(settings["repeat"]), **_split_payload(settings)})
    plan = []
    for enc in encoders:
        for variant, flags in VARIANTS:
            cfg = replace(base, encoder_kind=enc, **flags)
            plan.append((enc, variant, _jobs_for(settings, digest, cfg, fp)))
    results = run_jobs([j for *_, jobs in plan for j in jobs])
    rows, pos = [], 0
    for enc, variant, jobs in plan:
        chunk = results[pos:pos + len(jobs)]
        pos += len(jobs)
        name = f"DAGAD-{enc.upper()}" + ("" if variant == "full" else variant)
        rows.append({"encoder": enc, "variant": variant, "name": name,
                     "seeds": [r["seed"] for r in chunk], "summary": _summary(chunk),
                     "f1_runs": [r["metrics"]["f1"] for r in chunk]})
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "ablation.json", {"fingerprint": fp, "rows": rows, "timestamp": _now()})
    atomic_write(out / "ablation.tsv", _table(rows, fp, ("name",)))
    for row in rows:
        print(_format_summary(row["name"], row["summary"], len(row["seeds"])))
    return 0


def cmd_sweep(settings):
    _require(settings, "bundle", "out")
    alphas, betas = list(settings["alpha_grid"]), list(settings["beta_grid"])
    if not alphas or not betas:
        raise ConfigError("sweep grids must be nonempty")
    digest = bundle_digest(settings["bundle"])
    base = train_config(settings)
    fp = fingerprint({"command": "sweep", "bundle": digest, "train": base.to_dict(),
                      "alpha_grid": alphas, "beta_grid": betas,
                      "repeat": int(settings["repeat"]), **_split_payload(settings)})
    plan = []
    for a in alphas:
        for b in betas:
            try:
                cfg = replace(base, loss=replace(base.loss, alpha=float(a), beta=float(b)))
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            cell_fp = experiment_fingerprint(digest, cfg, settings)
            plan.append((float(a), float(b), cell_fp, _jobs_for(settings, digest, cfg, cell_fp)))
    results = run_jobs([j for *_, jobs in plan for j in jobs])
    cells, pos = [], 0
    for a, b, cell_fp, jobs in plan:
        chunk = results[pos:pos + len(jobs)]
        pos += len(jobs)
        cells.append({"alpha": a, "beta": b, "fingerprint": cell_fp,
                      "seeds": [r["seed"] for r in chunk], "summary": _summary(chunk),
                      "wall_clock": sum(r["wall_clock"] for r in chunk), "timestamp": _now()})
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "sweep.json", {"fingerprint": fp, "cells": cells})
    atomic_write(out / "sweep.csv", _table(cells, fp, ("alpha", "beta")))
    best = max(cells, key=lambda c: c["summary"]["f1"]["mean"])
    print(f"{len(cells)} cells; best f1={best['summary']['f1']['mean']:.4f} at "
          f"alpha={best['alpha']}, beta={best['beta']}")
    return 0


def _table(rows, fp, key_cols):
    buf = io.StringIO()
    buf.write(f"# fingerprint={fp}\n")
    w = csv.writer(buf, delimiter="," if "alpha" in key_cols else "\t", lineterminator="\n")
    stats = [f"{m}_{s}" for m in METRIC_KEYS for s in ("mean", "std")]
    w.writerow(list(key_cols) + stats + ["runs"])
    for row in rows:
        vals = []
        for m in METRIC_KEYS:
            entry = row["summary"][m]
            vals += [_fmt(entry["mean"]), _fmt(entry["std"])]
        w.writerow([row[k] for k in key_cols] + vals + [len(row["seeds"])])
    return buf.getvalue()


def _fmt(x):
    return "" if x is None else repr(float(x))


def _format_summary(name, summary, runs):
    parts = []
    for m in METRIC_KEYS:
        e = summary[m]
        parts.append(f"{m}=n/a" if e["mean"] is None else f"{m}={e['mean']:.4f}±{e['std']:.4f}")
    return f"{name:<20} " + " ".join(parts) + f" ({runs} runs)"


COMMANDS = {"inject": cmd_inject, "train": cmd_train, "eval": cmd_eval,
            "ablation": cmd_ablation, "sweep": cmd_sweep}


# ---------------------------------------------------------------------------
# argument parsing

def _float_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("grid must be nonempty")
    return vals


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--bundle", help="bundle directory")
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--seed", type=int, help="base seed (repeat i uses seed + i)")
    shared.add_argument("--config", help="JSON file with default settings")
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int)
    training.add_argument("--lr", type=float)
    training.add_argument("--alpha", type=float)
    training.add_argument("--beta", type=float)
    training.add_argument("--q", type=float)
    training.add_argument("--dim", dest="d", type=int, help="encoder width (default 64)")
    training.add_argument("--hidden", type=int, help="MLP hidden width (default 32)")
    training.add_argument("--heads", type=int, help="GAT heads (default 8)")
    training.add_argument("--repeat", type=int, help="runs per setting (default 10)")
    training.add_argument("--no-aug", action="store_true", default=None)
    training.add_argument("--no-classwise", action="store_true", default=None)
    training.add_argument("--split-seed", type=int, help="draw a fresh stratified split")
    training.add_argument("--resplit", action="store_true", default=None,
                          help="draw a new split for every repeat (split seed + i)")
    training.add_argument("--train-fraction", type=float)

    p = argparse.ArgumentParser(prog="dagad", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    inj = sub.add_parser("inject", parents=[shared], help="generate a bundle with injected anomalies")
    inj.add_argument("--nodes", type=int)
    inj.add_argument("--attrs", type=int)
    inj.add_argument("--edge-prob", type=float)
    inj.add_argument("--communities", type=int)
    inj.add_argument("--homophily", type=float)
    inj.add_argument("--attr-noise", type=float)
    inj.add_argument("--cliques", type=int)
    inj.add_argument("--clique-size", type=int)
    inj.add_argument("--attr-anoms", type=int)
    inj.add_argument("--candidate-pool", type=int)
    inj.add_argument("--name")
    inj.add_argument("--split-seed", type=int)
    inj.add_argument("--train-fraction", type=float)

    tr = sub.add_parser("train", parents=[shared, training], help="train and save runs")
    tr.add_argument("--encoder", choices=("gcn", "gat"))

    ev = sub.add_parser("eval", parents=[shared], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", dest="eval_split", choices=("train", "test", "all"))
    ev.add_argument("--split-seed", type=int)
    ev.add_argument("--train-fraction", type=float)

    ab = sub.add_parser("ablation", parents=[shared, training], help="full vs ablated variants")
    ab.add_argument("--encoder", dest="encoders", nargs="+", choices=("gcn", "gat"))

    sw = sub.add_parser("sweep", parents=[shared, training], help="alpha/beta sensitivity grid")
    sw.add_argument("--encoder", choices=("gcn", "gat"))
    sw.add_argument("--alpha-grid", type=_float_list)
    sw.add_argument("--beta-grid", type=_float_list)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"dagad: error: {exc}", file=sys.stderr)
        return 2
    except (BundleError, CheckpointError, OSError) as exc:
        print(f"dagad: data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"dagad: numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
