"""``tro-opt`` command line: gen-data, topology, train, sweep, eval."""
from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import data as data_mod
from .centrality import TopologicalPrior
from .config import apply_overrides, canonical_json, load_config_file, write_manifest
from .errors import ConfigError, FormatError, TroError
from .model import load_checkpoint, save_checkpoint
from .pipeline import (
    build_prior,
    load_dataset,
    needs_prior,
    report_for,
    resolve_config,
    run_experiment,
    set_dotted,
)
from .topology import load_physical_topology

log = logging.getLogger("tro_opt")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def setup_logging():
    name = os.environ.get("TRO_OPT_LOG", "info").strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"TRO_OPT_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(
        level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True
    )


# -- shared helpers ------------------------------------------------------------------


def _resolve(args):
    """Config dict from --config/--set/--seed, plus the manifest's inputs if rerunning one."""
    cfg, manifest = ({}, None)
    if args.config:
        cfg, manifest = load_config_file(args.config)
    cfg = apply_overrides(copy.deepcopy(cfg), args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    inputs = dict(manifest.get("inputs", {})) if manifest else {}
    for key in ("data", "prior", "model"):
        val = getattr(args, key, None)
        if val is not None:
            inputs[key] = str(val)
    inputs = {k: v for k, v in inputs.items() if v is not None}
    return resolve_config(cfg), inputs


def _out_dir(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create output directory {out}: {exc}") from None
    return out


def _stamp(cfg):
    return f"seed={cfg['seed']} config={canonical_json(cfg)}"


def _dataset(cfg, inputs):
    """``(dataset, physical_graph)`` from --data if given, else from the config."""
    if "data" not in inputs:
        return load_dataset(cfg)
    d = Path(inputs["data"])
    ds = data_mod.read_dataset_dir(d)
    graph = None
    topo = d / "topology.json"
    if topo.exists():
        graph = load_physical_topology(topo, len(ds.groups), names=ds.names())
    elif cfg["topology"].get("physical_path"):
        graph = load_physical_topology(cfg["topology"]["physical_path"], len(ds.groups), names=ds.names())
    return ds, graph


def _load_prior(path, train_ds):
    try:
        prior = TopologicalPrior.load(path)
    except FileNotFoundError:
        raise ConfigError(f"prior file not found: {path}") from None
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"{path}: bad prior file: {exc}") from None
    names = train_ds.names(train_ds.train_ids)
    if prior.group_names and list(prior.group_names) != names:
        raise ConfigError(f"prior covers groups {list(prior.group_names)}, training groups are {names}")
    if len(prior.prior) != len(names):
        raise ConfigError(f"prior has {len(prior.prior)} entries for {len(names)} training groups")
    return prior


def _write_run(out, res, cfg):
    """Checkpoint, history CSV, report CSV/JSON for one finished run."""
    stamp = _stamp(cfg)
    save_checkpoint(res.model, out / "model.json", extra={"config": cfg, "seed": cfg["seed"]})
    gids = res.state.extras.get("group_ids", (0,))
    res.state.history.to_csv(out / "history.csv", group_ids=gids, comment=stamp)
    res.report.to_json(out / "report.json")
    res.report.to_csv(out / "report.csv")
    return ["model.json", "history.csv", "report.json", "report.csv"]


# -- commands ------------------------------------------------------------------------


def cmd_gen_data(args):
    cfg, inputs = _resolve(args)
    if "generator" not in cfg["dataset"]:
        raise ConfigError("gen-data needs dataset.generator in the config")
    out = _out_dir(args)
    ds, graph = load_dataset(cfg)
    stamp = _stamp(cfg)
    files = data_mod.write_dataset_dir(ds, out, comment=stamp)
    doc = graph.to_dict()
    doc["config"] = cfg
    (out / "topology.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    (out / "topology.dot").write_text(graph.to_dot(header_comment=stamp))
    files += ["topology.json", "topology.dot"]
    inputs["dataset_hash"] = ds.content_hash()
    write_manifest(out, "gen-data", cfg, inputs, files)
    log.info("wrote %d groups (%d rows) to %s", len(ds.groups), sum(g.n for g in ds.groups), out)
    return 0


def cmd_topology(args):
    cfg, inputs = _resolve(args)
    out = _out_dir(args)
    ds, physical = _dataset(cfg, inputs)
    train_ds, _, _ = data_mod.split_groups(ds, val_fraction=cfg["eval"]["val_fraction"], seed=cfg["seed"])
    pr = build_prior(cfg, train_ds, physical, ds.test_ids)
    stamp = _stamp(cfg)
    doc = pr.graph.to_dict()
    doc["config"] = cfg
    (out / "topology.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    (out / "topology.dot").write_text(pr.graph.to_dot(header_comment=stamp))
    pr.prior.save(out / "prior.json", extra={"config": cfg, "seed": cfg["seed"]})
    write_manifest(out, "topology", cfg, inputs, ["topology.json", "topology.dot", "prior.json"])
    log.info("%s prior over %d training groups: %s", pr.prior.mode, len(pr.prior.prior), np.round(pr.prior.prior, 4))
    return 0


def cmd_train(args):
    cfg, inputs = _resolve(args)
    out = _out_dir(args)
    ds, physical = _dataset(cfg, inputs)
    prior = None
    if needs_prior(cfg):
        if "prior" not in inputs:
            raise ConfigError(f"method {cfg['method']['name']!r} needs --prior (run the topology command first)")
        train_ds, _, _ = data_mod.split_groups(ds, val_fraction=cfg["eval"]["val_fraction"], seed=cfg["seed"])
        prior = _load_prior(inputs["prior"], train_ds)
    elif "prior" in inputs:
        log.warning("method %r does not use a prior; ignoring %s", cfg["method"]["name"], inputs["prior"])
        inputs.pop("prior")
    res = run_experiment(cfg, dataset=ds, physical_graph=physical, prior=prior)
    files = _write_run(out, res, cfg)
    write_manifest(out, "train", cfg, inputs, files)
    log.info("test %s: %.6g", res.report.metric, res.report.overall)
    return 0


def _sweep_cell(job):
    idx, cfg, ds, physical, prior, out = job
    res = run_experiment(cfg, dataset=ds, physical_graph=physical, prior=prior)
    cell_dir = Path(out) / f"cell_{idx:03d}"
    cell_dir.mkdir(exist_ok=True)
    _write_run(cell_dir, res, cfg)
    return idx, res.val_score, res.report.overall, res.report.metric


def sweep_cells(cfg):
    grid = cfg["sweep"]["grid"] or {}
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid is empty")
    seeds = cfg["sweep"]["seeds"] or [cfg["seed"]]
    keys = sorted(grid)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        for seed in seeds:
            c = copy.deepcopy(cfg)
            c["seed"] = int(seed)
            for k, v in zip(keys, values):
                set_dotted(c, k, v)
            cells.append((dict(zip(keys, values)), resolve_config(c)))
    return keys, cells


def cmd_sweep(args):
    cfg, inputs = _resolve(args)
    out = _out_dir(args)
    ds, physical = _dataset(cfg, inputs)
    prior = None
    if "prior" in inputs:
        train_ds, _, _ = data_mod.split_groups(ds, val_fraction=cfg["eval"]["val_fraction"], seed=cfg["seed"])
        prior = _load_prior(inputs["prior"], train_ds)
    keys, cells = sweep_cells(cfg)
    jobs = [(i, c, ds, physical, prior, str(out)) for i, (_, c) in enumerate(cells)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    results.sort()
    metric = results[0][3]
    rows = []
    for (point, c), (idx, val, test, _) in zip(cells, results):
        rows.append({"cell": f"cell_{idx:03d}", "seed": c["seed"], **point, f"val_{metric}": val, f"test_{metric}": test})
    with (out / "summary.csv").open("w", newline="") as fh:
        fh.write(f"# {_stamp(cfg)}\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    best = select_best(rows, keys, metric)
    (out / "best.json").write_text(json.dumps({**best, "config": cfg}, indent=1, sort_keys=True) + "\n")
    files = ["summary.csv", "best.json"] + [f"{r['cell']}/report.json" for r in rows] + [f"{r['cell']}/history.csv" for r in rows]
    write_manifest(out, "sweep", cfg, inputs, files)
    log.info("best by validation: %s (val %.4g, test %.4g)", best["point"], best["val"], best["test"])
    return 0


def select_best(rows, keys, metric):
    """Grid point with the best seed-averaged validation score. Test columns are only echoed."""
    sign = 1.0 if metric == "accuracy" else -1.0
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    scored = []
    for point, rs in groups.items():
        val = float(np.mean([r[f"val_{metric}"] for r in rs]))
        test = float(np.mean([r[f"test_{metric}"] for r in rs]))
        scored.append((sign * val, point, val, test))
    # ties resolve to the first grid point in enumeration order
    best = max(scored, key=lambda s: s[0])
    return {"point": dict(zip(keys, best[1])), "val": best[2], "test": best[3], "metric": metric}


def cmd_eval(args):
    cfg, inputs = _resolve(args)
    if "model" not in inputs:
        raise ConfigError("eval needs --model")
    out = _out_dir(args)
    ds, physical = _dataset(cfg, inputs)
    if not ds.test_ids:
        raise ConfigError("dataset has no test groups to evaluate")
    model = load_checkpoint(inputs["model"])
    test_ds = ds.subset(ds.test_ids)
    report = report_for(model, test_ds, physical, ds.train_ids, cfg["model"]["loss"], {"config": cfg, "seed": cfg["seed"]})
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    write_manifest(out, "eval", cfg, inputs, ["report.json", "report.csv"])
    log.info("test %s: %.6g", report.metric, report.overall)
    return 0


# -- argument parsing ------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config, or a manifest.json to rerun")
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers (sweep)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field, e.g. method.lam=0.1")

    parser = argparse.ArgumentParser(prog="tro-opt", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic grouped dataset")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("topology", parents=[common], help="build the group graph and the prior")
    p.add_argument("--data", type=Path, help="dataset directory from gen-data")
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("train", parents=[common], help="train one method and report on test groups")
    p.add_argument("--data", type=Path)
    p.add_argument("--prior", type=Path, help="prior.json from the topology command")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common], help="grid over hyperparameters, select by validation")
    p.add_argument("--data", type=Path)
    p.add_argument("--prior", type=Path)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test groups")
    p.add_argument("--data", type=Path)
    p.add_argument("--model", type=Path, required=False)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        setup_logging()
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return args.func(args)
    except TroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
