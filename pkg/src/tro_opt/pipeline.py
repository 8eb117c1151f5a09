"""End-to-end experiment runs driven by a nested config dict."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from .centrality import data_centrality, make_prior, physical_centrality
from .errors import ConfigError, InvalidInputError
from .evaluate import compile_report, evaluate, hop_distances, hop_level
from .model import LOGISTIC, MLP, SQUARED, ModelSpec
from .optim import TroConfig, train_erm, train_group_dro, train_iw_erm, train_tro
from .topology import (
    DATA,
    PHYSICAL,
    build_knn_graph,
    extract_features,
    load_physical_topology,
    pairwise_group_distances,
)

log = logging.getLogger(__name__)

METHODS = ("tro", "erm", "group_dro", "iw_erm")
FEATURE_SOURCES = ("raw", "erm_hidden", "joint")

DEFAULTS = {
    "seed": 0,
    "dataset": {"generator": "dg_ring", "params": {}},
    "topology": {
        "mode": PHYSICAL,
        "physical_path": None,
        "feature_source": "raw",
        "sigma2": "median",
        "alpha": 0.5,
        "K_max": 4,
        "knn_k": 3,
        "weighted": False,
        "temperature": 1.0,
        "pretrain_T": 2000,
        "pretrain_hidden": 16,
    },
    "method": {
        "name": "tro",
        "lam": 1.0,
        "eta_theta": 0.1,
        "eta_q": 0.01,
        "T": 2000,
        "batch_size": 32,
        "step_schedule": "constant",
        "q_init": "prior",
        "early_stop": False,
    },
    "model": {"arch": "linear", "hidden": 16, "activation": "tanh", "loss": None},
    "eval": {"val_fraction": 0.2},
    "sweep": {
        "grid": {
            "method.lam": [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0],
            "method.eta_q": [1e-4, 1e-3, 1e-2, 1e-1, 1.0],
        },
        "seeds": None,
    },
}

# blocks whose keys are free-form rather than checked against the defaults
_FREE_FORM = ("params", "grid")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}; valid keys: {sorted(base)}")
        if isinstance(base[k], dict) and k not in _FREE_FORM:
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be a mapping")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(cfg, dotted, value):
    node = cfg
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node[k]
    if keys[-1] not in node and node is not cfg["dataset"].get("params"):
        raise ConfigError(f"sweep key {dotted!r} does not name a config field")
    node[keys[-1]] = value


def resolve_config(cfg):
    """Fill defaults and validate; returns a new fully-specified dict."""
    ds = (cfg or {}).get("dataset", {})
    base = copy.deepcopy(DEFAULTS)
    if "csv" in ds:
        # csv datasets carry a schema instead of generator params
        base["dataset"] = {
            "csv": None,
            "feature_cols": None,
            "label_col": "y",
            "group_col": "group",
            "task": "classification",
            "train_groups": None,
            "test_groups": None,
        }
    out = _merge(base, cfg)
    d = out["dataset"]
    if "generator" in d and d["generator"] not in data_mod.GENERATORS:
        raise ConfigError(
            f"unknown generator {d['generator']!r}; valid: {sorted(data_mod.GENERATORS)}"
        )
    t, m, mo = out["topology"], out["method"], out["model"]
    if t["mode"] not in (PHYSICAL, DATA):
        raise ConfigError(f"topology.mode must be physical or data, got {t['mode']!r}")
    if t["feature_source"] not in FEATURE_SOURCES:
        raise ConfigError(f"topology.feature_source must be one of {FEATURE_SOURCES}")
    if m["name"] not in METHODS:
        raise ConfigError(f"unknown method {m['name']!r}; valid: {list(METHODS)}")
    if mo["loss"] is None:
        task = d.get("task") or ("regression" if d.get("generator") == "grid_regression" else "classification")
        mo["loss"] = SQUARED if task == "regression" else LOGISTIC
    if mo["loss"] not in (LOGISTIC, SQUARED):
        raise ConfigError(f"unknown loss {mo['loss']!r}")
    try:
        tro_config(out)
        model_spec(out)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    return out


def tro_config(cfg):
    m = cfg["method"]
    return TroConfig(
        lam=float(m["lam"]),
        eta_theta=float(m["eta_theta"]),
        eta_q=float(m["eta_q"]),
        T=int(m["T"]),
        batch_size=int(m["batch_size"]),
        seed=int(cfg["seed"]),
        step_schedule=m["step_schedule"],
        q_init=m["q_init"],
        early_stop=bool(m["early_stop"]),
    )


def model_spec(cfg):
    mo = cfg["model"]
    return ModelSpec(mo["arch"], int(mo["hidden"]), mo["activation"])


def load_dataset(cfg):
    """``(dataset, physical_graph_or_None)`` from the dataset block."""
    d = cfg["dataset"]
    if "csv" in d:
        ds = data_mod.load_csv(
            d["csv"],
            feature_cols=d["feature_cols"],
            label_col=d["label_col"],
            group_col=d["group_col"],
            task=d["task"],
            train_groups=d["train_groups"],
            test_groups=d["test_groups"],
        )
        graph = None
        path = cfg["topology"].get("physical_path")
        if path:
            graph = load_physical_topology(path, len(ds.groups), names=ds.names())
        return ds, graph
    params = dict(d.get("params") or {})
    params.setdefault("seed", cfg["seed"])
    try:
        return data_mod.GENERATORS[d["generator"]](**params)
    except TypeError as exc:
        raise ConfigError(f"bad params for generator {d['generator']!r}: {exc}") from None


@dataclass
class PriorResult:
    prior: object
    graph: object


def build_prior(cfg, train_ds, physical_graph, test_ids):
    """Topological prior over ``train_ds.train_ids`` from the configured graph."""
    t = cfg["topology"]
    train_ids = train_ds.train_ids
    names = train_ds.names(train_ids)
    if t["mode"] == PHYSICAL:
        if physical_graph is None:
            raise ConfigError("topology.mode=physical needs a physical graph (generator or physical_path)")
        if not test_ids:
            raise ConfigError("physical centrality needs at least one test group")
        c = physical_centrality(physical_graph, train_ids, test_ids, weighted=t["weighted"])
        prior = make_prior(c, PHYSICAL, t["temperature"], train_ids, names)
        return PriorResult(prior, physical_graph)
    feats = [train_ds.group(g).X for g in train_ids]
    if t["feature_source"] == "erm_hidden":
        pre_cfg = copy.deepcopy(cfg)
        pre_cfg["model"].update(arch=MLP, hidden=t["pretrain_hidden"])
        pre_cfg["method"]["T"] = t["pretrain_T"]
        net = train_erm(train_ds, model_spec(pre_cfg), cfg["model"]["loss"], tro_config(pre_cfg))
        feats = [extract_features(net, F) for F in feats]
    elif t["feature_source"] == "joint":
        # label appended as an extra coordinate: groups that share inputs but not
        # labelling rules become distinguishable
        feats = [np.column_stack([train_ds.group(g).X, train_ds.group(g).y]) for g in train_ids]
    sigma2 = None if t["sigma2"] in (None, "median") else float(t["sigma2"])
    D = pairwise_group_distances(feats, sigma2=sigma2, alpha=t["alpha"], K_max=t["K_max"])
    k = min(int(t["knn_k"]), len(train_ids) - 1)
    graph = build_knn_graph(D, k=k, node_ids=train_ids, names=names)
    c = data_centrality(graph, train_ids, weighted=t["weighted"])
    return PriorResult(make_prior(c, DATA, t["temperature"], train_ids, names), graph)


def train_method(cfg, train_ds, prior):
    name = cfg["method"]["name"]
    spec, loss, tc = model_spec(cfg), cfg["model"]["loss"], tro_config(cfg)
    if name == "tro":
        return train_tro(train_ds, prior, spec, loss, tc)
    if name == "group_dro":
        return train_group_dro(train_ds, spec, loss, tc)
    if name == "iw_erm":
        return train_iw_erm(train_ds, prior, spec, loss, tc)
    return train_erm(train_ds, spec, loss, tc, return_state=True)


def needs_prior(cfg):
    return cfg["method"]["name"] in ("tro", "iw_erm")


def validation_score(model, val_ds, loss):
    """Mean per-group validation metric over training groups (nan if no points)."""
    gids = [g for g in val_ds.train_ids if val_ds.group(g).n]
    if not gids:
        return float("nan")
    return float(np.mean(list(evaluate(model, val_ds, loss, gids).values())))


def report_for(model, test_ds, graph, train_ids, loss, meta):
    metrics = evaluate(model, test_ds, loss, test_ds.test_ids)
    hops = raw = None
    if graph is not None and graph.provenance == PHYSICAL:
        raw = hop_distances(graph, train_ids, test_ds.test_ids)
        hops = {g: hop_level(h) for g, h in raw.items()}
    return compile_report(
        metrics,
        hops,
        meta=meta,
        metric="accuracy" if loss == LOGISTIC else "mse",
        group_names={g: test_ds.group(g).name for g in test_ds.test_ids},
        raw_hops=raw,
    )


@dataclass
class RunResult:
    config: dict
    model: object
    state: object
    prior: object
    graph: object
    report: object
    val_score: float
    dataset_hash: str


def run_experiment(cfg, dataset=None, physical_graph=None, prior=None):
    """Generate/load data, build the prior, train, evaluate on the test groups."""
    cfg = resolve_config(cfg)
    if dataset is None:
        dataset, physical_graph = load_dataset(cfg)
    train_ds, val_ds, test_ds = data_mod.split_groups(dataset, val_fraction=cfg["eval"]["val_fraction"], seed=cfg["seed"])
    graph = physical_graph
    if needs_prior(cfg) and prior is None:
        pr = build_prior(cfg, train_ds, physical_graph, dataset.test_ids)
        prior, graph = pr.prior, pr.graph
    model, state = train_method(cfg, train_ds, prior)
    loss = cfg["model"]["loss"]
    val = validation_score(model, val_ds, loss)
    report = report_for(
        model,
        test_ds,
        physical_graph,
        train_ds.train_ids,
        loss,
        {"config": cfg, "seed": cfg["seed"], "val_score": val},
    )
    log.info("%s: overall %s = %.4f (val %.4f)", cfg["method"]["name"], report.metric, report.overall, val)
    return RunResult(cfg, model, state, prior, graph, report, val, dataset.content_hash())
