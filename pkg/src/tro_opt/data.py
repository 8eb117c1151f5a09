"""Grouped datasets: synthetic generators, CSV ingestion/export, splits."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError
from .topology import load_physical_topology

CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass
class Group:
    gid: int
    name: str
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self):
        return self.X.shape[0]


@dataclass
class GroupedDataset:
    groups: list
    task: str
    train_ids: tuple = ()
    test_ids: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise InvalidInputError(f"unknown task {self.task!r}")
        self.train_ids = tuple(int(g) for g in self.train_ids)
        self.test_ids = tuple(int(g) for g in self.test_ids)
        ids = [g.gid for g in self.groups]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate group ids")
        if set(self.train_ids) & set(self.test_ids):
            raise InvalidInputError("train and test groups overlap")
        unknown = (set(self.train_ids) | set(self.test_ids)) - set(ids)
        if unknown:
            raise InvalidInputError(f"unknown group ids in split: {sorted(unknown)}")
        dims = {g.X.shape[1] for g in self.groups}
        if len(dims) > 1:
            raise InvalidInputError(f"groups disagree on feature dimension: {sorted(dims)}")
        for g in self.groups:
            if g.n == 0 and not self.meta.get("allow_empty"):
                raise InvalidInputError(f"group {g.name!r} is empty")
            if g.y.shape != (g.n,):
                raise InvalidInputError(f"group {g.name!r}: {g.n} rows but y has shape {g.y.shape}")
        self._by_id = {g.gid: g for g in self.groups}

    @property
    def dim(self):
        return self.groups[0].X.shape[1]

    def group(self, gid):
        return self._by_id[int(gid)]

    def names(self, gids=None):
        gids = [g.gid for g in self.groups] if gids is None else gids
        return [self.group(g).name for g in gids]

    def pooled(self, gids):
        gs = [self.group(g) for g in gids]
        return np.vstack([g.X for g in gs]), np.concatenate([g.y for g in gs])

    def subset(self, gids, train_ids=None, test_ids=None):
        keep = set(int(g) for g in gids)
        return GroupedDataset(
            groups=[g for g in self.groups if g.gid in keep],
            task=self.task,
            train_ids=tuple(g for g in (self.train_ids if train_ids is None else train_ids) if g in keep),
            test_ids=tuple(g for g in (self.test_ids if test_ids is None else test_ids) if g in keep),
            meta=dict(self.meta),
        )

    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.task.encode())
        h.update(repr((self.train_ids, self.test_ids)).encode())
        for g in self.groups:
            h.update(f"{g.gid}:{g.name}".encode())
            h.update(np.ascontiguousarray(g.X, dtype=np.float64).tobytes())
            h.update(np.ascontiguousarray(g.y, dtype=np.float64).tobytes())
        return h.hexdigest()


# -- generators -----------------------------------------------------------------


def _chain_edges(m):
    return [(e, e + 1) for e in range(m - 1)]


def gen_dg_ring(
    m=15,
    n_per_group=100,
    angle_step=None,
    noise_sd=0.1,
    seed=0,
    n_train=6,
    train_start=0,
    flip_prob=0.0,
    flip_groups=(),
):
    """Rotating-boundary binary classification over a chain of groups.

    Group ``e`` draws points uniformly from the unit disk, labels them with
    ``1[w_e . x > 0]`` where ``w_e`` points at angle ``e * angle_step``, then adds
    Gaussian feature noise of scale ``noise_sd`` (so the noise also blurs the
    boundary). ``angle_step`` defaults to ``pi / (m - 1)``, spreading the
    boundaries over a half turn. Training groups are the ``n_train`` consecutive
    groups starting at ``train_start``; the physical topology is the chain
    ``e -- e+1``. Labels of ``flip_groups`` are flipped with ``flip_prob``.
    """
    if m < 3 or n_per_group < 2 or noise_sd < 0:
        raise InvalidInputError("need m >= 3, n_per_group >= 2, noise_sd >= 0")
    if not 1 <= n_train < m or not 0 <= train_start <= m - n_train:
        raise InvalidInputError(f"train block [{train_start}, {train_start + n_train}) does not fit in {m} groups")
    if not 0.0 <= flip_prob <= 1.0:
        raise InvalidInputError("flip_prob must be in [0, 1]")
    if angle_step is None:
        angle_step = np.pi / (m - 1)
    ss = np.random.SeedSequence(seed)
    streams = [np.random.default_rng(s) for s in ss.spawn(m)]
    flip_groups = {int(g) for g in flip_groups}
    groups = []
    for e, rng in enumerate(streams):
        r = np.sqrt(rng.uniform(size=n_per_group))
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n_per_group)
        x = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
        ang = e * angle_step
        y = (x @ np.array([np.cos(ang), np.sin(ang)]) > 0).astype(float)
        X = x + noise_sd * rng.normal(size=x.shape)
        if e in flip_groups and flip_prob > 0:
            flip = rng.uniform(size=n_per_group) < flip_prob
            y = np.where(flip, 1.0 - y, y)
        groups.append(Group(e, f"g{e:02d}", X, y))
    train = tuple(range(train_start, train_start + n_train))
    test = tuple(e for e in range(m) if e not in train)
    meta = {"generator": "dg_ring", "angle_step": float(angle_step)}
    ds = GroupedDataset(groups, CLASSIFICATION, train, test, meta)
    graph = load_physical_topology(_chain_edges(m), m, names=[g.name for g in groups])
    return ds, graph


def grid_edges(rows, cols):
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return edges


def gen_grid_regression(
    rows=6,
    cols=6,
    n_per_group=100,
    drift_per_hop=0.5,
    noise_sd=0.5,
    seed=0,
    dim=5,
    edge_ratio=4.0,
    train_rows=None,
):
    """Linear regression groups on a ``rows x cols`` grid (north half trains).

    Group ``(r, c)`` has inputs uniform in ``[-1, 1]^dim`` and targets
    ``w_rc . x + b_rc + noise``. The coefficients ``(w, b)`` move by
    ``drift_per_hop`` per row along one seeded unit direction (north-south
    gradient) and by ``edge_ratio * drift_per_hop`` per hop away from the
    central column along an orthogonal direction (a west/east edge effect that
    training and test rows share). Rows ``< train_rows`` (default ``rows // 2``) are
    training groups. The physical topology is the 4-neighbour grid.
    """
    if rows * cols < 4 or rows < 2 or n_per_group < 1 or dim < 1 or noise_sd < 0:
        raise InvalidInputError("need rows*cols >= 4, rows >= 2, n_per_group >= 1, dim >= 1, noise_sd >= 0")
    train_rows = rows // 2 if train_rows is None else int(train_rows)
    if not 1 <= train_rows < rows:
        raise InvalidInputError("train_rows must leave at least one train and one test row")
    if edge_ratio < 0:
        raise InvalidInputError("edge_ratio must be >= 0")
    edge_drift = edge_ratio * drift_per_hop
    ss = np.random.SeedSequence(seed)
    base_ss, *group_ss = ss.spawn(rows * cols + 1)
    base = np.random.default_rng(base_ss)
    coef0 = base.normal(size=dim + 1)
    # orthonormal drift directions in coefficient space
    Qm, _ = np.linalg.qr(base.normal(size=(dim + 1, 2)))
    row_dir, col_dir = Qm[:, 0], Qm[:, 1]
    mid = (cols - 1) / 2.0
    groups = []
    for r in range(rows):
        for c in range(cols):
            gid = r * cols + c
            rng = np.random.default_rng(group_ss[gid])
            coef = coef0 + drift_per_hop * r * row_dir + edge_drift * abs(c - mid) * col_dir
            X = rng.uniform(-1.0, 1.0, size=(n_per_group, dim))
            y = X @ coef[:-1] + coef[-1] + noise_sd * rng.normal(size=n_per_group)
            groups.append(Group(gid, f"r{r}c{c}", X, y))
    train = tuple(r * cols + c for r in range(train_rows) for c in range(cols))
    test = tuple(g for g in range(rows * cols) if g not in train)
    meta = {"generator": "grid_regression", "rows": rows, "cols": cols}
    ds = GroupedDataset(groups, REGRESSION, train, test, meta)
    graph = load_physical_topology(grid_edges(rows, cols), rows * cols, names=[g.name for g in groups])
    return ds, graph


GENERATORS = {"dg_ring": gen_dg_ring, "grid_regression": gen_grid_regression}


# -- CSV ---------------------------------------------------------------------------


def _fmt(x):
    return "%.17g" % x


def dataset_to_csv(ds, path=None, comment=None, group_col="group", label_col="y"):
    """Write one row per example: group name, features ``x0..x{d-1}``, label."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    feats = [f"x{j}" for j in range(ds.dim)]
    w.writerow([group_col, *feats, label_col])
    for g in ds.groups:
        for xi, yi in zip(g.X, g.y):
            w.writerow([g.name, *map(_fmt, xi), _fmt(yi)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def load_csv(
    path,
    feature_cols=None,
    label_col="y",
    group_col="group",
    task=CLASSIFICATION,
    train_groups=None,
    test_groups=None,
):
    """Read a grouped dataset from CSV.

    Groups are keyed by the group column and numbered in order of first
    appearance. ``feature_cols=None`` takes every column other than the label
    and group columns. Lines starting with ``#`` are skipped. ``train_groups`` /
    ``test_groups`` are lists of group names; by default every group trains.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, 1) if not ln.startswith("#")]
    reader = csv.reader(ln for _, ln in lines)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: no header row") from None
    col = {name: k for k, name in enumerate(header)}
    for needed in (label_col, group_col, *(feature_cols or ())):
        if needed not in col:
            raise FormatError(f"{path}: missing column {needed!r}")
    if feature_cols is None:
        feature_cols = [h for h in header if h not in (label_col, group_col)]
    if not feature_cols:
        raise FormatError(f"{path}: no feature columns")
    fidx = [col[c] for c in feature_cols]
    rows = {}
    order = []
    for (lineno, _), rec in zip(lines[1:], reader):
        if not rec:
            continue
        if len(rec) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} cells, got {len(rec)}")
        name = rec[col[group_col]]
        vals = []
        for cname, k in zip([*feature_cols, label_col], [*fidx, col[label_col]]):
            try:
                vals.append(float(rec[k]))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: column {cname!r}: non-numeric value {rec[k]!r}") from None
        if name not in rows:
            rows[name] = []
            order.append(name)
        rows[name].append(vals)
    if not order:
        raise FormatError(f"{path}: no data rows")
    groups = []
    for gid, name in enumerate(order):
        arr = np.asarray(rows[name], dtype=np.float64)
        groups.append(Group(gid, name, arr[:, :-1], arr[:, -1]))
    by_name = {g.name: g.gid for g in groups}

    def ids(names):
        try:
            return tuple(by_name[n] for n in names)
        except KeyError as exc:
            raise FormatError(f"{path}: unknown group {exc.args[0]!r}") from None

    train = ids(train_groups) if train_groups is not None else tuple(g.gid for g in groups)
    if test_groups is not None:
        test = ids(test_groups)
    elif train_groups is not None:
        test = tuple(g.gid for g in groups if g.gid not in train)
    else:
        test = ()
    return GroupedDataset(groups, task, train, test, {"source": str(path)})


def split_groups(ds, train_ids=None, val_fraction=0.2, seed=0):
    """Hold out ``floor(val_fraction * n_e)`` points of every training group.

    Returns ``(train, val, test)`` datasets; test holds the non-training groups
    untouched and validation only ever draws from training groups.
    """
    if not 0.0 <= val_fraction < 1.0:
        raise InvalidInputError(f"val_fraction must be in [0, 1), got {val_fraction}")
    train_ids = tuple(ds.train_ids if train_ids is None else (int(g) for g in train_ids))
    missing = set(train_ids) - {g.gid for g in ds.groups}
    if missing:
        raise InvalidInputError(f"unknown training groups {sorted(missing)}")
    streams = np.random.SeedSequence(seed).spawn(len(train_ids))
    tr_groups, va_groups = [], []
    for gid, s in zip(train_ids, streams):
        g = ds.group(gid)
        n_val = int(np.floor(val_fraction * g.n))
        perm = np.random.default_rng(s).permutation(g.n)
        va, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        tr_groups.append(Group(gid, g.name, g.X[tr], g.y[tr]))
        va_groups.append(Group(gid, g.name, g.X[va], g.y[va]))
    test_ids = tuple(g.gid for g in ds.groups if g.gid not in set(train_ids))
    meta = dict(ds.meta)
    train = GroupedDataset(tr_groups, ds.task, train_ids, (), meta)
    val = GroupedDataset(va_groups, ds.task, train_ids, (), {**meta, "allow_empty": True})
    test = GroupedDataset([ds.group(g) for g in test_ids], ds.task, (), test_ids, meta)
    return train, val, test


# -- dataset directories -------------------------------------------------------

DATASET_CSV = "dataset.csv"
GROUPS_JSON = "groups.json"


def write_dataset_dir(ds, out_dir, comment=None):
    """Write ``dataset.csv`` plus ``groups.json`` (task and train/test split by name)."""
    out_dir = Path(out_dir)
    dataset_to_csv(ds, out_dir / DATASET_CSV, comment=comment)
    doc = {
        "task": ds.task,
        "groups": ds.names(),
        "train_groups": ds.names(ds.train_ids),
        "test_groups": ds.names(ds.test_ids),
        "meta": {k: v for k, v in ds.meta.items() if k != "allow_empty"},
    }
    if comment:
        doc["comment"] = comment
    (out_dir / GROUPS_JSON).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return [DATASET_CSV, GROUPS_JSON]


def read_dataset_dir(path):
    path = Path(path)
    try:
        doc = json.loads((path / GROUPS_JSON).read_text())
    except FileNotFoundError:
        raise FormatError(f"{path}: missing {GROUPS_JSON}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path / GROUPS_JSON}: invalid JSON: {exc}") from None
    ds = load_csv(
        path / DATASET_CSV,
        task=doc.get("task", CLASSIFICATION),
        train_groups=doc.get("train_groups"),
        test_groups=doc.get("test_groups"),
    )
    if doc.get("groups") and ds.names() != list(doc["groups"]):
        raise FormatError(f"{path}: group order in {DATASET_CSV} does not match {GROUPS_JSON}")
    ds.meta.update(doc.get("meta", {}))
    return ds
