"""Per-group metrics, hop-distance levels, and run reports."""
from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .model import LOGISTIC, SQUARED, forward

HOP_LEVELS = ("1", "2", "3+")


def evaluate(model, dataset, loss, group_ids=None):
    """Accuracy (logistic) or MSE (squared) for each group, keyed by group id."""
    if loss not in (LOGISTIC, SQUARED):
        raise InvalidInputError(f"unknown loss {loss!r}")
    if (dataset.task == "classification") != (loss == LOGISTIC):
        raise InvalidInputError(f"loss {loss!r} does not fit a {dataset.task} task")
    gids = dataset.test_ids if group_ids is None else group_ids
    out = {}
    for gid in gids:
        g = dataset.group(gid)
        if g.n == 0:
            raise InvalidInputError(f"group {g.name!r} is empty")
        f = forward(model, g.X)
        if loss == LOGISTIC:
            out[int(gid)] = float(np.mean((f > 0) == (g.y > 0.5)))
        else:
            out[int(gid)] = float(np.mean((f - g.y) ** 2))
    return out


def hop_distances(graph, train_ids, test_ids):
    """Unweighted distance from each test group to its nearest training group (None if unreachable)."""
    train_loc = graph.local_index(train_ids)
    test_loc = graph.local_index(test_ids)
    adj = graph.neighbors()
    dist = [-1] * graph.num_groups
    queue = deque()
    for s in train_loc:
        dist[s] = 0
        queue.append(s)
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
    return {int(g): (dist[i] if dist[i] >= 0 else None) for g, i in zip(test_ids, test_loc)}


def hop_level(h):
    if h is None or h >= 3:
        return "3+"
    if h < 1:
        raise InvalidInputError(f"test group at hop {h} from training groups")
    return str(h)


def hop_partition(graph, train_ids, test_ids):
    """Test group id -> hop level in ``{"1", "2", "3+"}``; unreachable groups are ``"3+"``."""
    return {g: hop_level(h) for g, h in hop_distances(graph, train_ids, test_ids).items()}


@dataclass
class RunReport:
    per_group: dict
    hops: dict
    hop_averages: dict
    overall: float
    metric: str
    group_names: dict = field(default_factory=dict)
    raw_hops: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "metric": self.metric,
            "overall": self.overall,
            "hop_averages": self.hop_averages,
            "groups": [
                {
                    "group_id": g,
                    "name": self.group_names.get(g, str(g)),
                    "hop": self.hops.get(g),
                    "hop_raw": self.raw_hops.get(g),
                    self.metric: v,
                }
                for g, v in self.per_group.items()
            ],
            "meta": self.meta,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group_id", "name", "hop", self.metric])
        for g, v in self.per_group.items():
            w.writerow([g, self.group_names.get(g, str(g)), self.hops.get(g, ""), "%.17g" % v])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def compile_report(metrics, hops, meta=None, metric="accuracy", group_names=None, raw_hops=None):
    """Assemble a report; ``hops`` must cover exactly the groups in ``metrics``."""
    if not metrics:
        raise InvalidInputError("no test-group metrics to report")
    if hops is not None and set(hops) != set(metrics):
        raise InvalidInputError(
            f"hop levels cover groups {sorted(hops)} but metrics cover {sorted(metrics)}"
        )
    per_group = {int(g): float(v) for g, v in sorted(metrics.items())}
    hops = {int(g): h for g, h in (hops or {}).items()}
    overall = float(np.mean(list(per_group.values())))
    hop_avg = {}
    for level in HOP_LEVELS:
        vals = [v for g, v in per_group.items() if hops.get(g) == level]
        if vals:
            hop_avg[level] = float(np.mean(vals))
    return RunReport(
        per_group=per_group,
        hops=hops,
        hop_averages=hop_avg,
        overall=overall,
        metric=metric,
        group_names={int(k): v for k, v in (group_names or {}).items()},
        raw_hops={int(k): v for k, v in (raw_hops or {}).items()},
        meta=dict(meta or {}),
    )
