"""Group betweenness centrality and the softmax prior built from it."""
from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import kernels
from .core import as_vector, softmax
from .errors import InvalidInputError

# relative tolerance for treating two weighted path lengths as equal
_WEIGHT_TIE_RTOL = 1e-9


def _pair_mask(n, src, tgt):
    """Mask of (source, target) pairs; each unordered pair appears once."""
    mask = np.zeros((n, n), dtype=np.uint8)
    src_set, tgt_set = set(src), set(tgt)
    for s in src_set:
        for t in tgt_set:
            if s == t:
                continue
            # {s, t} reachable from both sides: keep only the s < t orientation
            if t in src_set and s in tgt_set and t < s:
                continue
            mask[s, t] = 1
    return mask


def betweenness(graph, sources, targets, weighted=False, exact=False):
    """Sum over source-target pairs of the fraction of shortest paths through each node.

    ``sources`` and ``targets`` are dataset group ids. Unordered pairs are counted
    once, endpoints are never intermediates, disconnected pairs contribute zero.
    Hop counts are used unless ``weighted``. ``exact=True`` returns a list of
    ``Fraction`` (unweighted only). The result is indexed by graph node.
    """
    sources, targets = list(sources), list(targets)
    if not sources or not targets:
        raise InvalidInputError("source and target sets must be non-empty")
    src = graph.local_index(sources)
    tgt = graph.local_index(targets)
    mask = _pair_mask(graph.num_groups, src, tgt)
    if exact:
        if weighted:
            raise InvalidInputError("exact mode supports hop-count paths only")
        return _brandes_exact(graph.neighbors(), mask)
    if weighted:
        return _brandes_weighted(graph, mask)
    indptr, indices = graph.csr()
    return kernels.brandes(indptr, indices, mask)


def _brandes_exact(adj, mask):
    n = len(adj)
    out = [Fraction(0)] * n
    for s in range(n):
        if not mask[s].any():
            continue
        dist = [-1] * n
        sigma = [0] * n
        preds = [[] for _ in range(n)]
        dist[s], sigma[s] = 0, 1
        order, queue = [], deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [Fraction(0)] * n
        for w in reversed(order):
            coeff = int(mask[s, w]) + delta[w]
            for v in preds[w]:
                delta[v] += Fraction(sigma[v], sigma[w]) * coeff
            if w != s:
                out[w] += delta[w]
    return out


def _brandes_weighted(graph, mask):
    n = graph.num_groups
    adj = graph.neighbors()
    out = np.zeros(n)
    for s in range(n):
        if not mask[s].any():
            continue
        dist = np.full(n, np.inf)
        sigma = np.zeros(n)
        preds = [[] for _ in range(n)]
        dist[s], sigma[s] = 0.0, 1.0
        done = np.zeros(n, dtype=bool)
        order = []
        heap = [(0.0, s)]
        while heap:
            d, v = heapq.heappop(heap)
            if done[v]:
                continue
            done[v] = True
            order.append(v)
            for w in adj[v]:
                nd = d + graph.weight(v, w)
                if nd < dist[w] * (1 - _WEIGHT_TIE_RTOL):
                    dist[w] = nd
                    sigma[w] = sigma[v]
                    preds[w] = [v]
                    heapq.heappush(heap, (nd, w))
                elif abs(nd - dist[w]) <= _WEIGHT_TIE_RTOL * max(nd, dist[w]):
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(order):
            coeff = float(mask[s, w]) + delta[w]
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * coeff
            if w != s:
                out[w] += delta[w]
    return out


def physical_centrality(graph, train_groups, test_groups, weighted=False):
    """Train-to-test betweenness of each training group (in ``train_groups`` order)."""
    c = betweenness(graph, train_groups, test_groups, weighted=weighted)
    return np.asarray([c[i] for i in graph.local_index(train_groups)], dtype=float)


def data_centrality(graph, train_groups, weighted=False):
    """Betweenness among training groups only (in ``train_groups`` order)."""
    train_groups = list(train_groups)
    if len(train_groups) < 2:
        raise InvalidInputError("need at least two training groups")
    c = betweenness(graph, train_groups, train_groups, weighted=weighted)
    return np.asarray([c[i] for i in graph.local_index(train_groups)], dtype=float)


@dataclass
class TopologicalPrior:
    centrality: np.ndarray
    prior: np.ndarray
    mode: str
    group_ids: tuple = ()
    group_names: tuple = ()
    temperature: float = 1.0

    def to_dict(self):
        return {
            "mode": self.mode,
            "centrality": [float(c) for c in self.centrality],
            "prior": [float(p) for p in self.prior],
            "group_ids": list(self.group_ids),
            "group_names": list(self.group_names),
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            centrality=np.asarray(doc["centrality"], dtype=float),
            prior=np.asarray(doc["prior"], dtype=float),
            mode=doc["mode"],
            group_ids=tuple(doc.get("group_ids", ())),
            group_names=tuple(doc.get("group_names", ())),
            temperature=float(doc.get("temperature", 1.0)),
        )

    def save(self, path, extra=None):
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_prior(centrality, mode, temperature=1.0, group_ids=(), group_names=()):
    c = as_vector(centrality, "centrality")
    return TopologicalPrior(
        centrality=c,
        prior=softmax(c, temperature),
        mode=mode,
        group_ids=tuple(int(g) for g in group_ids),
        group_names=tuple(group_names),
        temperature=float(temperature),
    )
