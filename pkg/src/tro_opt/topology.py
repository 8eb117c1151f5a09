"""Group topology: physical adjacency or a graph learned with diffusion EMD.

The data-driven path embeds all points of the selected groups in one affinity
graph, runs a Markov diffusion on it, and compares groups through the
multiscale l1 distance between their diffused densities.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DegenerateDataError, FormatError, InvalidInputError

log = logging.getLogger(__name__)

PHYSICAL = "physical"
DATA = "data"


@dataclass
class TopologyGraph:
    """Undirected graph over groups.

    Nodes are ``0..num_groups-1``; ``node_ids[i]`` is the dataset group id that
    node ``i`` stands for (identity unless the graph covers a subset of groups,
    as the data-driven graph over training groups does).
    """

    num_groups: int
    edges: frozenset
    provenance: str
    edge_weights: dict | None = None
    distance_matrix: np.ndarray | None = None
    node_ids: tuple = ()
    names: tuple = ()

    def __post_init__(self):
        edges = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise FormatError(f"self-loop on node {i}")
            if not (0 <= i < self.num_groups and 0 <= j < self.num_groups):
                raise FormatError(f"edge ({i}, {j}) outside 0..{self.num_groups - 1}")
            edges.add((min(i, j), max(i, j)))
        self.edges = frozenset(edges)
        if self.provenance not in (PHYSICAL, DATA):
            raise InvalidInputError(f"unknown provenance {self.provenance!r}")
        if not self.node_ids:
            self.node_ids = tuple(range(self.num_groups))
        self.node_ids = tuple(int(g) for g in self.node_ids)
        if len(self.node_ids) != self.num_groups:
            raise InvalidInputError("node_ids length must equal num_groups")
        if not self.names:
            self.names = tuple(str(g) for g in self.node_ids)
        if self.distance_matrix is not None:
            D = np.asarray(self.distance_matrix, dtype=float)
            if D.shape != (self.num_groups, self.num_groups):
                raise InvalidInputError(f"distance matrix shape {D.shape} != {self.num_groups}^2")
            if not np.allclose(D, D.T, atol=1e-9, rtol=0) or np.any(np.abs(np.diag(D)) > 1e-9):
                raise InvalidInputError("distance matrix must be symmetric with zero diagonal")
            self.distance_matrix = D

    def neighbors(self):
        adj = [[] for _ in range(self.num_groups)]
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        return [sorted(a) for a in adj]

    def csr(self):
        """Sorted CSR adjacency ``(indptr, indices)`` as int64 arrays."""
        adj = self.neighbors()
        indptr = np.zeros(self.num_groups + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(a) for a in adj])
        indices = np.array([j for a in adj for j in a], dtype=np.int64)
        return indptr, indices

    def local_index(self, group_ids):
        lookup = {g: i for i, g in enumerate(self.node_ids)}
        try:
            return [lookup[int(g)] for g in group_ids]
        except KeyError as exc:
            raise InvalidInputError(f"group {exc.args[0]} is not a node of the graph") from None

    def weight(self, i, j):
        if self.edge_weights is None:
            return 1.0
        return self.edge_weights[(min(i, j), max(i, j))]

    # -- serialization -------------------------------------------------

    def to_dict(self):
        out = {
            "num_groups": self.num_groups,
            "provenance": self.provenance,
            "node_ids": list(self.node_ids),
            "names": list(self.names),
            "edges": [list(e) for e in sorted(self.edges)],
        }
        if self.edge_weights is not None:
            out["edge_weights"] = [self.edge_weights[e] for e in sorted(self.edges)]
        if self.distance_matrix is not None:
            out["distance_matrix"] = self.distance_matrix.tolist()
        return out

    @classmethod
    def from_dict(cls, doc):
        try:
            m = int(doc["num_groups"])
            edges = [tuple(e) for e in doc.get("edges", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad topology document: {exc}") from None
        weights = None
        if "edge_weights" in doc:
            keyed = [(min(i, j), max(i, j)) for i, j in edges]
            weights = dict(zip(keyed, map(float, doc["edge_weights"])))
        D = doc.get("distance_matrix")
        return cls(
            num_groups=m,
            edges=frozenset(edges),
            provenance=doc.get("provenance", PHYSICAL),
            edge_weights=weights,
            distance_matrix=None if D is None else np.asarray(D, dtype=float),
            node_ids=tuple(doc.get("node_ids", ())),
            names=tuple(doc.get("names", ())),
        )

    def to_dot(self, header_comment=None):
        lines = []
        if header_comment:
            lines.append(f"// {header_comment}")
        lines.append(f'graph "{self.provenance}_topology" {{')
        for i in range(self.num_groups):
            lines.append(f'  {i} [label="{self.names[i]}"];')
        for i, j in sorted(self.edges):
            lines.append(f"  {i} -- {j} [weight={self.weight(i, j)!r}];")
        lines.append("}")
        return "\n".join(lines) + "\n"


# -- affinity and diffusion ----------------------------------------------------


def _as_features(features):
    F = np.ascontiguousarray(features, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2:
        raise InvalidInputError(f"features must be 2-d, got shape {F.shape}")
    if F.shape[0] < 2:
        raise InvalidInputError("need at least two points")
    if not np.all(np.isfinite(F)):
        raise InvalidInputError("features contain non-finite values")
    return F


def median_heuristic_sigma2(features):
    """Median of all pairwise squared Euclidean distances."""
    F = _as_features(features)
    d2 = pdist(F, "sqeuclidean")
    if not np.any(d2 > 0):
        raise DegenerateDataError("all points coincide; kernel scale undefined")
    return float(np.median(d2))


def rbf_affinity(features, sigma2):
    """``K[i, j] = exp(-||f_i - f_j||^2 / sigma2)``."""
    F = _as_features(features)
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise InvalidInputError(f"sigma2 must be positive, got {sigma2}")
    K = np.exp(-squareform(pdist(F, "sqeuclidean")) / sigma2)
    np.fill_diagonal(K, 1.0)
    return K


@dataclass
class DiffusionOperator:
    """Row-stochastic diffusion operator with cached dyadic powers."""

    P: np.ndarray
    sigma2: float = float("nan")
    _powers: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return self.P.shape[0]

    def dyadic_powers(self, K_max):
        """``[P, P^2, P^4, ..., P^(2^K_max)]`` by repeated squaring, cached."""
        if not self._powers:
            self._powers.append(self.P)
        while len(self._powers) <= K_max:
            last = self._powers[-1]
            self._powers.append(last @ last)
        return self._powers[: K_max + 1]


def diffusion_operator(K, sigma2=float("nan")):
    """Double-normalized random-walk operator built from a symmetric affinity matrix."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidInputError(f"affinity must be square, got {K.shape}")
    if np.any(K < 0) or not np.all(np.isfinite(K)):
        raise InvalidInputError("affinity must be finite and nonnegative")
    q = K.sum(axis=1)
    if np.any(q <= 0):
        raise DegenerateDataError(f"isolated point(s) in affinity: rows {np.nonzero(q <= 0)[0].tolist()}")
    M = K / q[:, None] / q[None, :]
    dm = M.sum(axis=1)
    if np.any(dm <= 0):
        raise DegenerateDataError("zero row sum after density normalization")
    P = M / dm[:, None]
    return DiffusionOperator(P=P, sigma2=float(sigma2))


@dataclass
class MultiscaleDensity:
    group_id: int
    scales: list
    K: int

    def stacked(self):
        return np.vstack(self.scales)


def multiscale_densities(op, group_indicator, K_max, group_id=-1):
    """Diffused densities of one group at times 1, 2, 4, ..., 2^K_max.

    The walk starts from the uniform distribution over the group's points, so
    each returned vector is a probability vector over all ``n`` points.
    """
    ind = np.asarray(group_indicator, dtype=np.float64).ravel()
    if ind.shape[0] != op.n:
        raise InvalidInputError(f"indicator has length {ind.shape[0]}, operator has {op.n} points")
    if K_max < 0:
        raise InvalidInputError("K_max must be >= 0")
    n_e = ind.sum()
    if n_e <= 0:
        raise InvalidInputError("empty group")
    mu0 = ind / n_e
    scales = [mu0 @ Pt for Pt in op.dyadic_powers(K_max)]
    return MultiscaleDensity(group_id=group_id, scales=scales, K=K_max)


def diffusion_emd(a, b, alpha=0.5):
    """Multiscale l1 distance between two density stacks."""
    if a.K != b.K or len(a.scales) != len(b.scales) or a.scales[0].shape != b.scales[0].shape:
        raise InvalidInputError("density stacks have mismatched scales")
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    K = a.K
    total = 0.0
    for k in range(K):
        w = 2.0 ** (-(K - k - 1) * alpha)
        da = a.scales[k + 1] - a.scales[k]
        db = b.scales[k + 1] - b.scales[k]
        total += w * float(np.abs(da - db).sum())
    total += float(np.abs(a.scales[K] - b.scales[K]).sum())
    return total


def pairwise_group_distances(group_features, sigma2=None, alpha=0.5, K_max=4, return_operator=False):
    """Symmetric matrix of diffusion EMD between groups.

    ``group_features`` is a list of ``(n_e, d)`` arrays; ``sigma2=None`` uses the
    median heuristic on the pooled points.
    """
    if len(group_features) < 2:
        raise InvalidInputError("need at least two groups")
    blocks = []
    for i, F in enumerate(group_features):
        F = np.asarray(F, dtype=np.float64)
        if F.ndim == 1:
            F = F[:, None]
        if F.shape[0] == 0:
            raise InvalidInputError(f"group {i} is empty")
        blocks.append(F)
    pooled = _as_features(np.vstack(blocks))
    if sigma2 is None:
        sigma2 = median_heuristic_sigma2(pooled)
    op = diffusion_operator(rbf_affinity(pooled, sigma2), sigma2)
    bounds = np.cumsum([0] + [F.shape[0] for F in blocks])
    dens = []
    for g in range(len(blocks)):
        ind = np.zeros(pooled.shape[0])
        ind[bounds[g] : bounds[g + 1]] = 1.0
        dens.append(multiscale_densities(op, ind, K_max, group_id=g))
    m = len(blocks)
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            D[i, j] = D[j, i] = diffusion_emd(dens[i], dens[j], alpha)
    log.debug("pairwise diffusion EMD over %d points, sigma2=%.4g", pooled.shape[0], sigma2)
    if return_operator:
        return D, op
    return D


def extract_features(model, X):
    """Hidden activations of a one-hidden-layer model; raw inputs for a linear one."""
    from .model import hidden_activations

    return hidden_activations(model, X)


def build_knn_graph(distances, k=3, node_ids=(), names=()):
    """Symmetrized k-nearest-neighbour graph; ties go to the lower node index."""
    D = np.asarray(distances, dtype=float)
    m = D.shape[0]
    if D.shape != (m, m):
        raise InvalidInputError("distance matrix must be square")
    if not 1 <= k < m:
        raise InvalidInputError(f"k must be in [1, {m - 1}], got {k}")
    edges = set()
    for i in range(m):
        others = sorted((D[i, j], j) for j in range(m) if j != i)
        for _, j in others[:k]:
            edges.add((min(i, j), max(i, j)))
    weights = {e: float(D[e]) for e in edges}
    return TopologyGraph(
        num_groups=m,
        edges=frozenset(edges),
        provenance=DATA,
        edge_weights=weights,
        distance_matrix=D,
        node_ids=tuple(node_ids),
        names=tuple(names),
    )


def load_physical_topology(adjacency, num_groups=None, names=()):
    """Physical topology from an edge list, a JSON document, or a path to either.

    Accepted inputs: a list of ``(i, j)`` pairs (``num_groups`` required), a dict
    ``{"num_groups": m, "edges": [[i, j], ...]}``, or a file containing that JSON
    or whitespace-separated ``i j`` lines (first non-comment line may be
    ``num_groups m``).
    """
    if isinstance(adjacency, (str, Path)):
        return _load_topology_file(Path(adjacency), num_groups, names)
    if isinstance(adjacency, dict):
        num_groups = adjacency.get("num_groups", num_groups)
        names = tuple(adjacency.get("names", names))
        adjacency = adjacency.get("edges", [])
    if num_groups is None:
        raise FormatError("num_groups is required for a bare edge list")
    edges = []
    for k, e in enumerate(adjacency):
        try:
            i, j = (int(x) for x in e)
        except (TypeError, ValueError):
            raise FormatError(f"edge {k}: expected a pair of integers, got {e!r}") from None
        edges.append((i, j))
    return TopologyGraph(num_groups=int(num_groups), edges=frozenset(edges), provenance=PHYSICAL, names=tuple(names))


def _load_topology_file(path, num_groups, names):
    text = path.read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from None
        if doc.get("provenance", PHYSICAL) == DATA:
            return TopologyGraph.from_dict(doc)
        return load_physical_topology(doc, num_groups, names)
    edges = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "num_groups" and len(parts) == 2:
            num_groups = int(parts[1])
            continue
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'i j', got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
    try:
        return load_physical_topology(edges, num_groups, names)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
