"""Graph representation, dataset I/O, splits, adjacency normalization, the
upper-triangular edge codec, budget arithmetic, and Jaccard purification.

Graphs are undirected and stored as a sorted, duplicate-free list of node
pairs (i < j).  Instances are immutable after construction and safe to share
across concurrent attack runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import autodiff as ad


def _canonical_edges(pairs: np.ndarray, num_nodes: int) -> np.ndarray:
    """Symmetrize, drop self-loops, deduplicate, and sort (i < j)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
        raise ValueError("edge endpoint out of range")
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo < hi  # discard self-loops
    pairs = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return pairs


@dataclass(frozen=True)
class Graph:
    """Sparse undirected graph with binary/real node features and labels."""

    num_nodes: int
    edges: np.ndarray  # (m, 2) int64, i < j, sorted, no duplicates
    features: np.ndarray  # (num_nodes, feature_dim)
    labels: np.ndarray  # (num_nodes,) int64 in [0, num_classes)
    num_classes: int
    name: str = "graph"

    def __post_init__(self):
        if self.features.shape[0] != self.num_nodes:
            raise ValueError("feature row count does not match num_nodes")
        if self.labels.shape != (self.num_nodes,):
            raise ValueError("labels must be one class index per node")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label index out of range")
        e = self.edges
        if e.size:
            if e.min() < 0 or e.max() >= self.num_nodes:
                raise ValueError("edge endpoint out of range")
            if np.any(e[:, 0] >= e[:, 1]):
                raise ValueError("edges must satisfy i < j")
            if len(np.unique(e, axis=0)) != len(e):
                raise ValueError("duplicate edges")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    def has_binary_features(self) -> bool:
        return bool(np.all((self.features == 0) | (self.features == 1)))

    def subgraph(self, keep_nodes: np.ndarray) -> tuple["Graph", np.ndarray]:
        """Induced subgraph on `keep_nodes` (sorted); returns (graph, mapping)
        where mapping[old_id] = new_id (or -1 for dropped nodes)."""
        keep_nodes = np.unique(np.asarray(keep_nodes, dtype=np.int64))
        mapping = np.full(self.num_nodes, -1, dtype=np.int64)
        mapping[keep_nodes] = np.arange(len(keep_nodes))
        mask = (mapping[self.edges[:, 0]] >= 0) & (mapping[self.edges[:, 1]] >= 0)
        new_edges = mapping[self.edges[mask]]
        g = Graph(
            num_nodes=len(keep_nodes),
            edges=_canonical_edges(new_edges, len(keep_nodes)),
            features=self.features[keep_nodes],
            labels=self.labels[keep_nodes],
            num_classes=self.num_classes,
            name=f"{self.name}:sub{len(keep_nodes)}",
        )
        return g, mapping


TRANSDUCTIVE = "transductive"
INDUCTIVE = "inductive"


@dataclass(frozen=True)
class Splits:
    """Disjoint node-index sets for training, validation and testing."""

    labeled_train: np.ndarray
    unlabeled_train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    mode: str = TRANSDUCTIVE

    def __post_init__(self):
        if self.mode not in (TRANSDUCTIVE, INDUCTIVE):
            raise ValueError(f"unknown split mode {self.mode!r}")
        sets = [self.labeled_train, self.unlabeled_train, self.validation, self.test]
        total = np.concatenate(sets)
        if len(np.unique(total)) != len(total):
            raise ValueError("split sets must be pairwise disjoint")


@dataclass(frozen=True)
class EdgeFlipSet:
    """A set of undirected pairs to toggle, relative to a named base graph."""

    flips: np.ndarray  # (k, 2) int64, i < j
    relative_to: str

    def __post_init__(self):
        f = np.asarray(self.flips, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "flips", f)
        if f.size:
            if np.any(f[:, 0] >= f[:, 1]) or f.min() < 0:
                raise ValueError("flip pairs must satisfy 0 <= i < j")
            if len(np.unique(f, axis=0)) != len(f):
                raise ValueError("duplicate pair in flip set")

    def __len__(self) -> int:
        return len(self.flips)


def empty_flips(base: str) -> EdgeFlipSet:
    return EdgeFlipSet(np.empty((0, 2), dtype=np.int64), base)


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------


def load_dataset(path) -> Graph:
    """Load a graph from the canonical dataset directory layout.

    Expects `meta.json` (num_nodes, feature_dim, num_classes), `edges.csv`
    (one `i,j` pair per line), `features.csv` (one row per node) and
    `labels.csv` (one class index per line).  The edge list is symmetrized,
    deduplicated, and self-loops are dropped.
    """
    path = Path(path)
    meta_file = path / "meta.json"
    if not meta_file.exists():
        raise FileNotFoundError(f"no dataset at {path} (missing meta.json)")
    meta = json.loads(meta_file.read_text())
    n = int(meta["num_nodes"])
    d = int(meta["feature_dim"])
    c = int(meta["num_classes"])

    edges_raw = np.loadtxt(path / "edges.csv", delimiter=",", dtype=np.int64, ndmin=2)
    features = np.loadtxt(path / "features.csv", delimiter=",", dtype=np.float64, ndmin=2)
    labels = np.loadtxt(path / "labels.csv", delimiter=",", dtype=np.int64, ndmin=1)

    if features.shape != (n, d):
        raise ValueError(
            f"features shape {features.shape} does not match header ({n}, {d})"
        )
    if labels.shape != (n,):
        raise ValueError("labels length does not match header num_nodes")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")

    return Graph(
        num_nodes=n,
        edges=_canonical_edges(edges_raw, n),
        features=features,
        labels=labels,
        num_classes=c,
        name=path.name,
    )


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def make_splits(
    g: Graph,
    labeled_per_class: int,
    test_fraction: float,
    mode: str = TRANSDUCTIVE,
    seed: int = 0,
) -> Splits:
    """Random class-balanced splits, deterministic given the seed.

    The test set (round(test_fraction * n) nodes) is drawn first; the labeled
    training set takes exactly `labeled_per_class` nodes of each class from
    the remainder; of what is left, 10% becomes validation and the rest
    unlabeled training nodes.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    perm = rng.permutation(n)
    num_test = int(round(test_fraction * n))
    test = np.sort(perm[:num_test])
    rest = perm[num_test:]

    labeled = []
    rest_labels = g.labels[rest]
    for c in range(g.num_classes):
        members = rest[rest_labels == c]
        if len(members) < labeled_per_class:
            raise ValueError(
                f"class {c} has only {len(members)} non-test nodes, "
                f"need {labeled_per_class}"
            )
        labeled.append(rng.choice(members, size=labeled_per_class, replace=False))
    labeled = np.sort(np.concatenate(labeled))

    remaining = np.setdiff1d(rest, labeled)
    remaining = rng.permutation(remaining)
    num_val = int(round(0.1 * len(remaining)))
    validation = np.sort(remaining[:num_val])
    unlabeled = np.sort(remaining[num_val:])
    return Splits(labeled, unlabeled, validation, test, mode=mode)


# ---------------------------------------------------------------------------
# upper-triangular codec
# ---------------------------------------------------------------------------


def num_pairs(n: int) -> int:
    return n * (n - 1) // 2


def tri_encode(i, j, n: int):
    """Linear index of the pair (i, j), i < j, in row-major enumeration."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    if np.any(i < 0) or np.any(i >= j) or np.any(j >= n):
        raise ValueError("tri_encode requires 0 <= i < j < n")
    k = i * n - i * (i + 1) // 2 + (j - i - 1)
    return k if k.ndim else int(k)


def tri_decode(k, n: int):
    """Inverse of :func:`tri_encode`."""
    k = np.asarray(k, dtype=np.int64)
    scalar = k.ndim == 0
    k = np.atleast_1d(k)
    if np.any(k < 0) or np.any(k >= num_pairs(n)):
        raise ValueError("tri_decode index out of range")
    # closed form via the row offsets, then an integer fix-up against float
    # rounding near row boundaries
    i = (n - 2 - np.floor(
        np.sqrt(-8.0 * k.astype(np.float64) + 4 * n * (n - 1) - 7) / 2.0 - 0.5
    )).astype(np.int64)
    row_start = i * n - i * (i + 1) // 2
    too_far = row_start > k
    while np.any(too_far):
        i[too_far] -= 1
        row_start = i * n - i * (i + 1) // 2
        too_far = row_start > k
    row_end = (i + 1) * n - (i + 1) * (i + 2) // 2
    too_near = k >= row_end
    while np.any(too_near):
        i[too_near] += 1
        row_start = i * n - i * (i + 1) // 2
        row_end = (i + 1) * n - (i + 1) * (i + 2) // 2
        too_near = k >= row_end
    j = k - row_start + i + 1
    if scalar:
        return int(i[0]), int(j[0])
    return i, j


# ---------------------------------------------------------------------------
# flips and budgets
# ---------------------------------------------------------------------------


def apply_flips(g: Graph, flips: EdgeFlipSet) -> Graph:
    """Toggle each listed pair: present edges are removed, absent inserted."""
    if len(flips) == 0:
        return g
    f = flips.flips
    if f.max() >= g.num_nodes:
        raise ValueError("flip pair out of range for graph")
    existing = g.edge_set()
    flip_keys = {(int(i), int(j)) for i, j in f}
    kept = [e for e in map(tuple, g.edges.tolist()) if e not in flip_keys]
    added = [p for p in flip_keys if p not in existing]
    new_edges = np.array(sorted(kept + added), dtype=np.int64).reshape(-1, 2)
    return replace(g, edges=new_edges, name=g.name)


def budget_from_fraction(g: Graph, fraction: float) -> int:
    """Edge-flip budget as floor(fraction * undirected edge count)."""
    if fraction < 0:
        raise ValueError("budget fraction must be >= 0")
    return int(math.floor(fraction * g.num_edges))


def jaccard_purify(g: Graph, tau: float = 0.0) -> Graph:
    """Remove every edge whose endpoint feature Jaccard similarity is <= tau.

    Requires binary features; similarity is computed over nonzero feature
    coordinates.  Idempotent, never adds edges.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if not g.has_binary_features():
        raise ValueError("jaccard_purify requires binary features")
    if g.num_edges == 0:
        return g
    x = g.features.astype(bool)
    xi = x[g.edges[:, 0]]
    xj = x[g.edges[:, 1]]
    inter = np.sum(xi & xj, axis=1).astype(np.float64)
    union = np.sum(xi | xj, axis=1).astype(np.float64)
    sim = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    kept = g.edges[sim > tau]
    return replace(g, edges=kept, name=g.name)


# ---------------------------------------------------------------------------
# adjacency normalization (differentiable)
# ---------------------------------------------------------------------------


@dataclass
class DirectedEdges:
    """Directed edge structure with a differentiable per-edge weight tensor."""

    src: np.ndarray
    dst: np.ndarray
    weights: ad.Tensor
    num_nodes: int


def symmetric_expand(pairs: np.ndarray, weights: ad.Tensor, n: int) -> DirectedEdges:
    """Expand one weight per undirected pair to both directions."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    w2 = ad.concat([weights, weights], axis=0)
    return DirectedEdges(src, dst, w2, n)


def normalize_adjacency(pairs: np.ndarray, weights, n: int) -> DirectedEdges:
    """Symmetric GCN normalization with implicit unit self-loops.

    Given one weight per undirected pair, returns directed edges (both
    directions plus self-loops) with weight w_ij / sqrt(deg_i * deg_j) where
    deg = 1 + weighted degree.  Differentiable w.r.t. the input weights.
    """
    weights = ad.as_tensor(weights)
    if np.any(weights.data < 0):
        raise ValueError("adjacency weights must be >= 0")
    und = symmetric_expand(pairs, weights, n)
    deg = ad.add(
        ad.Tensor(np.ones(n, dtype=weights.data.dtype)),
        ad.scatter_add_rows(und.weights, und.dst, n),
    )
    inv_sqrt = ad.power_const(deg, -0.5)
    w_norm = ad.mul(
        und.weights,
        ad.mul(ad.gather_rows(inv_sqrt, und.src), ad.gather_rows(inv_sqrt, und.dst)),
    )
    loop_w = ad.mul(inv_sqrt, inv_sqrt)  # 1 / deg
    loops = np.arange(n, dtype=np.int64)
    return DirectedEdges(
        np.concatenate([und.src, loops]),
        np.concatenate([und.dst, loops]),
        ad.concat([w_norm, loop_w], axis=0),
        n,
    )


# ---------------------------------------------------------------------------
# flip-set serialization
# ---------------------------------------------------------------------------


def write_flips(
    flips: EdgeFlipSet, path, stage: str, budget: int, seed: int
) -> None:
    """CSV with a provenance header: base graph id, stage, budget, seed."""
    path = Path(path)
    lines = [
        f"# base_graph: {flips.relative_to}",
        f"# stage: {stage}",
        f"# budget: {budget}",
        f"# seed: {seed}",
    ]
    lines += [f"{int(i)},{int(j)}" for i, j in flips.flips]
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.rename(path)


def read_flips(path) -> tuple[EdgeFlipSet, dict]:
    meta: dict = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = val.strip()
        else:
            i, j = line.split(",")
            rows.append((int(i), int(j)))
    flips = np.array(rows, dtype=np.int64).reshape(-1, 2)
    return EdgeFlipSet(flips, meta.get("base_graph", "unknown")), meta
