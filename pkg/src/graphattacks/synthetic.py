"""Synthetic node-classification graphs for demos and smoke tests.

The stochastic block model here produces class-correlated structure and
class-correlated binary features, so untrained-on graphs are still learnable
by every supported architecture at desk scale.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import Graph


def stochastic_block_model(
    num_nodes: int = 120,
    num_classes: int = 3,
    p_in: float = 0.08,
    p_out: float = 0.01,
    feature_dim: int = 24,
    feature_flip: float = 0.05,
    seed: int = 0,
    name: str = "sbm",
) -> Graph:
    """Planted-partition graph with noisy one-hot-block binary features.

    Nodes are assigned classes round-robin; within-class pairs connect with
    probability `p_in`, across-class pairs with `p_out`.  Each class owns a
    contiguous block of feature columns set to 1, then every bit flips with
    probability `feature_flip`.
    """
    if not (0 <= p_out <= p_in <= 1):
        raise ValueError("need 0 <= p_out <= p_in <= 1")
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes) % num_classes
    ii, jj = np.triu_indices(num_nodes, k=1)
    same = labels[ii] == labels[jj]
    prob = np.where(same, p_in, p_out)
    mask = rng.random(len(ii)) < prob
    edges = np.stack([ii[mask], jj[mask]], axis=1).astype(np.int64)

    block = feature_dim // num_classes
    features = np.zeros((num_nodes, feature_dim))
    for c in range(num_classes):
        members = labels == c
        features[np.ix_(members, np.arange(c * block, (c + 1) * block))] = 1.0
    flip = rng.random(features.shape) < feature_flip
    features = np.abs(features - flip.astype(np.float64))

    return Graph(
        num_nodes=num_nodes,
        edges=edges,
        features=features,
        labels=labels.astype(np.int64),
        num_classes=num_classes,
        name=name,
    )


def write_dataset(g: Graph, path) -> Path:
    """Write a graph in the canonical dataset directory layout
    (meta.json, edges.csv, features.csv, labels.csv)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = dict(
        num_nodes=g.num_nodes,
        feature_dim=g.feature_dim,
        num_classes=g.num_classes,
        name=g.name,
    )
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    np.savetxt(path / "edges.csv", g.edges, fmt="%d", delimiter=",")
    np.savetxt(path / "features.csv", g.features, fmt="%.10g", delimiter=",")
    np.savetxt(path / "labels.csv", g.labels, fmt="%d")
    return path
