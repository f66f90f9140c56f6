#!/usr/bin/env python3
"""Convert public citation-network distributions to the canonical dataset
layout (meta.json, edges.csv, features.csv, labels.csv).

Two input formats are supported:

  planetoid  The pickled `ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}`
             files from https://github.com/kimiyoung/planetoid (also shipped
             with the original GCN repository).  Works for cora, citeseer
             and pubmed.

  content    The `<name>.content` / `<name>.cites` tab-separated files from
             the LINQS distribution of cora and citeseer.

Usage:
  python3 scripts/convert_planetoid.py --format planetoid \
      --input /path/to/raw --name cora --out data/cora
"""

from __future__ import annotations

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def _load_pickle(path: Path):
    with path.open("rb") as fh:
        return pickle.load(fh, encoding="latin1")


def load_planetoid(raw: Path, name: str):
    parts = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        parts[key] = _load_pickle(raw / f"ind.{name}.{key}")
    test_idx = np.loadtxt(raw / f"ind.{name}.test.index", dtype=np.int64)

    features = sp.vstack([parts["allx"], parts["tx"]]).tolil()
    labels_onehot = np.vstack([parts["ally"], parts["ty"]])
    # test rows arrive shuffled; restore their original positions (citeseer
    # additionally has isolated test nodes missing from the files entirely)
    full = np.arange(test_idx.min(), test_idx.max() + 1)
    if len(full) > len(test_idx):
        ext_feat = sp.lil_matrix((len(full), features.shape[1]))
        ext_lab = np.zeros((len(full), labels_onehot.shape[1]))
        pos = test_idx - test_idx.min()
        ext_feat[pos] = features[-len(test_idx):]
        ext_lab[pos] = labels_onehot[-len(test_idx):]
        features = sp.vstack([features[: -len(test_idx)], ext_feat]).tolil()
        labels_onehot = np.vstack([labels_onehot[: -len(test_idx)], ext_lab])
    else:
        order = np.argsort(test_idx)
        sorted_rows = np.arange(len(test_idx))[order]
        features[test_idx[order]] = features[features.shape[0] - len(test_idx) + sorted_rows]
        labels_onehot[test_idx[order]] = labels_onehot[
            labels_onehot.shape[0] - len(test_idx) + sorted_rows
        ]

    n = features.shape[0]
    edges = set()
    for u, nbrs in parts["graph"].items():
        for v in nbrs:
            if u == v or u >= n or v >= n:
                continue
            edges.add((min(u, v), max(u, v)))
    edges = np.array(sorted(edges), dtype=np.int64)
    labels = labels_onehot.argmax(axis=1).astype(np.int64)
    return np.asarray(features.todense(), dtype=np.float64), edges, labels


def load_content(raw: Path, name: str):
    content = [line.split("\t") for line in (raw / f"{name}.content").read_text().splitlines() if line]
    ids = [row[0] for row in content]
    id_to_idx = {pid: i for i, pid in enumerate(ids)}
    features = np.array([[float(v) for v in row[1:-1]] for row in content])
    class_names = sorted({row[-1] for row in content})
    class_to_idx = {c: i for i, c in enumerate(class_names)}
    labels = np.array([class_to_idx[row[-1]] for row in content], dtype=np.int64)

    edges = set()
    for line in (raw / f"{name}.cites").read_text().splitlines():
        if not line.strip():
            continue
        a, b = line.split()
        if a in id_to_idx and b in id_to_idx and a != b:
            u, v = id_to_idx[a], id_to_idx[b]
            edges.add((min(u, v), max(u, v)))
    return features, np.array(sorted(edges), dtype=np.int64), labels


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--format", choices=("planetoid", "content"), required=True)
    parser.add_argument("--input", type=Path, required=True,
                        help="directory with the raw files")
    parser.add_argument("--name", required=True,
                        help="dataset stem, e.g. cora / citeseer / pubmed")
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--binarize", action="store_true",
                        help="threshold features to {0,1} (recommended; "
                        "pubmed ships tf-idf values)")
    args = parser.parse_args(argv)

    loader = load_planetoid if args.format == "planetoid" else load_content
    features, edges, labels = loader(args.input, args.name)
    if args.binarize:
        features = (features > 0).astype(np.float64)

    n, d = features.shape
    args.out.mkdir(parents=True, exist_ok=True)
    meta = dict(
        num_nodes=int(n),
        feature_dim=int(d),
        num_classes=int(labels.max()) + 1,
        name=args.name,
    )
    (args.out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    np.savetxt(args.out / "edges.csv", edges, fmt="%d", delimiter=",")
    np.savetxt(args.out / "features.csv", features, fmt="%.10g", delimiter=",")
    np.savetxt(args.out / "labels.csv", labels, fmt="%d")
    print(f"wrote {args.out}: {n} nodes, {len(edges)} undirected edges, "
          f"{meta['num_classes']} classes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
