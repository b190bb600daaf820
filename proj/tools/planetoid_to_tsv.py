#!/usr/bin/env python3
"""Convert Planetoid ind.<name>.* files (Cora, Citeseer, Pubmed) to the gist dataset format.

Usage: planetoid_to_tsv.py RAW_DIR NAME OUT_DIR

Uses the standard split: the labelled training rows, the next 500 nodes for
validation and ind.<name>.test.index for test.
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def load_raw(raw_dir, name):
    parts = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        parts[key] = load_pickle(raw_dir / f"ind.{name}.{key}")
    test_index = [int(line) for line in (raw_dir / f"ind.{name}.test.index").read_text().split()]
    return parts, test_index


def to_dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def assemble(parts, test_index, name):
    allx, tx = to_dense(parts["allx"]), to_dense(parts["tx"])
    ally, ty = np.asarray(parts["ally"]), np.asarray(parts["ty"])
    test_sorted = np.sort(test_index)
    if name == "citeseer":
        # Isolated test nodes are missing from tx/ty; pad them with zero rows.
        full = np.arange(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = np.zeros((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min()] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min()] = ty
        tx, ty = tx_ext, ty_ext
    features = np.vstack([allx, tx])
    onehot = np.vstack([ally, ty])
    features[test_index] = features[test_sorted]
    onehot[test_index] = onehot[test_sorted]
    labels = onehot.argmax(axis=1)
    labels[onehot.sum(axis=1) == 0] = 0

    n = features.shape[0]
    edges = set()
    self_loops = 0
    raw_edges = 0
    for u, nbrs in parts["graph"].items():
        for v in nbrs:
            raw_edges += 1
            if u == v:
                self_loops += 1
                continue
            if u < n and v < n:
                edges.add((min(u, v), max(u, v)))

    n_train = len(parts["y"])
    split = {}
    for i in range(n_train):
        split[i] = "train"
    for i in range(n_train, min(n_train + 500, n)):
        split[i] = "val"
    for i in test_index:
        split[i] = "test"
    stats = {"nodes": n, "raw_edges": raw_edges, "self_loops": self_loops, "edges": len(edges)}
    return features, labels, int(onehot.shape[1]), sorted(edges), split, stats


def write(out_dir, name, features, labels, num_classes, edges, split):
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"name": name, "num_classes": num_classes, "num_features": int(features.shape[1])}
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    with open(out_dir / "nodes.tsv", "w", newline="\n") as f:
        for i, row in enumerate(features):
            f.write("\t".join([str(i), *(repr(float(v)) for v in row), str(int(labels[i]))]) + "\n")
    with open(out_dir / "edges.tsv", "w", newline="\n") as f:
        for u, v in edges:
            f.write(f"{u}\t{v}\n")
    with open(out_dir / "splits.tsv", "w", newline="\n") as f:
        for i in sorted(split):
            f.write(f"{i}\t{split[i]}\n")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("raw_dir", type=Path)
    ap.add_argument("name", choices=["cora", "citeseer", "pubmed"])
    ap.add_argument("out_dir", type=Path)
    args = ap.parse_args(argv)
    try:
        parts, test_index = load_raw(args.raw_dir, args.name)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    features, labels, k, edges, split, stats = assemble(parts, test_index, args.name)
    write(args.out_dir, args.name, features, labels, k, edges, split)
    print(json.dumps(stats))
    return 0


if __name__ == "__main__":
    sys.exit(main())
