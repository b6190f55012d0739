#!/usr/bin/env python3
"""Convert the Planetoid citation files (ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index})
into the plain layout read by gbgnn:

    features.tsv  labels.tsv  edges.txt  split.json  meta.json

Standard public split: the first |y| nodes train, the next 500 validation,
the test.index nodes test. CiteSeer's missing test ids are padded with
all-zero feature rows (3327 nodes); padded nodes get label 0 and belong to
no split.

Usage: planetoid_to_tsv.py RAW_DIR NAME OUT_DIR
Needs numpy and scipy (the raw files are pickled scipy/numpy objects).
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def convert(raw: Path, name: str, out: Path) -> dict:
    x, y, tx, ty, allx, ally, graph = (load(raw, name, p) for p in
                                       ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_idx)

    if name == "citeseer":
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), y.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack((allx, tx)).tolil()
    features[test_idx, :] = features[test_sorted, :]
    onehot = np.vstack((ally, ty))
    onehot[test_idx, :] = onehot[test_sorted, :]
    labels = onehot.argmax(axis=1)

    n, c = features.shape
    k = onehot.shape[1]
    out.mkdir(parents=True, exist_ok=True)

    dense = features.toarray()
    with open(out / "features.tsv", "w") as f:
        for row in dense:
            f.write("\t".join(repr(float(v)) for v in row) + "\n")
    with open(out / "labels.tsv", "w") as f:
        f.writelines(f"{int(v)}\n" for v in labels)

    # Adjacency lists list each undirected edge from both ends; keep one
    # line per unordered pair. Self-loops are kept so the loader can count them.
    pairs = set()
    for i, nbrs in graph.items():
        for j in nbrs:
            pairs.add((min(i, j), max(i, j)))
    with open(out / "edges.txt", "w") as f:
        for i, j in sorted(pairs):
            f.write(f"{i} {j}\n")

    split = {
        "train": list(range(len(y))),
        "val": list(range(len(y), len(y) + 500)),
        "test": [int(v) for v in test_sorted],
    }
    (out / "split.json").write_text(json.dumps(split) + "\n")
    meta = {"n": int(n), "c": int(c), "k": int(k), "edge_lines": len(pairs)}
    (out / "meta.json").write_text(json.dumps(meta) + "\n")
    return meta


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("raw_dir", type=Path)
    ap.add_argument("name", choices=["cora", "citeseer", "pubmed"])
    ap.add_argument("out_dir", type=Path)
    args = ap.parse_args(argv)
    meta = convert(args.raw_dir, args.name, args.out_dir)
    print(f"{args.name}: {meta['n']} nodes, {meta['c']} features, {meta['k']} classes, "
          f"{meta['edge_lines']} edge lines -> {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
