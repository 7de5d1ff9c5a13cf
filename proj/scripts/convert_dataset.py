#!/usr/bin/env python3
"""Convert the official binary dataset distributions into the directory
format the library loads (meta.json, edges.csv, features.csv, labels.csv,
masks.csv).

The `bgnn convert` subcommand ingests the plain-text distributions and
synthesizes deterministic splits. This script instead reads the official
binary files and preserves their published splits, which is what the
accuracy reference numbers assume:

  planetoid  ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}
             (cora, citeseer): fixed 20-per-class train nodes, the next
             500 nodes validate, the published 1000-node test set.
  node-table out1_node_feature_label.txt + out1_graph_edges.txt plus an
             official split file out1_split_0.6_0.2_<k>.npz
             (texas, actor): the split stored in the .npz is used as-is.

Usage:
  python3 scripts/convert_dataset.py planetoid RAW_DIR OUT_DIR --name cora
  python3 scripts/convert_dataset.py node-table RAW_DIR OUT_DIR \
      --split RAW_DIR/out1_split_0.6_0.2_0.npz --name texas

Requires numpy; the planetoid format additionally requires scipy.
"""

import argparse
import json
import os
import pickle
import sys


def die(message):
    print("error: " + message, file=sys.stderr)
    raise SystemExit(2)


def save_dataset(out_dir, name, features, labels, edges, num_classes, masks):
    """Write the library's dataset directory. Features are stored raw with
    row_normalize=true, so the loader applies the usual row normalization."""
    n, d0 = features.shape
    train, val, test = masks
    if not (len(labels) == len(train) == len(val) == len(test) == n):
        die("node count mismatch between features, labels, and masks")
    for i in range(n):
        if int(train[i]) + int(val[i]) + int(test[i]) > 1:
            die("overlapping masks at node %d" % i)
    os.makedirs(out_dir, exist_ok=True)

    meta = {
        "n": n,
        "d0": d0,
        "num_classes": int(num_classes),
        "name": name,
        "row_normalize": True,
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "edges.csv"), "w") as f:
        for a, b in sorted(edges):
            f.write("%d,%d\n" % (a, b))
    with open(os.path.join(out_dir, "features.csv"), "w") as f:
        for r in range(n):
            f.write(",".join(format(v, ".17g") for v in features[r]))
            f.write("\n")
    with open(os.path.join(out_dir, "labels.csv"), "w") as f:
        for y in labels:
            f.write("%d\n" % int(y))
    with open(os.path.join(out_dir, "masks.csv"), "w") as f:
        for i in range(n):
            f.write("%d,%d,%d\n" % (int(train[i]), int(val[i]), int(test[i])))

    print(
        "%s: %d nodes, %d edges, %d classes; split %d/%d/%d -> %s"
        % (
            name,
            n,
            len(edges),
            num_classes,
            int(sum(int(v) for v in train)),
            int(sum(int(v) for v in val)),
            int(sum(int(v) for v in test)),
            out_dir,
        )
    )


def undirected_edges(pairs, n):
    edges = set()
    for a, b in pairs:
        a, b = int(a), int(b)
        if a == b:
            continue
        if a >= n or b >= n:
            die("edge endpoint %d out of range for %d nodes" % (max(a, b), n))
        edges.add((min(a, b), max(a, b)))
    return edges


def convert_planetoid(raw_dir, out_dir, name):
    import numpy as np

    try:
        import scipy.sparse as sp
    except ImportError:
        die("the planetoid format needs scipy (pip install scipy)")

    def load(part):
        path = os.path.join(raw_dir, "ind.%s.%s" % (name, part))
        if not os.path.exists(path):
            die("missing file: " + path)
        if part == "test.index":
            with open(path) as f:
                return [int(line) for line in f if line.strip()]
        with open(path, "rb") as f:
            return pickle.load(f, encoding="latin1")

    x, y = load("x"), load("y")
    tx, ty = load("tx"), load("ty")
    allx, ally = load("allx"), load("ally")
    graph = load("graph")
    test_idx = load("test.index")

    lo, hi = min(test_idx), max(test_idx)
    if len(test_idx) != hi - lo + 1:
        # Isolated test nodes are absent from tx/ty; give them zero rows so
        # indices stay aligned. They end up in no split.
        full = hi - lo + 1
        pos = np.array(sorted(test_idx)) - lo
        tx_full = sp.lil_matrix((full, x.shape[1]), dtype=np.float64)
        tx_full[pos] = tx
        ty_full = np.zeros((full, y.shape[1]), dtype=np.float64)
        ty_full[pos] = ty
        tx, ty = tx_full, ty_full

    features = sp.vstack((allx, tx)).tolil()
    labels_1hot = np.vstack((ally, ty))
    # tx rows are stored in the published (shuffled) test order; put every
    # row at the node index it belongs to.
    order = np.array(test_idx)
    sorted_order = np.sort(order)
    features[order, :] = features[sorted_order, :]
    labels_1hot[order, :] = labels_1hot[sorted_order, :]

    dense = np.asarray(features.todense(), dtype=np.float64)
    labels = labels_1hot.argmax(axis=1)
    n = dense.shape[0]
    num_classes = y.shape[1]

    train = np.zeros(n, dtype=np.int8)
    val = np.zeros(n, dtype=np.int8)
    test = np.zeros(n, dtype=np.int8)
    train[: y.shape[0]] = 1
    # The published protocol: the 500 nodes after the training block. Capped
    # at the allx boundary so a degenerate input cannot spill into test rows.
    val[y.shape[0] : min(y.shape[0] + 500, allx.shape[0])] = 1
    test[sorted_order] = 1

    pairs = [(u, v) for u, nbrs in graph.items() for v in nbrs]
    edges = undirected_edges(pairs, n)
    save_dataset(out_dir, name, dense, labels, edges, num_classes, (train, val, test))


def convert_node_table(raw_dir, out_dir, name, split_path):
    import numpy as np

    node_path = os.path.join(raw_dir, "out1_node_feature_label.txt")
    edge_path = os.path.join(raw_dir, "out1_graph_edges.txt")
    for path in (node_path, edge_path):
        if not os.path.exists(path):
            die("missing file: " + path)

    rows = []
    with open(node_path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if ln == 1 or not line:
                continue  # header
            parts = line.split("\t")
            if len(parts) != 3:
                die("%s:%d: expected id, features, label" % (node_path, ln))
            rows.append((int(parts[0]), [float(v) for v in parts[1].split(",")],
                         int(parts[2])))

    n = len(rows)
    by_id = {}
    for node_id, feats, label in rows:
        if node_id in by_id or node_id >= n:
            die("bad or duplicate node id %d" % node_id)
        by_id[node_id] = (feats, label)

    max_value = max(max(feats) for feats, _ in by_id.values())
    if max_value > 1.0:
        # Feature cells list active indices rather than a dense 0/1 vector.
        d0 = int(max_value) + 1
        dense = np.zeros((n, d0), dtype=np.float64)
        for node_id, (feats, _) in by_id.items():
            for v in feats:
                dense[node_id, int(v)] = 1.0
    else:
        lengths = {len(feats) for feats, _ in by_id.values()}
        if len(lengths) != 1:
            die("dense feature rows disagree on length")
        dense = np.zeros((n, lengths.pop()), dtype=np.float64)
        for node_id, (feats, _) in by_id.items():
            dense[node_id] = feats

    labels = np.zeros(n, dtype=np.int64)
    for node_id, (_, label) in by_id.items():
        if label < 0:
            die("negative label at node %d" % node_id)
        labels[node_id] = label
    num_classes = int(labels.max()) + 1

    pairs = []
    with open(edge_path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if ln == 1 or not line:
                continue  # header
            parts = line.split()
            if len(parts) != 2:
                die("%s:%d: expected two node ids" % (edge_path, ln))
            pairs.append((int(parts[0]), int(parts[1])))
    edges = undirected_edges(pairs, n)

    if not os.path.exists(split_path):
        die("missing split file: " + split_path)
    split = np.load(split_path)
    for key in ("train_mask", "val_mask", "test_mask"):
        if key not in split:
            die("%s lacks array %s" % (split_path, key))
        if len(split[key]) != n:
            die("%s: %s covers %d nodes, dataset has %d"
                % (split_path, key, len(split[key]), n))
    masks = (split["train_mask"].astype(np.int8),
             split["val_mask"].astype(np.int8),
             split["test_mask"].astype(np.int8))
    save_dataset(out_dir, name, dense, labels, edges, num_classes, masks)


def main():
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    sub = parser.add_subparsers(dest="format", required=True)

    p = sub.add_parser("planetoid", help="ind.<name>.* pickle distribution")
    p.add_argument("raw_dir")
    p.add_argument("out_dir")
    p.add_argument("--name", default=None,
                   help="dataset name and file prefix (default: RAW_DIR basename)")

    p = sub.add_parser("node-table", help="out1_*.txt distribution with .npz splits")
    p.add_argument("raw_dir")
    p.add_argument("out_dir")
    p.add_argument("--split", required=True,
                   help="official split file, e.g. out1_split_0.6_0.2_0.npz")
    p.add_argument("--name", default=None,
                   help="dataset name (default: RAW_DIR basename)")

    args = parser.parse_args()
    name = args.name or os.path.basename(os.path.normpath(args.raw_dir))
    if not name:
        die("cannot infer a dataset name; pass --name")

    if args.format == "planetoid":
        convert_planetoid(args.raw_dir, args.out_dir, name)
    else:
        convert_node_table(args.raw_dir, args.out_dir, name, args.split)


if __name__ == "__main__":
    main()
