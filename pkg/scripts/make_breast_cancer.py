"""Rebuild the scaled breast-cancer LIBSVM file from the Wisconsin biopsy table.

Input is the MASS ``biopsy`` CSV (as shipped, for example, inside the
``pydataset`` package resources): columns ID, V1..V9 and class. Rows with
missing values are dropped (683 remain). All ten numeric columns, ID
included, are min-max scaled to [-1, 1] the way ``svm-scale`` does, and the
classes become 2 (benign) and 4 (malignant).

Usage::

    python3 scripts/make_breast_cancer.py biopsy.csv data/breast-cancer_scale
"""

import argparse
import csv

import numpy as np


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("biopsy_csv")
    ap.add_argument("output")
    args = ap.parse_args(argv)

    rows, labels = [], []
    with open(args.biopsy_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            fields = [rec["ID"]] + [rec[f"V{k}"] for k in range(1, 10)]
            if any(v in ("", "NA") for v in fields):
                continue
            rows.append([float(v) for v in fields])
            labels.append(2 if rec["class"] == "benign" else 4)
    x = np.array(rows)
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = -1.0 + 2.0 * (x - lo) / span

    with open(args.output, "w") as out:
        for label, row in zip(labels, scaled):
            feats = " ".join(f"{j + 1}:{v:.6g}" for j, v in enumerate(row) if v != 0.0)
            out.write(f"{label} {feats}\n")
    print(f"wrote {len(labels)} rows to {args.output}")


if __name__ == "__main__":
    main()
