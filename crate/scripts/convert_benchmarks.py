#!/usr/bin/env python3
"""Convert the benchmark archives into the `u,y` CSV files read by `inn`.

    convert_benchmarks.py dryer.dat data/hair_dryer.csv --u 0 --y 1
    convert_benchmarks.py exchanger.dat data/heat_exchanger.csv --u 1 --y 2
    convert_benchmarks.py mrdamper.mat data/mr_damper.csv --u V --y F

Whitespace-separated text files select columns by zero-based index. MATLAB
`.mat` files select variables by name and need scipy.
"""

import argparse
import csv
import sys


def load_text(path, u_col, y_col):
    rows = []
    with open(path) as f:
        for line in f:
            fields = line.split()
            if not fields or fields[0].startswith(("%", "#")):
                continue
            rows.append((float(fields[int(u_col)]), float(fields[int(y_col)])))
    return rows


def load_mat(path, u_var, y_var):
    from scipy.io import loadmat

    m = loadmat(path)
    u = m[u_var].ravel()
    y = m[y_var].ravel()
    if len(u) != len(y):
        sys.exit(f"{path}: {u_var} has {len(u)} samples, {y_var} has {len(y)}")
    return list(zip(u.tolist(), y.tolist()))


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("source")
    p.add_argument("dest")
    p.add_argument("--u", required=True, help="input column index or .mat variable")
    p.add_argument("--y", required=True, help="output column index or .mat variable")
    p.add_argument("--samples", type=int, help="expected sample count")
    args = p.parse_args()

    if args.source.endswith(".mat"):
        rows = load_mat(args.source, args.u, args.y)
    else:
        rows = load_text(args.source, args.u, args.y)
    if args.samples is not None and len(rows) != args.samples:
        sys.exit(f"{args.source}: expected {args.samples} samples, found {len(rows)}")

    with open(args.dest, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["u", "y"])
        for u, y in rows:
            w.writerow([repr(u), repr(y)])
    print(f"{args.dest}: {len(rows)} samples")


if __name__ == "__main__":
    main()
