"""Print the method comparison and the target-probability trend from a sweep.

    python scripts/report.py results/
"""

import argparse
import csv
import sys
from pathlib import Path

from latentcf.cfgen import METHODS


def load(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cell(row, metric, scale=1.0, digits=3):
    mean = float(row[f"{metric}_mean"]) * scale
    ci = float(row[f"{metric}_ci95"]) * scale
    return f"{mean:.{digits}f} +- {ci:.{digits}f}"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("results", type=Path)
    ap.add_argument("--target-p", type=float, default=0.5)
    args = ap.parse_args(argv)

    agg_path = args.results / "aggregate.csv"
    if not agg_path.is_file():
        print(f"error: {agg_path} not found", file=sys.stderr)
        return 1
    rows = load(agg_path)
    by_key = {(r["method"], float(r["target_p"])): r for r in rows}

    print(f"## Methods at target_p = {args.target_p:g}\n")
    print("| method | n | converged | sparsity | in-dist score | time (ms) |")
    print("|---|---|---|---|---|---|")
    for m in METHODS:
        r = by_key.get((m, args.target_p))
        if r is None:
            continue
        print(f"| {m} | {r['n']} | {float(r['converged_rate']):.3f} | {cell(r, 'sparsity')} "
              f"| {cell(r, 'indist_score', digits=4)} | {cell(r, 'time_s', 1e3, 2)} |")

    targets = sorted({p for _, p in by_key})
    print("\n## In-distribution score by target_p\n")
    print("| method | " + " | ".join(f"{p:g}" for p in targets) + " |")
    print("|---|" + "---|" * len(targets))
    for m in METHODS:
        vals = [by_key.get((m, p)) for p in targets]
        if not any(vals):
            continue
        cells = [f"{float(v['indist_score_mean']):.4f}" if v else "" for v in vals]
        print(f"| {m} | " + " | ".join(cells) + " |")
    return 0


if __name__ == "__main__":
    sys.exit(main())
