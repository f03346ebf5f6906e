"""Train both models, run the default sweep, export a few heat maps, print tables.

    python scripts/run_all.py --out runs/default

Extra arguments after ``--`` are passed to ``latentcf sweep``.
"""

import argparse
import sys
from pathlib import Path

from latentcf import cli

sys.path.insert(0, str(Path(__file__).resolve().parent))
import report  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="data/mnist-subset")
    ap.add_argument("--out", type=Path, default=Path("runs/default"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--heatmap-samples", type=int, nargs="*", default=[0, 1, 2])
    ap.add_argument("sweep_args", nargs=argparse.REMAINDER)
    args = ap.parse_args(argv)
    extra = [a for a in args.sweep_args if a != "--"]

    models_dir = args.out / "models"
    common = ["--data", args.data, "--models", str(models_dir), "--seed", str(args.seed)]
    steps = [["train", *common],
             ["sweep", *common, "--out", str(args.out / "sweep"), *extra]]
    for sid in args.heatmap_samples:
        for method in ("feature-gd", "feature-gd-clip", "latent-cf"):
            steps.append(["heatmap", *common, "--method", method, "--sample-id", str(sid),
                          "--out", str(args.out / "heatmaps" / f"{sid:03d}-{method}")])
    for step in steps:
        print("$ latentcf " + " ".join(step), flush=True)
        code = cli.main(step)
        if code:
            return code
    print()
    return report.main([str(args.out / "sweep")])


if __name__ == "__main__":
    sys.exit(main())
