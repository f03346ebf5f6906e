"""Command line entry point: ``latentcf train | sweep | heatmap``.

Every long option can also be set through an environment variable named
``LATENTCF_`` plus the option name upper-cased with dashes turned into
underscores, e.g. ``LATENTCF_SAMPLES=50``. Explicit flags win over the
environment.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path


from . import __version__, bench, cfgen, metrics, models
from .dataio import IdxFormatError, load_split

ENV_PREFIX = "LATENTCF_"
CLASSIFIER_FILE = "classifier.lcf"
AUTOENCODER_FILE = "autoencoder.lcf"

log = logging.getLogger("latentcf")


class CliError(Exception):
    pass


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _method_list(text: str) -> tuple[str, ...]:
    methods = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [m for m in methods if m not in cfgen.METHODS]
    if bad:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {', '.join(bad)}; choose from {', '.join(cfgen.METHODS)}")
    return methods


def _lr_spec(text: str) -> dict:
    """``0.1`` sets every method; ``latent-cf=5,feature-gd=0.2`` sets some."""
    out = {}
    try:
        for part in text.split(","):
            if "=" in part:
                name, val = part.split("=", 1)
                name = name.strip()
                if name not in cfgen.METHODS:
                    raise argparse.ArgumentTypeError(f"unknown method {name!r} in --lr")
                out[name] = float(val)
            elif part.strip():
                out.update({m: float(part) for m in cfgen.METHODS})
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --lr value {text!r}")
    return out


def _flag(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default="data/mnist-subset",
                   help="directory holding the four IDX files (optionally .gz)")
    p.add_argument("--models", default="models", help="directory of model files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _generator_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--methods", type=_method_list, default=cfgen.METHODS,
                   help="comma-separated subset of " + ",".join(cfgen.METHODS))
    p.add_argument("--tol", type=float, default=cfgen.DEFAULT_TOL)
    p.add_argument("--lr", type=_lr_spec, default={},
                   help="one value for all methods or method=value pairs")
    p.add_argument("--max-iters", type=int, default=cfgen.DEFAULT_MAX_ITERS)
    p.add_argument("--mad-lambda", type=float, default=cfgen.DEFAULT_MAD_LAMBDA)
    p.add_argument("--kde-bins", type=int, default=metrics.DEFAULT_BINS)
    p.add_argument("--kde-bandwidth", type=float, default=metrics.DEFAULT_BANDWIDTH)
    p.add_argument("--change-eps", type=float, default=metrics.DEFAULT_CHANGE_EPS)
    w = cfgen.PrototypeLossWeights()
    p.add_argument("--proto-c", type=float, default=w.c)
    p.add_argument("--proto-beta", type=float, default=w.beta)
    p.add_argument("--proto-wae", type=float, default=w.w_ae)
    p.add_argument("--proto-wproto", type=float, default=w.w_proto)
    p.add_argument("--proto-k", type=int, default=cfgen.DEFAULT_PROTO_K)
    p.add_argument("--proto-c-steps", type=int, default=4)
    p.add_argument("--proto-early-stop", type=_flag, nargs="?", const=True, default=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentcf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the classifier and the autoencoder")
    _common(t)
    t.add_argument("--latent-dim", type=int, default=models.DEFAULT_LATENT_DIM)
    t.add_argument("--clf-epochs", type=int, default=models.CLASSIFIER_CONFIG.epochs)
    t.add_argument("--ae-epochs", type=int, default=models.AUTOENCODER_CONFIG.epochs)

    s = sub.add_parser("sweep", help="generate counterfactuals and write metric CSVs")
    _common(s)
    _generator_opts(s)
    s.add_argument("--out", default="results")
    s.add_argument("--target-p", type=_float_list, default=bench.DEFAULT_TARGETS)
    s.add_argument("--proto-target-p", type=_float_list, default=(0.5,),
                   help="targets at which prototype-cf runs (it is the slow one)")
    s.add_argument("--samples", type=int, default=bench.DEFAULT_SAMPLES)
    s.add_argument("--workers", type=int, default=1)

    h = sub.add_parser("heatmap", help="write PGM images for one counterfactual")
    _common(h)
    _generator_opts(h)
    h.add_argument("--out", default="heatmaps")
    h.add_argument("--method", choices=cfgen.METHODS, default="latent-cf")
    h.add_argument("--target-p", type=float, default=0.5)
    h.add_argument("--sample-id", type=int, default=0,
                   help="index into the filtered test split")

    # a bad value only matters for the subcommand that is actually run
    parser.env_errors = {name: _apply_env(p) for name, p in
                         (("train", t), ("sweep", s), ("heatmap", h))}
    return parser


def _apply_env(p: argparse.ArgumentParser, environ=None) -> list[str]:
    """Use ``LATENTCF_*`` variables as defaults; returns conversion errors."""
    environ = os.environ if environ is None else environ
    errors = []
    for action in p._actions:
        longs = [o for o in action.option_strings if o.startswith("--")]
        if not longs or action.dest in ("help", "version", "verbose"):
            continue
        key = ENV_PREFIX + longs[0][2:].upper().replace("-", "_")
        if key in environ:
            raw = environ[key]
            try:
                value = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                errors.append(f"{key}: {exc}")
                continue
            p.set_defaults(**{action.dest: value})
    return errors


# -- commands ---------------------------------------------------------------

def _load_data(data_dir):
    if not Path(data_dir).is_dir():
        raise CliError(f"data directory not found: {data_dir}")
    return load_split(data_dir, "train"), load_split(data_dir, "test")


def _load_models(model_dir):
    paths = [Path(model_dir) / CLASSIFIER_FILE, Path(model_dir) / AUTOENCODER_FILE]
    for path in paths:
        if not path.is_file():
            raise CliError(f"model file not found: {path} (run 'latentcf train' first)")
    clf, ae = (models.load_model(p) for p in paths)
    if not isinstance(clf, models.Classifier) or not isinstance(ae, models.Autoencoder):
        raise CliError(f"unexpected model kinds in {model_dir}")
    return clf, ae


def cmd_train(args) -> int:
    train, test = _load_data(args.data)
    out = Path(args.models)
    out.mkdir(parents=True, exist_ok=True)
    c = models.CLASSIFIER_CONFIG
    clf_cfg = models.TrainConfig(args.clf_epochs, c.batch_size, c.lr, args.seed, c.momentum,
                                 c.weight_decay, c.label_smoothing)
    a = models.AUTOENCODER_CONFIG
    ae_cfg = models.TrainConfig(args.ae_epochs, a.batch_size, a.lr, args.seed, a.momentum,
                                a.weight_decay, a.label_smoothing)
    t0 = time.perf_counter()
    clf = models.train_classifier(train, clf_cfg)
    t1 = time.perf_counter()
    ae = models.train_autoencoder(train, args.latent_dim, ae_cfg)
    t2 = time.perf_counter()
    models.save_model(clf, out / CLASSIFIER_FILE)
    models.save_model(ae, out / AUTOENCODER_FILE)
    print(f"classifier: train_acc={models.accuracy(clf, train):.4f} "
          f"test_acc={models.accuracy(clf, test):.4f} seconds={t1 - t0:.1f}")
    print(f"autoencoder: train_mse={models.reconstruction_mse(ae, train):.5f} "
          f"test_mse={models.reconstruction_mse(ae, test):.5f} seconds={t2 - t1:.1f}")
    print(f"wrote {out / CLASSIFIER_FILE} and {out / AUTOENCODER_FILE}")
    return 0


def _run_config(args, **extra) -> bench.RunConfig:
    lr = dict(cfgen.DEFAULT_LR)
    lr.update(args.lr)
    return bench.RunConfig(
        data=str(args.data), models=str(args.models), out=str(args.out),
        methods=tuple(args.methods), seed=args.seed, tol=args.tol, lr=lr,
        max_iters=args.max_iters, mad_lambda=args.mad_lambda, kde_bins=args.kde_bins,
        kde_bandwidth=args.kde_bandwidth, change_eps=args.change_eps,
        proto_c=args.proto_c, proto_beta=args.proto_beta, proto_wae=args.proto_wae,
        proto_wproto=args.proto_wproto, proto_k=args.proto_k,
        proto_c_steps=args.proto_c_steps, proto_early_stop=args.proto_early_stop, **extra)


def cmd_sweep(args) -> int:
    cfg = _run_config(args, target_p=tuple(args.target_p),
                      proto_target_p=tuple(args.proto_target_p), samples=args.samples,
                      workers=args.workers)
    train, test = _load_data(args.data)
    clf, ae = _load_models(args.models)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    b = bench.Bench(cfg, train, test, clf, ae)
    t0 = time.perf_counter()
    rows = b.run()
    wall = time.perf_counter() - t0
    bench.write_detail_csv(out / "detail.csv", rows)
    report = bench.write_aggregate_csv(out / "aggregate.csv", rows)
    bench.write_config_json(out / "config.json", cfg, {
        "precompute_seconds": b.precompute_seconds,
        "sweep_wall_seconds": wall,
        "n_train": len(train), "n_test": len(test),
        "version": __version__,
    })
    for g in report:
        s = g.metrics
        print(f"{g.method:16s} p={g.target_p:<5g} n={g.n:<4d} "
              f"indist={s['indist_score'].mean:.4f} sparsity={s['sparsity'].mean:.4f} "
              f"time_ms={1e3 * s['time_s'].mean:.2f}")
    print(f"wrote {len(rows)} rows to {out / 'detail.csv'}")
    return 0


def cmd_heatmap(args) -> int:
    cfg = _run_config(args, target_p=(args.target_p,), proto_target_p=(args.target_p,),
                      samples=0)
    train, test = _load_data(args.data)
    if not 0 <= args.sample_id < len(test):
        raise CliError(f"sample-id {args.sample_id} out of range [0, {len(test)})")
    clf, ae = _load_models(args.models)
    b = bench.Bench(cfg, train, test, clf, ae)
    res = b.generate(args.method, args.target_p, args.sample_id)
    tc = b.target_class(args.sample_id)
    paths = bench.write_heatmap(args.out, test.images[args.sample_id], res.x_cf, test.side,
                                b.kde[tc])
    print(f"{args.method} sample {args.sample_id}: converged={res.converged} "
          f"iterations={res.iterations} final_prob={res.final_prob:.4f}")
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "heatmap": cmd_heatmap}


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if parser.env_errors[args.command]:
            raise CliError(parser.env_errors[args.command][0])
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (IdxFormatError, models.ModelFileError, ValueError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
