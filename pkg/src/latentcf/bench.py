"""Sweep orchestration and the file formats written by the command line tool.

Detail CSV columns, in order::

    method, sample_id, true_class, target_class, target_p, converged,
    iterations, time_s, sparsity, indist_score, final_prob

``sample_id`` indexes the filtered test split; classes are the original digit
labels. The aggregate CSV has one row per ``(method, target_p)`` with
``n``, ``converged_rate``, ``degenerate`` and ``<metric>_{mean,std,ci95}``
for ``indist_score``, ``sparsity`` and ``time_s``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cfgen, metrics
from .dataio import LabeledDataset
from .models import Autoencoder, Classifier

log = logging.getLogger(__name__)

DETAIL_COLUMNS = ("method", "sample_id", "true_class", "target_class", "target_p",
                  "converged", "iterations", "time_s", "sparsity", "indist_score",
                  "final_prob")
DEFAULT_TARGETS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.99)
DEFAULT_SAMPLES = 200


@dataclass
class RunConfig:
    data: str = ""
    models: str = ""
    out: str = ""
    methods: tuple[str, ...] = cfgen.METHODS
    target_p: tuple[float, ...] = DEFAULT_TARGETS
    proto_target_p: tuple[float, ...] = (0.5,)
    samples: int = DEFAULT_SAMPLES
    seed: int = 0
    tol: float = cfgen.DEFAULT_TOL
    lr: dict = field(default_factory=lambda: dict(cfgen.DEFAULT_LR))
    max_iters: int = cfgen.DEFAULT_MAX_ITERS
    mad_lambda: float = cfgen.DEFAULT_MAD_LAMBDA
    kde_bins: int = metrics.DEFAULT_BINS
    kde_bandwidth: float = metrics.DEFAULT_BANDWIDTH
    change_eps: float = metrics.DEFAULT_CHANGE_EPS
    proto_c: float = cfgen.PrototypeLossWeights.c
    proto_beta: float = cfgen.PrototypeLossWeights.beta
    proto_wae: float = cfgen.PrototypeLossWeights.w_ae
    proto_wproto: float = cfgen.PrototypeLossWeights.w_proto
    proto_k: int = cfgen.DEFAULT_PROTO_K
    proto_c_steps: int = 4
    proto_early_stop: bool = False
    workers: int = 1

    def __post_init__(self):
        unknown = set(self.methods) - set(cfgen.METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        for p in (*self.target_p, *self.proto_target_p):
            if not 0.0 < p < 1.0:
                raise ValueError(f"target_p must be in (0, 1), got {p}")
        if self.samples < 0:
            raise ValueError("samples must be non-negative")

    def targets_for(self, method: str) -> tuple[float, ...]:
        if method == "prototype-cf":
            return tuple(p for p in self.target_p if p in self.proto_target_p)
        return self.target_p

    def loss_weights(self) -> cfgen.PrototypeLossWeights:
        return cfgen.PrototypeLossWeights(self.proto_c, self.proto_beta,
                                          self.proto_wae, self.proto_wproto)


def effective_tol(tol: float, target_p: float) -> float:
    """``tol`` clamped to half the distance from ``target_p`` to 0 or 1."""
    return min(tol, 0.5 * min(target_p, 1.0 - target_p))


def evaluation_indices(n_test: int, samples: int, seed: int) -> np.ndarray:
    """First ``samples`` indices of a seeded shuffle of the test split."""
    order = np.random.default_rng(seed).permutation(n_test)
    return order[:samples]


class Bench:
    """Shared immutable state for one sweep: models, MAD, KDEs, encodings."""

    def __init__(self, cfg: RunConfig, train: LabeledDataset, test: LabeledDataset,
                 clf: Classifier, ae: Autoencoder, on_result=None):
        self.cfg, self.train, self.test, self.clf, self.ae = cfg, train, test, clf, ae
        # on_result(row, result) sees every generated counterfactual
        self.on_result = on_result
        self.precompute_seconds = {}
        t = time.perf_counter()
        self.mad = cfgen.compute_mad(train)
        self.precompute_seconds["mad"] = time.perf_counter() - t
        t = time.perf_counter()
        self.kde = {c: metrics.fit_kde(train.of_class(c), cfg.kde_bins, cfg.kde_bandwidth)
                    for c in (0, 1)}
        self.precompute_seconds["kde"] = time.perf_counter() - t
        t = time.perf_counter()
        self.encodings = {c: cfgen.encode_class(train, ae, c) for c in (0, 1)}
        self.precompute_seconds["encodings"] = time.perf_counter() - t
        self.lw = cfg.loss_weights()

    def target_class(self, sample_id: int) -> int:
        return 1 - int(self.clf.predict(self.test.images[sample_id]))

    def generate(self, method: str, target_p: float, sample_id: int) -> cfgen.CfResult:
        x0 = self.test.images[sample_id]
        tc = self.target_class(sample_id)
        req = cfgen.CfRequest(x0, target_p, effective_tol(self.cfg.tol, target_p),
                              self.cfg.lr[method], self.cfg.max_iters, tc)
        if method == "feature-gd":
            return cfgen.feature_gd(req, self.clf, "plain")
        if method == "feature-gd-clip":
            return cfgen.feature_gd(req, self.clf, "clip")
        if method == "feature-gd-mad":
            return cfgen.feature_gd_mad(req, self.clf, self.mad, self.cfg.mad_lambda)
        if method == "latent-cf":
            return cfgen.latent_cf(req, self.clf, self.ae)
        if method == "prototype-cf":
            proto = cfgen.compute_prototype(x0, tc, self.train, self.ae, self.cfg.proto_k,
                                            self.encodings[tc])
            return cfgen.prototype_cf(req, self.clf, self.ae, proto, self.lw,
                                      c_steps=self.cfg.proto_c_steps,
                                      early_stop=self.cfg.proto_early_stop)
        raise ValueError(f"unknown method {method!r}")

    def row(self, method: str, target_p: float, sample_id: int) -> dict:
        res = self.generate(method, target_p, sample_id)
        x0 = self.test.images[sample_id]
        tc = self.target_class(sample_id)
        digits = (self.test.class_a, self.test.class_b)
        row = {
            "method": method,
            "sample_id": int(sample_id),
            "true_class": digits[int(self.test.labels[sample_id])],
            "target_class": digits[tc],
            "target_p": target_p,
            "converged": int(res.converged),
            "iterations": res.iterations,
            "time_s": res.elapsed_seconds,
            "sparsity": metrics.sparsity(x0, res.x_cf, self.cfg.change_eps),
            "indist_score": metrics.in_distribution_score(res.x_cf, self.kde[tc]),
            "final_prob": res.final_prob,
        }
        if self.on_result is not None:
            self.on_result(row, res)
        return row

    def work_items(self) -> list[tuple[str, float, int]]:
        ids = evaluation_indices(len(self.test), self.cfg.samples, self.cfg.seed)
        return [(m, p, int(i)) for m in self.cfg.methods for p in self.cfg.targets_for(m)
                for i in ids]

    def run(self) -> list[dict]:
        items = self.work_items()
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                rows = list(pool.map(lambda it: self.row(*it), items))
        else:
            rows = []
            for k, it in enumerate(items):
                rows.append(self.row(*it))
                if (k + 1) % 100 == 0:
                    log.info("%d / %d counterfactuals", k + 1, len(items))
        rows.sort(key=lambda r: (r["method"], r["target_p"], r["sample_id"]))
        return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_detail_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DETAIL_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in DETAIL_COLUMNS])


def aggregate_columns() -> list[str]:
    cols = ["method", "target_p", "n", "converged_rate", "degenerate"]
    for m in metrics.METRIC_NAMES:
        cols += [f"{m}_mean", f"{m}_std", f"{m}_ci95"]
    return cols


def write_aggregate_csv(path, rows) -> metrics.MetricsReport:
    report = metrics.aggregate(rows) if rows else metrics.MetricsReport(())
    conv = {}
    for r in rows:
        conv.setdefault((r["method"], float(r["target_p"])), []).append(int(r["converged"]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(aggregate_columns())
        for g in report:
            line = [g.method, _fmt(g.target_p), g.n,
                    _fmt(float(np.mean(conv[(g.method, g.target_p)]))), int(g.degenerate)]
            for m in metrics.METRIC_NAMES:
                s = g.metrics[m]
                line += [_fmt(s.mean), _fmt(s.std), _fmt(s.ci_half_width)]
            w.writerow(line)
    return report


def read_detail_csv(path) -> list[dict]:
    casts = {"sample_id": int, "true_class": int, "target_class": int, "target_p": float,
             "converged": int, "iterations": int, "time_s": float, "sparsity": float,
             "indist_score": float, "final_prob": float}
    with open(path, newline="") as fh:
        return [{k: casts.get(k, str)(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def write_config_json(path, cfg: RunConfig, extra: dict | None = None) -> None:
    payload = {"config": asdict(cfg)}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- images -----------------------------------------------------------------

def to_gray(x) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x) * 255.0), 0, 255).astype(np.uint8)


def diff_to_gray(d) -> np.ndarray:
    """Signed difference to bytes: 0 maps to 128, +-1 to 255 / 1."""
    return np.clip(np.rint(128.0 + 127.0 * np.asarray(d)), 0, 255).astype(np.uint8)


def write_pgm(path, pixels: np.ndarray, side: int) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(side, side)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = map(int, tokens[1:])
    body = data[pos + 1:]
    if len(body) != w * h or maxval != 255:
        raise ValueError("unexpected PGM payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def write_heatmap(out_dir, x0, x_cf, side: int, kde: metrics.PixelKde | None = None) -> dict:
    """Original, counterfactual and signed-difference PGMs plus CSV exports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diff = np.asarray(x_cf) - np.asarray(x0)
    paths = {
        "original": out / "original.pgm",
        "counterfactual": out / "counterfactual.pgm",
        "difference": out / "difference.pgm",
        "difference_csv": out / "difference.csv",
    }
    write_pgm(paths["original"], to_gray(x0), side)
    write_pgm(paths["counterfactual"], to_gray(x_cf), side)
    write_pgm(paths["difference"], diff_to_gray(diff), side)
    np.savetxt(paths["difference_csv"], diff.reshape(side, side), delimiter=",", fmt="%.10g")
    if kde is not None:
        paths["pixel_scores_csv"] = out / "pixel_scores.csv"
        with open(paths["pixel_scores_csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pixel", "original_prob", "counterfactual_prob"])
            for j, (a, b) in enumerate(zip(kde.pixel_probabilities(x0),
                                           kde.pixel_probabilities(x_cf))):
                w.writerow([j, repr(float(a)), repr(float(b))])
    return paths
