"""Counterfactual generators.

All five generators share one request/result shape. ``target_p`` is the
desired probability of ``target_class``; for ``target_class == 0`` the
classifier's sigmoid output is mirrored (``1 - f(x)``) internally.

Latent-CF and the two plain feature-space descents stop once the target-class
probability is within ``tol`` of ``target_p``. Prototype-CF only requires the
probability to reach ``target_p`` from below.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import ndnet
from .dataio import LabeledDataset
from .models import Autoencoder, Classifier

log = logging.getLogger(__name__)

MAD_EPSILON = 1e-6

DEFAULT_TOL = 0.01
DEFAULT_MAX_ITERS = 2000
DEFAULT_LR = {
    "feature-gd": 0.1,
    "feature-gd-clip": 0.1,
    "feature-gd-mad": 0.1,
    "prototype-cf": 0.1,
    "latent-cf": 5.0,
}
DEFAULT_MAD_LAMBDA = 1e-9
DEFAULT_PROTO_K = 5
METHODS = tuple(DEFAULT_LR)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class CfRequest:
    x0: np.ndarray
    target_p: float = 0.5
    tol: float = DEFAULT_TOL
    lr: float = 0.1
    max_iters: int = DEFAULT_MAX_ITERS
    target_class: int = 1

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be finite")
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        if not 0.0 < self.target_p < 1.0:
            raise ValueError(f"target_p must be in (0, 1), got {self.target_p}")
        if not 0.0 < self.tol < min(self.target_p, 1.0 - self.target_p):
            raise ValueError(f"tol {self.tol} must be in (0, min(p, 1 - p))")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.target_class not in (0, 1):
            raise ValueError("target_class must be 0 or 1")


@dataclass(frozen=True)
class CfResult:
    x_cf: np.ndarray
    converged: bool
    iterations: int
    elapsed_seconds: float
    final_prob: float
    loss_increases: int = 0


@dataclass(frozen=True)
class MadWeights:
    mad: np.ndarray
    epsilon: float = MAD_EPSILON

    def __post_init__(self):
        if np.any(np.asarray(self.mad) < 0):
            raise ValueError("MAD values must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / np.maximum(self.mad, self.epsilon)


@dataclass(frozen=True)
class PrototypeSet:
    prototype: np.ndarray
    k: int
    target_class: int
    neighbours: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


@dataclass(frozen=True)
class PrototypeLossWeights:
    c: float = 1.0
    beta: float = 0.5
    w_ae: float = 0.1
    w_proto: float = 0.1

    def __post_init__(self):
        if min(self.c, self.beta, self.w_ae, self.w_proto) < 0:
            raise ValueError("loss weights must be non-negative")


def prob_loss(target_p: float, prob: float) -> tuple[float, float]:
    """Squared distance to the target probability and its derivative."""
    diff = prob - target_p
    return diff * diff, 2.0 * diff


# -- shared pieces ----------------------------------------------------------

def _mirror(target_class: int) -> float:
    return 1.0 if target_class == 1 else -1.0


def _class_prob(f: Classifier, x, target_class: int) -> float:
    p1 = f.prob(x)
    return p1 if target_class == 1 else 1.0 - p1


def _loss_grad_x(f: Classifier, x, target_class: int, dloss):
    """Target-class probability at ``x`` and gradient of ``dloss(prob)`` w.r.t. ``x``.

    ``dloss`` maps the probability to ``(loss, dloss/dprob)``.
    """
    sign = _mirror(target_class)
    cache = ndnet.trace(f.net, x)
    p1 = float(cache[-1][1][0])
    prob = p1 if target_class == 1 else 1.0 - p1
    loss, dprob = dloss(prob)
    _, gx = ndnet.backprop(f.net, x, cache, np.array([sign * dprob]), False)
    return prob, loss, gx


def _check(grad, method: str, it: int) -> None:
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(f"{method}: non-finite gradient at iteration {it}")


def _within(prob: float, req: CfRequest) -> bool:
    return abs(prob - req.target_p) <= req.tol


# -- Latent-CF --------------------------------------------------------------

def latent_cf(req: CfRequest, f: Classifier, ae: Autoencoder) -> CfResult:
    """Gradient descent on the latent code until ``f(D(z))`` is within tol."""
    start = time.perf_counter()
    z = ae.encode(req.x0)
    sign = _mirror(req.target_class)
    it, increases, prev = 0, 0, np.inf
    while True:
        dec_cache = ndnet.trace(ae.decoder, z)
        x = dec_cache[-1][1]
        clf_cache = ndnet.trace(f.net, x)
        p1 = float(clf_cache[-1][1][0])
        prob = p1 if req.target_class == 1 else 1.0 - p1
        loss, dprob = prob_loss(req.target_p, prob)
        increases += loss > prev
        prev = loss
        if _within(prob, req) or it >= req.max_iters:
            break
        _, gx = ndnet.backprop(f.net, x, clf_cache, np.array([sign * dprob]), False)
        _, gz = ndnet.backprop(ae.decoder, z, dec_cache, gx, False)
        _check(gz, "latent-cf", it)
        z = z - req.lr * gz
        it += 1
    elapsed = time.perf_counter() - start
    if increases:
        log.debug("latent-cf: loss increased on %d of %d iterations", increases, it)
    return CfResult(x, _within(prob, req), it, elapsed, prob, increases)


# -- feature-space descents -------------------------------------------------

def _feature_descent(req: CfRequest, f: Classifier, method: str, clip: bool,
                     shrink=None, penalty=None) -> CfResult:
    start = time.perf_counter()
    x = req.x0.copy()
    dloss = lambda p: prob_loss(req.target_p, p)
    it, increases, prev = 0, 0, np.inf
    while True:
        prob, loss, gx = _loss_grad_x(f, x, req.target_class, dloss)
        if penalty is not None:
            loss += penalty(x)
        increases += loss > prev
        prev = loss
        if _within(prob, req) or it >= req.max_iters:
            break
        _check(gx, method, it)
        x = x - req.lr * gx
        if shrink is not None:
            x = shrink(x)
        if clip:
            np.clip(x, 0.0, 1.0, out=x)
        it += 1
    elapsed = time.perf_counter() - start
    if increases:
        log.debug("%s: loss increased on %d of %d iterations", method, increases, it)
    return CfResult(x, _within(prob, req), it, elapsed, prob, increases)


def feature_gd(req: CfRequest, f: Classifier, variant: str = "plain") -> CfResult:
    """Pixel-space descent on the probability loss; ``clip`` projects into [0, 1]."""
    if variant not in ("plain", "clip"):
        raise ValueError(f"unknown variant {variant!r}")
    name = "feature-gd" if variant == "plain" else "feature-gd-clip"
    return _feature_descent(req, f, name, clip=variant == "clip")


def compute_mad(data: LabeledDataset | np.ndarray) -> MadWeights:
    """Per-feature median absolute deviation over the population."""
    X = data.images if isinstance(data, LabeledDataset) else np.asarray(data, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty population")
    med = np.median(X, axis=0)
    return MadWeights(np.median(np.abs(X - med), axis=0))


def mad_distance(x, x_prime, w: MadWeights) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.shape != x_prime.shape:
        raise ValueError("vectors differ in length")
    return float(np.sum(np.abs(x - x_prime) * w.weights))


def shrink_towards(x, anchor, threshold):
    """Move each ``x_k`` towards ``anchor_k`` by ``threshold_k`` without crossing it.

    This is the step of an L1 penalty centred at ``anchor`` whose subgradient is
    taken as 0 once the coordinate sits on the anchor.
    """
    d = x - anchor
    return anchor + np.sign(d) * np.maximum(np.abs(d) - threshold, 0.0)


def feature_gd_mad(req: CfRequest, f: Classifier, w: MadWeights,
                   lam: float = DEFAULT_MAD_LAMBDA) -> CfResult:
    """Descent on the probability loss plus ``lam`` times the MAD distance to x0."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    threshold = req.lr * lam * w.weights
    x0 = req.x0
    return _feature_descent(
        req, f, "feature-gd-mad", clip=True,
        shrink=(lambda x: shrink_towards(x, x0, threshold)) if lam > 0 else None,
        penalty=lambda x: lam * mad_distance(x0, x, w))


# -- Prototype-CF -----------------------------------------------------------

def encode_class(data: LabeledDataset, ae: Autoencoder, target_class: int):
    """Encodings of every ``target_class`` sample and their dataset indices."""
    idx = np.flatnonzero(data.labels == target_class)
    enc = ae.encode(data.images[idx]) if len(idx) else np.zeros((0, ae.latent_dim))
    return enc, idx


def compute_prototype(x0, target_class: int, data: LabeledDataset, ae: Autoencoder,
                      k: int = DEFAULT_PROTO_K, encodings=None) -> PrototypeSet:
    """Mean encoding of the ``k`` target-class samples nearest to ``E(x0)``.

    ``encodings`` may carry a precomputed ``encode_class`` result.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    enc, idx = encodings if encodings is not None else encode_class(data, ae, target_class)
    if len(idx) < k:
        raise ValueError(f"only {len(idx)} samples of class {target_class}, need k={k}")
    z0 = ae.encode(np.asarray(x0, dtype=np.float64))
    dist = np.linalg.norm(enc - z0, axis=1)
    nearest = np.argsort(dist, kind="stable")[:k]
    return PrototypeSet(enc[nearest].mean(axis=0), k, target_class, idx[nearest])


def prototype_loss(delta, req: CfRequest, f: Classifier, ae: Autoencoder,
                   proto: PrototypeSet, lw: PrototypeLossWeights):
    """Composite objective at ``x = clip(x0 + delta)``.

    Returns ``(total_loss, smooth_grad, prob)``. ``smooth_grad`` excludes the
    L1 term, which the optimiser handles by shrinkage.
    """
    delta = np.asarray(delta, dtype=np.float64)
    raw = req.x0 + delta
    x = np.clip(raw, 0.0, 1.0)
    # one-sided derivative of the clip at the bounds: prototype_cf keeps
    # x0 + delta inside [0, 1], where the clip is the identity
    inside = ((raw >= 0.0) & (raw <= 1.0)).astype(np.float64)

    def hinge(p):
        gap = req.target_p - p
        return (lw.c * gap, -lw.c) if gap > 0 else (0.0, 0.0)

    prob, l_pred, g = _loss_grad_x(f, x, req.target_class, hinge)

    grad_x = g
    l_ae = l_proto = 0.0
    if lw.w_ae > 0:
        enc_cache = ndnet.trace(ae.encoder, x)
        z = enc_cache[-1][1]
        dec_cache = ndnet.trace(ae.decoder, z)
        resid = x - dec_cache[-1][1]
        l_ae = lw.w_ae * float(resid @ resid)
        up = 2.0 * lw.w_ae * resid
        _, gz = ndnet.backprop(ae.decoder, z, dec_cache, up, False)
        _, back = ndnet.backprop(ae.encoder, x, enc_cache, gz, False)
        grad_x = grad_x + up - back
    if lw.w_proto > 0:
        enc_cache = ndnet.trace(ae.encoder, x)
        diff = enc_cache[-1][1] - proto.prototype
        l_proto = lw.w_proto * float(diff @ diff)
        _, gp = ndnet.backprop(ae.encoder, x, enc_cache, 2.0 * lw.w_proto * diff, False)
        grad_x = grad_x + gp

    smooth = grad_x * inside + 2.0 * delta
    total = l_pred + lw.beta * float(np.abs(delta).sum()) + float(delta @ delta) + l_ae + l_proto
    return total, smooth, prob


def prototype_cf(req: CfRequest, f: Classifier, ae: Autoencoder, proto: PrototypeSet,
                 lw: PrototypeLossWeights = PrototypeLossWeights(),
                 c_steps: int = 4, c_factor: float = 10.0,
                 early_stop: bool = False) -> CfResult:
    """Elastic-net, autoencoder and prototype guided descent over a perturbation.

    The perturbation is kept inside ``[-x0, 1 - x0]`` so ``x0 + delta`` never
    leaves the pixel range; the L1 term is applied by shrinkage towards 0.

    The whole ``max_iters`` budget is spent refining the objective, and the
    returned counterfactual is the iterate with the smallest elastic-net
    distance ``beta*|delta|_1 + |delta|_2^2`` among those whose target-class
    probability reached ``target_p``. The budget is split into ``c_steps``
    blocks; a block that ends without any such iterate multiplies the
    prediction weight ``c`` by ``c_factor``. With ``early_stop`` the search
    returns the first valid iterate instead.
    """
    if c_steps < 1:
        raise ValueError("c_steps must be at least 1")
    start = time.perf_counter()
    x0 = req.x0
    lo, hi = -x0, 1.0 - x0
    delta = np.zeros_like(x0)
    block = -(-req.max_iters // c_steps) if req.max_iters else 0
    next_raise = block
    weights = lw
    best, best_dist, best_prob = None, np.inf, None
    it, increases, prev = 0, 0, np.inf
    while True:
        loss, grad, prob = prototype_loss(delta, req, f, ae, proto, weights)
        increases += loss > prev
        prev = loss
        if prob >= req.target_p:
            dist = lw.beta * float(np.abs(delta).sum()) + float(delta @ delta)
            if dist < best_dist:
                best, best_dist, best_prob = delta.copy(), dist, prob
            if early_stop:
                break
        if it >= req.max_iters:
            break
        if it >= next_raise:
            next_raise += block
            if best is None:
                weights = replace(weights, c=weights.c * c_factor)
                prev = np.inf
                log.debug("prototype-cf: raising c to %g after %d iterations", weights.c, it)
        _check(grad, "prototype-cf", it)
        delta = shrink_towards(delta - req.lr * grad, 0.0, req.lr * lw.beta)
        np.clip(delta, lo, hi, out=delta)
        it += 1
    elapsed = time.perf_counter() - start
    if increases:
        log.debug("prototype-cf: loss increased on %d of %d iterations", increases, it)
    if best is None:
        return CfResult(x0 + delta, False, it, elapsed, prob, increases)
    return CfResult(x0 + best, True, it, elapsed, best_prob, increases)
