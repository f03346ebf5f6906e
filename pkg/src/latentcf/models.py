"""The binary classifier, the autoencoder, their training loops and model files.

Model file layout (little-endian, format version 1)::

    magic      4 bytes  b"LCFM"
    version    uint16
    kind       uint8    0 = network, 1 = classifier, 2 = autoencoder
    n_nets     uint8
    per network:
        n_layers   uint32
        per layer: in_dim uint32, out_dim uint32, activation uint8,
                   weights float64[out_dim * in_dim] (row-major), bias float64[out_dim]

Nothing may follow the last network.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndnet
from .dataio import LabeledDataset
from .ndnet import DenseLayer, Network

log = logging.getLogger(__name__)

MAGIC = b"LCFM"
FORMAT_VERSION = 1
_KINDS = {"network": 0, "classifier": 1, "autoencoder": 2}
_ACT_CODES = {name: code for code, name in enumerate(ndnet.ACTIVATIONS)}


class ModelFileError(ValueError):
    pass


class ModelVersionError(ModelFileError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Classifier:
    net: Network

    def __post_init__(self):
        last = self.net.layers[-1]
        if self.net.out_dim != 1 or last.activation != "sigmoid":
            raise ValueError("classifier must end in a single sigmoid unit")

    @property
    def in_dim(self) -> int:
        return self.net.in_dim

    def prob(self, x) -> np.ndarray | float:
        """Probability of class 1; a float for one image, an array for a batch."""
        out = ndnet.forward(self.net, x)
        return float(out[0]) if out.ndim == 1 else out[:, 0]

    def predict(self, x):
        return (np.asarray(self.prob(x)) >= 0.5).astype(np.int64)


@dataclass(frozen=True)
class Autoencoder:
    encoder: Network
    decoder: Network

    def __post_init__(self):
        if self.encoder.out_dim != self.decoder.in_dim:
            raise ValueError("encoder out_dim must equal decoder in_dim")
        if self.decoder.layers[-1].activation != "sigmoid":
            raise ValueError("decoder must end in a sigmoid")

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim

    def encode(self, x):
        return ndnet.forward(self.encoder, x)

    def decode(self, z):
        return ndnet.forward(self.decoder, z)

    def reconstruct(self, x):
        return self.decode(self.encode(x))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.02
    seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 0.0
    label_smoothing: float = 0.0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr <= 0 or self.seed < 0:
            raise ValueError(f"invalid training config {self}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


CLASSIFIER_CONFIG = TrainConfig(epochs=30, lr=0.02, label_smoothing=0.05)
AUTOENCODER_CONFIG = TrainConfig(epochs=300, lr=1.0)
DEFAULT_LATENT_DIM = 16


def classifier_architecture(in_dim: int, rng: np.random.Generator) -> Network:
    return ndnet.init_network([in_dim, 128, 32, 1], ["relu", "relu", "sigmoid"], rng)


def autoencoder_architecture(in_dim: int, latent_dim: int, rng: np.random.Generator,
                             hidden: int = 128) -> tuple[Network, Network]:
    enc = ndnet.init_network([in_dim, hidden, latent_dim], ["relu", "identity"], rng)
    dec = ndnet.init_network([latent_dim, hidden, in_dim], ["relu", "sigmoid"], rng)
    return enc, dec


def _fit(nets, data: np.ndarray, targets: np.ndarray, cfg: TrainConfig, loss_and_grad):
    """Mini-batch SGD over a chain of networks applied in sequence."""
    rng = np.random.default_rng(cfg.seed + 1)
    velocity = [None] * len(nets)
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = data[idx], targets[idx]
            caches, h = [], xb
            for net in nets:
                cache = ndnet.trace(net, h)
                caches.append((h, cache))
                h = cache[-1][1]
            loss, up = loss_and_grad(h, yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}")
            total += loss * len(idx)
            up = up / len(idx)
            for k in range(len(nets) - 1, -1, -1):
                x_in, cache = caches[k]
                params, up_in = ndnet.backprop(nets[k], x_in, cache, up, True)
                if cfg.weight_decay:
                    params = tuple((dw + cfg.weight_decay * layer.weights, db)
                                   for (dw, db), layer in zip(params, nets[k].layers))
                bundle = ndnet.GradientBundle(params, up_in, cache[-1][1])
                nets[k], velocity[k] = ndnet.momentum_step(
                    nets[k], bundle, velocity[k], cfg.lr, cfg.momentum)
                up = up_in
        log.debug("epoch %d mean loss %.6f", epoch, total / n)
    return nets


def _bce(out, y):
    p = np.clip(out[:, 0], 1e-12, 1 - 1e-12)
    loss = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    # gradient of the summed loss w.r.t. the sigmoid output
    grad = ((p - y) / (p * (1 - p)))[:, None]
    return loss, grad


def _mse(out, y):
    diff = out - y
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.shape[1]


def train_classifier(data: LabeledDataset, cfg: TrainConfig = CLASSIFIER_CONFIG) -> Classifier:
    """Binary cross-entropy training of the dense 784-128-32-1 classifier."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if not np.isin(data.labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    rng = np.random.default_rng(cfg.seed)
    net = classifier_architecture(data.images.shape[1], rng)
    # smoothed targets eps/2 and 1 - eps/2 bound the logits the fit aims for
    targets = data.labels * (1.0 - cfg.label_smoothing) + 0.5 * cfg.label_smoothing
    (net,) = _fit([net], data.images, targets.astype(np.float64), cfg, _bce)
    return Classifier(net)


def train_autoencoder(data: LabeledDataset, latent_dim: int = DEFAULT_LATENT_DIM,
                      cfg: TrainConfig = AUTOENCODER_CONFIG, hidden: int = 128) -> Autoencoder:
    """Per-pixel MSE training of a dense bottleneck autoencoder."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if latent_dim <= 0:
        raise ValueError("latent_dim must be positive")
    rng = np.random.default_rng(cfg.seed)
    enc, dec = autoencoder_architecture(data.images.shape[1], latent_dim, rng, hidden)
    enc, dec = _fit([enc, dec], data.images, data.images, cfg, _mse)
    return Autoencoder(enc, dec)


def accuracy(clf: Classifier, data: LabeledDataset) -> float:
    return float(np.mean(clf.predict(data.images) == data.labels))


def reconstruction_mse(ae: Autoencoder, data: LabeledDataset) -> float:
    return float(np.mean((ae.reconstruct(data.images) - data.images) ** 2))


# -- persistence ------------------------------------------------------------

def _nets_of(model):
    if isinstance(model, Classifier):
        return "classifier", [model.net]
    if isinstance(model, Autoencoder):
        return "autoencoder", [model.encoder, model.decoder]
    if isinstance(model, Network):
        return "network", [model]
    raise TypeError(f"cannot save {type(model).__name__}")


def dumps_model(model) -> bytes:
    kind, nets = _nets_of(model)
    parts = [MAGIC, struct.pack("<HBB", FORMAT_VERSION, _KINDS[kind], len(nets))]
    for net in nets:
        parts.append(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            parts.append(struct.pack("<IIB", layer.in_dim, layer.out_dim,
                                     _ACT_CODES[layer.activation]))
            parts.append(layer.weights.astype("<f8").tobytes())
            parts.append(layer.bias.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFileError(f"truncated model file at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads_model(data: bytes):
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    version, kind_code, n_nets = r.unpack("<HBB")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported model format version {version}")
    kinds = {v: k for k, v in _KINDS.items()}
    if kind_code not in kinds:
        raise ModelFileError(f"unknown model kind {kind_code}")
    nets = []
    for _ in range(n_nets):
        (n_layers,) = r.unpack("<I")
        layers = []
        for _ in range(n_layers):
            in_dim, out_dim, act = r.unpack("<IIB")
            if act >= len(ndnet.ACTIVATIONS):
                raise ModelFileError(f"unknown activation code {act}")
            w = np.frombuffer(r.take(8 * in_dim * out_dim), dtype="<f8").reshape(out_dim, in_dim)
            b = np.frombuffer(r.take(8 * out_dim), dtype="<f8")
            layers.append(DenseLayer(w, b, ndnet.ACTIVATIONS[act]))
        try:
            nets.append(Network(tuple(layers)))
        except ValueError as exc:
            raise ModelFileError(str(exc)) from exc
    if r.pos != len(data):
        raise ModelFileError(f"{len(data) - r.pos} unexpected trailing bytes")
    kind = kinds[kind_code]
    try:
        if kind == "classifier":
            (net,) = nets
            return Classifier(net)
        if kind == "autoencoder":
            enc, dec = nets
            return Autoencoder(enc, dec)
        (net,) = nets
        return net
    except ValueError as exc:
        raise ModelFileError(f"malformed {kind}: {exc}") from exc


def save_model(model, path) -> None:
    Path(path).write_bytes(dumps_model(model))


def load_model(path):
    return loads_model(Path(path).read_bytes())
