import time
from pathlib import Path

import numpy as np
import pytest

from latentcf import cli, models, ndnet
from latentcf.dataio import load_split

DATA_DIR = Path(__file__).resolve().parents[1] / "data" / "mnist-subset"


def random_net(rng, dims=None, acts=None):
    if dims is None:
        depth = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(1, 9, size=depth + 1)]
    if acts is None:
        acts = [str(a) for a in rng.choice(ndnet.ACTIVATIONS, size=len(dims) - 1)]
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], acts):
        layers.append(ndnet.DenseLayer(rng.normal(size=(fan_out, fan_in)),
                                       rng.normal(size=fan_out), act))
    return ndnet.Network(tuple(layers))


def central_diff(fn, x, step=1e-5):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp = x.copy(); xp[i] += step
        xm = x.copy(); xm[i] -= step
        grad[i] = (fn(xp) - fn(xm)) / (2 * step)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-4, floor=1e-7):
    analytic = np.asarray(analytic); numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (err <= floor) | (err <= rel * scale)
    assert ok.all(), f"max rel err {np.max(err / np.maximum(scale, 1e-300))}"


def relu_safe_point(net, x, margin=1e-3):
    """True when no relu pre-activation sits within ``margin`` of the kink."""
    for layer, (a, _) in zip(net.layers, ndnet.trace(net, x)):
        if layer.activation == "relu" and np.any(np.abs(a) < margin):
            return False
    return True


@pytest.fixture(scope="session")
def mnist_dir():
    if not (DATA_DIR / "train-labels-idx1-ubyte.gz").exists():
        pytest.skip("MNIST subset not generated; run scripts/make_mnist_subset.py")
    return DATA_DIR


@pytest.fixture(scope="session")
def splits(mnist_dir):
    return load_split(mnist_dir, "train"), load_split(mnist_dir, "test")


@pytest.fixture(scope="session")
def trained(splits, tmp_path_factory):
    train, _ = splits
    t0 = time.perf_counter()
    clf = models.train_classifier(train)
    clf_seconds = time.perf_counter() - t0
    ae = models.train_autoencoder(train)
    out = tmp_path_factory.mktemp("models")
    models.save_model(clf, out / cli.CLASSIFIER_FILE)
    models.save_model(ae, out / cli.AUTOENCODER_FILE)
    return clf, ae, clf_seconds, out


# -- acceptance summary -----------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    number, title = mark.args
    if call.excinfo is None:
        status = "PASS"
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        status = "SKIP"
    else:
        status = "FAIL"
    detail = dict(item.user_properties).get("detail", "")
    _ACCEPTANCE[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"AC{number:<2d} {status:4s}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
