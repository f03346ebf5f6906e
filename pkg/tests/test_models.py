import numpy as np
import pytest

from latentcf import models, ndnet
from latentcf.dataio import LabeledDataset


def toy_separable(n=40, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = rng.uniform(0.0, 0.4, size=(n, dim))
    images[labels == 1, 0] += 0.6
    return LabeledDataset(images, labels, side=0)


def test_classifier_learns_separable_toy():
    data = toy_separable()
    clf = models.train_classifier(data, models.TrainConfig(epochs=200, batch_size=8, lr=0.05))
    assert models.accuracy(clf, data) == 1.0


def test_classifier_memorises_one_sample():
    data = LabeledDataset(np.full((1, 4), 0.5), np.array([1]), side=2)
    clf = models.train_classifier(data, models.TrainConfig(epochs=50, batch_size=1, lr=0.1))
    assert clf.predict(data.images[0]) == 1
    assert clf.prob(data.images[0]) > 0.9


def test_classifier_prob_shapes_and_bounds():
    data = toy_separable()
    clf = models.train_classifier(data, models.TrainConfig(epochs=2))
    p = clf.prob(data.images)
    assert p.shape == (len(data),)
    assert isinstance(clf.prob(data.images[0]), float)
    assert np.all((p >= 0) & (p <= 1))


def test_autoencoder_full_width_reconstructs_small_set():
    rng = np.random.default_rng(3)
    images = rng.uniform(0.1, 0.9, size=(10, 16))
    data = LabeledDataset(images, np.zeros(10, dtype=np.int64), side=4)
    ae = models.train_autoencoder(data, latent_dim=16,
                                  cfg=models.TrainConfig(epochs=2000, batch_size=10, lr=2.0),
                                  hidden=64)
    assert models.reconstruction_mse(ae, data) < 1e-3


def test_autoencoder_memorises_ten_full_size_images():
    rng = np.random.default_rng(4)
    images = (rng.uniform(size=(10, 784)) > 0.8) * rng.uniform(0.5, 1.0, size=(10, 784))
    data = LabeledDataset(images, np.zeros(10, dtype=np.int64), side=28)
    ae = models.train_autoencoder(data, latent_dim=784,
                                  cfg=models.TrainConfig(epochs=2000, batch_size=10, lr=3.0))
    assert models.reconstruction_mse(ae, data) < 1e-3


def test_autoencoder_constant_dataset():
    data = LabeledDataset(np.full((20, 9), 0.3), np.zeros(20, dtype=np.int64), side=3)
    ae = models.train_autoencoder(data, latent_dim=2,
                                  cfg=models.TrainConfig(epochs=100, batch_size=10, lr=1.0),
                                  hidden=8)
    assert models.reconstruction_mse(ae, data) < 1e-4


def test_autoencoder_output_range():
    data = toy_separable()
    ae = models.train_autoencoder(data, 3, models.TrainConfig(epochs=1), hidden=8)
    out = ae.reconstruct(np.random.default_rng(0).normal(scale=10, size=(5, 4)))
    assert np.all((out >= 0) & (out <= 1))
    assert ae.latent_dim == 3


def test_training_is_deterministic():
    data = toy_separable()
    cfg = models.TrainConfig(epochs=3, seed=7)
    a = models.dumps_model(models.train_classifier(data, cfg))
    b = models.dumps_model(models.train_classifier(data, cfg))
    assert a == b
    c = models.dumps_model(models.train_classifier(data, models.TrainConfig(epochs=3, seed=8)))
    assert a != c


def test_empty_dataset_rejected():
    empty = LabeledDataset(np.zeros((0, 4)), np.zeros(0, dtype=np.int64), side=2)
    with pytest.raises(ValueError):
        models.train_classifier(empty)
    with pytest.raises(ValueError):
        models.train_autoencoder(empty, 2)


def test_bad_train_config():
    for kwargs in ({"epochs": 0}, {"lr": -1}, {"label_smoothing": 1.0}, {"momentum": 1.0}):
        with pytest.raises(ValueError):
            models.TrainConfig(**kwargs)


def test_divergence_is_reported():
    data = toy_separable()
    net = ndnet.init_network([4, 4], ["identity"], np.random.default_rng(0))
    cfg = models.TrainConfig(epochs=200, lr=1e3, momentum=0.0)
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError):
        models._fit([net], data.images, data.images, cfg, models._mse)


@pytest.mark.parametrize("kind", ["classifier", "autoencoder", "network"])
def test_model_round_trip_is_exact(kind, tmp_path):
    rng = np.random.default_rng(0)
    if kind == "classifier":
        model = models.Classifier(models.classifier_architecture(5, rng))
    elif kind == "autoencoder":
        model = models.Autoencoder(*models.autoencoder_architecture(5, 2, rng, hidden=4))
    else:
        model = ndnet.init_network([3, 4, 2], ["relu", "identity"], rng)
    path = tmp_path / "m.lcf"
    models.save_model(model, path)
    loaded = models.load_model(path)
    assert type(loaded) is type(model)
    assert models.dumps_model(loaded) == path.read_bytes()
    x = rng.uniform(size=5 if kind != "network" else 3)
    if kind == "classifier":
        assert loaded.prob(x) == model.prob(x)
    elif kind == "autoencoder":
        np.testing.assert_array_equal(loaded.reconstruct(x), model.reconstruct(x))
    else:
        np.testing.assert_array_equal(loaded(x), model(x))


def _some_model_bytes():
    rng = np.random.default_rng(1)
    return models.dumps_model(models.Classifier(models.classifier_architecture(4, rng)))


@pytest.mark.parametrize("cut", [0, 3, 7, 20, -1])
def test_truncated_model_file(cut):
    blob = _some_model_bytes()
    with pytest.raises(models.ModelFileError, match="truncated|magic"):
        models.loads_model(blob[:cut])


def test_trailing_bytes_rejected():
    with pytest.raises(models.ModelFileError, match="trailing"):
        models.loads_model(_some_model_bytes() + b"\0")


def test_version_mismatch():
    blob = bytearray(_some_model_bytes())
    blob[4:6] = (99).to_bytes(2, "little")
    with pytest.raises(models.ModelVersionError):
        models.loads_model(bytes(blob))


def test_bad_magic():
    with pytest.raises(models.ModelFileError, match="magic"):
        models.loads_model(b"NOPE" + _some_model_bytes()[4:])


def test_missing_model_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        models.load_model(tmp_path / "absent.lcf")


def test_desk_autoencoder_reconstruction(splits, trained):
    _, test = splits
    ae = trained[1]
    assert ae.latent_dim == models.DEFAULT_LATENT_DIM
    assert models.reconstruction_mse(ae, test) <= 0.03
