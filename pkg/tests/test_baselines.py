import numpy as np
import pandas as pd
import pytest

from tabncd import pipeline
from tabncd.baselines import kmeans_competitor, projection_baseline
from tabncd.data import load_frame, ncd_split
from tabncd.errors import ConfigurationError
from tabncd.kmeans import kmeans, kmeans_plusplus, lloyd
from tabncd.metrics import clustering_accuracy
from tabncd.model import TrainConfig


def frame(X, y):
    f = pd.DataFrame(X, columns=[f"x{i}" for i in range(X.shape[1])])
    f["label"] = [str(v) for v in y]
    return f


def two_blobs(seed=0, n=50):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(size=(n, 2)), rng.normal(size=(n, 2)) + 10])
    return X, np.repeat([0, 1], n)


def test_kmeans_two_blobs():
    X, y = two_blobs()
    assert clustering_accuracy(y, kmeans(X, 2, seed=0).labels) == 1.0


def test_kmeans_degenerate_k():
    X, _ = two_blobs(1, 10)
    one = kmeans(X, 1, seed=0)
    assert (one.labels == 0).all()
    np.testing.assert_allclose(one.centers[0], X.mean(axis=0))
    every = kmeans(X, len(X), seed=0)
    assert every.inertia == pytest.approx(0.0, abs=1e-9)
    assert len(set(every.labels)) == len(X)
    with pytest.raises(ConfigurationError):
        kmeans(X, 0)


def test_inertia_non_increasing():
    rng = np.random.default_rng(5)
    for _ in range(20):
        X = rng.normal(size=(120, 3))
        res = lloyd(X, kmeans_plusplus(X, 6, rng))
        assert all(b <= a + 1e-9 for a, b in zip(res.history, res.history[1:]))


def test_plusplus_bitwise_reproducible():
    X = np.random.default_rng(0).normal(size=(80, 4))
    a = kmeans_plusplus(X, 5, np.random.default_rng(9))
    b = kmeans_plusplus(X, 5, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


def test_empty_cluster_reseeded():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    # a centre far from everything starts empty and gets pulled to the worst-served point
    res = lloyd(X, np.array([[0.0], [10.0], [1000.0]]))
    assert len(set(res.labels)) == 3


def test_projection_near_chance_when_unknowns_differ_on_unused_features():
    # known classes differ on x0 only; unknown classes share x0 and differ on x1,
    # one of many features the known-class classifier learns to ignore
    accs, separable = [], []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        parts, y = [], []
        for c, (m0, m1) in enumerate([(0, 0), (6, 0), (3, -1.5), (3, 1.5)]):
            Z = rng.normal(size=(200, 20))
            Z[:, 0] += m0
            Z[:, 1] += m1
            parts.append(Z)
            y += [c] * 200
        split = ncd_split(load_frame(frame(np.vstack(parts), y), "label"), ["2", "3"], 0.7, seed)
        cfg = TrainConfig(seed=seed, latent_dim=2, hidden_dim=8, batch_size=64, baseline_epochs=100)
        truth = split.unlabeled_test.reveal_labels()
        accs.append(clustering_accuracy(truth, projection_baseline(split.labeled_train, split.unlabeled_test.X, 2, cfg)))
        separable.append(clustering_accuracy(truth, kmeans(split.unlabeled_test.X[:, [1]], 2, seed=seed).labels))
    assert np.mean(accs) < 0.6
    assert np.mean(separable) > 0.85


def rotated_split(seed):
    rng = np.random.default_rng(seed)
    n = 200
    parts, y = [], []
    for c in range(8):
        a = (c % 4) * np.pi / 2 + (np.pi / 4 if c >= 4 else 0.0)
        Z = np.empty((n, 6))
        Z[:, 0] = 2 * np.cos(a) + 0.3 * rng.normal(size=n)
        Z[:, 1] = 2 * np.sin(a) + 0.3 * rng.normal(size=n)
        # bimodal nuisance features attract raw k-means
        Z[:, 2:] = rng.choice([-4.0, 4.0], size=(n, 4)) + 0.3 * rng.normal(size=(n, 4))
        parts.append(Z)
        y += [c] * n
    return ncd_split(load_frame(frame(np.vstack(parts), y), "label"), ["4", "5", "6", "7"], 0.7, seed)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_projection_beats_raw_kmeans_on_rotated_copies(seed):
    split = rotated_split(seed)
    cfg = TrainConfig(seed=seed, batch_size=64)
    y = split.unlabeled_test.reveal_labels()
    proj = clustering_accuracy(y, projection_baseline(split.labeled_train, split.unlabeled_test.X, 4, cfg))
    raw = clustering_accuracy(y, kmeans_competitor(split.unlabeled_test.X, 4, cfg))
    assert proj > raw


def test_baselines_deterministic_and_ignore_unlabeled_train():
    split = rotated_split(0)
    cfg = TrainConfig(seed=3, batch_size=64, baseline_epochs=5)
    first = pipeline.run_baselines(split, cfg)
    split.unlabeled_train.X[:] = np.random.default_rng(1).uniform(size=split.unlabeled_train.X.shape)
    second = pipeline.run_baselines(split, cfg)
    assert first == second
