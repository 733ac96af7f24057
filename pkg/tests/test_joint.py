import numpy as np
import pytest

from tabncd import nn, pipeline
from tabncd.data import TrainingSet
from tabncd.errors import UsageError
from tabncd.joint import (
    _head_step,
    clustering_loss,
    clustering_loss_and_grad,
    pair_score,
    regularization_loss,
)
from tabncd.metrics import clustering_accuracy
from tabncd.model import JointModel, TrainConfig, predict_clusters
from tabncd.nn import DenseNet
from tabncd.pseudo import PseudoLabelSet, assign_pseudo_labels
from tabncd.synthetic import three_blob_split


def relation(R):
    R = np.asarray(R, dtype=np.int8)
    return PseudoLabelSet(int(R[0].sum()), R)


def test_pair_score_examples():
    assert pair_score(np.array([1.0, 0]), np.array([1.0, 0])) == 1.0
    assert pair_score(np.array([1.0, 0]), np.array([0, 1.0])) == 0.0
    assert pair_score(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.5
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        assert pair_score(a, b) == pair_score(b, a)
        assert 0.0 <= pair_score(a, b) <= 1.0


def test_clustering_loss_examples():
    Q = np.tile([1.0, 0.0], (4, 1))
    assert clustering_loss(Q, relation(1 - np.eye(4))) == pytest.approx(0.0, abs=1e-10)
    Q = np.array([[1.0, 0], [1, 0], [0, 1], [0, 1]])
    R = [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]
    assert clustering_loss(Q, relation(R)) == pytest.approx(0.0, abs=1e-10)
    loss = clustering_loss(np.array([[1.0, 0], [0, 1]]), relation([[0, 1], [1, 0]]))
    assert loss == pytest.approx(-np.log(1e-12))
    assert round(loss, 2) == 27.63


def naive_clustering_loss(Q, R):
    b = len(Q)
    per_anchor = []
    for i in range(b):
        s = 0.0
        for j in range(b):
            if j != i:
                p = min(max(float(Q[i] @ Q[j]), 1e-12), 1 - 1e-12)
                s += -R[i, j] * np.log(p) - (1 - R[i, j]) * np.log(1 - p)
        per_anchor.append(s / (b - 1))
    return np.mean(per_anchor)


def test_clustering_loss_matches_naive_and_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(10):
        b, c = int(rng.integers(3, 9)), int(rng.integers(2, 5))
        Q = rng.dirichlet(np.ones(c), size=b)
        pseudo = assign_pseudo_labels(rng.normal(size=(b, 3)), int(rng.integers(1, b)))
        loss, G = clustering_loss_and_grad(Q, pseudo)
        assert loss == pytest.approx(naive_clustering_loss(Q, pseudo.relation), rel=1e-12)
        num = np.zeros_like(Q)
        h = 1e-6
        for idx in np.ndindex(Q.shape):
            Qp, Qm = Q.copy(), Q.copy()
            Qp[idx] += h
            Qm[idx] -= h
            num[idx] = (clustering_loss(Qp, pseudo) - clustering_loss(Qm, pseudo)) / (2 * h)
        np.testing.assert_allclose(G, num, rtol=1e-5, atol=1e-8)


def softmax_head(latent, out, seed):
    return DenseNet.build([latent, out], ["softmax"], np.random.default_rng(seed))


def test_regularization_examples_and_bound():
    head = softmax_head(3, 4, 0)
    z = np.random.default_rng(0).normal(size=(5, 3))
    assert regularization_loss(head, z, z) == 0.0
    assert nn.mse(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == 1.0
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert 0.0 <= regularization_loss(head, 10 * rng.normal(size=(4, 3)), 10 * rng.normal(size=(4, 3))) <= 1.0


def test_head_step_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    enc = DenseNet.build([4, 6, 3], ["relu", "identity"], rng)
    head = softmax_head(3, 3, 3)
    X, Xb = rng.uniform(size=(6, 4)), rng.uniform(size=(6, 4))
    onehot = np.eye(3)[rng.integers(0, 3, 6)]

    def ce(out, _z):
        return nn.cross_entropy(out, onehot), nn.cross_entropy_grad(out, onehot)

    w = 0.7
    _, _, tapes = _head_step(enc, head, X, Xb, ce, w)

    def total():
        return w * nn.cross_entropy(head(enc(X)), onehot) + (1 - w) * nn.mse(head(enc(X)), head(enc(Xb)))

    for net, tape in ((enc, tapes[0]), (head, tapes[1])):
        for p, g in zip(net.parameters(), tape.grads):
            num = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + 1e-6
                up = total()
                p[idx] = old - 1e-6
                down = total()
                p[idx] = old
                num[idx] = (up - down) / 2e-6
            np.testing.assert_allclose(g, num, rtol=1e-4, atol=1e-9)


def test_w1_one_ignores_perturbation():
    rng = np.random.default_rng(3)
    enc = DenseNet.build([4, 5, 3], ["relu", "identity"], rng)
    head = softmax_head(3, 3, 4)
    X = rng.uniform(size=(8, 4))
    onehot = np.eye(3)[rng.integers(0, 3, 8)]

    def ce(out, _z):
        return nn.cross_entropy(out, onehot), nn.cross_entropy_grad(out, onehot)

    a = _head_step(enc, head, X, rng.uniform(size=X.shape), ce, 1.0)[2]
    b = _head_step(enc, head, X, rng.uniform(size=X.shape), ce, 1.0)[2]
    for ta, tb in zip(a, b):
        for ga, gb in zip(ta.grads, tb.grads):
            np.testing.assert_array_equal(ga, gb)


def blob_trainer(seed=0, **kw):
    split = three_blob_split(seed, n_per_class=100)
    cfg = TrainConfig(**{"seed": seed, "batch_size": 64, "ssl_epochs": 3, **kw})
    encoder, _ = pipeline.pretrain(split, cfg)
    return split, pipeline.make_trainer(split, cfg, encoder)


def snapshot(net):
    return [p.copy() for p in net.parameters()]


def test_steps_touch_only_their_own_head():
    _, tr = blob_trainer()
    X = tr.data.X[:32]
    Xb = tr.smote.perturb(np.arange(32))
    clu, enc = snapshot(tr.model.cluster_head), snapshot(tr.model.encoder)
    tr.step_classification(X, Xb, tr.data.targets[:32])
    assert all(np.array_equal(a, b) for a, b in zip(clu, tr.model.cluster_head.parameters()))
    assert not all(np.array_equal(a, b) for a, b in zip(enc, tr.model.encoder.parameters()))
    cls = snapshot(tr.model.classifier)
    u = np.flatnonzero(~tr.data.is_labeled)[:32]
    tr.step_clustering(tr.data.X[u], tr.smote.perturb(u), 5)
    assert all(np.array_equal(a, b) for a, b in zip(cls, tr.model.classifier.parameters()))


def test_zero_learning_rate_freezes_losses():
    _, tr = blob_trainer(lr_classifier=0.0, lr_cluster=0.0, w1=1.0, w2=1.0, batch_size=10_000)
    params = [snapshot(n) for n in tr.model.nets().values()]
    logs = tr.fit(3)
    for key in ("loss_classification", "loss_clustering"):
        assert logs[0][key] == pytest.approx(logs[1][key], rel=1e-12) == pytest.approx(logs[2][key], rel=1e-12)
    for before, net in zip(params, tr.model.nets().values()):
        assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))


def test_training_never_reads_hidden_labels():
    def run(permute):
        split = three_blob_split(1, n_per_class=60)
        if permute:
            u = split.unlabeled_train
            u._y = u._y[np.random.default_rng(0).permutation(len(u._y))]
        cfg = TrainConfig(seed=1, batch_size=64, ssl_epochs=2, epochs=3)
        model, _, _ = pipeline.fit_tabncd(split, cfg)
        return [p.copy() for n in model.nets().values() for p in n.parameters()]

    for a, b in zip(run(False), run(True)):
        np.testing.assert_array_equal(a, b)


def test_training_set_hides_unlabeled_truth():
    split = three_blob_split(0, n_per_class=30)
    data = TrainingSet.from_split(split)
    assert (data.targets[~data.is_labeled] == data.n_known).all()


def test_pure_objectives_decrease_on_separable_data():
    # blobs far enough apart that top-k pseudo-labels are (nearly) perfect
    split = three_blob_split(2, n_per_class=300, distance=20.0)
    cfg = TrainConfig(seed=2, batch_size=64, w1=1.0, w2=1.0)
    encoder, _ = pipeline.pretrain(split, cfg)
    logs = pipeline.make_trainer(split, cfg, encoder).fit(5)
    assert all(e["pseudo_label_precision"] >= 0.99 for e in logs)
    totals = [e["loss_classification"] + e["loss_clustering"] for e in logs]
    assert sum(b >= a for a, b in zip(totals, totals[1:])) <= 1


@pytest.mark.parametrize("seed", [0, 1])
def test_blob_end_to_end(seed):
    split = three_blob_split(seed)
    cfg = TrainConfig(seed=seed, batch_size=64)
    model, _, _ = pipeline.fit_tabncd(split, cfg)
    X = split.unlabeled_test.X
    assert clustering_accuracy(split.unlabeled_test.reveal_labels(), predict_clusters(model, X)) >= 0.95
    np.testing.assert_array_equal(predict_clusters(model, X), predict_clusters(model, X))
    np.testing.assert_allclose(model.cluster_probabilities(X).sum(axis=1), 1.0, atol=1e-6)


def test_predict_clusters_argmax():
    rng = np.random.default_rng(0)
    cfg = TrainConfig()
    model = JointModel.build(4, 2, 3, cfg, rng)
    layer = model.cluster_head.layers[-1]
    layer.weight[:] = 0.0
    layer.bias[:] = [0.0, 50.0, 0.0]
    assert (predict_clusters(model, rng.uniform(size=(5, 4))) == 1).all()


def test_cold_start_must_be_explicit():
    split = three_blob_split(0, n_per_class=30)
    cfg = TrainConfig(batch_size=32)
    data = TrainingSet.from_split(split)
    model = JointModel.build(data.X.shape[1], 1, 2, cfg, np.random.default_rng(0))
    from tabncd.joint import JointTrainer

    with pytest.raises(UsageError):
        JointTrainer(model, data, cfg)
    JointTrainer(model, data, cfg, cold_start=True)


def test_short_batches_skip_or_clip():
    _, tr = blob_trainer(batch_size=4)
    log = tr.train_epoch()
    assert log["skipped_clustering_batches"] > 0
    assert log["clipped_top_k_batches"] > 0
    assert np.isfinite(log["loss_clustering"])
