import numpy as np
import pytest

from tabncd.augment import AugmentConfig, SmoteNC, smote_nc_perturb
from tabncd.data import CATEGORICAL, CONTINUOUS, ColumnSchema, ColumnSpec, TrainingSet
from tabncd.errors import ConfigurationError


def mixed_schema(n_cont=3, groups=(3, 2)):
    cols = [ColumnSpec(f"c{i}", CONTINUOUS) for i in range(n_cont)]
    cols += [ColumnSpec(f"g{j}", CATEGORICAL, tuple(str(v) for v in range(m))) for j, m in enumerate(groups)]
    return ColumnSchema(tuple(cols))


def random_rows(rng, n, schema):
    X = np.zeros((n, schema.width))
    X[:, schema.continuous_idx] = rng.uniform(size=(n, len(schema.continuous_idx)))
    for start, stop in schema.categorical_spans:
        X[np.arange(n), start + rng.integers(0, stop - start, size=n)] = 1.0
    return X


def test_lambda_zero_keeps_continuous_dims():
    schema = mixed_schema()
    rng = np.random.default_rng(0)
    pool = random_rows(rng, 20, schema)
    x = pool[0]
    out = smote_nc_perturb(x, pool[1:], schema, AugmentConfig(3), rng, lam=0.0)
    np.testing.assert_array_equal(out[schema.continuous_idx], x[schema.continuous_idx])


def test_replicated_pool_gives_x():
    schema = mixed_schema(2, ())
    x = np.array([0.3, 0.8])
    out = smote_nc_perturb(x, np.tile(x, (6, 1)), schema, AugmentConfig(5), np.random.default_rng(1))
    np.testing.assert_array_equal(out, x)


def test_interpolation_arithmetic():
    schema = mixed_schema(1, ())
    pool = np.array([[1.0], [5.0], [6.0]])
    out = smote_nc_perturb(np.array([0.0]), pool, schema, AugmentConfig(1), np.random.default_rng(0), lam=0.25)
    assert out[0] == 0.25


def test_pool_too_small():
    schema = mixed_schema(1, ())
    with pytest.raises(ConfigurationError):
        smote_nc_perturb(np.zeros(1), np.zeros((3, 1)), schema, AugmentConfig(3), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        AugmentConfig(0)


def test_categorical_majority_and_tie_to_own():
    schema = ColumnSchema((ColumnSpec("c", CONTINUOUS), ColumnSpec("g", CATEGORICAL, ("a", "b", "c"))))
    x = np.array([0.0, 1, 0, 0])
    pool = np.array([[0.1, 0, 1, 0], [0.2, 0, 1, 0], [0.3, 1, 0, 0], [5.0, 0, 0, 1]])
    out = smote_nc_perturb(x, pool, schema, AugmentConfig(3), np.random.default_rng(0))
    np.testing.assert_array_equal(out[1:], [0, 1, 0])
    # two-two tie between x's own category and another: own category kept
    pool = np.array([[0.1, 0, 1, 0], [0.2, 1, 0, 0], [0.3, 1, 0, 0], [0.4, 0, 1, 0], [9.0, 0, 0, 1]])
    out = smote_nc_perturb(x, pool, schema, AugmentConfig(4), np.random.default_rng(0))
    np.testing.assert_array_equal(out[1:], [1, 0, 0])


def make_training_set(rng, n_l=60, n_u=80, n_known=2):
    schema = mixed_schema()
    X = random_rows(rng, n_l + n_u, schema)
    targets = np.concatenate([rng.integers(0, n_known, n_l), np.full(n_u, n_known)])
    is_labeled = np.arange(n_l + n_u) < n_l
    return TrainingSet(X, targets, is_labeled, schema, n_known, 2)


def test_neighbour_pools_respect_labels():
    data = make_training_set(np.random.default_rng(0))
    sm = SmoteNC(data, AugmentConfig(5, seed=0))
    for i, nb in enumerate(sm.neighbours):
        assert i not in nb
        if data.is_labeled[i]:
            assert data.is_labeled[nb].all() and (data.targets[nb] == data.targets[i]).all()
        else:
            assert not data.is_labeled[nb].any()


def test_neighbours_match_brute_force():
    data = make_training_set(np.random.default_rng(2))
    sm = SmoteNC(data, AugmentConfig(4, seed=0))
    cont = data.schema.continuous_idx
    for i in range(len(data)):
        if data.is_labeled[i]:
            pool = np.flatnonzero(data.is_labeled & (data.targets == data.targets[i]))
        else:
            pool = np.flatnonzero(~data.is_labeled)
        pool = pool[pool != i]
        d = [np.linalg.norm(data.X[j, cont] - data.X[i, cont]) for j in pool]
        assert set(pool[np.argsort(d)[:4]]) == set(sm.neighbours[i])


def test_segment_and_onehot_over_many_perturbations():
    rng = np.random.default_rng(3)
    data = make_training_set(rng, 200, 300, 3)
    sm = SmoteNC(data, AugmentConfig(5, seed=11))
    cont = data.schema.continuous_idx
    checked = 0
    while checked < 10_000:
        rows = rng.integers(0, len(data), size=500)
        out = sm.perturb(rows)
        x = data.X[rows][:, cont]
        nb = data.X[sm.neighbours[rows]][:, :, cont]
        xb = out[:, cont]
        # some neighbour and one shared lambda in [0, 1] explain every continuous dim
        diff = nb - x[:, None, :]
        lam = np.where(np.abs(diff) > 0, (xb[:, None, :] - x[:, None, :]) / np.where(diff == 0, 1, diff), np.nan)
        lo, hi = np.nanmin(lam, axis=2), np.nanmax(lam, axis=2)
        ok = (hi - lo < 1e-9) & (lo > -1e-12) & (hi < 1 + 1e-12)
        assert ok.any(axis=1).all()
        lo_seg, hi_seg = np.minimum(x[:, None], nb).min(axis=1), np.maximum(x[:, None], nb).max(axis=1)
        assert ((xb >= lo_seg - 1e-12) & (xb <= hi_seg + 1e-12)).all()
        for start, stop in data.schema.categorical_spans:
            g = out[:, start:stop]
            assert set(np.unique(g)) <= {0.0, 1.0} and (g.sum(axis=1) == 1).all()
        checked += len(rows)


def test_seeded_determinism():
    data = make_training_set(np.random.default_rng(4))
    a = SmoteNC(data, AugmentConfig(5, seed=(1, 5))).perturb()
    b = SmoteNC(data, AugmentConfig(5, seed=(1, 5))).perturb()
    c = SmoteNC(data, AugmentConfig(5, seed=(2, 5))).perturb()
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
