import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glucolens import forest
from glucolens.forest import ScalerParams, SingularDesignError, Tree
from glucolens.phantom import PhotodiodeConfig, gen_voltage_set

# ------------------------------------------------------------------ scaler


def test_scaler_examples():
    tr = np.array([[2.0], [4.0], [6.0]])
    assert forest.scaler_fit_apply(tr, [[4.0]])[0, 0] == 0.5
    np.testing.assert_array_equal(forest.scaler_fit_apply(tr, tr)[:, 0], [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(forest.scaler_fit_apply([[3.0], [3.0]], [[3.0], [9.0]]), [[0.0], [0.0]])


def test_scaler_errors():
    with pytest.raises(ValueError):
        ScalerParams.fit(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        ScalerParams.fit(np.zeros((3, 2))).apply(np.zeros((1, 3)))


@given(arrays(np.float64, (6, 3), elements=st.floats(-1e3, 1e3)))
def test_scaler_training_range_maps_into_unit_interval(X):
    Z = forest.scaler_fit_apply(X, X)
    assert Z.min() >= 0.0 and Z.max() <= 1.0 + 1e-12


# --------------------------------------------------------------------- OLS


def test_ols_examples():
    m = forest.fit_ols([[0.0], [1.0], [2.0]], [0.0, 1.0, 2.0])
    assert m.coef[0] == pytest.approx(1.0, abs=1e-12) and m.intercept == pytest.approx(0.0, abs=1e-12)
    assert forest.predict(m, [[5.0]])[0] == pytest.approx(5.0, abs=1e-12)
    m = forest.fit_ols([[0.0], [1.0]], [1.0, 3.0])
    assert m.coef[0] == pytest.approx(2.0, abs=1e-12) and m.intercept == pytest.approx(1.0, abs=1e-12)


def test_ols_singular():
    x = np.arange(6.0)
    with pytest.raises(SingularDesignError, match="singular"):
        forest.fit_ols(np.column_stack([x, x]), x)
    with pytest.raises(SingularDesignError):
        forest.fit_ols(np.ones((5, 1)), np.arange(5.0))


def test_ols_shape_errors():
    with pytest.raises(ValueError):
        forest.fit_ols(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        forest.fit_ols(np.zeros((2, 2)), np.zeros(2))
    m = forest.fit_ols(np.random.default_rng(0).normal(size=(10, 2)), np.arange(10.0))
    with pytest.raises(ValueError):
        m.predict(np.zeros((1, 3)))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_ols_residual_orthogonal_to_design(seed, scale):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    y = X @ rng.normal(size=3) + rng.normal(size=30)
    m = forest.fit_ols(X, y, scale=scale)
    r = y - m.predict(X)
    A = np.hstack([X, np.ones((30, 1))])
    assert np.max(np.abs(A.T @ r)) <= 1e-9 * (1 + np.abs(y).sum())


def test_ols_matches_lstsq_oracle():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 3))
    y = rng.normal(size=40)
    beta = np.linalg.lstsq(np.hstack([X, np.ones((40, 1))]), y, rcond=None)[0]
    m = forest.fit_ols(X, y)
    np.testing.assert_allclose(np.append(m.coef, m.intercept), beta, atol=1e-10)


# -------------------------------------------------------------------- trees


def test_tree_constant_and_single():
    t = forest.fit_tree(np.random.default_rng(0).normal(size=(20, 2)), np.full(20, 7.5))
    assert t.n_nodes == 1 and t.predict([[0, 0], [9, 9]]).tolist() == [7.5, 7.5]
    t = forest.fit_tree([[1.0, 2.0]], [3.0])
    assert t.n_nodes == 1 and t.predict([[5.0, 5.0]])[0] == 3.0
    with pytest.raises(ValueError):
        forest.fit_tree(np.zeros((0, 1)), [])


def test_tree_xor_depth_two():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0.0, 1.0, 1.0, 0.0])
    t = forest.fit_tree(X, y, max_depth=2)
    assert t.predict(X).tolist() == y.tolist()
    assert t.depth() == 2
    assert forest.fit_tree(X, y, max_depth=1).depth() == 1


def test_tree_min_samples_split():
    X = np.arange(4.0)[:, None]
    assert forest.fit_tree(X, [0, 0, 1, 1], min_samples_split=5).n_nodes == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_unlimited_depth_interpolates(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = rng.normal(size=n)
    t = forest.fit_tree(X, y, max_depth=None)
    pred = t.predict(X)
    r2 = 1 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
    assert r2 == 1.0


def test_tree_threshold_between_adjacent_floats():
    a = 1.0
    b = np.nextafter(a, 2.0)
    t = forest.fit_tree([[a], [b]], [0.0, 1.0])
    assert t.predict([[a], [b]]).tolist() == [0.0, 1.0]


# ------------------------------------------------------------------- forest


def test_single_tree_forest_reduces_to_tree():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 3))
    y = rng.normal(size=50)
    f = forest.fit_forest(X, y, n_estimators=1, bootstrap=False, scale=False, max_depth=4)
    t = forest.fit_tree(X, y, max_depth=4)
    Xq = rng.normal(size=(20, 3))
    assert np.array_equal(f.predict(Xq), t.predict(Xq))


def test_forest_constant_target():
    X = np.random.default_rng(2).normal(size=(30, 2))
    f = forest.fit_forest(X, np.full(30, 111.0), n_estimators=10)
    assert np.all(f.predict(np.random.default_rng(3).normal(size=(9, 2)) * 10) == 111.0)


def test_forest_of_identical_stumps():
    stump = Tree(np.array([0, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]),
                 np.array([2, -1, -1]), np.array([0.0, 10.0, 20.0]))
    f = forest.ForestModel([stump] * 5, 5, 0)
    X = np.array([[0.0], [1.0]])
    np.testing.assert_array_equal(forest.predict(f, X), stump.predict(X))


def test_forest_prediction_is_tree_mean_within_bounds():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 3))
    y = rng.uniform(70, 200, size=60)
    f = forest.fit_forest(X, y, n_estimators=15, seed=9)
    Xq = rng.normal(size=(25, 3)) * 3
    per_tree = f.tree_predictions(Xq)
    np.testing.assert_allclose(f.predict(Xq), per_tree.mean(axis=0), rtol=0, atol=0)
    assert f.predict(Xq).min() >= y.min() and f.predict(Xq).max() <= y.max()


def _same_forest(a, b):
    assert len(a.trees) == len(b.trees)
    for s, t in zip(a.trees, b.trees):
        for name in ("feature", "threshold", "left", "right", "value"):
            assert getattr(s, name).tobytes() == getattr(t, name).tobytes()


def test_forest_determinism_across_workers():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(120, 3))
    y = rng.normal(size=120)
    base = forest.fit_forest(X, y, n_estimators=12, seed=42, workers=1)
    for w in (2, 4):
        _same_forest(base, forest.fit_forest(X, y, n_estimators=12, seed=42, workers=w))
    other = forest.fit_forest(X, y, n_estimators=12, seed=43)
    assert not np.array_equal(other.predict(X), base.predict(X))


def test_forest_errors():
    with pytest.raises(ValueError):
        forest.fit_forest(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        forest.fit_forest(np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(ValueError):
        forest.fit_forest(np.zeros((3, 1)), np.zeros(3), n_estimators=0)
    f = forest.fit_forest(np.random.default_rng(0).normal(size=(10, 3)), np.arange(10.0), n_estimators=2)
    with pytest.raises(ValueError):
        f.predict(np.zeros((2, 2)))


def test_forest_beats_mean_on_voltages():
    samples = gen_voltage_set(PhotodiodeConfig(), 200, seed=11)
    X = np.array([s.features() for s in samples])
    y = np.array([s.concentration_mgdl for s in samples])
    Xtr, ytr, Xte, yte = X[:140], y[:140], X[140:], y[140:]
    f = forest.fit_forest(Xtr, ytr, n_estimators=50, seed=42)
    rmse = np.sqrt(np.mean((f.predict(Xte) - yte) ** 2))
    base = np.sqrt(np.mean((ytr.mean() - yte) ** 2))
    assert rmse < base
