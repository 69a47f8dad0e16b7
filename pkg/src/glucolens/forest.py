"""Photodiode-mode regressors: min-max scaling, least squares, random forest."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .phantom import derive_seed


class SingularDesignError(np.linalg.LinAlgError):
    pass


# ------------------------------------------------------------------ scaling


@dataclass(frozen=True)
class ScalerParams:
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def fit(cls, train_X) -> "ScalerParams":
        X = _as_matrix(train_X)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a scaler on an empty training matrix")
        return cls(X.min(axis=0), X.max(axis=0))

    def apply(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.min.size:
            raise ValueError(f"expected {self.min.size} features, got {X.shape[1]}")
        span = self.max - self.min
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.min) / safe, 0.0)


def scaler_fit_apply(train_X, X) -> np.ndarray:
    return ScalerParams.fit(train_X).apply(X)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    return X


# ---------------------------------------------------------------------- OLS


@dataclass
class OlsModel:
    coef: np.ndarray
    intercept: float
    scaler: ScalerParams | None = None
    meta: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.coef.size:
            raise ValueError(f"model expects {self.coef.size} features, got {X.shape[1]}")
        if self.scaler is not None:
            X = self.scaler.apply(X)
        return X @ self.coef + self.intercept

    def to_model_file(self):
        from .dataio import ModelFile

        arrays = {"coef": self.coef, "intercept": np.array([self.intercept])}
        if self.scaler is not None:
            arrays["scaler.min"] = self.scaler.min
            arrays["scaler.max"] = self.scaler.max
        return ModelFile("ols", {"meta": self.meta}, arrays)

    @classmethod
    def from_model_file(cls, mf) -> "OlsModel":
        a = mf.arrays
        scaler = ScalerParams(a["scaler.min"], a["scaler.max"]) if "scaler.min" in a else None
        return cls(a["coef"], float(a["intercept"][0]), scaler, dict(mf.spec.get("meta", {})))


def fit_ols(X, y, scale: bool = False) -> OlsModel:
    """Least squares with intercept, solved through a QR factorization."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, p = X.shape
    if n != len(y):
        raise ValueError(f"{n} rows but {len(y)} targets")
    if n <= p:
        raise ValueError(f"need more samples than features (N={n}, p={p})")
    scaler = ScalerParams.fit(X) if scale else None
    Xs = scaler.apply(X) if scaler else X
    A = np.hstack([Xs, np.ones((n, 1))])
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise SingularDesignError("design matrix is rank deficient (singular least-squares problem)")
    beta = np.linalg.solve(R, Q.T @ y)
    return OlsModel(beta[:p].copy(), float(beta[p]), scaler)


# -------------------------------------------------------------------- trees


@dataclass
class Tree:
    """Flat array tree. ``feature[k] < 0`` marks a leaf; ``x <= threshold`` goes left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(k):
            if self.feature[k] < 0:
                return 0
            return 1 + max(walk(self.left[k]), walk(self.right[k]))

        return walk(0)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        node = np.zeros(len(X), dtype=np.intp)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return self.value[node]
            r = rows[inner]
            n = node[inner]
            go_left = X[r, feat[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])


def _best_split(X, y):
    """Lowest weighted-SSE split as ``(feature, threshold)``, or None.

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    n, p = X.shape
    y = y - y.mean()  # centering keeps the cumulative sums well conditioned
    best = None
    best_sse = np.inf
    for f in range(p):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        valid = np.nonzero(xs[1:] > xs[:-1])[0]  # split after position i
        if valid.size == 0:
            continue
        cs = np.cumsum(ys)
        cs2 = np.cumsum(ys * ys)
        nl = valid + 1.0
        nr = n - nl
        sl, sl2 = cs[valid], cs2[valid]
        sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
        sse = (sl2 - sl * sl / nl) + (sr2 - sr * sr / nr)
        k = int(np.argmin(sse))
        if sse[k] < best_sse:
            best_sse = sse[k]
            i = valid[k]
            t = 0.5 * (xs[i] + xs[i + 1])
            if t >= xs[i + 1]:  # adjacent floats: midpoint rounded up
                t = xs[i]
            best = (f, t)
    return best


def fit_tree(X, y, max_depth: int | None = None, min_samples_split: int = 2, rng=None) -> Tree:
    """Greedy variance-reduction regression tree over all features.

    ``rng`` is accepted for interface symmetry; splitting is deterministic.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise ValueError("cannot fit a tree on empty data")
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        k, idx, depth = stack.pop()
        yk = y[idx]
        value[k] = float(yk.mean())
        if len(idx) < min_samples_split or (max_depth is not None and depth >= max_depth):
            continue
        if np.all(yk == yk[0]):
            continue
        split = _best_split(X[idx], yk)
        if split is None:
            continue
        f, t = split
        mask = X[idx, f] <= t
        feature[k], threshold[k] = f, t
        left[k], right[k] = new_node(), new_node()
        stack.append((right[k], idx[~mask], depth + 1))
        stack.append((left[k], idx[mask], depth + 1))
    return Tree(
        np.array(feature, dtype=np.intp),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(value, dtype=np.float64),
    )


# ------------------------------------------------------------------- forest


@dataclass
class ForestModel:
    trees: list
    n_estimators: int
    seed: int
    scaler: ScalerParams | None = None
    max_depth: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.scaler.min.size if self.scaler is not None else -1

    def tree_predictions(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if self.scaler is not None:
            X = self.scaler.apply(X)
        return np.stack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)

    def to_model_file(self):
        from .dataio import ModelFile

        arrays = {}
        if self.scaler is not None:
            arrays["scaler.min"] = self.scaler.min
            arrays["scaler.max"] = self.scaler.max
        for i, t in enumerate(self.trees):
            for name in ("feature", "threshold", "left", "right", "value"):
                arrays[f"tree.{i}.{name}"] = getattr(t, name).astype(np.float64)
        spec = {
            "n_estimators": self.n_estimators,
            "seed": self.seed,
            "max_depth": self.max_depth,
            "meta": self.meta,
        }
        return ModelFile("forest", spec, arrays)

    @classmethod
    def from_model_file(cls, mf) -> "ForestModel":
        a = mf.arrays
        n = int(mf.spec["n_estimators"])
        trees = []
        for i in range(n):
            trees.append(
                Tree(
                    a[f"tree.{i}.feature"].astype(np.intp),
                    a[f"tree.{i}.threshold"],
                    a[f"tree.{i}.left"].astype(np.intp),
                    a[f"tree.{i}.right"].astype(np.intp),
                    a[f"tree.{i}.value"],
                )
            )
        scaler = ScalerParams(a["scaler.min"], a["scaler.max"]) if "scaler.min" in a else None
        return cls(trees, n, int(mf.spec["seed"]), scaler, mf.spec.get("max_depth"), dict(mf.spec.get("meta", {})))


def fit_forest(
    X,
    y,
    n_estimators: int = 100,
    max_depth: int | None = 15,
    seed: int = 42,
    workers: int = 1,
    bootstrap: bool = True,
    scale: bool = True,
) -> ForestModel:
    """Bagged regression trees; tree ``t`` draws its bootstrap from ``(seed, t)``.

    Output is identical for any ``workers`` count.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise ValueError("cannot fit a forest on empty data")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} rows but {len(y)} targets")
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    scaler = ScalerParams.fit(X) if scale else None
    Xs = scaler.apply(X) if scaler else X
    n = len(y)

    def grow(t: int) -> Tree:
        if bootstrap:
            idx = np.random.default_rng(derive_seed(seed, t)).integers(0, n, size=n)
        else:
            idx = np.arange(n)
        return fit_tree(Xs[idx], y[idx], max_depth=max_depth)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(grow, range(n_estimators)))
    else:
        trees = [grow(t) for t in range(n_estimators)]
    return ForestModel(trees, n_estimators, seed, scaler, max_depth)


def predict(model, X) -> np.ndarray:
    return model.predict(X)
