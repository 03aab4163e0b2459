"""Small numpy classifiers used as noisy-label generators.

All expose ``fit(X, y, sample_weight=None)`` and ``predict_proba(X)``
returning the probability of the anomaly class as a 1-D array.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit


class NotFittedError(RuntimeError):
    pass


class LogisticRegression:
    """L2-regularized logistic regression on internally standardized features."""

    def __init__(self, l2: float = 1.0):
        self.l2 = l2
        self.coef_ = None

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        self.std_ = np.maximum(X.std(axis=0), 1e-8)
        Z = np.column_stack([(X - self.mean_) / self.std_, np.ones(len(X))])
        reg = np.ones(Z.shape[1])
        reg[-1] = 0.0

        def objective(beta):
            u = Z @ beta
            # log(1 + e^u) - y u, computed stably
            nll = np.logaddexp(0.0, u) - y * u
            p = 0.5 * (1.0 + np.tanh(0.5 * u))
            f = (w * nll).sum() + 0.5 * self.l2 * (reg * beta * beta).sum()
            g = Z.T @ (w * (p - y)) + self.l2 * reg * beta
            return f, g

        res = minimize(objective, np.zeros(Z.shape[1]), jac=True, method="L-BFGS-B")
        self.coef_ = res.x
        return self

    def predict_proba(self, X):
        if self.coef_ is None:
            raise NotFittedError("LogisticRegression is not fitted")
        Z = (np.asarray(X, dtype=np.float64) - self.mean_) / self.std_
        u = Z @ self.coef_[:-1] + self.coef_[-1]
        return 0.5 * (1.0 + np.tanh(0.5 * u))


class DecisionTree:
    """Weighted-Gini CART with axis-aligned thresholds."""

    def __init__(self, max_depth: int = 4, min_samples_leaf: int = 1, max_features: int | None = None, rng=None):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.feature = None

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        self._feature, self._threshold, self._left, self._right, self._value = [], [], [], [], []
        self._grow(X, y, w, np.arange(len(y)), 0)
        self.feature = np.array(self._feature)
        self.threshold = np.array(self._threshold)
        self.left = np.array(self._left)
        self.right = np.array(self._right)
        self.value = np.array(self._value)
        return self

    def _new_node(self, value: float) -> int:
        self._feature.append(-1)
        self._threshold.append(0.0)
        self._left.append(-1)
        self._right.append(-1)
        self._value.append(value)
        return len(self._feature) - 1

    def _grow(self, X, y, w, idx, depth) -> int:
        wt = w[idx].sum()
        pos = (w[idx] * y[idx]).sum()
        node = self._new_node(pos / wt if wt > 0 else 0.0)
        if depth >= self.max_depth or pos <= 0 or pos >= wt or idx.size < 2 * self.min_samples_leaf:
            return node
        split = self._best_split(X[idx], y[idx], w[idx])
        if split is None:
            return node
        f, thr = split
        go_left = X[idx, f] <= thr
        self._feature[node] = f
        self._threshold[node] = thr
        self._left[node] = self._grow(X, y, w, idx[go_left], depth + 1)
        self._right[node] = self._grow(X, y, w, idx[~go_left], depth + 1)
        return node

    def _best_split(self, X, y, w):
        n, d = X.shape
        feats = np.arange(d)
        if self.max_features is not None and self.max_features < d:
            feats = self.rng.choice(d, size=self.max_features, replace=False)
        msl = self.min_samples_leaf
        total_w, total_p = w.sum(), (w * y).sum()
        best, best_imp = None, np.inf
        for f in feats:
            order = np.argsort(X[:, f], kind="stable")
            xs = X[order, f]
            wl = np.cumsum(w[order])[:-1]
            pl = np.cumsum((w * y)[order])[:-1]
            wr, pr = total_w - wl, total_p - pl
            ok = xs[:-1] < xs[1:]
            cut = np.arange(1, n)
            ok &= (cut >= msl) & (n - cut >= msl) & (wl > 0) & (wr > 0)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                imp = 2.0 * pl * (1.0 - pl / wl) + 2.0 * pr * (1.0 - pr / wr)
            imp = np.where(ok, imp, np.inf)
            i = int(np.argmin(imp))
            if imp[i] < best_imp - 1e-12:
                best_imp = imp[i]
                best = (int(f), 0.5 * (xs[i] + xs[i + 1]))
        return best

    def predict_proba(self, X):
        if self.feature is None:
            raise NotFittedError("DecisionTree is not fitted")
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        for _ in range(self.max_depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]


class RandomForest:
    def __init__(self, n_trees: int = 20, max_depth: int = 6, rng=None):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.trees = []

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        n, d = X.shape
        max_features = max(1, int(np.sqrt(d)))
        self.trees = []
        for _ in range(self.n_trees):
            boot = self.rng.integers(n, size=n)
            tree = DecisionTree(self.max_depth, max_features=max_features, rng=self.rng)
            sw = None if sample_weight is None else np.asarray(sample_weight)[boot]
            self.trees.append(tree.fit(X[boot], np.asarray(y)[boot], sw))
        return self

    def predict_proba(self, X):
        if not self.trees:
            raise NotFittedError("RandomForest is not fitted")
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)


class BoostedStumps:
    """Discrete AdaBoost over depth-1 trees; probability via sigmoid(2F)."""

    def __init__(self, n_rounds: int = 50):
        self.n_rounds = n_rounds
        self.stumps = []

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        sign = 2.0 * y - 1.0
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64).copy()
        w /= w.sum()
        self.stumps = []
        for _ in range(self.n_rounds):
            stump = DecisionTree(max_depth=1).fit(X, y, w)
            h = np.where(stump.predict_proba(X) >= 0.5, 1.0, -1.0)
            err = w[h != sign].sum()
            if err >= 0.5:
                break
            err = max(err, 1e-10)
            a = 0.5 * np.log((1.0 - err) / err)
            self.stumps.append((a, stump))
            w *= np.exp(-a * sign * h)
            w /= w.sum()
        if not self.stumps:
            # no stump beats chance: constant majority-class score
            self.stumps.append((1e-3 * (1.0 if y.mean() >= 0.5 else -1.0), DecisionTree(max_depth=0).fit(X, y)))
        return self

    def decision_function(self, X):
        if not self.stumps:
            raise NotFittedError("BoostedStumps is not fitted")
        return sum(a * np.where(s.predict_proba(X) >= 0.5, 1.0, -1.0) for a, s in self.stumps)

    def predict_proba(self, X):
        return expit(2.0 * self.decision_function(X))
