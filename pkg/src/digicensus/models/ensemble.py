"""Random forest and gradient tree boosting built on :mod:`.tree`.

Tree ``i`` draws all of its randomness from ``default_rng([random_state, i])``,
so serial and parallel fits, and warm-started continuations, agree bit for bit.
"""
from __future__ import annotations

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .tree import grow_tree

DEPTH_GRID = (3, 5, None)
TREE_COUNT_GRID = (100, 200, 500, 1000, 2000)
MAX_FEATURES_GRID = ("all", "sqrt", "log")


def tree_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(i)])


def _forest_tree(X, y, i, seed, bootstrap, max_depth, max_features, min_samples_split):
    rng = tree_rng(seed, i)
    if bootstrap:
        rows = rng.integers(0, X.shape[0], X.shape[0])
        return grow_tree(X[rows], y[rows], max_depth, max_features, min_samples_split, rng)
    return grow_tree(X, y, max_depth, max_features, min_samples_split, rng)


class RandomForestRegressor(RegressorMixin, BaseEstimator):
    """Bagged regression trees; the prediction is the mean over trees."""

    def __init__(self, n_estimators=100, max_depth=None, max_features="sqrt", bootstrap=True,
                 min_samples_split=2, random_state=0, n_jobs=1):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.min_samples_split = min_samples_split
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True, ensure_min_features=0)
        self.trees_ = Parallel(n_jobs=self.n_jobs)(
            delayed(_forest_tree)(X, y, i, self.random_state, self.bootstrap, self.max_depth,
                                  self.max_features, self.min_samples_split)
            for i in range(self.n_estimators)
        )
        return self

    def tree_predictions(self, X) -> np.ndarray:
        check_is_fitted(self, "trees_")
        X = validate_data(self, X, reset=False, dtype=np.float64, ensure_min_features=0)
        return np.array([t.predict(X) for t in self.trees_])

    def predict(self, X):
        return self.tree_predictions(X).mean(axis=0)


class GradientBoostingRegressor(RegressorMixin, BaseEstimator):
    """Least-squares gradient tree boosting.

    Stage 0 predicts the training mean; stage ``m`` fits a tree to the
    current residuals and adds ``learning_rate`` times its output.
    ``train_loss_[m]`` is the training MSE after ``m`` stages.
    """

    def __init__(self, n_estimators=100, learning_rate=0.1, max_depth=3, max_features=None,
                 min_samples_split=2, random_state=0, warm_start=False):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.random_state = random_state
        self.warm_start = warm_start

    def fit(self, X, y):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        resume = self.warm_start and hasattr(self, "trees_")
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True,
                             ensure_min_features=0, reset=not resume)
        if resume:
            if len(self.trees_) > self.n_estimators:
                raise ValueError("warm start cannot shrink the ensemble")
            pred = self._raw_predict(X)
        else:
            self.init_ = float(y.mean())
            self.trees_ = []
            pred = np.full(len(y), self.init_)
            self.train_loss_ = [float(np.mean((y - pred) ** 2))]
        for i in range(len(self.trees_), self.n_estimators):
            tree = grow_tree(X, y - pred, self.max_depth, self.max_features,
                             self.min_samples_split, tree_rng(self.random_state, i))
            pred += self.learning_rate * tree.predict(X)
            self.trees_.append(tree)
            self.train_loss_.append(float(np.mean((y - pred) ** 2)))
        return self

    def _raw_predict(self, X):
        pred = np.full(X.shape[0], self.init_)
        for tree in self.trees_:
            pred += self.learning_rate * tree.predict(X)
        return pred

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = validate_data(self, X, reset=False, dtype=np.float64, ensure_min_features=0)
        return self._raw_predict(X)

    def tree_predictions(self, X) -> np.ndarray:
        check_is_fitted(self, "trees_")
        X = validate_data(self, X, reset=False, dtype=np.float64, ensure_min_features=0)
        return np.array([t.predict(X) for t in self.trees_]).reshape(len(self.trees_), X.shape[0])


def fit_random_forest(X, y, **hyperparams) -> RandomForestRegressor:
    return RandomForestRegressor(**hyperparams).fit(X, y)


def fit_gbt(X, y, **hyperparams) -> GradientBoostingRegressor:
    return GradientBoostingRegressor(**hyperparams).fit(X, y)
