"""Least squares and Lasso regressors.

Both standardize columns internally (population mean and standard
deviation) and leave the intercept unpenalized.  Coefficients are exposed
on the raw feature scale in ``coef_``; the standardized-scale solution is
kept in ``coef_std_``.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted, validate_data


def _standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return (X - mean) / scale, mean, scale


class _LinearBase(RegressorMixin, BaseEstimator):
    def _set_raw(self, coef_std, y_mean):
        self.coef_std_ = coef_std
        self.coef_ = coef_std / self.scale_
        self.intercept_ = float(y_mean - self.mean_ @ self.coef_)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False, dtype=np.float64, ensure_min_features=0)
        return X @ self.coef_ + self.intercept_

    def standardized(self, X):
        """``X`` mapped to the scale the solver worked on."""
        check_is_fitted(self, "coef_")
        return (np.asarray(X, dtype=float) - self.mean_) / self.scale_


class OLSRegressor(_LinearBase):
    """Ordinary least squares with column-pivoted QR.

    Rank-deficient designs are solved for the minimum-norm coefficient
    vector; the columns that fall outside the numerical rank of the pivoted
    factorization are listed in ``aliased_``.
    """

    def __init__(self, rcond=None):
        self.rcond = rcond

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True, ensure_min_features=0)
        n, p = X.shape
        if p + 1 > n:
            raise ValueError(
                f"OLS needs more rows than parameters ({n} rows, {p} columns plus intercept); "
                "use a regularized model such as LassoRegressor"
            )
        Xs, self.mean_, self.scale_ = _standardize(X)
        y_mean = y.mean()
        yc = y - y_mean
        if p == 0:
            self.rank_, self.aliased_ = 0, []
            self._set_raw(np.zeros(0), y_mean)
            return self

        q, r, piv = scipy.linalg.qr(Xs, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        tol = self.rcond if self.rcond is not None else max(n, p) * np.finfo(float).eps
        rank = int(np.sum(diag > tol * diag[0])) if diag[0] > 0 else 0
        self.rank_ = rank
        self.aliased_ = sorted(int(j) for j in piv[rank:])
        if rank == p:
            beta = np.empty(p)
            beta[piv] = scipy.linalg.solve_triangular(r, q.T @ yc)
        else:
            beta = scipy.linalg.lstsq(Xs, yc, cond=tol, lapack_driver="gelsd")[0]
        self._set_raw(beta, y_mean)
        return self


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def lasso_coordinate_descent(gram, xty, alpha, beta=None, max_iter=10_000, tol=1e-7):
    """Cyclic coordinate descent for ``(1/2n)||y - Xb||^2 + alpha * ||b||_1``.

    Works on the Gram form: ``gram = X'X / n`` and ``xty = X'y / n``.
    Alternates full sweeps with sweeps over the current nonzero set; stops
    once a full sweep moves no coefficient by ``tol`` or more.  Returns
    ``(beta, n_sweeps, converged)``.
    """
    p = len(xty)
    beta = np.zeros(p) if beta is None else np.array(beta, dtype=float)
    g_beta = gram @ beta
    diag = np.diag(gram).copy()
    usable = [j for j in range(p) if diag[j] > 0]
    beta[diag <= 0] = 0.0

    def sweep(coords):
        nonlocal g_beta
        biggest = 0.0
        for j in coords:
            old = beta[j]
            rho = xty[j] - g_beta[j] + diag[j] * old
            if rho > alpha:
                new = (rho - alpha) / diag[j]
            elif rho < -alpha:
                new = (rho + alpha) / diag[j]
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                g_beta += gram[:, j] * delta
                if abs(delta) > biggest:
                    biggest = abs(delta)
        return biggest

    sweeps = 0
    while sweeps < max_iter:
        change = sweep(usable)
        sweeps += 1
        if change < tol:
            return beta, sweeps, True
        active = [j for j in usable if beta[j] != 0.0]
        while sweeps < max_iter:
            change = sweep(active)
            sweeps += 1
            if change < tol:
                break
    return beta, sweeps, False


class LassoRegressor(_LinearBase):
    """L1-penalized least squares on standardized columns.

    The objective is ``(1/2n) * ||y - Xb||^2 + alpha * ||b||_1``.  When
    ``alpha >= alpha_max(X, y)`` every slope is exactly zero.
    """

    def __init__(self, alpha=1e-3, max_iter=10_000, tol=1e-7, warm_start=False):
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol
        self.warm_start = warm_start

    def fit(self, X, y):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True, ensure_min_features=0)
        n = X.shape[0]
        Xs, self.mean_, self.scale_ = _standardize(X)
        y_mean = y.mean()
        yc = y - y_mean
        gram = Xs.T @ Xs / n
        xty = Xs.T @ yc / n
        start = None
        if self.warm_start and getattr(self, "coef_std_", None) is not None and len(self.coef_std_) == X.shape[1]:
            start = self.coef_std_
        beta, self.n_iter_, self.converged_ = lasso_coordinate_descent(
            gram, xty, float(self.alpha), start, self.max_iter, self.tol
        )
        if not self.converged_:
            warnings.warn(f"Lasso did not converge in {self.max_iter} sweeps", ConvergenceWarning)
        self._set_raw(beta, y_mean)
        return self


def alpha_max(X, y) -> float:
    """Smallest penalty at which the standardized Lasso solution is all zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Xs, _, _ = _standardize(X)
    return float(np.max(np.abs(Xs.T @ (y - y.mean()))) / len(y)) if X.shape[1] else 0.0


def lasso_kkt_violation(model: LassoRegressor, X, y) -> float:
    """Largest violation of the Lasso optimality conditions on the standardized scale.

    Zero coordinates need ``|x_j' r| / n <= alpha``; nonzero ones need
    ``x_j' r / n == alpha * sign(b_j)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Xs = model.standardized(X)
    live = X.std(axis=0) > 0
    r = (y - y.mean()) - Xs @ model.coef_std_
    grad = Xs.T @ r / len(y)
    b = model.coef_std_
    zero = (b == 0) & live
    active = (b != 0) & live
    worst = 0.0
    if zero.any():
        worst = max(worst, float(np.max(np.abs(grad[zero]) - model.alpha)))
    if active.any():
        worst = max(worst, float(np.max(np.abs(grad[active] - model.alpha * np.sign(b[active])))))
    return max(worst, 0.0)


def fit_ols(X, y, **params) -> OLSRegressor:
    return OLSRegressor(**params).fit(X, y)


def fit_lasso(X, y, alpha, **params) -> LassoRegressor:
    return LassoRegressor(alpha=alpha, **params).fit(X, y)
