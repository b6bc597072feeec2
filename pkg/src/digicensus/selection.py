"""Lasso feature selection ahead of the tree ensembles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .features import FeatureMatrix
from .models.linear import LassoRegressor

NONZERO_TOL = 1e-12
DEFAULT_ALPHA_GRID = tuple(10.0 ** e for e in np.arange(-6.0, -0.99, 0.5))
SELECTION_ALPHA_GRID = (10 ** -4.5, 10 ** -4.0, 10 ** -3.5)


class LassoSelector(SelectorMixin, BaseEstimator):
    """Keep the columns whose standardized Lasso coefficient is nonzero.

    Fits on whatever rows it is given, so inside a pipeline it is refit per
    training fold.
    """

    def __init__(self, alpha=10 ** -4, max_iter=10_000, tol=1e-7):
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        if not self.alpha > 0:
            raise ValueError("selection alpha must be positive")
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        self.lasso_ = LassoRegressor(alpha=self.alpha, max_iter=self.max_iter, tol=self.tol).fit(X, y)
        self.support_ = np.abs(self.lasso_.coef_std_) > NONZERO_TOL
        self.converged_ = self.lasso_.converged_
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_

    def transform(self, X):
        check_is_fitted(self, "support_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return X[:, self.support_]


@dataclass
class SelectionResult:
    alpha: float
    kept: list[str]
    dropped: list[str]
    kept_counts_by_block: dict[str, int] = field(default_factory=dict)
    converged: bool = True


def select_features(features: FeatureMatrix, target=None, alpha: float = 10 ** -4) -> SelectionResult:
    target = features.target if target is None else np.asarray(target, dtype=float)
    sel = LassoSelector(alpha=alpha).fit(features.values, target)
    names = features.columns
    blocks = features.schema.block_of()
    counts = {b: 0 for b in features.schema.block_names}
    for keep, b in zip(sel.support_, blocks):
        counts[b] += int(keep)
    return SelectionResult(
        alpha=float(alpha),
        kept=[c for c, k in zip(names, sel.support_) if k],
        dropped=[c for c, k in zip(names, sel.support_) if not k],
        kept_counts_by_block=counts,
        converged=bool(sel.converged_),
    )


def selection_curve(features: FeatureMatrix, target=None, alpha_grid=DEFAULT_ALPHA_GRID) -> pd.DataFrame:
    """Kept-column counts per block for each penalty, one row per alpha."""
    grid = [float(a) for a in alpha_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("alpha grid must be strictly increasing")
    rows = []
    for a in grid:
        res = select_features(features, target, a)
        row = {"alpha": a, "log10_alpha": float(np.log10(a))}
        row.update({f"kept_{b}": n for b, n in res.kept_counts_by_block.items()})
        row["kept_total"] = len(res.kept)
        row["converged"] = res.converged
        rows.append(row)
    return pd.DataFrame(rows)


def parse_alpha_grid(text: str) -> list[float]:
    """Parse ``start:stop:step`` with an optional ``dex`` suffix on the step.

    ``1e-6:1e-1:0.5dex`` gives 10^-6, 10^-5.5, ..., 10^-1.  A comma list of
    values is accepted as well.
    """
    if ":" not in text:
        return [float(v) for v in text.split(",") if v.strip()]
    start, stop, step = text.split(":")
    if step.endswith("dex"):
        lo, hi, d = np.log10(float(start)), np.log10(float(stop)), float(step[:-3])
        count = int(round((hi - lo) / d)) + 1
        return [float(10 ** (lo + i * d)) for i in range(count)]
    lo, hi, d = float(start), float(stop), float(step)
    count = int(round((hi - lo) / d)) + 1
    return [lo + i * d for i in range(count)]
