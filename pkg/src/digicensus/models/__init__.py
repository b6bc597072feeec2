"""Regression core: linear solvers, trees, ensembles, dummy encodings and scoring."""
from __future__ import annotations

import numpy as np

from .dummies import DummyEncoder, encode_dummies
from .ensemble import GradientBoostingRegressor, RandomForestRegressor, fit_gbt, fit_random_forest
from .io import load_model, save_model, schema_fingerprint
from .linear import (
    LassoRegressor,
    OLSRegressor,
    alpha_max,
    fit_lasso,
    fit_ols,
    lasso_coordinate_descent,
    lasso_kkt_violation,
    soft_threshold,
)
from .metrics import r_squared
from .tree import RegressionTree, grow_tree

MODEL_KINDS = {
    "ols": OLSRegressor,
    "lasso": LassoRegressor,
    "rf": RandomForestRegressor,
    "gbt": GradientBoostingRegressor,
}


def make_model(kind: str, **params):
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model {kind!r}; expected one of {sorted(MODEL_KINDS)}") from None
    return cls(**params)


def predict(model, X, unpredictable=None):
    """Predictions with flagged rows set to NaN; returns ``(predictions, flags)``."""
    X = np.asarray(X, dtype=float)
    flags = np.zeros(len(X), dtype=bool) if unpredictable is None else np.asarray(unpredictable, dtype=bool)
    out = np.full(len(X), np.nan)
    if (~flags).any():
        out[~flags] = model.predict(X[~flags])
    return out, flags


__all__ = [
    "DummyEncoder",
    "GradientBoostingRegressor",
    "LassoRegressor",
    "MODEL_KINDS",
    "OLSRegressor",
    "RandomForestRegressor",
    "RegressionTree",
    "alpha_max",
    "encode_dummies",
    "fit_gbt",
    "fit_lasso",
    "fit_ols",
    "fit_random_forest",
    "grow_tree",
    "lasso_coordinate_descent",
    "lasso_kkt_violation",
    "load_model",
    "make_model",
    "predict",
    "r_squared",
    "save_model",
    "schema_fingerprint",
    "soft_threshold",
]
