"""Area and time indicator columns learned from training rows."""
from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

FACTORS = ("quarter", "tract", "tract_x_quarter")


def _factor_keys(keys: pd.DataFrame, factor: str) -> np.ndarray:
    if factor == "quarter":
        return keys["quarter"].astype(int).to_numpy()
    if factor == "tract":
        return keys["tract_id"].astype(str).to_numpy()
    tracts = keys["tract_id"].astype(str).to_numpy()
    quarters = keys["quarter"].astype(int).to_numpy()
    return np.array([f"{t}|{q:03d}" for t, q in zip(tracts, quarters)], dtype=object)


class DummyEncoder(TransformerMixin, BaseEstimator):
    """One-hot encoding with the first (sorted) level of each factor as baseline.

    Input is a frame with ``tract_id`` and ``quarter`` columns.  Levels are
    learned at fit time only; a row whose level was not seen in training is
    reported by :meth:`unpredictable` and encoded as all zeros.
    """

    def __init__(self, factors=("tract", "quarter")):
        self.factors = factors

    def _check_factors(self):
        factors = tuple(self.factors)
        bad = [f for f in factors if f not in FACTORS]
        if bad:
            raise ValueError(f"unknown dummy factor(s) {bad}")
        if "tract_x_quarter" in factors and ("tract" in factors or "quarter" in factors):
            raise ValueError("tract_x_quarter dummies already span tract and quarter dummies")
        return factors

    def fit(self, keys, y=None):
        factors = self._check_factors()
        self.levels_ = {}
        for f in factors:
            self.levels_[f] = np.unique(_factor_keys(keys, f))
        self.feature_names_out_ = [
            f"{f}={lvl}" for f in factors for lvl in self.levels_[f][1:]
        ]
        return self

    def transform(self, keys):
        check_is_fitted(self, "levels_")
        blocks = []
        for f, levels in self.levels_.items():
            k = _factor_keys(keys, f)
            pos = np.searchsorted(levels, k)
            pos = np.clip(pos, 0, len(levels) - 1)
            seen = levels[pos] == k
            block = np.zeros((len(k), len(levels) - 1))
            rows = np.flatnonzero(seen & (pos > 0))
            block[rows, pos[rows] - 1] = 1.0
            blocks.append(block)
        return np.hstack(blocks) if blocks else np.zeros((len(keys), 0))

    def unpredictable(self, keys) -> np.ndarray:
        check_is_fitted(self, "levels_")
        flags = np.zeros(len(keys), dtype=bool)
        for f, levels in self.levels_.items():
            flags |= ~np.isin(_factor_keys(keys, f), levels)
        return flags

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "levels_")
        return np.array(self.feature_names_out_, dtype=object)


def encode_dummies(train_keys, factors, test_keys=None):
    """Fit on ``train_keys``; return the encoder, the train block and, when
    given, the test block with its unpredictable-row flags."""
    enc = DummyEncoder(factors).fit(train_keys)
    out = [enc, enc.transform(train_keys)]
    if test_keys is not None:
        out += [enc.transform(test_keys), enc.unpredictable(test_keys)]
    return tuple(out)
