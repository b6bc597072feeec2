from __future__ import annotations

import numpy as np


def r_squared(y_true, y_pred, reference_mean=None) -> float:
    """1 - SSE / SST with SST taken about the test-set mean.

    Pass ``reference_mean`` (e.g. the training mean) for the alternative
    denominator.  Returns NaN when the denominator is zero.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same shape")
    if len(y_true) < 2:
        raise ValueError("r_squared needs at least two rows")
    center = y_true.mean() if reference_mean is None else float(reference_mean)
    sst = float(np.sum((y_true - center) ** 2))
    if sst == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / sst
