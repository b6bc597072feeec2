"""Small builders shared by the test modules."""
import numpy as np
import pandas as pd

from digicensus.features import FeatureMatrix, FeatureSchema


def make_matrix(X, y, tracts, quarters=None, zips=None, districts=None, split=None):
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    n, p = X.shape
    split = p if split is None else split
    schema = FeatureSchema((("a", tuple(f"a{i}" for i in range(split))),
                            ("b", tuple(f"b{i}" for i in range(p - split)))))
    tracts = np.asarray(tracts).astype(str)
    meta = pd.DataFrame({
        "sale_id": [f"s{i}" for i in range(n)],
        "target": y,
        "tract_id": tracts,
        "zipcode_id": tracts if zips is None else np.asarray(zips).astype(str),
        "district_id": tracts if districts is None else np.asarray(districts).astype(str),
        "quarter": np.zeros(n, int) if quarters is None else quarters,
        "tc_missing": np.zeros(n, bool),
    })
    return FeatureMatrix(schema, X, meta)
