"""Repeat-sale pairs, the BMN quarterly index and the price-change dataset.

The index is the unweighted Bailey-Muth-Nourse regression: for a pair sold
in quarters s < t the row has -1 in column s and +1 in column t, the base
quarter's column is dropped and there is no intercept.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .features import FeatureMatrix, FeatureSchema
from .ingest import SaleRecord


class IndexIdentificationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SalePair:
    property_key: str
    first: SaleRecord
    second: SaleRecord

    def __post_init__(self):
        if not self.second.sale_date > self.first.sale_date:
            raise ValueError("second sale must be strictly later than the first")

    @property
    def log_diff(self) -> float:
        return self.second.log_price - self.first.log_price

    @property
    def quarter_s(self) -> int:
        return self.first.quarter

    @property
    def quarter_t(self) -> int:
        return self.second.quarter

    @property
    def days(self) -> int:
        return (self.second.sale_date - self.first.sale_date).days


@dataclass
class PairingReport:
    properties: int = 0
    repeat_properties: int = 0
    same_date_dropped: int = 0
    pairs: int = 0


def property_key(sale: SaleRecord, mode: str = "bbl_units") -> str:
    if mode == "bbl":
        return sale.bbl
    if mode == "bbl_units":
        return f"{sale.bbl}#{sale.unit_count}"
    raise ValueError(f"unknown property key mode {mode!r}")


def pair_sales(sales: Sequence[SaleRecord], key_mode: str = "bbl_units"):
    """Pair each sale with the next sale of the same property.

    Same-day sales of one property collapse to the higher-priced record
    (earlier input position wins an exact tie).  Returns the pairs, ordered
    by property key then date, and a :class:`PairingReport`.
    """
    by_key: dict[str, list[tuple[int, SaleRecord]]] = {}
    for i, s in enumerate(sales):
        by_key.setdefault(property_key(s, key_mode), []).append((i, s))

    report = PairingReport(properties=len(by_key))
    pairs: list[SalePair] = []
    for key in sorted(by_key):
        rows = by_key[key]
        best: dict = {}
        for i, s in rows:
            cur = best.get(s.sale_date)
            if cur is None:
                best[s.sale_date] = (i, s)
                continue
            report.same_date_dropped += 1
            if s.price_per_unit > cur[1].price_per_unit:
                best[s.sale_date] = (i, s)
        ordered = [best[d][1] for d in sorted(best)]
        if len(ordered) >= 2:
            report.repeat_properties += 1
        for a, b in zip(ordered, ordered[1:]):
            pairs.append(SalePair(key, a, b))
    report.pairs = len(pairs)
    return pairs, report


@dataclass
class PriceIndex:
    log_index: np.ndarray
    n_pairs: int
    residual_variance: float
    base: int = 0
    unidentified: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.log_index)

    def rebased(self, base: int) -> "PriceIndex":
        return PriceIndex(self.log_index - self.log_index[base], self.n_pairs, self.residual_variance,
                          base, list(self.unidentified))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"quarter": np.arange(len(self.log_index)), "log_index": self.log_index})


def _pair_arrays(pairs):
    if isinstance(pairs, pd.DataFrame):
        return (pairs["quarter_s"].to_numpy(int), pairs["quarter_t"].to_numpy(int),
                pairs["log_diff"].to_numpy(float))
    qs = np.array([p.quarter_s for p in pairs], dtype=int)
    qt = np.array([p.quarter_t for p in pairs], dtype=int)
    d = np.array([p.log_diff for p in pairs], dtype=float)
    return qs, qt, d


def estimate_bmn_index(pairs, n_quarters: int = 24, base: int = 0) -> PriceIndex:
    """Least-squares repeat-sales index on the log scale.

    ``pairs`` is a sequence of :class:`SalePair` or a frame with
    ``quarter_s``, ``quarter_t`` and ``log_diff``.  Quarters no pair touches
    are returned as NaN and listed in ``unidentified``; touched quarters that
    are not linked to the base quarter raise
    :class:`IndexIdentificationError`.
    """
    qs, qt, d = _pair_arrays(pairs)
    if len(qs) and (min(qs.min(), qt.min()) < 0 or max(qs.max(), qt.max()) >= n_quarters):
        raise ValueError("pair quarter outside the index range")
    cross = qs != qt
    qs_c, qt_c = qs[cross], qt[cross]

    graph = coo_matrix((np.ones(len(qs_c)), (qs_c, qt_c)), shape=(n_quarters, n_quarters))
    _, comp = connected_components(graph, directed=False)
    touched = np.zeros(n_quarters, dtype=bool)
    touched[qs_c] = True
    touched[qt_c] = True
    touched[base] = True
    linked = comp == comp[base]
    stranded = np.flatnonzero(touched & ~linked)
    if stranded.size or linked.sum() < 2:
        groups = {}
        for q in stranded:
            groups.setdefault(int(comp[q]), []).append(int(q))
        raise IndexIdentificationError(
            "price index is not identified: "
            + ("no pair spans two quarters" if linked.sum() < 2 and not stranded.size
               else f"quarters {list(groups.values())} are not connected to base quarter {base}")
        )

    cols = [q for q in range(n_quarters) if q != base and linked[q]]
    pos = {q: j for j, q in enumerate(cols)}
    design = np.zeros((len(qs), len(cols)))
    for i, (s, t) in enumerate(zip(qs, qt)):
        if s != t:
            if s in pos:
                design[i, pos[s]] -= 1.0
            if t in pos:
                design[i, pos[t]] += 1.0
    coef, _, _, _ = scipy.linalg.lstsq(design, d, lapack_driver="gelsd")
    resid = d - design @ coef
    dof = max(len(d) - len(cols), 1)

    log_index = np.full(n_quarters, np.nan)
    log_index[base] = 0.0
    log_index[cols] = coef
    unidentified = [int(q) for q in np.flatnonzero(~linked)]
    return PriceIndex(log_index, len(d), float(resid @ resid / dof), base, unidentified)


def pairs_to_frame(pairs: Sequence[SalePair]) -> pd.DataFrame:
    return pd.DataFrame({
        "property_key": [p.property_key for p in pairs],
        "sale_id_s": [p.first.sale_id for p in pairs],
        "sale_id_t": [p.second.sale_id for p in pairs],
        "date_s": [p.first.sale_date.isoformat() for p in pairs],
        "date_t": [p.second.sale_date.isoformat() for p in pairs],
        "quarter_s": [p.quarter_s for p in pairs],
        "quarter_t": [p.quarter_t for p in pairs],
        "days": [p.days for p in pairs],
        "log_diff": [p.log_diff for p in pairs],
    })


CHANGE_BASE_COLUMNS = ("days_between", "index_change")


def build_change_dataset(pairs: Sequence[SalePair], index: PriceIndex, sale_features: FeatureMatrix,
                         blocks: Sequence[str] = ()) -> FeatureMatrix:
    """Price-change design: time gap, index change, then each block at both sales.

    ``sale_features`` holds one row per sale (computed at that sale's own
    date and location); rows are looked up by sale id.  Group keys and
    quarter in the output meta come from the second sale.
    """
    row_of = {sid: i for i, sid in enumerate(sale_features.sale_ids)}
    try:
        rs = np.array([row_of[p.first.sale_id] for p in pairs], dtype=int)
        rt = np.array([row_of[p.second.sale_id] for p in pairs], dtype=int)
    except KeyError as exc:
        raise KeyError(f"sale {exc.args[0]} has no feature row") from None

    qs = np.array([p.quarter_s for p in pairs], dtype=int)
    qt = np.array([p.quarter_t for p in pairs], dtype=int)
    change = index.log_index[qt] - index.log_index[qs]
    if not np.isfinite(change).all():
        raise ValueError("pairs touch quarters where the price index is unidentified")
    days = np.array([p.days for p in pairs], dtype=float)

    schema_blocks = [("base", CHANGE_BASE_COLUMNS)]
    parts = [np.column_stack([days, change]) if len(pairs) else np.empty((0, 2))]
    for b in blocks:
        cols = sale_features.schema.blocks[sale_features.schema.block_names.index(b)][1]
        block = sale_features.block(b)
        schema_blocks.append((f"{b}_s", tuple(f"{c}_s" for c in cols)))
        schema_blocks.append((f"{b}_t", tuple(f"{c}_t" for c in cols)))
        parts += [block[rs], block[rt]]
    schema = FeatureSchema(tuple(schema_blocks))
    second = sale_features.meta.iloc[rt].reset_index(drop=True)
    first = sale_features.meta.iloc[rs].reset_index(drop=True)
    meta = pd.DataFrame({
        "sale_id": [f"{p.first.sale_id}>{p.second.sale_id}" for p in pairs],
        "target": [p.log_diff for p in pairs],
        "tract_id": second["tract_id"],
        "zipcode_id": second["zipcode_id"],
        "district_id": second["district_id"],
        "quarter": second["quarter"],
        "tc_missing": first["tc_missing"].to_numpy(bool) | second["tc_missing"].to_numpy(bool),
    })
    return FeatureMatrix(schema, np.hstack(parts), meta)
