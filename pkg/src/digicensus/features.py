"""Neighborhood feature blocks and the per-sale feature matrix.

Blocks, in assembly order:

=======  ======================================================  =====
name     content                                                 width
=======  ======================================================  =====
hc       housing characteristics                                 30
d        quarter dummies (first quarter is the baseline)         T - 1
311      volume, 120-way type distribution, 56-bin timeline      177
crime    volume, 48-way type distribution, 56-bin timeline       105
taxi     pickup/dropoff volumes and timelines                    114
tc       9 ACS + 2 LEHD tract values                             11
=======  ======================================================  =====
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .geoindex import DEFAULT_RADIUS, QueryScope, SpatioTemporalIndex, weekly_bin
from .ingest import (
    CATEGORY_TABLE_SIZES,
    CENSUS_COLUMNS,
    N_CHARACTERISTICS,
    EventTable,
    SaleRecord,
    SchemaError,
    TractCensus,
    join_tract_census,
)

N_TIME_BINS = 56
ALL_BLOCKS = ("hc", "d", "311", "crime", "taxi", "tc")
DIGITAL_BLOCKS = ("311", "crime", "taxi")
META_COLUMNS = ["sale_id", "target", "tract_id", "zipcode_id", "district_id", "quarter", "tc_missing"]

_EVENT_KIND = {"311": "complaint311", "crime": "crime"}


def _column(events, name: str) -> np.ndarray:
    if isinstance(events, EventTable):
        return {"timestamp": events.timestamp, "category_id": events.category}[name]
    return np.array([getattr(e, name) for e in events], dtype=np.int64)


def volume_feature(events, transform: str = "log1p") -> float:
    """ln(1 + n) of the event count, or the raw count with ``transform="raw"``."""
    n = len(events)
    if transform == "log1p":
        return float(np.log1p(n))
    if transform == "raw":
        return float(n)
    raise ValueError(f"unknown volume transform {transform!r}")


def type_distribution(events, size: int) -> np.ndarray:
    cats = _column(events, "category_id")
    counts = np.bincount(cats, minlength=size).astype(float)
    if len(counts) > size:
        raise ValueError(f"category id {cats.max()} outside table of size {size}")
    total = counts.sum()
    return counts / total if total else counts


def weekly_timeline(events) -> np.ndarray:
    """Share of events in each of the 56 three-hour bins of the week (Monday 00:00 = bin 0)."""
    bins = weekly_bin(_column(events, "timestamp"))
    counts = np.bincount(bins, minlength=N_TIME_BINS).astype(float)
    total = counts.sum()
    return counts / total if total else counts


def taxi_features(pickups, dropoffs, transform: str = "log1p") -> np.ndarray:
    return np.concatenate([
        [volume_feature(pickups, transform), volume_feature(dropoffs, transform)],
        weekly_timeline(pickups),
        weekly_timeline(dropoffs),
    ])


# --------------------------------------------------------------------------
# schema


def block_columns(name: str, n_quarters: int = 24, quarter_mode: str = "calendar") -> list[str]:
    if name == "hc":
        return [f"hc_{i:02d}" for i in range(N_CHARACTERISTICS)]
    if name == "d":
        if quarter_mode == "seasonal":
            return [f"season_{s}" for s in range(2, 5)]
        return [f"q_{q:02d}" for q in range(1, n_quarters)]
    if name in _EVENT_KIND:
        size = CATEGORY_TABLE_SIZES[_EVENT_KIND[name]]
        return ([f"{name}_volume"]
                + [f"{name}_type_{k:03d}" for k in range(size)]
                + [f"{name}_time_{b:02d}" for b in range(N_TIME_BINS)])
    if name == "taxi":
        return (["taxi_pickup_volume", "taxi_dropoff_volume"]
                + [f"taxi_pickup_time_{b:02d}" for b in range(N_TIME_BINS)]
                + [f"taxi_dropoff_time_{b:02d}" for b in range(N_TIME_BINS)])
    if name == "tc":
        return [f"tc_{c}" for c in CENSUS_COLUMNS]
    raise ValueError(f"unknown feature block {name!r}")


EXPECTED_WIDTHS = {"hc": 30, "311": 177, "crime": 105, "taxi": 114, "tc": 11}


@dataclass(frozen=True)
class FeatureSchema:
    blocks: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        names = [c for _, cols in self.blocks for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError("feature column names must be unique across blocks")
        for block, cols in self.blocks:
            want = EXPECTED_WIDTHS.get(block)
            if want is not None and len(cols) != want:
                raise SchemaError(f"block {block} has width {len(cols)}, expected {want}")

    @classmethod
    def build(cls, blocks: Sequence[str], n_quarters: int = 24, quarter_mode: str = "calendar"):
        return cls(tuple((b, tuple(block_columns(b, n_quarters, quarter_mode))) for b in blocks))

    @property
    def block_names(self) -> list[str]:
        return [b for b, _ in self.blocks]

    @property
    def columns(self) -> list[str]:
        return [c for _, cols in self.blocks for c in cols]

    @property
    def total_width(self) -> int:
        return sum(len(cols) for _, cols in self.blocks)

    def slice(self, block: str) -> slice:
        start = 0
        for b, cols in self.blocks:
            if b == block:
                return slice(start, start + len(cols))
            start += len(cols)
        raise KeyError(block)

    def block_of(self) -> list[str]:
        return [b for b, cols in self.blocks for _ in cols]

    def simplex_groups(self) -> list[slice]:
        """Column ranges that are distributions: each row sums to 1 or is all zero."""
        out = []
        for b, cols in self.blocks:
            s = self.slice(b).start
            if b in _EVENT_KIND:
                size = CATEGORY_TABLE_SIZES[_EVENT_KIND[b]]
                out.append(slice(s + 1, s + 1 + size))
                out.append(slice(s + 1 + size, s + 1 + size + N_TIME_BINS))
            elif b == "taxi":
                out.append(slice(s + 2, s + 2 + N_TIME_BINS))
                out.append(slice(s + 2 + N_TIME_BINS, s + 2 + 2 * N_TIME_BINS))
        return out

    def to_dict(self) -> dict:
        return {"blocks": [{"name": b, "columns": list(cols)} for b, cols in self.blocks],
                "total_width": self.total_width}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        return cls(tuple((b["name"], tuple(b["columns"])) for b in doc["blocks"]))


@dataclass(eq=False)
class FeatureMatrix:
    """Sale-aligned numeric matrix plus the keys models and CV need.

    ``meta`` holds ``sale_id``, ``target`` (log price or log price change),
    the three group keys, ``quarter`` and ``tc_missing``.
    """

    schema: FeatureSchema
    values: np.ndarray
    meta: pd.DataFrame

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.meta), self.schema.total_width):
            raise SchemaError(
                f"values shape {self.values.shape} does not match "
                f"({len(self.meta)}, {self.schema.total_width})"
            )
        self.meta = self.meta.reset_index(drop=True)

    @property
    def sale_ids(self) -> list[str]:
        return list(self.meta["sale_id"])

    @property
    def target(self) -> np.ndarray:
        return self.meta["target"].to_numpy(dtype=float)

    @property
    def columns(self) -> list[str]:
        return self.schema.columns

    def __len__(self) -> int:
        return len(self.meta)

    def block(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.slice(name)]

    def select_blocks(self, blocks: Sequence[str]) -> "FeatureMatrix":
        missing = [b for b in blocks if b not in self.schema.block_names]
        if missing:
            raise SchemaError(f"feature matrix lacks block(s) {missing}")
        blocks = [b for b in self.schema.block_names if b in blocks]
        schema = FeatureSchema(tuple((b, cols) for b, cols in self.schema.blocks if b in blocks))
        parts = [self.block(b) for b in blocks]
        values = np.hstack(parts) if parts else np.empty((len(self), 0))
        return FeatureMatrix(schema, values, self.meta.copy())

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(self.schema, self.values[rows], self.meta.iloc[rows].reset_index(drop=True))

    def to_frame(self) -> pd.DataFrame:
        frame = self.meta[META_COLUMNS].copy()
        return pd.concat([frame, pd.DataFrame(self.values, columns=self.columns)], axis=1)

    def save(self, path) -> None:
        """CSV with meta columns then feature columns, plus ``<path>.json`` describing blocks."""
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        sidecar = {"meta_columns": META_COLUMNS, **self.schema.to_dict()}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        path = Path(path)
        side = Path(str(path) + ".json")
        if not path.exists() or not side.exists():
            raise FileNotFoundError(f"feature matrix {path} or its sidecar is missing")
        schema = FeatureSchema.from_dict(json.loads(side.read_text(encoding="utf-8")))
        frame = pd.read_csv(path, float_precision="round_trip", dtype={"sale_id": str, "tract_id": str, "zipcode_id": str,
                                         "district_id": str}, keep_default_na=False)
        if list(frame.columns) != META_COLUMNS + schema.columns:
            raise SchemaError(f"{path}: header does not match sidecar schema")
        meta = frame[META_COLUMNS].copy()
        meta["tc_missing"] = meta["tc_missing"].astype(bool)
        return cls(schema, frame[schema.columns].to_numpy(dtype=float), meta)


# --------------------------------------------------------------------------
# assembly


@dataclass
class FeatureConfig:
    radius: float = DEFAULT_RADIUS
    window_days: int = 365
    window_mode: str = "before"
    volume_transform: str = "log1p"
    quarter_mode: str = "calendar"
    n_quarters: int = 24
    jobs: int = 1

    def __post_init__(self):
        if self.window_mode not in ("before", "centered"):
            raise ValueError("window_mode must be 'before' or 'centered'")
        if self.quarter_mode not in ("calendar", "seasonal"):
            raise ValueError("quarter_mode must be 'calendar' or 'seasonal'")

    def to_dict(self) -> dict:
        return asdict(self)


def sale_timestamp(sale: SaleRecord) -> int:
    d = sale.sale_date
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


def sale_scope(sale: SaleRecord, config: FeatureConfig) -> QueryScope:
    length = config.window_days * 86_400
    end = sale_timestamp(sale)
    if config.window_mode == "centered":
        end += length // 2
    return QueryScope(sale.x, sale.y, end, config.radius, length)


def _event_block(index: SpatioTemporalIndex, scope: QueryScope, size: int, transform: str) -> np.ndarray:
    pos = index.query(scope)
    cats = np.bincount(index.category[pos], minlength=size).astype(float)
    bins = np.bincount(index.time_bin[pos], minlength=N_TIME_BINS).astype(float)
    n = len(pos)
    vol = np.log1p(n) if transform == "log1p" else float(n)
    if n:
        cats /= n
        bins /= n
    return np.concatenate([[vol], cats, bins])


def _taxi_block(pick: SpatioTemporalIndex | None, drop: SpatioTemporalIndex | None,
                scope: QueryScope, transform: str) -> np.ndarray:
    out = []
    for index in (pick, drop):
        if index is None:
            out.append(np.zeros(1 + N_TIME_BINS))
        else:
            v = _event_block(index, scope, 1, transform)
            out.append(np.concatenate([v[:1], v[2:]]))
    return np.concatenate([out[0][:1], out[1][:1], out[0][1:], out[1][1:]])


def _digital_rows(sales, indexes, blocks, config) -> np.ndarray:
    rows = []
    for s in sales:
        scope = sale_scope(s, config)
        parts = []
        for b in blocks:
            if b == "taxi":
                parts.append(_taxi_block(indexes.get("taxi_pickup"), indexes.get("taxi_dropoff"),
                                         scope, config.volume_transform))
            else:
                kind = _EVENT_KIND[b]
                size = CATEGORY_TABLE_SIZES[kind]
                index = indexes.get(kind)
                if index is None:
                    raise SchemaError(f"block {b} requested but no {kind} index supplied")
                parts.append(_event_block(index, scope, size, config.volume_transform))
        rows.append(np.concatenate(parts) if parts else np.empty(0))
    return np.array(rows).reshape(len(sales), -1)


def quarter_dummies(quarters, n_quarters: int = 24, mode: str = "calendar") -> np.ndarray:
    quarters = np.asarray(quarters, dtype=np.int64)
    if mode == "seasonal":
        season = quarters % 4
        return (season[:, None] == np.arange(1, 4)[None, :]).astype(float)
    if quarters.size and (quarters.min() < 0 or quarters.max() >= n_quarters):
        raise ValueError("quarter index outside the study window")
    return (quarters[:, None] == np.arange(1, n_quarters)[None, :]).astype(float)


def sales_meta(sales: Sequence[SaleRecord], tc_missing=None) -> pd.DataFrame:
    return pd.DataFrame({
        "sale_id": [s.sale_id for s in sales],
        "target": [s.log_price for s in sales],
        "tract_id": [s.tract_id for s in sales],
        "zipcode_id": [s.zipcode_id for s in sales],
        "district_id": [s.district_id for s in sales],
        "quarter": [s.quarter for s in sales],
        "tc_missing": np.zeros(len(sales), dtype=bool) if tc_missing is None else np.asarray(tc_missing, dtype=bool),
    })


def assemble_feature_matrix(sales: Sequence[SaleRecord], indexes: dict | None = None,
                            census: Sequence[TractCensus] | None = None,
                            blocks: Sequence[str] = ALL_BLOCKS,
                            config: FeatureConfig | None = None) -> FeatureMatrix:
    """Build the feature matrix for ``sales`` in input order.

    ``indexes`` maps dataset kind (``complaint311``, ``crime``,
    ``taxi_pickup``, ``taxi_dropoff``) to a built index.  Sales without a
    census match get zero TC values and ``tc_missing=True``.
    """
    config = config or FeatureConfig()
    indexes = indexes or {}
    unknown = [b for b in blocks if b not in ALL_BLOCKS]
    if unknown:
        raise ValueError(f"unknown block(s) {unknown}")
    blocks = [b for b in ALL_BLOCKS if b in blocks]
    schema = FeatureSchema.build(blocks, config.n_quarters, config.quarter_mode)
    sales = list(sales)
    n = len(sales)

    digital = [b for b in blocks if b in DIGITAL_BLOCKS]
    if digital and n:
        jobs = max(1, int(config.jobs))
        chunks = np.array_split(np.arange(n), min(n, jobs * 4)) if jobs > 1 else [np.arange(n)]
        parts = Parallel(n_jobs=jobs, backend="threading")(
            delayed(_digital_rows)([sales[i] for i in chunk], indexes, digital, config) for chunk in chunks
        )
        dc = np.vstack(parts)
    else:
        dc = np.empty((n, 0))

    tc_missing = np.zeros(n, dtype=bool)
    pieces = []
    col = 0
    for b in blocks:
        if b == "hc":
            pieces.append(np.array([s.characteristics for s in sales], dtype=float).reshape(n, N_CHARACTERISTICS))
        elif b == "d":
            pieces.append(quarter_dummies([s.quarter for s in sales], config.n_quarters, config.quarter_mode))
        elif b == "tc":
            if census is None:
                raise SchemaError("block tc requested but no census table supplied")
            tc, tc_missing = join_tract_census(sales, census)
            pieces.append(tc)
        else:
            width = len(block_columns(b))
            pieces.append(dc[:, col:col + width])
            col += width
    values = np.hstack(pieces) if pieces else np.empty((n, 0))

    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise FloatingPointError(f"non-finite feature for sale {sales[i].sale_id}, column {schema.columns[j]}")
    return FeatureMatrix(schema, values, sales_meta(sales, tc_missing))
