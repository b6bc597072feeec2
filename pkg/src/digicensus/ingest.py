"""Parsing, cleaning and joining of raw sales, property, event and census tables.

Everything here turns loosely-typed open-data CSV files into validated
domain records.  Row-level problems are collected, never silently dropped.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

N_CHARACTERISTICS = 30
CHARACTERISTIC_COLUMNS = [f"c_{i:02d}" for i in range(N_CHARACTERISTICS)]

ACS_COLUMNS = [
    "population_density",
    "unemployment_rate",
    "median_family_income",
    "family_poverty_rate",
    "bachelor_ratio",
    "graduate_ratio",
    "white_ratio",
    "black_ratio",
    "asian_ratio",
]
LEHD_COLUMNS = ["home_workers", "work_workers"]
CENSUS_COLUMNS = ACS_COLUMNS + LEHD_COLUMNS
RATIO_COLUMNS = frozenset(
    ["unemployment_rate", "family_poverty_rate", "bachelor_ratio", "graduate_ratio",
     "white_ratio", "black_ratio", "asian_ratio"]
)

EVENT_KINDS = ("complaint311", "crime", "taxi_pickup", "taxi_dropoff")
CATEGORY_TABLE_SIZES = {"complaint311": 120, "crime": 48, "taxi_pickup": 1, "taxi_dropoff": 1}
TAXI_CATEGORY = "trip"

SALES_OUTPUT_COLUMNS = (
    ["sale_id", "price_per_unit", "log_price", "sale_date", "quarter", "x", "y",
     "tract_id", "zipcode_id", "district_id"]
    + CHARACTERISTIC_COLUMNS
    + ["bbl", "unit_count"]
)

EARTH_RADIUS_M = 6_371_008.8
SECONDS_PER_DAY = 86_400


class SchemaError(ValueError):
    """A declared column is missing or a table has the wrong shape."""


@dataclass(frozen=True)
class Projection:
    """Equirectangular projection to planar meters around a fixed center."""

    lon0: float = -73.9857
    lat0: float = 40.7484

    def forward(self, lon, lat):
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        k = math.cos(math.radians(self.lat0))
        x = EARTH_RADIUS_M * np.radians(lon - self.lon0) * k
        y = EARTH_RADIUS_M * np.radians(lat - self.lat0)
        return x, y

    def inverse(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        k = math.cos(math.radians(self.lat0))
        lon = self.lon0 + np.degrees(x / (EARTH_RADIUS_M * k))
        lat = self.lat0 + np.degrees(y / EARTH_RADIUS_M)
        return lon, lat


@dataclass(frozen=True)
class StudyWindow:
    start: date = date(2010, 1, 1)
    n_quarters: int = 24

    def __post_init__(self):
        if self.start.day != 1 or (self.start.month - 1) % 3:
            raise ValueError("study start must be the first day of a calendar quarter")
        if self.n_quarters < 1:
            raise ValueError("n_quarters must be positive")

    @property
    def end(self) -> date:
        months = (self.start.month - 1) + 3 * self.n_quarters
        return date(self.start.year + months // 12, months % 12 + 1, 1)

    def quarter_of(self, d: date) -> int:
        return (d.year - self.start.year) * 4 + (d.month - 1) // 3 - (self.start.month - 1) // 3

    def contains(self, d: date) -> bool:
        return self.start <= d < self.end


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class RowError:
    row: int
    column: str
    message: str


@dataclass(frozen=True)
class RawSaleRecord:
    bbl: str
    sale_price: float
    sale_date: date
    unit_count: int
    residential_flag: bool | None = None


@dataclass(frozen=True, eq=False)
class SaleRecord:
    sale_id: str
    bbl: str
    unit_count: int
    price_per_unit: float
    log_price: float
    sale_date: date
    quarter: int
    x: float
    y: float
    characteristics: np.ndarray
    tract_id: str
    zipcode_id: str
    district_id: str

    def __post_init__(self):
        if not self.price_per_unit > 0:
            raise ValueError(f"{self.sale_id}: price_per_unit must be positive")
        for key in ("tract_id", "zipcode_id", "district_id"):
            if not getattr(self, key):
                raise ValueError(f"{self.sale_id}: missing {key}")


@dataclass(frozen=True)
class EventRecord:
    timestamp: int
    x: float
    y: float
    category_id: int
    dataset_kind: str


@dataclass(frozen=True, eq=False)
class TractCensus:
    tract_id: str
    year: int
    acs: np.ndarray
    lehd: np.ndarray

    def __post_init__(self):
        if len(self.acs) != len(ACS_COLUMNS):
            raise SchemaError(f"tract {self.tract_id}: expected {len(ACS_COLUMNS)} ACS values")
        if len(self.lehd) != len(LEHD_COLUMNS):
            raise SchemaError(f"tract {self.tract_id}: expected {len(LEHD_COLUMNS)} LEHD values")
        for name, value in zip(ACS_COLUMNS, self.acs):
            if name in RATIO_COLUMNS and not 0.0 <= value <= 1.0:
                raise ValueError(f"tract {self.tract_id} {self.year}: {name}={value} outside [0, 1]")


@dataclass
class CleaningReport:
    input_count: int = 0
    unmatched_removed: int = 0
    nonresidential_removed: int = 0
    zero_price_removed: int = 0
    tail_trimmed: int = 0
    output_count: int = 0

    def reconciles(self) -> bool:
        removed = (self.unmatched_removed + self.nonresidential_removed
                   + self.zero_price_removed + self.tail_trimmed)
        return self.input_count == self.output_count + removed

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class DropReport:
    input_rows: int = 0
    kept: int = 0
    unknown_category: int = 0
    bad_coordinates: int = 0
    bad_timestamp: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class EventTable(Sequence):
    """Columnar store of events of one dataset kind.

    Iterating yields :class:`EventRecord` objects; the numpy columns are what
    the spatial index and the feature code actually consume.
    """

    def __init__(self, timestamp, x, y, category, kind: str):
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown dataset kind {kind!r}")
        self.timestamp = np.ascontiguousarray(timestamp, dtype=np.int64)
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.category = np.ascontiguousarray(category, dtype=np.int32)
        self.kind = kind
        n = len(self.timestamp)
        if not (len(self.x) == len(self.y) == len(self.category) == n):
            raise ValueError("event columns must have equal length")
        size = CATEGORY_TABLE_SIZES[kind]
        if n and (self.category.min() < 0 or self.category.max() >= size):
            raise ValueError(f"category ids for {kind} must lie in [0, {size})")

    @classmethod
    def from_records(cls, records: Sequence[EventRecord], kind: str | None = None) -> "EventTable":
        records = list(records)
        if kind is None:
            if not records:
                raise ValueError("kind is required for an empty record list")
            kind = records[0].dataset_kind
        if any(r.dataset_kind != kind for r in records):
            raise ValueError("all records must share one dataset kind")
        return cls(
            [r.timestamp for r in records],
            [r.x for r in records],
            [r.y for r in records],
            [r.category_id for r in records],
            kind,
        )

    @classmethod
    def empty(cls, kind: str) -> "EventTable":
        return cls(np.empty(0), np.empty(0), np.empty(0), np.empty(0), kind)

    def __len__(self) -> int:
        return len(self.timestamp)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return EventRecord(int(self.timestamp[i]), float(self.x[i]), float(self.y[i]),
                           int(self.category[i]), self.kind)

    def __iter__(self) -> Iterator[EventRecord]:
        for i in range(len(self)):
            yield self[i]

    def take(self, idx) -> "EventTable":
        return EventTable(self.timestamp[idx], self.x[idx], self.y[idx], self.category[idx], self.kind)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "timestamp": self.timestamp,
            "x": self.x,
            "y": self.y,
            "category_id": self.category,
            "kind": self.kind,
        })

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "EventTable":
        kinds = frame["kind"].unique() if len(frame) else []
        if len(kinds) != 1:
            raise SchemaError("normalized event file must hold exactly one dataset kind")
        return cls(frame["timestamp"].to_numpy(), frame["x"].to_numpy(), frame["y"].to_numpy(),
                   frame["category_id"].to_numpy(), str(kinds[0]))


# --------------------------------------------------------------------------
# config


DEFAULT_SALES_SCHEMA = {
    "bbl": "BBL",
    "sale_price": "SALE PRICE",
    "sale_date": "SALE DATE",
    "unit_count": "TOTAL UNITS",
}

DEFAULT_PROPERTY_SCHEMA = {
    "bbl": "BBL",
    "residential": "residential",
    "lon": "lon",
    "lat": "lat",
    "tract_id": "tract_id",
    "zipcode_id": "zipcode_id",
    "district_id": "district_id",
    "characteristics": CHARACTERISTIC_COLUMNS,
}

DEFAULT_EVENT_SCHEMAS = {
    "311": {"timestamp": "created_date", "lon": "lon", "lat": "lat", "category": "complaint_type"},
    "crime": {"timestamp": "complaint_datetime", "lon": "lon", "lat": "lat", "category": "offense"},
    "taxi": {
        "pickup_timestamp": "pickup_datetime", "pickup_lon": "pickup_lon", "pickup_lat": "pickup_lat",
        "dropoff_timestamp": "dropoff_datetime", "dropoff_lon": "dropoff_lon", "dropoff_lat": "dropoff_lat",
    },
}

DEFAULT_CENSUS_SCHEMA = {"tract_id": "tract_id", "year": "year", **{c: c for c in CENSUS_COLUMNS}}


def default_category_table(kind: str) -> list[str]:
    size = CATEGORY_TABLE_SIZES[kind]
    if kind.startswith("taxi"):
        return [TAXI_CATEGORY]
    prefix = "c311" if kind == "complaint311" else "crime"
    return [f"{prefix}_{i:03d}" for i in range(size)]


@dataclass
class IngestConfig:
    """Resolved column mappings and study parameters, read from a JSON document."""

    sales: dict = field(default_factory=lambda: dict(DEFAULT_SALES_SCHEMA))
    properties: dict = field(default_factory=lambda: dict(DEFAULT_PROPERTY_SCHEMA))
    events: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_EVENT_SCHEMAS.items()})
    census: dict = field(default_factory=lambda: dict(DEFAULT_CENSUS_SCHEMA))
    category_tables: dict = field(default_factory=dict)
    projection: Projection = field(default_factory=Projection)
    study: StudyWindow = field(default_factory=StudyWindow)
    date_format: str | None = None
    timestamp_format: str | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "IngestConfig":
        cfg = cls()
        for key in ("sales", "properties", "census"):
            if key in doc:
                getattr(cfg, key).update(doc[key])
        for kind, mapping in doc.get("events", {}).items():
            cfg.events.setdefault(kind, {}).update(mapping)
        cfg.category_tables = dict(doc.get("category_tables", {}))
        if "projection" in doc:
            cfg.projection = Projection(**doc["projection"])
        if "study" in doc:
            s = doc["study"]
            cfg.study = StudyWindow(date.fromisoformat(s.get("start", "2010-01-01")),
                                    int(s.get("n_quarters", 24)))
        cfg.date_format = doc.get("date_format")
        cfg.timestamp_format = doc.get("timestamp_format")
        return cfg

    @classmethod
    def load(cls, path) -> "IngestConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "sales": self.sales,
            "properties": self.properties,
            "events": self.events,
            "census": self.census,
            "category_tables": self.category_tables,
            "projection": asdict(self.projection),
            "study": {"start": self.study.start.isoformat(), "n_quarters": self.study.n_quarters},
            "date_format": self.date_format,
            "timestamp_format": self.timestamp_format,
        }

    def category_table(self, kind: str) -> list[str]:
        table = self.category_tables.get(kind) or default_category_table(kind)
        if len(table) != CATEGORY_TABLE_SIZES[kind]:
            raise SchemaError(
                f"category table for {kind} has {len(table)} entries, expected {CATEGORY_TABLE_SIZES[kind]}"
            )
        return list(table)


# --------------------------------------------------------------------------
# helpers


def _read_csv(source) -> pd.DataFrame:
    if isinstance(source, pd.DataFrame):
        return source.astype(str).reset_index(drop=True)
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")


def _require_columns(frame: pd.DataFrame, columns, what: str):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"{what}: missing column(s) {missing}")


def _float_or_nan(text: str) -> float:
    try:
        return float(text) if "_" not in text else math.nan
    except ValueError:
        return math.nan


def _to_number(values: pd.Series) -> pd.Series:
    # float() is correctly rounded; pd.to_numeric is not
    cleaned = values.str.strip().str.replace(r"[$,]", "", regex=True)
    return pd.Series([_float_or_nan(v) for v in cleaned], index=values.index, dtype=float)


def _to_datetime(values: pd.Series, fmt: str | None) -> pd.Series:
    values = values.str.strip()
    if fmt:
        return pd.to_datetime(values, format=fmt, errors="coerce")
    return pd.to_datetime(values, format="mixed", errors="coerce")


def _to_bool(values: pd.Series) -> pd.Series:
    lowered = values.str.strip().str.lower()
    out = pd.Series(pd.NA, index=values.index, dtype="boolean")
    out[lowered.isin(["1", "true", "t", "yes", "y"])] = True
    out[lowered.isin(["0", "false", "f", "no", "n"])] = False
    return out


def _coordinates(frame: pd.DataFrame, mapping: Mapping, projection: Projection, prefix: str = ""):
    """Return planar (x, y) arrays from either x/y or lon/lat columns."""
    if f"{prefix}x" in mapping:
        x = _to_number(frame[mapping[f"{prefix}x"]]).to_numpy(dtype=float)
        y = _to_number(frame[mapping[f"{prefix}y"]]).to_numpy(dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        return x, y, ok
    lon = _to_number(frame[mapping[f"{prefix}lon"]]).to_numpy(dtype=float)
    lat = _to_number(frame[mapping[f"{prefix}lat"]]).to_numpy(dtype=float)
    ok = (np.isfinite(lon) & np.isfinite(lat) & (np.abs(lat) <= 90) & (np.abs(lon) <= 180)
          & ~((lon == 0) & (lat == 0)))
    x, y = projection.forward(np.where(ok, lon, projection.lon0), np.where(ok, lat, projection.lat0))
    return x, y, ok


def _coordinate_columns(mapping: Mapping, prefix: str = "") -> list[str]:
    if f"{prefix}x" in mapping:
        return [mapping[f"{prefix}x"], mapping[f"{prefix}y"]]
    return [mapping[f"{prefix}lon"], mapping[f"{prefix}lat"]]


def _epoch_seconds(ts: pd.Series) -> np.ndarray:
    return ts.to_numpy(dtype="datetime64[s]").astype(np.int64)


# --------------------------------------------------------------------------
# sales


def parse_sales(source, schema: Mapping | None = None, study: StudyWindow | None = None,
                date_format: str | None = None) -> tuple[list[RawSaleRecord], list[RowError]]:
    """Parse a rolling-sales style CSV into raw sale records.

    ``source`` is a path or an already-loaded frame of strings.  Returns the
    records and a list of row errors; rows are numbered from 0 over data rows.
    """
    schema = dict(DEFAULT_SALES_SCHEMA if schema is None else schema)
    frame = _read_csv(source)
    required = [schema[k] for k in ("bbl", "sale_price", "sale_date", "unit_count")]
    _require_columns(frame, required, "sales")

    bbl = frame[schema["bbl"]].str.strip()
    price = _to_number(frame[schema["sale_price"]])
    when = _to_datetime(frame[schema["sale_date"]], date_format)
    units = _to_number(frame[schema["unit_count"]])
    flag_col = schema.get("residential_flag")
    flags = _to_bool(frame[flag_col]) if flag_col and flag_col in frame.columns else None

    records: list[RawSaleRecord] = []
    errors: list[RowError] = []
    for i in range(len(frame)):
        if not bbl.iat[i]:
            errors.append(RowError(i, schema["bbl"], "empty property identifier"))
            continue
        p = price.iat[i]
        if pd.isna(p) or not math.isfinite(p) or p < 0:
            errors.append(RowError(i, schema["sale_price"], f"unparseable price {frame[schema['sale_price']].iat[i]!r}"))
            continue
        t = when.iat[i]
        if pd.isna(t):
            errors.append(RowError(i, schema["sale_date"], f"unparseable date {frame[schema['sale_date']].iat[i]!r}"))
            continue
        u = units.iat[i]
        if pd.isna(u) or u < 1 or u != int(u):
            errors.append(RowError(i, schema["unit_count"], f"unit count must be a positive integer, got {frame[schema['unit_count']].iat[i]!r}"))
            continue
        d = t.date()
        if study is not None and not study.contains(d):
            errors.append(RowError(i, schema["sale_date"], f"{d} outside study window"))
            continue
        flag = None
        if flags is not None and not pd.isna(flags.iat[i]):
            flag = bool(flags.iat[i])
        records.append(RawSaleRecord(bbl.iat[i], float(p), d, int(u), flag))
    return records, errors


def parse_properties(source, schema: Mapping | None = None,
                     projection: Projection | None = None) -> pd.DataFrame:
    """Load the property attribute table, indexed by BBL.

    Output columns: residential, x, y, tract_id, zipcode_id, district_id and
    the 30 characteristic columns ``c_00`` ... ``c_29``.  Rows with an
    unusable location or characteristic are dropped; sales on them then fall
    out as unmatched.
    """
    schema = dict(DEFAULT_PROPERTY_SCHEMA if schema is None else schema)
    projection = projection or Projection()
    frame = _read_csv(source)
    chars = list(schema["characteristics"])
    if len(chars) != N_CHARACTERISTICS:
        raise SchemaError(f"property schema lists {len(chars)} characteristics, expected {N_CHARACTERISTICS}")
    keys = [schema[k] for k in ("bbl", "tract_id", "zipcode_id", "district_id")]
    _require_columns(frame, keys + chars + _coordinate_columns(schema), "properties")

    x, y, ok = _coordinates(frame, schema, projection)
    out = pd.DataFrame({
        "bbl": frame[schema["bbl"]].str.strip(),
        "x": x,
        "y": y,
        "tract_id": frame[schema["tract_id"]].str.strip(),
        "zipcode_id": frame[schema["zipcode_id"]].str.strip(),
        "district_id": frame[schema["district_id"]].str.strip(),
    })
    res_col = schema.get("residential")
    if res_col and res_col in frame.columns:
        out["residential"] = _to_bool(frame[res_col]).fillna(False).astype(bool)
    else:
        out["residential"] = True
    for j, c in enumerate(chars):
        out[CHARACTERISTIC_COLUMNS[j]] = _to_number(frame[c]).to_numpy(dtype=float)
    ok &= np.isfinite(out[CHARACTERISTIC_COLUMNS].to_numpy()).all(axis=1)
    ok &= (out[["bbl", "tract_id", "zipcode_id", "district_id"]] != "").all(axis=1).to_numpy()
    out = out[ok].drop_duplicates("bbl", keep="first").set_index("bbl")
    return out


def _sale_id(raw: RawSaleRecord, ordinal: int) -> str:
    return f"{raw.bbl}-{raw.sale_date:%Y%m%d}-{ordinal}"


def clean_sales(raw: Sequence[RawSaleRecord], properties: pd.DataFrame,
                study: StudyWindow | None = None) -> tuple[list[SaleRecord], CleaningReport]:
    """Apply the cleaning rules and join property attributes.

    Order: unmatched BBL, non-residential, zero price, then the 1%/99% tail
    trim on price per unit over the survivors (nearest-rank, stable ties).
    """
    study = study or StudyWindow()
    report = CleaningReport(input_count=len(raw))
    kept: list[tuple[int, RawSaleRecord]] = []
    for i, r in enumerate(raw):
        if r.bbl not in properties.index:
            report.unmatched_removed += 1
            continue
        residential = r.residential_flag
        if residential is None:
            residential = bool(properties.at[r.bbl, "residential"])
        if not residential:
            report.nonresidential_removed += 1
            continue
        if r.sale_price == 0:
            report.zero_price_removed += 1
            continue
        kept.append((i, r))

    ppu = np.array([r.sale_price / r.unit_count for _, r in kept], dtype=float)
    k = len(kept) // 100
    order = np.argsort(ppu, kind="stable")
    survivors = np.sort(order[k:len(order) - k]) if k else np.arange(len(kept))
    report.tail_trimmed = len(kept) - len(survivors)

    sales: list[SaleRecord] = []
    for j in survivors:
        i, r = kept[j]
        prop = properties.loc[r.bbl]
        price = float(ppu[j])
        sales.append(SaleRecord(
            sale_id=_sale_id(r, i),
            bbl=r.bbl,
            unit_count=r.unit_count,
            price_per_unit=price,
            log_price=math.log(price),
            sale_date=r.sale_date,
            quarter=study.quarter_of(r.sale_date),
            x=float(prop["x"]),
            y=float(prop["y"]),
            characteristics=prop[CHARACTERISTIC_COLUMNS].to_numpy(dtype=float),
            tract_id=str(prop["tract_id"]),
            zipcode_id=str(prop["zipcode_id"]),
            district_id=str(prop["district_id"]),
        ))
    report.output_count = len(sales)
    return sales, report


def sales_to_frame(sales: Sequence[SaleRecord]) -> pd.DataFrame:
    chars = np.array([s.characteristics for s in sales], dtype=float).reshape(len(sales), N_CHARACTERISTICS)
    frame = pd.DataFrame({
        "sale_id": [s.sale_id for s in sales],
        "price_per_unit": [s.price_per_unit for s in sales],
        "log_price": [s.log_price for s in sales],
        "sale_date": [s.sale_date.isoformat() for s in sales],
        "quarter": [s.quarter for s in sales],
        "x": [s.x for s in sales],
        "y": [s.y for s in sales],
        "tract_id": [s.tract_id for s in sales],
        "zipcode_id": [s.zipcode_id for s in sales],
        "district_id": [s.district_id for s in sales],
    })
    frame = pd.concat([frame, pd.DataFrame(chars, columns=CHARACTERISTIC_COLUMNS)], axis=1)
    frame["bbl"] = [s.bbl for s in sales]
    frame["unit_count"] = [s.unit_count for s in sales]
    return frame[SALES_OUTPUT_COLUMNS]


def sales_from_frame(frame: pd.DataFrame) -> list[SaleRecord]:
    _require_columns(frame, SALES_OUTPUT_COLUMNS, "cleaned sales")
    chars = frame[CHARACTERISTIC_COLUMNS].to_numpy(dtype=float)
    out = []
    for i, row in enumerate(frame.itertuples(index=False)):
        out.append(SaleRecord(
            sale_id=str(row.sale_id),
            bbl=str(row.bbl),
            unit_count=int(row.unit_count),
            price_per_unit=float(row.price_per_unit),
            log_price=float(row.log_price),
            sale_date=date.fromisoformat(str(row.sale_date)),
            quarter=int(row.quarter),
            x=float(row.x),
            y=float(row.y),
            characteristics=chars[i],
            tract_id=str(row.tract_id),
            zipcode_id=str(row.zipcode_id),
            district_id=str(row.district_id),
        ))
    return out


def write_sales(sales: Sequence[SaleRecord], path) -> None:
    sales_to_frame(sales).to_csv(path, index=False, float_format="%.17g")


def read_sales(path) -> list[SaleRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    frame = pd.read_csv(path, float_precision="round_trip", dtype={"sale_id": str, "tract_id": str, "zipcode_id": str,
                                     "district_id": str, "bbl": str}, keep_default_na=False)
    return sales_from_frame(frame)


# --------------------------------------------------------------------------
# events


def _category_ids(values: pd.Series, table: Sequence[str]) -> np.ndarray:
    lookup = {name: i for i, name in enumerate(table)}
    stripped = values.str.strip()
    ids = stripped.map(lookup)
    numeric = pd.to_numeric(stripped, errors="coerce")
    as_index = numeric.where((numeric == numeric.round()) & (numeric >= 0) & (numeric < len(table)))
    ids = ids.fillna(as_index)
    return ids.to_numpy(dtype=float)


def _event_kind(kind: str) -> str:
    aliases = {"311": "complaint311", "complaint311": "complaint311", "crime": "crime", "taxi": "taxi"}
    if kind not in aliases:
        raise ValueError(f"unknown event dataset {kind!r}; expected 311, crime or taxi")
    return aliases[kind]


def parse_events(source, kind: str, category_table: Sequence[str] | None = None,
                 schema: Mapping | None = None, projection: Projection | None = None,
                 timestamp_format: str | None = None):
    """Parse one point-event file.

    ``kind`` is ``"311"``, ``"crime"`` or ``"taxi"``.  Returns a dict mapping
    dataset kind to :class:`EventTable` (two entries for taxi: each trip
    yields a pickup and a dropoff event) together with a :class:`DropReport`.
    Rows with unknown categories or unusable coordinates/timestamps are
    dropped entirely and counted.
    """
    kind = _event_kind(kind)
    projection = projection or Projection()
    frame = _read_csv(source)
    report = DropReport(input_rows=len(frame))

    if kind == "taxi":
        schema = dict(DEFAULT_EVENT_SCHEMAS["taxi"] if schema is None else schema)
        cols = [schema["pickup_timestamp"], schema["dropoff_timestamp"]]
        cols += _coordinate_columns(schema, "pickup_") + _coordinate_columns(schema, "dropoff_")
        _require_columns(frame, cols, "taxi events")
        t_in = _to_datetime(frame[schema["pickup_timestamp"]], timestamp_format)
        t_out = _to_datetime(frame[schema["dropoff_timestamp"]], timestamp_format)
        xp, yp, okp = _coordinates(frame, schema, projection, "pickup_")
        xd, yd, okd = _coordinates(frame, schema, projection, "dropoff_")
        ts_ok = (~t_in.isna() & ~t_out.isna()).to_numpy()
        coord_ok = okp & okd
        report.bad_timestamp = int((~ts_ok).sum())
        report.bad_coordinates = int((ts_ok & ~coord_ok).sum())
        keep = ts_ok & coord_ok
        report.kept = int(keep.sum())
        zeros = np.zeros(report.kept, dtype=np.int32)
        return {
            "taxi_pickup": EventTable(_epoch_seconds(t_in[keep]), xp[keep], yp[keep], zeros, "taxi_pickup"),
            "taxi_dropoff": EventTable(_epoch_seconds(t_out[keep]), xd[keep], yd[keep], zeros, "taxi_dropoff"),
        }, report

    key = "311" if kind == "complaint311" else "crime"
    schema = dict(DEFAULT_EVENT_SCHEMAS[key] if schema is None else schema)
    table = list(category_table) if category_table is not None else default_category_table(kind)
    if len(table) != CATEGORY_TABLE_SIZES[kind]:
        raise SchemaError(f"category table for {kind} must have {CATEGORY_TABLE_SIZES[kind]} entries")
    _require_columns(frame, [schema["timestamp"], schema["category"]] + _coordinate_columns(schema), f"{key} events")
    ts = _to_datetime(frame[schema["timestamp"]], timestamp_format)
    x, y, coord_ok = _coordinates(frame, schema, projection)
    cat = _category_ids(frame[schema["category"]], table)
    ts_ok = (~ts.isna()).to_numpy()
    cat_ok = np.isfinite(cat)
    report.bad_timestamp = int((~ts_ok).sum())
    report.bad_coordinates = int((ts_ok & ~coord_ok).sum())
    report.unknown_category = int((ts_ok & coord_ok & ~cat_ok).sum())
    keep = ts_ok & coord_ok & cat_ok
    report.kept = int(keep.sum())
    events = EventTable(_epoch_seconds(ts[keep]), x[keep], y[keep], cat[keep].astype(np.int32), kind)
    return {kind: events}, report


def write_events(events: EventTable, path) -> None:
    events.to_frame().to_csv(path, index=False, float_format="%.17g")


def read_events(path) -> EventTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    _require_columns(frame, ["timestamp", "x", "y", "category_id", "kind"], "normalized events")
    return EventTable.from_frame(frame)


# --------------------------------------------------------------------------
# census


def parse_census(source, schema: Mapping | None = None) -> list[TractCensus]:
    schema = dict(DEFAULT_CENSUS_SCHEMA if schema is None else schema)
    frame = _read_csv(source)
    _require_columns(frame, [schema[k] for k in ["tract_id", "year"] + CENSUS_COLUMNS], "census")
    values = np.column_stack([_to_number(frame[schema[c]]).to_numpy(dtype=float) for c in CENSUS_COLUMNS])
    years = _to_number(frame[schema["year"]])
    out = []
    for i in range(len(frame)):
        if pd.isna(years.iat[i]) or not np.isfinite(values[i]).all():
            raise SchemaError(f"census row {i}: non-numeric value")
        out.append(TractCensus(frame[schema["tract_id"]].iat[i].strip(), int(years.iat[i]),
                               values[i, :9].copy(), values[i, 9:].copy()))
    return out


def join_tract_census(sales: Sequence[SaleRecord], census: Sequence[TractCensus]):
    """Attach the 11 traditional-census values to every sale.

    Uses the sale's tract and the latest census year not after the sale
    year.  Returns ``(block, missing)``: an ``(n, 11)`` array and a boolean
    mask of sales with no usable census row (their block rows are zero).
    """
    by_tract: dict[str, list[TractCensus]] = {}
    for row in census:
        by_tract.setdefault(row.tract_id, []).append(row)
    years = {t: np.array(sorted(r.year for r in rows)) for t, rows in by_tract.items()}
    lookup = {(r.tract_id, r.year): np.concatenate([r.acs, r.lehd]) for r in census}

    block = np.zeros((len(sales), len(CENSUS_COLUMNS)))
    missing = np.zeros(len(sales), dtype=bool)
    for i, s in enumerate(sales):
        ys = years.get(s.tract_id)
        if ys is None:
            missing[i] = True
            continue
        pos = np.searchsorted(ys, s.sale_date.year, side="right") - 1
        if pos < 0:
            missing[i] = True
            continue
        block[i] = lookup[(s.tract_id, int(ys[pos]))]
    return block, missing


def census_to_frame(census: Sequence[TractCensus]) -> pd.DataFrame:
    frame = pd.DataFrame(
        [np.concatenate([r.acs, r.lehd]) for r in census], columns=CENSUS_COLUMNS
    )
    frame.insert(0, "year", [r.year for r in census])
    frame.insert(0, "tract_id", [r.tract_id for r in census])
    return frame
