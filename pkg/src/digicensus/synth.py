"""Seeded synthetic city with planted ground truth.

Layout: a grid of square tracts (24 x 20 of 500 m by default); zipcodes are ``zip_block x zip_block``
blocks of tracts and districts are ``district_block x district_block``
blocks of zipcodes, so the three keys nest.  A smooth latent field
``z`` drives both event intensities/mixes and (scaled by ``beta_dc``) the
sale prices; an independent field ``w`` drives the census table and
(scaled by ``beta_tc``) prices.  District and zipcode offsets add spatially
autocorrelated price variation that no feature observes.

Each purpose draws from its own stream, ``default_rng([seed, stream_id])``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from .ingest import (
    ACS_COLUMNS,
    CATEGORY_TABLE_SIZES,
    CENSUS_COLUMNS,
    CHARACTERISTIC_COLUMNS,
    LEHD_COLUMNS,
    N_CHARACTERISTICS,
    IngestConfig,
    Projection,
    StudyWindow,
    default_category_table,
)

STREAMS = {
    "fields": 1, "properties": 2, "sales": 3, "prices": 4, "census": 5,
    "complaint311": 6, "crime": 7, "taxi": 8, "index": 9, "hedonic": 10, "offsets": 11,
}

CHARACTERISTIC_NAMES = [
    "unit_count", "building_area_per_unit", "floor_area_ratio", "building_age", "buildings_on_lot",
    "floors", "major_alter", "extension", "garage", "full_basement", "partial_basement", "commercial",
    "class_single_detached", "class_single_attached", "class_two_family", "class_three_family",
    "class_four_family", "class_five_six_family", "class_over_six_family", "class_walkup",
    "class_elevator", "class_multi_use", "irregular_lot", "waterfront", "corner", "through_lot",
    "interior_lot", "dist_city_hall", "dist_subway", "dist_park",
]
assert len(CHARACTERISTIC_NAMES) == N_CHARACTERISTICS


@dataclass
class SynthConfig:
    seed: int = 0
    tract_cols: int = 24
    tract_rows: int = 20
    tract_size: float = 500.0
    zip_block: int = 2
    district_block: int = 2
    n_sales: int = 5000
    repeat_fraction: float = 0.25
    nonresidential_fraction: float = 0.02
    zero_price_fraction: float = 0.01
    events_311: int = 60_000
    events_crime: int = 30_000
    taxi_trips: int = 40_000
    study_start: str = "2010-01-01"
    n_quarters: int = 24
    event_lead_days: int = 366
    beta_dc: float = 0.5
    beta_tc: float = 0.15
    district_sd: float = 0.15
    zipcode_sd: float = 0.08
    sigma: float = 0.25
    field_scale: float = 2500.0
    n_bumps: int = 40
    lon0: float = -73.9857
    lat0: float = 40.7484

    def __post_init__(self):
        for name in ("tract_cols", "tract_rows", "zip_block", "district_block", "n_sales", "n_quarters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.tract_cols % (self.zip_block * self.district_block) or \
                self.tract_rows % (self.zip_block * self.district_block):
            raise ValueError("tract grid must divide evenly into zipcode and district blocks")
        for name in ("beta_dc", "beta_tc", "sigma", "district_sd", "zipcode_sd"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def n_tracts(self) -> int:
        return self.tract_cols * self.tract_rows

    @property
    def n_zipcodes(self) -> int:
        return self.n_tracts // self.zip_block ** 2

    @property
    def n_districts(self) -> int:
        return self.n_zipcodes // self.district_block ** 2

    @property
    def study(self) -> StudyWindow:
        return StudyWindow(date.fromisoformat(self.study_start), self.n_quarters)

    @property
    def projection(self) -> Projection:
        return Projection(self.lon0, self.lat0)

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown synth config key(s) {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthTruth:
    config: dict
    log_index: list
    hedonic_coefficients: list
    intercept: float
    beta_dc: float
    beta_tc: float
    sigma: float
    district_offsets: dict
    zipcode_offsets: dict
    tract_z: dict
    tract_w: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class SynthCity:
    config: SynthConfig
    truth: SynthTruth
    sales_raw: pd.DataFrame
    properties: pd.DataFrame
    events_raw: dict
    census: pd.DataFrame
    sale_truth: pd.DataFrame

    def ingest_config(self) -> IngestConfig:
        cfg = IngestConfig()
        cfg.projection = self.config.projection
        cfg.study = self.config.study
        cfg.date_format = "%Y-%m-%d"
        cfg.timestamp_format = "%Y-%m-%d %H:%M:%S"
        return cfg

    def write(self, out_dir) -> dict:
        """Write the raw CSV inputs, ``truth.json`` and an ingest config; return the paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "sales": out / "sales.csv",
            "pluto": out / "pluto.csv",
            "311": out / "events_311.csv",
            "crime": out / "events_crime.csv",
            "taxi": out / "events_taxi.csv",
            "census": out / "census.csv",
            "truth": out / "truth.json",
            "sale_truth": out / "sale_truth.csv",
            "config": out / "ingest_config.json",
        }
        self.sales_raw.to_csv(paths["sales"], index=False)
        self.properties.to_csv(paths["pluto"], index=False)
        for kind in ("311", "crime", "taxi"):
            self.events_raw[kind].to_csv(paths[kind], index=False)
        self.census.to_csv(paths["census"], index=False)
        self.sale_truth.to_csv(paths["sale_truth"], index=False)
        paths["truth"].write_text(self.truth.to_json(), encoding="utf-8")
        paths["config"].write_text(json.dumps(self.ingest_config().to_dict(), indent=2) + "\n",
                                   encoding="utf-8")
        return {k: str(v) for k, v in paths.items()}


def _rng(config: SynthConfig, stream: str) -> np.random.Generator:
    return np.random.default_rng([config.seed, STREAMS[stream]])


class _Field:
    """Sum of Gaussian bumps, standardized over tract centroids."""

    def __init__(self, rng, extent, scale, n_bumps, centroids):
        self.cx = rng.uniform(-0.1 * extent[0], 1.1 * extent[0], n_bumps)
        self.cy = rng.uniform(-0.1 * extent[1], 1.1 * extent[1], n_bumps)
        self.amp = rng.normal(0.0, 1.0, n_bumps)
        self.scale = scale * rng.uniform(0.6, 1.4, n_bumps)
        raw = self._raw(centroids[:, 0], centroids[:, 1])
        self.mu, self.sd = raw.mean(), raw.std()

    def _raw(self, x, y):
        x = np.asarray(x, dtype=float)[:, None]
        y = np.asarray(y, dtype=float)[:, None]
        d2 = (x - self.cx) ** 2 + (y - self.cy) ** 2
        return (self.amp * np.exp(-d2 / (2 * self.scale ** 2))).sum(axis=1)

    def __call__(self, x, y):
        return (self._raw(x, y) - self.mu) / self.sd


def _layout(config: SynthConfig):
    c, r = np.meshgrid(np.arange(config.tract_cols), np.arange(config.tract_rows), indexing="ij")
    c, r = c.ravel(), r.ravel()
    zb, db = config.zip_block, config.zip_block * config.district_block
    zip_cols = config.tract_cols // zb
    dist_cols = config.tract_cols // db
    tract = np.array([f"T{i:04d}" for i in range(len(c))])
    zipc = np.array([f"Z{(ri // zb) * zip_cols + ci // zb:03d}" for ci, ri in zip(c, r)])
    dist = np.array([f"D{(ri // db) * dist_cols + ci // db:02d}" for ci, ri in zip(c, r)])
    origin = (c * config.tract_size, r * config.tract_size)
    return tract, zipc, dist, origin


def _epoch(d: date) -> int:
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


def _fmt_ts(ts: np.ndarray) -> np.ndarray:
    text = np.datetime_as_string(ts.astype("datetime64[s]"), unit="s")
    return np.char.replace(text, "T", " ").astype(object)


def _gumbel_choice(rng, logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits - np.log(-np.log(rng.uniform(size=logits.shape))), axis=1)


def _weekly_times(rng, n, t0, t1, bin_logits) -> np.ndarray:
    """Timestamps in [t0, t1) whose hour-of-week bin follows ``bin_logits`` (n x 56)."""
    bins = _gumbel_choice(rng, bin_logits)
    first_monday = t0 + ((7 - ((t0 // 86_400 + 3) % 7)) % 7) * 86_400
    n_weeks = (t1 - first_monday) // (7 * 86_400)
    week = rng.integers(0, n_weeks, n)
    offset = (bins // 8) * 86_400 + (bins % 8) * 3 * 3_600 + rng.integers(0, 3 * 3_600, n)
    return first_monday + week * 7 * 86_400 + offset


def _points_in_tracts(rng, tract_idx, origin, size):
    x = origin[0][tract_idx] + rng.uniform(0, size, len(tract_idx))
    y = origin[1][tract_idx] + rng.uniform(0, size, len(tract_idx))
    return x, y


def generate(config: SynthConfig | None = None) -> SynthCity:
    config = config or SynthConfig()
    proj = config.projection
    study = config.study
    tract, zipc, dist, origin = _layout(config)
    nt = len(tract)
    size = config.tract_size
    extent = (config.tract_cols * size, config.tract_rows * size)
    centroids = np.column_stack([origin[0] + size / 2, origin[1] + size / 2])

    frng = _rng(config, "fields")
    z_field = _Field(frng, extent, config.field_scale, config.n_bumps, centroids)
    w_field = _Field(frng, extent, config.field_scale, config.n_bumps, centroids)
    v_field = _Field(frng, extent, config.field_scale, config.n_bumps, centroids)
    u_field = _Field(frng, extent, config.field_scale, config.n_bumps, centroids)
    z_t = z_field(*centroids.T)
    w_t = w_field(*centroids.T)
    v_t = v_field(*centroids.T)
    u_t = u_field(*centroids.T)
    # keep the census latent orthogonal to the event-driving fields so a zero
    # neighborhood signal really is zero
    basis = np.column_stack([np.ones(nt), z_t, v_t, u_t])
    w_t = w_t - basis @ np.linalg.lstsq(basis, w_t, rcond=None)[0]
    w_t /= w_t.std()

    orng = _rng(config, "offsets")
    districts = np.unique(dist)
    zipcodes = np.unique(zipc)
    d_off = dict(zip(districts, orng.normal(0, config.district_sd, len(districts))))
    z_off = dict(zip(zipcodes, orng.normal(0, config.zipcode_sd, len(zipcodes))))

    # ---- properties --------------------------------------------------------
    prng = _rng(config, "properties")
    n_props = int(round(config.n_sales / (1 + 1.2 * config.repeat_fraction)))
    n_nonres = int(round(config.nonresidential_fraction * n_props))
    n_all = n_props + n_nonres
    p_tract = prng.integers(0, nt, n_all)
    px, py = _points_in_tracts(prng, p_tract, origin, size)
    chars = np.zeros((n_all, N_CHARACTERISTICS))
    chars[:, 0] = prng.choice([1, 1, 1, 2, 2, 3, 4, 6], n_all)
    chars[:, 1] = np.round(prng.lognormal(np.log(1050), 0.35, n_all), 1)
    chars[:, 2] = np.round(prng.lognormal(np.log(0.9), 0.5, n_all), 3)
    chars[:, 3] = np.round(prng.uniform(0.05, 1.3, n_all), 3)
    chars[:, 4] = prng.choice([1, 2, 2, 3, 3, 4], n_all)
    chars[:, 5] = prng.choice([1, 2, 2, 2, 3, 3, 4], n_all)
    for j, p in zip(range(6, 12), (0.025, 0.1, 0.36, 0.87, 0.05, 0.02)):
        chars[:, j] = prng.uniform(size=n_all) < p
    cls_probs = np.array([0.18, 0.16, 0.38, 0.12, 0.03, 0.03, 0.03, 0.02, 0.02, 0.01])
    has_class = prng.uniform(size=n_all) > 0.03
    cls = prng.choice(10, n_all, p=cls_probs / cls_probs.sum())
    chars[np.flatnonzero(has_class), 12 + cls[has_class]] = 1.0
    for j, p in zip(range(22, 27), (0.1, 0.02, 0.08, 0.02, 0.02)):
        chars[:, j] = prng.uniform(size=n_all) < p
    hall = np.array([0.55 * extent[0], 0.35 * extent[1]])
    subways = prng.uniform([0, 0], extent, size=(25, 2))
    parks = prng.uniform([0, 0], extent, size=(15, 2))
    pts = np.column_stack([px, py])
    chars[:, 27] = np.hypot(*(pts - hall).T)
    chars[:, 28] = np.min(np.hypot(pts[:, None, 0] - subways[:, 0], pts[:, None, 1] - subways[:, 1]), axis=1)
    chars[:, 29] = np.min(np.hypot(pts[:, None, 0] - parks[:, 0], pts[:, None, 1] - parks[:, 1]), axis=1)
    chars = np.round(chars, 6)
    residential = np.arange(n_all) < n_props
    bbl = np.array([f"{1_000_000_000 + i * 7 + 3}" for i in range(n_all)])
    lon, lat = proj.inverse(px, py)
    properties = pd.DataFrame({
        "BBL": bbl,
        "residential": residential.astype(int),
        "lon": lon,
        "lat": lat,
        "tract_id": tract[p_tract],
        "zipcode_id": zipc[p_tract],
        "district_id": dist[p_tract],
    })
    properties = pd.concat([properties, pd.DataFrame(chars, columns=CHARACTERISTIC_COLUMNS)], axis=1)

    # ---- hedonic truth -----------------------------------------------------
    hrng = _rng(config, "hedonic")
    sd = chars[:n_props].std(axis=0)
    sd[sd == 0] = 1.0
    std_effect = hrng.normal(0, 0.06, N_CHARACTERISTICS)
    std_effect[[1, 27]] = [0.12, -0.25]
    hedonic = std_effect / sd
    intercept = 12.4 - float(chars[:n_props].mean(axis=0) @ hedonic)

    irng = _rng(config, "index")
    steps = irng.normal(0.01, 0.025, config.n_quarters)
    steps[0] = 0.0
    log_index = np.cumsum(steps)

    # ---- sales -------------------------------------------------------------
    srng = _rng(config, "sales")
    n_repeat = int(round(config.repeat_fraction * n_props))
    counts = np.ones(n_props, dtype=int)
    repeaters = srng.choice(n_props, n_repeat, replace=False)
    counts[repeaters] = 2
    extra = config.n_sales - counts.sum()
    if extra > 0:
        counts[srng.choice(repeaters if n_repeat else np.arange(n_props), extra, replace=True)] += 1
    elif extra < 0:
        drop = srng.choice(repeaters, -extra, replace=False)
        counts[drop] -= 1
    s_start, s_end = _epoch(study.start), _epoch(study.end)
    n_days = (s_end - s_start) // 86_400
    sale_prop, sale_day = [], []
    for p in range(n_props):
        days = np.sort(srng.choice(n_days, counts[p], replace=False))
        sale_prop.extend([p] * counts[p])
        sale_day.extend(days.tolist())
    sale_prop = np.array(sale_prop)
    sale_day = np.array(sale_day)
    n_nonres_sales = n_nonres
    nonres_prop = n_props + np.arange(n_nonres)
    sale_prop = np.concatenate([sale_prop, nonres_prop])
    sale_day = np.concatenate([sale_day, srng.integers(0, n_days, n_nonres_sales)])
    sale_dates = np.array(s_start + sale_day * 86_400, dtype="datetime64[s]").astype("datetime64[D]")
    dates = [date.fromisoformat(str(d)) for d in sale_dates]
    quarter = np.array([study.quarter_of(d) for d in dates])

    st = p_tract[sale_prop]
    z_loc = z_field(px[sale_prop], py[sale_prop])
    noiseless = (intercept + chars[sale_prop] @ hedonic + log_index[quarter]
                 + config.beta_dc * z_loc + config.beta_tc * w_t[st]
                 + np.array([d_off[d] for d in dist[st]]) + np.array([z_off[z] for z in zipc[st]]))
    mrng = _rng(config, "prices")
    noise = mrng.normal(0, config.sigma, len(sale_prop))
    log_ppu = noiseless + noise
    units = chars[sale_prop, 0].astype(int)
    price = np.round(np.exp(log_ppu) * units, 2)

    n_zero = int(round(config.zero_price_fraction * config.n_sales))
    zero_idx = srng.choice(n_props, n_zero, replace=False)
    zero_days = srng.integers(0, n_days, n_zero)
    zero_dates = np.array(s_start + zero_days * 86_400, dtype="datetime64[s]").astype("datetime64[D]")

    order = np.argsort(sale_dates, kind="stable")
    sales_raw = pd.DataFrame({
        "BBL": np.concatenate([bbl[sale_prop], bbl[zero_idx]]),
        "SALE PRICE": np.concatenate([price, np.zeros(n_zero)]),
        "SALE DATE": np.concatenate([sale_dates.astype(str), zero_dates.astype(str)]),
        "TOTAL UNITS": np.concatenate([units, chars[zero_idx, 0].astype(int)]),
    })
    sales_raw = sales_raw.iloc[np.concatenate([order, len(order) + np.arange(n_zero)])].reset_index(drop=True)
    sale_truth = pd.DataFrame({
        "bbl": bbl[sale_prop],
        "sale_date": sale_dates.astype(str),
        "quarter": quarter,
        "log_price_noiseless": noiseless,
        "log_price": log_ppu,
        "residential": residential[sale_prop],
    }).iloc[order].reset_index(drop=True)

    # ---- census ------------------------------------------------------------
    crng = _rng(config, "census")
    years = np.arange(study.start.year - 1, study.end.year)
    rows = []
    for t in range(nt):
        base = w_t[t]
        for yr in years:
            e = crng.normal(0, 0.05, len(CENSUS_COLUMNS))
            sig = lambda a, b: float(1 / (1 + np.exp(-(a + b))))
            acs = [
                float(np.exp(9.5 + 0.3 * v_t[t] + e[0])),
                sig(-2.6 - 0.3 * base, e[1]),
                float(np.exp(11.0 + 0.35 * base + e[2])),
                sig(-2.0 - 0.4 * base, e[3]),
                sig(-1.2 + 0.4 * base, e[4]),
                sig(-2.0 + 0.5 * base, e[5]),
                sig(0.0 + 0.6 * base, e[6]),
                sig(-1.5 - 0.6 * base, e[7]),
                sig(-2.0 + 0.2 * v_t[t], e[8]),
            ]
            lehd = [float(np.round(np.exp(7.0 + 0.2 * v_t[t] + e[9]))),
                    float(np.round(np.exp(6.5 + 0.5 * u_t[t] + e[10])))]
            rows.append([tract[t], int(yr)] + acs + lehd)
    census = pd.DataFrame(rows, columns=["tract_id", "year"] + ACS_COLUMNS + LEHD_COLUMNS)

    # ---- events ------------------------------------------------------------
    ev_start = s_start - config.event_lead_days * 86_400
    events_raw = {}
    for kind, n, key in (("complaint311", config.events_311, "311"), ("crime", config.events_crime, "crime")):
        erng = _rng(config, kind)
        size_k = CATEGORY_TABLE_SIZES[kind]
        a = 0.6 if kind == "complaint311" else -0.7
        weight = np.exp(a * z_t + 0.5 * v_t)
        et = erng.choice(nt, n, p=weight / weight.sum())
        ex, ey = _points_in_tracts(erng, et, origin, size)
        base_cat = erng.normal(0, 1.0, size_k)
        load_cat = erng.normal(0, 0.8, size_k)
        cat = _gumbel_choice(erng, base_cat[None, :] + z_t[et][:, None] * load_cat[None, :])
        base_bin = erng.normal(0, 0.5, 56)
        base_bin += np.tile(np.array([-1.2, -1.5, -0.5, 0.4, 0.6, 0.5, 0.3, -0.3]), 7)
        shift_bin = np.tile(np.array([0.5, 0.6, 0.0, -0.3, -0.2, 0.0, 0.2, 0.4]), 7) * (1 if a > 0 else -1)
        ts = _weekly_times(erng, n, ev_start, s_end, base_bin[None, :] + z_t[et][:, None] * shift_bin[None, :])
        elon, elat = proj.inverse(ex, ey)
        table = default_category_table(kind)
        cols = ("created_date", "complaint_type") if key == "311" else ("complaint_datetime", "offense")
        frame = pd.DataFrame({cols[0]: _fmt_ts(ts), "lon": elon, "lat": elat,
                              cols[1]: np.array(table, dtype=object)[cat]})
        events_raw[key] = frame.iloc[np.argsort(ts, kind="stable")].reset_index(drop=True)

    trng = _rng(config, "taxi")
    n = config.taxi_trips
    wp = np.exp(0.9 * u_t + 0.4 * z_t)
    wd = np.exp(0.9 * u_t - 0.3 * z_t + 0.3 * v_t)
    tp = trng.choice(nt, n, p=wp / wp.sum())
    td = trng.choice(nt, n, p=wd / wd.sum())
    xp_, yp_ = _points_in_tracts(trng, tp, origin, size)
    xd_, yd_ = _points_in_tracts(trng, td, origin, size)
    prof = np.tile(np.array([0.3, -1.0, -0.4, 0.6, 0.5, 0.6, 0.8, 0.9]), 7) + trng.normal(0, 0.3, 56)
    shift = np.tile(np.array([0.6, 0.4, -0.2, -0.3, 0.0, -0.1, 0.1, 0.4]), 7)
    t_pick = _weekly_times(trng, n, ev_start, s_end - 3_600, prof[None, :] + z_t[tp][:, None] * shift[None, :])
    t_drop = t_pick + trng.integers(4 * 60, 45 * 60, n)
    plon, plat = proj.inverse(xp_, yp_)
    dlon, dlat = proj.inverse(xd_, yd_)
    taxi = pd.DataFrame({
        "pickup_datetime": _fmt_ts(t_pick), "pickup_lon": plon, "pickup_lat": plat,
        "dropoff_datetime": _fmt_ts(t_drop), "dropoff_lon": dlon, "dropoff_lat": dlat,
    })
    events_raw["taxi"] = taxi.iloc[np.argsort(t_pick, kind="stable")].reset_index(drop=True)

    truth = SynthTruth(
        config=config.to_dict(),
        log_index=log_index.tolist(),
        hedonic_coefficients=hedonic.tolist(),
        intercept=intercept,
        beta_dc=config.beta_dc,
        beta_tc=config.beta_tc,
        sigma=config.sigma,
        district_offsets={k: float(v) for k, v in d_off.items()},
        zipcode_offsets={k: float(v) for k, v in z_off.items()},
        tract_z=dict(zip(tract.tolist(), z_t.tolist())),
        tract_w=dict(zip(tract.tolist(), w_t.tolist())),
    )
    return SynthCity(config, truth, sales_raw, properties, events_raw, census, sale_truth)


# --------------------------------------------------------------------------
# small standalone generators used by solver tests


def sparse_regression(n=2000, n_noise=200, support_size=5, sigma=1.0, seed=0, signal=None):
    """Gaussian design with a planted sparse coefficient vector.

    Returns ``(X, y, support)``; ``support`` holds the column indices of the
    nonzero coefficients.  The remaining ``n_noise`` columns are pure noise.
    """
    rng = np.random.default_rng([seed, 101])
    p = support_size + n_noise
    X = rng.normal(size=(n, p))
    support = np.sort(rng.choice(p, support_size, replace=False))
    beta = np.zeros(p)
    beta[support] = signal if signal is not None else rng.choice([-1, 1], support_size) * rng.uniform(0.5, 1.0, support_size)
    y = X @ beta + rng.normal(0, sigma, n)
    return X, y, support


def synthetic_pairs(n_pairs=2000, n_quarters=24, sigma=0.05, seed=0, base=0):
    """Repeat-sale pairs drawn from a planted log index.

    Returns ``(frame, log_index)`` with frame columns ``quarter_s``,
    ``quarter_t`` and ``log_diff``; ``log_index[base] == 0``.
    """
    rng = np.random.default_rng([seed, 102])
    steps = rng.normal(0.01, 0.03, n_quarters)
    log_index = np.cumsum(steps)
    log_index -= log_index[base]
    qs = rng.integers(0, n_quarters - 1, n_pairs)
    qt = np.array([rng.integers(s + 1, n_quarters) for s in qs])
    # every quarter appears at least once
    cover = np.arange(n_quarters - 1)
    qs[:len(cover)] = cover
    qt[:len(cover)] = cover + 1
    diff = log_index[qt] - log_index[qs] + rng.normal(0, sigma, n_pairs)
    return pd.DataFrame({"quarter_s": qs, "quarter_t": qt, "log_diff": diff}), log_index


@dataclass
class LoadedCity:
    sales: list
    cleaning: object
    events: dict
    indexes: dict
    census: list


def load_city(city: SynthCity, cell_size: float = 1000.0) -> LoadedCity:
    """Run the in-memory ingest path on a generated city and build the indexes."""
    from .geoindex import build_index
    from .ingest import clean_sales, parse_census, parse_events, parse_properties, parse_sales

    cfg = city.ingest_config()
    props = parse_properties(city.properties, cfg.properties, cfg.projection)
    raw, _ = parse_sales(city.sales_raw, cfg.sales, cfg.study, cfg.date_format)
    sales, report = clean_sales(raw, props, cfg.study)
    events = {}
    for kind in ("311", "crime", "taxi"):
        table = cfg.category_table("complaint311" if kind == "311" else "crime") if kind != "taxi" else None
        tables, _ = parse_events(city.events_raw[kind], kind, table, cfg.events[kind], cfg.projection,
                                 cfg.timestamp_format)
        events.update(tables)
    indexes = {k: build_index(v, cell_size) for k, v in events.items()}
    census = parse_census(city.census, cfg.census)
    return LoadedCity(sales, report, events, indexes, census)
