"""Command-line entry point.

Every artifact ``X`` is accompanied by ``X.run.json`` holding the resolved
arguments and the sha256 of every input file, so it can be regenerated
byte-for-byte.  Path flags fall back to ``DIGICENSUS_<FLAG>`` environment
variables; nothing else is read from the environment.

Exit codes: 0 ok, 1 runtime failure, 2 usage, 3 missing input, 4 schema mismatch.
Failures print a one-line JSON object to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import SNAPSHOT_SCHEMA_VERSION, __version__
from .evaluation import (
    DATASET_BLOCKS,
    SCHEMES,
    CVReport,
    make_fold_plan,
    parse_model_spec,
    report_table,
    run_cv,
)
from .features import ALL_BLOCKS, FeatureConfig, FeatureMatrix, assemble_feature_matrix
from .geoindex import SNAPSHOT_VERSION, SpatioTemporalIndex, build_index
from .ingest import (
    CATEGORY_TABLE_SIZES,
    EVENT_KINDS,
    IngestConfig,
    SchemaError,
    census_to_frame,
    clean_sales,
    parse_census,
    parse_events,
    parse_properties,
    parse_sales,
    read_events,
    read_sales,
    write_events,
    write_sales,
)
from .models import DummyEncoder, r_squared, save_model
from .models.io import SnapshotError
from .repeat_sales import (
    IndexIdentificationError,
    build_change_dataset,
    estimate_bmn_index,
    pair_sales,
    pairs_to_frame,
)
from .selection import DEFAULT_ALPHA_GRID, parse_alpha_grid, selection_curve
from .synth import SynthConfig, generate

log = logging.getLogger("digicensus")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_MISSING, EXIT_SCHEMA = 0, 1, 2, 3, 4
FEATURE_SCHEMA_VERSION = 1
RAW_EVENT_FILES = {"311": "events_311.csv", "crime": "events_crime.csv", "taxi": "events_taxi.csv"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# provenance


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_hashes(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.iterdir()):
                if f.is_file() and not f.name.endswith(".run.json"):
                    out[str(f)] = sha256_file(f)
        elif p.exists():
            out[str(p)] = sha256_file(p)
    return out


def write_run_record(artifact, command: str, args: argparse.Namespace, inputs) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "log_level")}
    record = {
        "command": command,
        "version": __version__,
        "config": json.loads(json.dumps(config, default=str)),
        "inputs": input_hashes(inputs),
    }
    Path(f"{artifact}.run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _env(name: str):
    return os.environ.get(f"DIGICENSUS_{name.upper()}")


def _blocks(text: str | None, default=ALL_BLOCKS) -> tuple[str, ...]:
    if not text:
        return tuple(default)
    blocks = tuple(b.strip() for b in text.split(",") if b.strip())
    unknown = [b for b in blocks if b not in ALL_BLOCKS]
    if unknown:
        raise UsageError(f"unknown block(s) {unknown}; expected a subset of {ALL_BLOCKS}")
    return blocks


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    doc = {}
    if args.config:
        doc = json.loads(_require(args.config, "synth config").read_text(encoding="utf-8"))
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.n_sales is not None:
        doc["n_sales"] = args.n_sales
    if args.beta_dc is not None:
        doc["beta_dc"] = args.beta_dc
    config = SynthConfig.from_dict(doc)
    paths = generate(config).write(args.out)
    write_run_record(Path(args.out) / "truth.json", "synth", args, [args.config] if args.config else [])
    print(json.dumps({"out": str(args.out), "files": sorted(Path(p).name for p in paths.values())}))
    return EXIT_OK


def cmd_ingest(args) -> int:
    src = Path(args.input) if args.input else None
    cfg_path = args.config or (src / "ingest_config.json" if src and (src / "ingest_config.json").exists() else None)
    cfg = IngestConfig.load(_require(cfg_path, "ingest config")) if cfg_path else IngestConfig()

    def pick(flag, name):
        if flag:
            return Path(flag)
        return src / name if src else None

    sales_path = _require(pick(args.sales, "sales.csv"), "sales file")
    pluto_path = _require(pick(args.pluto, "pluto.csv"), "property file")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    props = parse_properties(pluto_path, cfg.properties, cfg.projection)
    raw, errors = parse_sales(sales_path, cfg.sales, cfg.study, cfg.date_format)
    sales, report = clean_sales(raw, props, cfg.study)
    write_sales(sales, out / "sales.csv")
    inputs = [sales_path, pluto_path] + ([cfg_path] if cfg_path else [])

    drops = {}
    for key, name in RAW_EVENT_FILES.items():
        path = pick(getattr(args, f"events_{key}"), name)
        if path is None or not path.exists():
            continue
        kind = {"311": "complaint311", "crime": "crime"}.get(key)
        table = cfg.category_table(kind) if kind else None
        tables, drop = parse_events(path, key, table, cfg.events[key], cfg.projection, cfg.timestamp_format)
        for k, events in tables.items():
            write_events(events, out / f"events_{k}.csv")
        drops[key] = drop.__dict__
        inputs.append(path)

    census_path = pick(args.census, "census.csv")
    if census_path is not None and census_path.exists():
        census = parse_census(census_path, cfg.census)
        census_to_frame(census).to_csv(out / "census.csv", index=False, float_format="%.17g")
        inputs.append(census_path)

    summary = {
        "cleaning": json.loads(report.to_json()),
        "parse_errors": len(errors),
        "event_drops": drops,
        "reconciles": report.reconciles(),
    }
    pd.DataFrame([e.__dict__ for e in errors], columns=["row", "column", "message"]).to_csv(
        out / "parse_errors.csv", index=False)
    (out / "ingest_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_run_record(out / "ingest_report.json", "ingest", args, inputs)
    print(json.dumps(summary["cleaning"], sort_keys=True))
    return EXIT_OK


def _load_events(data: Path) -> dict:
    out = {}
    for kind in EVENT_KINDS:
        path = data / f"events_{kind}.csv"
        if path.exists():
            out[kind] = read_events(path)
    return out


def cmd_index(args) -> int:
    data = _require(args.data, "ingested data directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    built = {}
    for kind, events in _load_events(data).items():
        index = build_index(events, args.cell_size)
        index.save(out / f"{kind}.idx")
        built[kind] = index.event_count
    if not built:
        raise FileNotFoundError(f"no event files found in {data}")
    write_run_record(out / "index", "index", args, [data])
    print(json.dumps(built, sort_keys=True))
    return EXIT_OK


def cmd_features(args) -> int:
    data = _require(args.data, "ingested data directory")
    blocks = _blocks(args.blocks)
    sales = read_sales(_require(data / "sales.csv", "ingested sales"))
    indexes = {}
    if any(b in blocks for b in ("311", "crime", "taxi")):
        if args.index_dir:
            idx_dir = _require(args.index_dir, "index directory")
            for kind in EVENT_KINDS:
                p = idx_dir / f"{kind}.idx"
                if p.exists():
                    indexes[kind] = SpatioTemporalIndex.load(p)
        else:
            indexes = {k: build_index(v, args.radius) for k, v in _load_events(data).items()}
    census = None
    if "tc" in blocks:
        census = parse_census(_require(data / "census.csv", "ingested census"))
    config = FeatureConfig(radius=args.radius, window_days=args.window_days, window_mode=args.window_mode,
                           volume_transform=args.volume_transform, quarter_mode=args.quarter_mode,
                           jobs=args.jobs)
    fm = assemble_feature_matrix(sales, indexes, census, blocks, config)
    fm.save(args.out)
    write_run_record(args.out, "features", args, [data] + ([args.index_dir] if args.index_dir else []))
    print(json.dumps({"rows": len(fm), "columns": fm.schema.total_width,
                      "tc_missing": int(fm.meta["tc_missing"].sum())}))
    return EXIT_OK


def _load_features(path) -> FeatureMatrix:
    return FeatureMatrix.load(_require(path, "feature matrix"))


def _spec_with_blocks(args, fm: FeatureMatrix):
    spec = parse_model_spec(args.model)
    if getattr(args, "dataset", None):
        spec.blocks = tuple(b for b in fm.schema.block_names if b not in ("311", "crime", "taxi")) \
            + DATASET_BLOCKS[args.dataset]
    if args.blocks:
        spec.blocks = _blocks(args.blocks)
    missing = [b for b in (spec.blocks or ()) if b not in fm.schema.block_names]
    if missing:
        raise SchemaError(f"feature matrix has no block(s) {missing}")
    return spec


def cmd_fit(args) -> int:
    fm = _load_features(args.features)
    spec = _spec_with_blocks(args, fm)
    sub = fm.select_blocks(spec.blocks) if spec.blocks is not None else fm
    X, y, columns = sub.values, sub.target, list(sub.columns)
    if "tc" in sub.schema.block_names:
        keep = ~sub.meta["tc_missing"].to_numpy(bool)
        X, y, meta = X[keep], y[keep], sub.meta[keep].reset_index(drop=True)
    else:
        meta = sub.meta
    if spec.dummies:
        enc = DummyEncoder(spec.dummies).fit(meta)
        X = np.hstack([X, enc.transform(meta)])
        columns += list(enc.get_feature_names_out())
    model = spec.build().fit(X, y)
    final = model
    if hasattr(model, "named_steps"):
        support = model.named_steps["select"].support_
        columns = [c for c, k in zip(columns, support) if k]
        final = model.named_steps["model"]
    save_model(final, args.out, columns)
    summary = {"model": spec.name, "rows": int(len(y)), "columns": len(columns),
               "in_sample_r2": r_squared(y, model.predict(X))}
    Path(f"{args.out}.summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")
    write_run_record(args.out, "fit", args, [args.features])
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_cv(args) -> int:
    fm = _load_features(args.features)
    spec = _spec_with_blocks(args, fm)
    plan = make_fold_plan(fm, args.scheme, args.k, args.repetitions, args.seed)
    report = run_cv(fm, spec, plan, jobs=args.jobs, aggregation=args.aggregation,
                    r2_reference=args.r2_reference, selection_scope=args.selection_scope)
    report.dataset = args.dataset
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    write_run_record(args.out, "cv", args, [args.features])
    print(json.dumps({"model": report.model, "scheme": report.scheme, "mean_r2": report.mean_r2,
                      "std_r2": report.std_r2, "missing_rate": report.missing_rate}))
    return EXIT_OK


def cmd_select(args) -> int:
    fm = _load_features(args.features)
    if args.blocks:
        fm = fm.select_blocks(_blocks(args.blocks))
    grid = parse_alpha_grid(args.alpha_grid) if args.alpha_grid else list(DEFAULT_ALPHA_GRID)
    curve = selection_curve(fm, None, grid)
    curve.to_csv(args.out, index=False, float_format="%.10g")
    write_run_record(args.out, "select", args, [args.features])
    print(json.dumps({"alphas": len(curve), "kept_total": curve["kept_total"].tolist()}))
    return EXIT_OK


def cmd_repeat_sales(args) -> int:
    sales = read_sales(_require(args.sales, "sales file"))
    pairs, report = pair_sales(sales, args.key)
    n_quarters = max((s.quarter for s in sales), default=0) + 1 if args.n_quarters is None else args.n_quarters
    index = estimate_bmn_index(pairs, n_quarters, args.base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs_to_frame(pairs).to_csv(out / "pairs.csv", index=False, float_format="%.17g")
    index.to_frame().to_csv(out / "index.csv", index=False, float_format="%.17g")
    inputs = [args.sales]
    if args.features:
        fm = _load_features(args.features)
        blocks = [b for b in _blocks(args.blocks) if b in fm.schema.block_names and b != "d"]
        change = build_change_dataset(pairs, index, fm, blocks)
        change.save(out / "change_features.csv")
        inputs.append(args.features)
    summary = {"pairs": report.pairs, "properties": report.properties,
               "repeat_properties": report.repeat_properties, "same_date_dropped": report.same_date_dropped,
               "residual_variance": index.residual_variance, "unidentified": index.unidentified}
    (out / "pairing_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    write_run_record(out / "index.csv", "repeat-sales", args, inputs)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def profile_tables(sales, events: dict, group_key: str = "district_id", raster: float = 100.0,
                   max_distance: float = 500.0, top: int = 10):
    """Per-group event densities, normalized weekly timelines and top category shares.

    Groups are territories: every event and every raster cell goes to the
    group of its nearest property, and anything farther than
    ``max_distance`` from all properties is left out.
    """
    from scipy.spatial import cKDTree

    from .features import N_TIME_BINS
    from .geoindex import weekly_bin

    pts = np.array([[s.x, s.y] for s in sales], dtype=float)
    groups = np.array([getattr(s, group_key) for s in sales])
    tree = cKDTree(pts)
    lo, hi = pts.min(axis=0) - max_distance, pts.max(axis=0) + max_distance
    gx = np.arange(lo[0] + raster / 2, hi[0], raster)
    gy = np.arange(lo[1] + raster / 2, hi[1], raster)
    cells = np.column_stack([np.repeat(gx, len(gy)), np.tile(gy, len(gx))])
    dist, near = tree.query(cells)
    inside = dist <= max_distance
    area = pd.Series(groups[near[inside]]).value_counts() * (raster / 1000.0) ** 2
    levels = sorted(set(groups))

    volume, timeline, shares = [], [], []
    for kind, ev in events.items():
        d, nn = tree.query(np.column_stack([ev.x, ev.y])) if len(ev) else (np.empty(0), np.empty(0, int))
        ok = d <= max_distance
        g = groups[nn[ok]]
        bins = weekly_bin(ev.timestamp[ok])
        cats = ev.category[ok]
        for level in levels:
            m = g == level
            n = int(m.sum())
            a = float(area.get(level, 0.0))
            volume.append({"group": level, "kind": kind, "events": n, "area_km2": a,
                           "density_per_km2": n / a if a else float("nan")})
            if n:
                h = np.bincount(bins[m], minlength=N_TIME_BINS) / n
                timeline.append({"group": level, "kind": kind, **{f"bin_{b:02d}": h[b] for b in range(N_TIME_BINS)}})
                if CATEGORY_TABLE_SIZES[kind] > 1:
                    counts = np.bincount(cats[m], minlength=CATEGORY_TABLE_SIZES[kind])
                    order = np.argsort(-counts, kind="stable")[:top]
                    for rank, c in enumerate(order, 1):
                        shares.append({"group": level, "kind": kind, "rank": rank, "category": int(c),
                                       "share": counts[c] / n})
    return pd.DataFrame(volume), pd.DataFrame(timeline), pd.DataFrame(shares)


def cmd_profile(args) -> int:
    data = _require(args.data, "ingested data directory")
    sales = read_sales(_require(data / "sales.csv", "ingested sales"))
    events = _load_events(data)
    if not events:
        raise FileNotFoundError(f"no event files found in {data}")
    vol, tl, top = profile_tables(sales, events, args.group_key, args.raster, args.max_distance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vol.to_csv(out / "volume_density.csv", index=False, float_format="%.10g")
    tl.to_csv(out / "weekly_timeline.csv", index=False, float_format="%.17g")
    top.to_csv(out / "top_categories.csv", index=False, float_format="%.10g")
    write_run_record(out / "volume_density.csv", "profile", args, [data])
    print(json.dumps({"groups": int(vol["group"].nunique()) if len(vol) else 0, "kinds": sorted(events)}))
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for p in args.inputs:
        doc = json.loads(_require(p, "cv report").read_text(encoding="utf-8"))
        reports.append(CVReport.from_dict(doc))
    table = report_table(reports, args.rows)
    out = Path(args.out)
    if out.suffix == ".json":
        out.write_text(table.to_json(), encoding="utf-8")
    elif out.suffix == ".txt":
        out.write_text(table.to_text() + "\n", encoding="utf-8")
    else:
        out.write_text(table.to_csv(), encoding="utf-8")
    write_run_record(out, "report", args, args.inputs)
    print(table.to_text())
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _version_text() -> str:
    return (f"digicensus {__version__} (feature schema v{FEATURE_SCHEMA_VERSION}, "
            f"index snapshot v{SNAPSHOT_VERSION}, model snapshot v{SNAPSHOT_SCHEMA_VERSION})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="digicensus", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=_version_text())
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", help="generate a synthetic city")
    s.add_argument("--config")
    s.add_argument("--out", default=_env("out") or "synth")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-sales", type=int)
    s.add_argument("--beta-dc", type=float)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="parse and clean raw CSV inputs")
    s.add_argument("--in", dest="input", default=_env("in"), help="directory with the standard file names")
    s.add_argument("--config")
    s.add_argument("--sales")
    s.add_argument("--pluto")
    s.add_argument("--events-311")
    s.add_argument("--events-crime")
    s.add_argument("--events-taxi")
    s.add_argument("--census")
    s.add_argument("--out", default=_env("data") or "data")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("index", help="build spatial index snapshots")
    s.add_argument("--data", default=_env("data") or "data")
    s.add_argument("--cell-size", type=float, default=1000.0)
    s.add_argument("--out", default=_env("index") or "index")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("features", help="assemble the feature matrix")
    s.add_argument("--data", default=_env("data") or "data")
    s.add_argument("--index-dir", default=_env("index"))
    s.add_argument("--blocks", help=f"comma list from {','.join(ALL_BLOCKS)}")
    s.add_argument("--radius", type=float, default=1000.0)
    s.add_argument("--window-days", type=int, default=365)
    s.add_argument("--window-mode", choices=("before", "centered"), default="before")
    s.add_argument("--volume-transform", choices=("log1p", "raw"), default="log1p")
    s.add_argument("--quarter-mode", choices=("calendar", "seasonal"), default="calendar")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default=_env("features") or "features.csv")
    s.set_defaults(func=cmd_features)

    def model_args(s):
        s.add_argument("--features", default=_env("features") or "features.csv")
        s.add_argument("--model", default="ols", help="kind[:key=value,...] or a JSON object")
        s.add_argument("--dataset", choices=sorted(DATASET_BLOCKS), help="digital-census column of the table")
        s.add_argument("--blocks")

    s = sub.add_parser("fit", help="fit one model on all rows")
    model_args(s)
    s.add_argument("--out", default="model.bin")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("cv", help="repeated K-fold cross-validation")
    model_args(s)
    s.add_argument("--scheme", choices=SCHEMES, default="standard")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--repetitions", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--aggregation", choices=("fold", "repetition"), default="fold")
    s.add_argument("--r2-reference", choices=("test", "train"), default="test")
    s.add_argument("--selection-scope", choices=("fold", "full"), default="fold",
                   help="fit a model's Lasso selector per training fold or once on all rows")
    s.add_argument("--out", default="cv.json")
    s.set_defaults(func=cmd_cv)

    s = sub.add_parser("select", help="Lasso selection curve")
    s.add_argument("--features", default=_env("features") or "features.csv")
    s.add_argument("--blocks")
    s.add_argument("--alpha-grid", help="start:stop:stepdex or a comma list")
    s.add_argument("--out", default="selection.csv")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("repeat-sales", help="pair repeat sales and estimate the quarterly index")
    s.add_argument("--sales", default=(_env("data") or "data") + "/sales.csv")
    s.add_argument("--key", choices=("bbl_units", "bbl"), default="bbl_units")
    s.add_argument("--n-quarters", type=int)
    s.add_argument("--base", type=int, default=0)
    s.add_argument("--features", help="per-sale feature matrix for the price-change design")
    s.add_argument("--blocks")
    s.add_argument("--out", default="repeat_sales")
    s.set_defaults(func=cmd_repeat_sales)

    s = sub.add_parser("profile", help="per-group event profiles")
    s.add_argument("--data", default=_env("data") or "data")
    s.add_argument("--group-key", choices=("tract_id", "zipcode_id", "district_id"), default="district_id")
    s.add_argument("--raster", type=float, default=100.0)
    s.add_argument("--max-distance", type=float, default=500.0)
    s.add_argument("--out", default="profile")
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("report", help="tabulate cv reports")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--rows", choices=("model", "scheme"), default="model")
    s.add_argument("--out", default="table.csv")
    s.set_defaults(func=cmd_report)
    return p


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail(EXIT_USAGE, exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, exc)
    except (SchemaError, SnapshotError) as exc:
        return _fail(EXIT_SCHEMA, exc)
    except (ValueError, IndexIdentificationError, FloatingPointError, KeyError, OSError) as exc:
        return _fail(EXIT_FAILURE, exc)


if __name__ == "__main__":
    sys.exit(main())
