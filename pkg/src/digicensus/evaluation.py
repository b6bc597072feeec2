"""Repeated K-fold cross-validation, standard and geographically grouped."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.pipeline import Pipeline

from .features import FeatureMatrix
from .models import DummyEncoder, make_model, r_squared
from .selection import LassoSelector

log = logging.getLogger(__name__)

SCHEMES = ("standard", "tract", "zipcode", "district")
GROUP_COLUMN = {"tract": "tract_id", "zipcode": "zipcode_id", "district": "district_id"}

DATASET_COLUMNS = ("none", "311", "crime", "taxi", "all")
DATASET_HEADERS = {
    "none": "No digital census",
    "311": "311 complaint",
    "crime": "Crime complaint",
    "taxi": "Taxi trips",
    "all": "All digital census",
}
MODEL_LABELS = {"ols": "Linear regression", "lasso": "Lasso", "rf": "Random Forest",
                "gbt": "Gradient Tree Boosting"}
SCHEME_LABELS = {"standard": "Standard", "tract": "Grouped by census tract",
                 "zipcode": "Grouped by zipcode", "district": "Grouped by community district"}
DATASET_BLOCKS = {"none": (), "311": ("311",), "crime": ("crime",), "taxi": ("taxi",),
                  "all": ("311", "crime", "taxi")}


class CVError(ValueError):
    pass


@dataclass(eq=False)
class FoldPlan:
    scheme: str
    k: int
    repetitions: int
    seed: int
    assignments: np.ndarray
    groups: np.ndarray | None = None

    def test_rows(self, rep: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[rep] == fold)

    def train_rows(self, rep: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[rep] != fold)

    def splits(self):
        for rep in range(self.repetitions):
            for fold in range(self.k):
                yield rep, fold, self.train_rows(rep, fold), self.test_rows(rep, fold)


def _balanced_labels(count: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold label per item: a random permutation cut into k near-equal runs."""
    labels = np.empty(count, dtype=np.int16)
    labels[rng.permutation(count)] = (np.arange(count) * k) // count
    return labels


def make_fold_plan(keys, scheme: str = "standard", k: int = 5, repetitions: int = 20,
                   seed: int = 0) -> FoldPlan:
    """Assign every row a fold label per repetition.

    ``keys`` is a :class:`FeatureMatrix` or a frame with the group-key
    columns.  Grouped schemes shuffle whole groups, balancing the number of
    groups (not rows) per fold.
    """
    if scheme not in SCHEMES:
        raise CVError(f"unknown CV scheme {scheme!r}; expected one of {SCHEMES}")
    if k < 2:
        raise CVError("k must be at least 2")
    meta = keys.meta if isinstance(keys, FeatureMatrix) else keys
    n = len(meta)
    assignments = np.empty((repetitions, n), dtype=np.int16)
    groups = None
    if scheme == "standard":
        if n < k:
            raise CVError(f"{n} rows cannot fill {k} folds")
        for rep in range(repetitions):
            assignments[rep] = _balanced_labels(n, k, np.random.default_rng([seed, rep]))
    else:
        groups = meta[GROUP_COLUMN[scheme]].astype(str).to_numpy()
        levels, inverse = np.unique(groups, return_inverse=True)
        if len(levels) < k:
            raise CVError(f"grouped CV by {scheme} needs at least {k} groups, found {len(levels)}")
        for rep in range(repetitions):
            assignments[rep] = _balanced_labels(len(levels), k, np.random.default_rng([seed, rep]))[inverse]
    return FoldPlan(scheme, k, repetitions, seed, assignments, groups)


# --------------------------------------------------------------------------
# model specs


@dataclass
class ModelSpec:
    """What to fit in each fold.

    ``blocks`` picks feature blocks (``None`` = all), ``dummies`` adds
    indicator factors learned per training fold and ``select_alpha``
    inserts a Lasso selector in front of the estimator.
    """

    kind: str = "ols"
    params: dict = field(default_factory=dict)
    blocks: tuple[str, ...] | None = None
    dummies: tuple[str, ...] = ()
    select_alpha: float | None = None
    label: str | None = None

    def build(self):
        est = make_model(self.kind, **self.params)
        if self.select_alpha:
            return Pipeline([("select", LassoSelector(alpha=self.select_alpha)), ("model", est)])
        return est

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        bits = [self.kind] + [f"{k}={v}" for k, v in sorted(self.params.items())]
        if self.select_alpha:
            bits.append(f"select_alpha={self.select_alpha:g}")
        if self.dummies:
            bits.append("dummies=" + "+".join(self.dummies))
        return ":".join(bits[:1]) + (":" + ",".join(bits[1:]) if len(bits) > 1 else "")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = list(self.blocks) if self.blocks is not None else None
        d["dummies"] = list(self.dummies)
        return d


def _coerce(value: str):
    low = value.lower()
    if low in ("none", "null"):
        return None
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def parse_model_spec(text: str) -> ModelSpec:
    """``kind[:key=value,...]``, e.g. ``gbt:n_estimators=200,max_depth=3,select_alpha=1e-4``.

    A JSON object with the :class:`ModelSpec` fields is also accepted.
    """
    text = text.strip()
    if text.startswith("{"):
        doc = json.loads(text)
        for key in ("blocks", "dummies"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        return ModelSpec(**doc)
    kind, _, rest = text.partition(":")
    spec = ModelSpec(kind=kind)
    for item in filter(None, rest.split(",")):
        key, _, value = item.partition("=")
        if key == "select_alpha":
            spec.select_alpha = float(value)
        elif key == "dummies":
            spec.dummies = tuple(v for v in value.split("+") if v)
        elif key == "label":
            spec.label = value
        else:
            spec.params[key] = _coerce(value)
    make_model(spec.kind, **spec.params)
    return spec


# --------------------------------------------------------------------------
# running


@dataclass
class FoldResult:
    repetition: int
    fold: int
    r2: float
    train_r2: float
    n_test: int
    n_missing: int
    n_train: int


@dataclass
class CVReport:
    model: str
    blocks: list[str]
    scheme: str
    k: int
    repetitions: int
    seed: int
    per_fold: list[FoldResult]
    aggregation: str = "fold"
    dataset: str | None = None
    excluded_rows: int = 0

    def _values(self, attr: str) -> np.ndarray:
        if self.aggregation == "fold":
            vals = [getattr(f, attr) for f in self.per_fold]
            return np.array([v for v in vals if not math.isnan(v)], dtype=float)
        if self.aggregation == "repetition":
            out = []
            for rep in sorted({f.repetition for f in self.per_fold}):
                vals = [getattr(f, attr) for f in self.per_fold
                        if f.repetition == rep and not math.isnan(getattr(f, attr))]
                if vals:
                    out.append(float(np.mean(vals)))
            return np.array(out)
        raise ValueError(f"unknown aggregation {self.aggregation!r}")

    @staticmethod
    def _std(v: np.ndarray) -> float:
        return float(np.std(v, ddof=1)) if len(v) > 1 else float("nan")

    @property
    def mean_r2(self) -> float:
        v = self._values("r2")
        return float(v.mean()) if len(v) else float("nan")

    @property
    def std_r2(self) -> float:
        return self._std(self._values("r2"))

    @property
    def mean_train_r2(self) -> float:
        v = self._values("train_r2")
        return float(v.mean()) if len(v) else float("nan")

    @property
    def std_train_r2(self) -> float:
        return self._std(self._values("train_r2"))

    @property
    def missing_rate(self) -> float:
        n_test = sum(f.n_test for f in self.per_fold)
        return sum(f.n_missing for f in self.per_fold) / n_test if n_test else float("nan")

    @property
    def undefined_folds(self) -> int:
        return sum(math.isnan(f.r2) for f in self.per_fold)

    def repetition_means(self) -> np.ndarray:
        reps = sorted({f.repetition for f in self.per_fold})
        return np.array([np.nanmean([f.r2 for f in self.per_fold if f.repetition == r]) for r in reps])

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "dataset": self.dataset,
            "blocks": list(self.blocks),
            "scheme": self.scheme,
            "k": self.k,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "aggregation": self.aggregation,
            "mean_r2": self.mean_r2,
            "std_r2": self.std_r2,
            "mean_train_r2": self.mean_train_r2,
            "std_train_r2": self.std_train_r2,
            "missing_rate": self.missing_rate,
            "undefined_folds": self.undefined_folds,
            "excluded_rows": self.excluded_rows,
            "per_fold": [asdict(f) for f in self.per_fold],
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "CVReport":
        folds = [FoldResult(**{k: (float("nan") if v is None and k in ("r2", "train_r2") else v)
                               for k, v in f.items()}) for f in doc["per_fold"]]
        return cls(doc["model"], doc["blocks"], doc["scheme"], doc["k"], doc["repetitions"], doc["seed"],
                   folds, doc.get("aggregation", "fold"), doc.get("dataset"), doc.get("excluded_rows", 0))


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def _run_fold(X, y, meta, spec: ModelSpec, rep, fold, train, test, r2_reference):
    Xtr, Xte = X[train], X[test]
    flags = np.zeros(len(test), dtype=bool)
    if spec.dummies:
        enc = DummyEncoder(spec.dummies).fit(meta.iloc[train])
        Xtr = np.hstack([Xtr, enc.transform(meta.iloc[train])])
        Xte = np.hstack([Xte, enc.transform(meta.iloc[test])])
        flags = enc.unpredictable(meta.iloc[test])
    model = spec.build().fit(Xtr, y[train])
    train_r2 = r_squared(y[train], model.predict(Xtr))
    ok = ~flags
    r2 = float("nan")
    if ok.sum() >= 2:
        ref = y[train].mean() if r2_reference == "train" else None
        r2 = r_squared(y[test][ok], model.predict(Xte[ok]), reference_mean=ref)
    return FoldResult(rep, fold, r2, train_r2, int(len(test)), int(flags.sum()), int(len(train)))


def run_cv(features: FeatureMatrix, spec: ModelSpec, plan: FoldPlan, jobs: int = 1,
           aggregation: str = "fold", r2_reference: str = "test", target=None,
           selection_scope: str = "fold") -> CVReport:
    """Fit and score ``spec`` on every (repetition, fold) cell of ``plan``.

    Rows missing traditional-census values are dropped when the ``tc``
    block is in use.  Folds whose test rows are all unpredictable get an
    undefined R^2 and are left out of the mean.  With
    ``selection_scope="full"`` a selector in ``spec`` is fit once on all
    rows instead of per training fold (leaks, kept for comparison).
    """
    if selection_scope not in ("fold", "full"):
        raise CVError(f"unknown selection scope {selection_scope!r}")
    if plan.assignments.shape[1] != len(features):
        raise CVError("fold plan and feature matrix are not aligned")
    blocks = list(spec.blocks) if spec.blocks is not None else features.schema.block_names
    fm = features.select_blocks(blocks)
    X = fm.values
    y = fm.target if target is None else np.asarray(target, dtype=float)
    keep = np.ones(len(fm), dtype=bool)
    if "tc" in blocks:
        keep &= ~fm.meta["tc_missing"].to_numpy(dtype=bool)
    kept_rows = np.flatnonzero(keep)
    if spec.select_alpha and selection_scope == "full":
        sel = LassoSelector(alpha=spec.select_alpha).fit(X[kept_rows], y[kept_rows])
        X = X[:, sel.support_]
        spec = replace(spec, select_alpha=None, label=spec.name)

    def cells():
        for rep, fold, train, test in plan.splits():
            yield rep, fold, np.intersect1d(train, kept_rows), np.intersect1d(test, kept_rows)

    results = Parallel(n_jobs=jobs)(
        delayed(_run_fold)(X, y, fm.meta, spec, rep, fold, train, test, r2_reference)
        for rep, fold, train, test in cells()
    )
    results = sorted(results, key=lambda f: (f.repetition, f.fold))
    report = CVReport(spec.name, blocks, plan.scheme, plan.k, plan.repetitions, plan.seed,
                      results, aggregation, excluded_rows=int((~keep).sum()))
    if report.undefined_folds:
        log.warning("%d fold(s) had no predictable test rows and were excluded", report.undefined_folds)
    return report


# --------------------------------------------------------------------------
# tables


@dataclass
class ComparisonTable:
    rows: list[str]
    columns: list[str]
    cells: dict

    def formatted(self) -> pd.DataFrame:
        data = []
        for r in self.rows:
            line = {"": r}
            for c in self.columns:
                cell = self.cells.get((r, c))
                line[DATASET_HEADERS.get(c, c)] = (
                    "-" if cell is None else f"{cell['mean_r2']:.4f} ({cell['std_r2']:.4f})"
                )
            data.append(line)
        return pd.DataFrame(data)

    def to_csv(self) -> str:
        return self.formatted().to_csv(index=False)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "columns": [DATASET_HEADERS.get(c, c) for c in self.columns],
            "cells": [
                {"row": r, "column": DATASET_HEADERS.get(c, c),
                 "mean_r2": round(v["mean_r2"], 4), "std_r2": round(v["std_r2"], 4),
                 "missing_rate": round(v["missing_rate"], 4), "model": v["model"]}
                for (r, c), v in self.cells.items()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2) + "\n"

    def to_text(self) -> str:
        return self.formatted().to_string(index=False)


def report_table(cells: Sequence[CVReport], row_key: str = "model") -> ComparisonTable:
    """Arrange reports as rows (model or scheme) by dataset columns.

    Where several reports land in one cell (a hyper-parameter grid), the one
    with the highest mean R^2 is kept.
    """
    cells = list(cells)
    if not cells:
        raise CVError("no reports to tabulate")
    if row_key == "model" and len({c.scheme for c in cells}) > 1:
        raise CVError("reports in one table must share a CV scheme")
    rows: list[str] = []
    extra_cols: list[str] = []
    best: dict = {}
    for rep in cells:
        if row_key == "model":
            kind = rep.model.split(":")[0]
            row = MODEL_LABELS.get(kind, kind)
        else:
            row = SCHEME_LABELS.get(rep.scheme, rep.scheme)
        col = rep.dataset or "none"
        if row not in rows:
            rows.append(row)
        if col not in DATASET_COLUMNS and col not in extra_cols:
            extra_cols.append(col)
        current = best.get((row, col))
        if current is None or rep.mean_r2 > current["mean_r2"]:
            best[(row, col)] = {"mean_r2": rep.mean_r2, "std_r2": rep.std_r2,
                                "missing_rate": rep.missing_rate, "model": rep.model}
    used = {c for _, c in best}
    columns = [c for c in DATASET_COLUMNS if c in used] + extra_cols
    return ComparisonTable(rows, columns, best)
