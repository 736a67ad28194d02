"""Group-conformalized quantile regression.

Raw quantile models tend to produce intervals that are miscalibrated in ways
that vary with the sales scale of the POS.  The fix applied here: hold out a
title's latest observed issues as a calibration set, bucket the calibration
observations by their own ``mean_sales_12m`` into scale groups, and add the
per-group conformal quantile of the signed prediction errors to every raw
prediction.  Errors are demand minus prediction, so a positive correction
raises supply.

The conformal quantile of n errors at level alpha is the ceil((n+1)*alpha)-th
smallest, clamped to the maximum when the rank overflows; this is the
standard split-conformal finite-sample rule.
"""

from __future__ import annotations

import bisect
import json
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from plateopt.core import reconstruct_demand
from plateopt.features import (
    ExtraProductRanking,
    FeatureRow,
    TrainingExample,
    build_features,
)
from plateopt.ingest import Dataset, TimeSlice
from plateopt.qreg import GbtHyper, GbtModel, fit_gbt, monotone_rearrange

#: Periodicities whose titles hold out their two latest issues; everything
#: less frequent holds out one.
FREQUENT_PERIODICITIES = ("weekly", "monthly", "bimonthly")

DEFAULT_GROUP_BOUNDARIES = (0.0, 1.0, 2.0, 5.0, 10.0, 50.0)

DEFAULT_ALPHA_GRID = (0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.99)


@dataclass(frozen=True)
class GroupScheme:
    """Half-open bins over mean_sales_12m; the last bin extends to infinity.

    Rows with no sales history (NaN feature) fall into the lowest group,
    where the no-history population lives.
    """

    boundaries: tuple = DEFAULT_GROUP_BOUNDARIES

    def __post_init__(self):
        b = self.boundaries
        if len(b) < 2:
            raise ValueError("need at least two group boundaries")
        if b[0] != 0.0:
            raise ValueError("first boundary must be 0 so the bins cover [0, inf)")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def n_groups(self) -> int:
        return len(self.boundaries)

    def group_of(self, mean_sales_12m: float) -> int:
        if mean_sales_12m is None or math.isnan(mean_sales_12m):
            return 0
        if mean_sales_12m < 0:
            raise ValueError("mean_sales_12m must be >= 0")
        return bisect.bisect_right(self.boundaries, mean_sales_12m) - 1


@dataclass(frozen=True)
class CalibrationSplit:
    title: str
    cal_issues: tuple            # IssueIds, latest by period_start
    cal_records: tuple           # records of those issues
    train_records: tuple         # everything else in the train view, all titles

    def cal_issue_keys(self) -> frozenset:
        return frozenset((self.title, i) for i in self.cal_issues)


def split_for_title(ds: Dataset, ts: TimeSlice, title: str) -> CalibrationSplit:
    """Hold out the latest observed issues of one title for calibration.

    Two issues for weekly/monthly/bimonthly titles, one otherwise.  The
    training remainder keeps every other title's rows.
    """
    issue_starts: dict = {}
    for r in ts.train:
        if r.title == title:
            issue_starts.setdefault(r.issue, r.period_start)
    if not issue_starts:
        raise ValueError(f"title {title!r} has no observed issues in the train view")
    periodicity = None
    for (t, i), meta in ds.issue_meta.items():
        if t == title:
            periodicity = meta.periodicity
            break
    want = 2 if periodicity in FREQUENT_PERIODICITIES else 1
    ordered = sorted(issue_starts, key=lambda i: (issue_starts[i], i))
    if len(ordered) < want:
        warnings.warn(
            f"title {title!r} has only {len(ordered)} observed issue(s); "
            f"calibration set will be smaller than {want}"
        )
    cal = tuple(ordered[-want:])
    cal_keys = {(title, i) for i in cal}
    cal_records = tuple(r for r in ts.train if (r.title, r.issue) in cal_keys)
    train_records = tuple(r for r in ts.train if (r.title, r.issue) not in cal_keys)
    return CalibrationSplit(title=title, cal_issues=cal,
                            cal_records=cal_records, train_records=train_records)


def conformal_quantile(errors: Sequence[float], alpha: float) -> float:
    """ceil((n+1)*alpha)-th smallest error, clamped to the maximum."""
    if not errors:
        raise ValueError("cannot take a conformal quantile of no errors")
    ordered = sorted(errors)
    n = len(ordered)
    rank = math.ceil((n + 1) * alpha)
    if rank > n:
        return ordered[-1]
    return ordered[rank - 1]


@dataclass(frozen=True)
class CorrectionTable:
    """Per (group, alpha) additive corrections with calibration counts.

    Groups that received no calibration rows are flagged; lookups on them
    fall back to the pooled all-group correction.
    """

    n_groups: int
    alphas: tuple
    corrections: dict            # (group, alpha) -> float
    counts: dict                 # group -> int
    pooled: dict                 # alpha -> float

    def empty_groups(self) -> frozenset:
        return frozenset(g for g in range(self.n_groups) if self.counts.get(g, 0) == 0)

    def correction(self, group: int, alpha: float) -> float:
        if self.counts.get(group, 0) == 0:
            return self.pooled[alpha]
        return self.corrections[(group, alpha)]

    def to_dict(self) -> dict:
        return {
            "n_groups": self.n_groups,
            "alphas": list(self.alphas),
            "corrections": [
                {"group": g, "alpha": a, "q": q}
                for (g, a), q in sorted(self.corrections.items())
            ],
            "counts": {str(g): n for g, n in sorted(self.counts.items())},
            "pooled": {repr(a): q for a, q in sorted(self.pooled.items())},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CorrectionTable":
        return cls(
            n_groups=doc["n_groups"],
            alphas=tuple(doc["alphas"]),
            corrections={(c["group"], c["alpha"]): c["q"] for c in doc["corrections"]},
            counts={int(g): n for g, n in doc["counts"].items()},
            pooled={float(a): q for a, q in doc["pooled"].items()},
        )


def calibrate(models: Mapping[float, GbtModel], split: CalibrationSplit,
              ds: Dataset, scheme: GroupScheme, r_pct: float, *,
              ranking: ExtraProductRanking, holidays: frozenset,
              cal_rows: Optional[Sequence[FeatureRow]] = None) -> CorrectionTable:
    """Turn calibration-set prediction errors into per-group corrections.

    Refuses models whose training manifest intersects the calibration
    issues: a model that saw its calibration rows gives corrections with no
    coverage guarantee.
    """
    if not split.cal_records:
        raise ValueError(f"calibration set for {split.title!r} is empty")
    cal_keys = split.cal_issue_keys()
    for alpha, model in models.items():
        overlap = model.trained_on & cal_keys
        if overlap:
            raise ValueError(
                f"model for alpha={alpha} was trained on calibration issues "
                f"{sorted(overlap)}; refusing to calibrate"
            )
    if cal_rows is None:
        cal_rows = []
        for r in split.cal_records:
            meta = ds.issue_meta[(r.title, r.issue)]
            cal_rows.append(build_features(ds, r.key(), meta.period_start,
                                           ranking, holidays))
    targets = np.asarray([reconstruct_demand(r, r_pct) for r in split.cal_records])
    groups = [scheme.group_of(row.mean_sales_12m) for row in cal_rows]

    alphas = tuple(sorted(models))
    corrections: dict = {}
    counts: dict = {g: 0 for g in range(scheme.n_groups)}
    for g in groups:
        counts[g] += 1
    pooled: dict = {}
    for alpha in alphas:
        raw = models[alpha].predict_rows(cal_rows)
        errors = targets - raw
        pooled[alpha] = conformal_quantile(errors.tolist(), alpha)
        for g in range(scheme.n_groups):
            err_g = [e for e, gg in zip(errors.tolist(), groups) if gg == g]
            if err_g:
                corrections[(g, alpha)] = conformal_quantile(err_g, alpha)
            else:
                corrections[(g, alpha)] = 0.0
    return CorrectionTable(n_groups=scheme.n_groups, alphas=alphas,
                           corrections=corrections, counts=counts, pooled=pooled)


def calibrate_pooled(models_by_title: Mapping[str, Mapping[float, GbtModel]],
                     splits: Mapping[str, CalibrationSplit], ds: Dataset,
                     scheme: GroupScheme, r_pct: float, *,
                     ranking: ExtraProductRanking,
                     holidays: frozenset) -> CorrectionTable:
    """One correction table from every title's calibration set at once.

    Grouping by sales scale already separates the populations the
    corrections must distinguish, so pooling observations across titles
    buys much larger per-group calibration counts (and stabler tail
    quantiles) without mixing scales.
    """
    all_errors: dict = {}
    alphas: Optional[tuple] = None
    groups_all = []
    for title in sorted(splits):
        split = splits[title]
        models = models_by_title[title]
        if alphas is None:
            alphas = tuple(sorted(models))
        if not split.cal_records:
            raise ValueError(f"calibration set for {title!r} is empty")
        cal_keys = split.cal_issue_keys()
        for alpha, model in models.items():
            overlap = model.trained_on & cal_keys
            if overlap:
                raise ValueError(
                    f"model for alpha={alpha} was trained on calibration "
                    f"issues {sorted(overlap)}; refusing to calibrate"
                )
        rows = []
        for r in split.cal_records:
            meta = ds.issue_meta[(r.title, r.issue)]
            rows.append(build_features(ds, r.key(), meta.period_start,
                                       ranking, holidays))
        targets = np.asarray([reconstruct_demand(r, r_pct)
                              for r in split.cal_records])
        groups_all.extend(scheme.group_of(row.mean_sales_12m) for row in rows)
        for alpha in alphas:
            raw = models[alpha].predict_rows(rows)
            all_errors.setdefault(alpha, []).extend((targets - raw).tolist())

    counts = {g: 0 for g in range(scheme.n_groups)}
    for g in groups_all:
        counts[g] += 1
    corrections: dict = {}
    pooled: dict = {}
    for alpha in alphas:
        errors = all_errors[alpha]
        pooled[alpha] = conformal_quantile(errors, alpha)
        for g in range(scheme.n_groups):
            err_g = [e for e, gg in zip(errors, groups_all) if gg == g]
            corrections[(g, alpha)] = (
                conformal_quantile(err_g, alpha) if err_g else 0.0
            )
    return CorrectionTable(n_groups=scheme.n_groups, alphas=alphas,
                           corrections=corrections, counts=counts, pooled=pooled)


@dataclass(frozen=True)
class CalibratedQuantileModel:
    """Per-alpha raw models plus the conformal correction table for one title."""

    title: str
    alpha_grid: tuple
    models: dict                 # alpha -> GbtModel
    scheme: GroupScheme
    corrections: CorrectionTable

    def __post_init__(self):
        missing = [a for a in self.alpha_grid if a not in self.models]
        if missing:
            raise ValueError(f"no model for grid alphas {missing}")

    def trained_on(self) -> frozenset:
        out = frozenset()
        for m in self.models.values():
            out |= m.trained_on
        return out

    def to_json(self) -> str:
        doc = {
            "format": "plateopt-gcqr",
            "version": 1,
            "title": self.title,
            "alpha_grid": list(self.alpha_grid),
            "scheme": list(self.scheme.boundaries),
            "corrections": self.corrections.to_dict(),
            "models": {repr(a): json.loads(m.to_json())
                       for a, m in sorted(self.models.items())},
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibratedQuantileModel":
        doc = json.loads(text)
        if doc.get("format") != "plateopt-gcqr":
            raise ValueError("not a serialized calibrated model")
        models = {
            float(a): GbtModel.from_json(json.dumps(m))
            for a, m in doc["models"].items()
        }
        return cls(
            title=doc["title"],
            alpha_grid=tuple(doc["alpha_grid"]),
            models=models,
            scheme=GroupScheme(tuple(doc["scheme"])),
            corrections=CorrectionTable.from_dict(doc["corrections"]),
        )


def predict_calibrated(model: CalibratedQuantileModel, row: FeatureRow,
                       alpha: float) -> float:
    """Raw prediction plus the row's group correction, clamped at zero."""
    if alpha not in model.alpha_grid:
        raise ValueError(f"alpha {alpha} is not in the model grid {model.alpha_grid}")
    raw = model.models[alpha].predict(row)
    g = model.scheme.group_of(row.mean_sales_12m)
    return max(0.0, raw + model.corrections.correction(g, alpha))


def predict_calibrated_grid(model: CalibratedQuantileModel,
                            row: FeatureRow) -> dict:
    """Corrected predictions for the whole grid, crossing-repaired."""
    preds = {a: predict_calibrated(model, row, a) for a in model.alpha_grid}
    return monotone_rearrange(preds)


def calibrated_grid_matrix(model: CalibratedQuantileModel,
                           rows: Sequence[FeatureRow]) -> np.ndarray:
    """Grid predictions for many rows at once: shape (n_rows, n_alphas),
    columns ordered by the grid, rows monotone after crossing repair."""
    n = len(rows)
    grid = model.alpha_grid
    out = np.empty((n, len(grid)), dtype=np.float64)
    groups = np.asarray([model.scheme.group_of(r.mean_sales_12m) for r in rows])
    encoder = model.models[grid[0]].encoder
    X = encoder.encode_matrix(rows)
    for j, alpha in enumerate(grid):
        m = model.models[alpha]
        raw = m.predict_matrix(X) if m.encoder is encoder else m.predict_rows(rows)
        corr = np.asarray([model.corrections.correction(int(g), alpha) for g in groups])
        out[:, j] = np.maximum(0.0, raw + corr)
    out.sort(axis=1)  # monotone rearrangement per row
    return out


def fit_calibrated_model(ds: Dataset, ts: TimeSlice, title: str, *,
                         ranking: ExtraProductRanking, holidays: frozenset,
                         r_pct: float, alpha_grid: tuple = DEFAULT_ALPHA_GRID,
                         hyper: GbtHyper = GbtHyper(),
                         scheme: GroupScheme = GroupScheme(),
                         shared_models: Optional[Mapping[float, GbtModel]] = None,
                         train_examples: Optional[Sequence[TrainingExample]] = None,
                         ) -> CalibratedQuantileModel:
    """Run the full calibration pipeline for one title.

    ``shared_models`` short-circuits the per-title training with models fit
    once across titles (they must not have seen this title's calibration
    issues).  ``train_examples`` lets callers reuse a precomputed feature
    matrix covering the train view.
    """
    split = split_for_title(ds, ts, title)
    if shared_models is not None:
        models = dict(shared_models)
    else:
        cal_keys = split.cal_issue_keys()
        if train_examples is None:
            from plateopt.features import build_training_matrix
            sub = TimeSlice(cutoff=ts.cutoff, train=split.train_records,
                            test=(), straddling=())
            train_examples = build_training_matrix(ds, sub, ranking, holidays, r_pct)
        rows = [e for e in train_examples
                if (e.key[0], e.key[1]) not in cal_keys]
        models = {a: fit_gbt(rows, a, hyper) for a in alpha_grid}
    corrections = calibrate(models, split, ds, scheme, r_pct,
                            ranking=ranking, holidays=holidays)
    return CalibratedQuantileModel(title=title, alpha_grid=tuple(alpha_grid),
                                   models=models, scheme=scheme,
                                   corrections=corrections)


def calibration_report_csv(models: Sequence[CalibratedQuantileModel]) -> str:
    """Audit export: title,group,alpha,n,q."""
    lines = ["title,group,alpha,n,q"]
    for m in models:
        t = m.corrections
        for g in range(t.n_groups):
            for a in t.alphas:
                lines.append(
                    f"{m.title},{g},{a},{t.counts.get(g, 0)},{t.correction(g, a)!r}"
                )
    return "\n".join(lines) + "\n"
