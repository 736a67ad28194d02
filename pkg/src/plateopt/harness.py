"""Backtest and plan-evaluation pipelines.

``backtest`` reproduces the demand-sensing comparison: train every model
variant on the records available at a cutoff date, score mean pinball loss
per quantile level on the test period.  ``plan_eval`` carries the comparison
through the optimizer: for every test issue it prices the actual historical
plan, a proportionally-scaled quantile-regression baseline, and the two
optimizer plans against realized demand, reporting totals normalized to the
historical plan.

Reports embed a manifest hash (config + input data digests) and are written
with stable ordering and float formatting, so a rerun from the same
manifest is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, replace
from datetime import date
from decimal import Decimal
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from plateopt import __version__
from plateopt.core import (
    CostConfig,
    DEFAULT_COST_CONFIG,
    IssueMeta,
    censor,
    plan_kpis,
    reconstruct_demand,
)
from plateopt.features import (
    ExtraProductRanking,
    build_features,
    build_training_matrix,
    rank_extra_products,
)
from plateopt.gcqr import (
    CalibratedQuantileModel,
    DEFAULT_ALPHA_GRID,
    GroupScheme,
    calibrate,
    calibrate_pooled,
    split_for_title,
)
from plateopt.ingest import Dataset, TimeSlice, slice as time_slice
from plateopt.optimizer import (
    OPTIMAL_DISTRIBUTION_LABEL,
    OPTIMAL_SUPPLY_LABEL,
    PlanSet,
    ReplayContext,
    emit_plans,
    enumerate_scenarios,
    replay,
    select_optimal,
)
from plateopt.qreg import BaselineModel, GbtHyper, HistoryContext, fit_gbt, pinball, predict
from plateopt.rules import largest_remainder
from plateopt.synth import GroundTruth

EVAL_ALPHAS = (0.65, 0.75, 0.85, 0.95, 0.99)

VARIANT_ORDER = ("naive", "s_naive", "gbt_no_refs", "gbt_linear", "gbt_log",
                 "gbt_log_gcqr")

PLAN_ROW_ORDER = ("real", "qr_scaled_baseline", OPTIMAL_DISTRIBUTION_LABEL,
                  OPTIMAL_SUPPLY_LABEL)


@dataclass(frozen=True)
class HarnessConfig:
    r_pct: float = 30.0
    eval_alphas: tuple = EVAL_ALPHAS
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    group_boundaries: tuple = GroupScheme().boundaries
    hyper: GbtHyper = GbtHyper(n_trees=80, max_depth=5, min_leaf=20,
                               learning_rate=0.1)
    shared_models: bool = True
    pooled_corrections: bool = True
    scenario_budget: int = 40
    baseline_alpha: float = 0.75
    cost: CostConfig = DEFAULT_COST_CONFIG

    def scheme(self) -> GroupScheme:
        return GroupScheme(tuple(self.group_boundaries))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def build_manifest(config_doc: dict, data_files: Mapping[str, str],
                   seed: Optional[int] = None) -> dict:
    canonical = json.dumps(config_doc, sort_keys=True, default=str)
    return {
        "version": __version__,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "data_sha256": dict(sorted(data_files.items())),
        "seed": seed,
    }


def manifest_hash(manifest: dict) -> str:
    canonical = json.dumps(manifest, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EvalReport:
    cutoff: date
    n_test_rows: int
    skipped_titles: tuple
    losses: dict          # variant -> {alpha: loss, "mean": loss}
    manifest_hash: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        alphas = sorted(a for a in next(iter(self.losses.values())) if a != "mean")
        w.writerow(["model"] + [f"alpha={a}" for a in alphas] + ["mean"])
        for name in VARIANT_ORDER:
            if name not in self.losses:
                continue
            row = self.losses[name]
            w.writerow([name] + [f"{row[a]:.6f}" for a in alphas]
                       + [f"{row['mean']:.6f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "cutoff": self.cutoff.isoformat(),
            "n_test_rows": self.n_test_rows,
            "skipped_titles": list(self.skipped_titles),
            "manifest_hash": self.manifest_hash,
            "losses": {
                name: {str(a): v for a, v in sorted(row.items(), key=lambda kv: str(kv[0]))}
                for name, row in sorted(self.losses.items())
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _shared_model_training(ds, ts, titles, config, ranking, holidays,
                           examples=None):
    """Per-alpha models trained once on the train view minus every title's
    calibration issues, so one set serves all titles' calibration."""
    cal_union = set()
    for title in titles:
        cal_union |= split_for_title(ds, ts, title).cal_issue_keys()
    if examples is None:
        examples = build_training_matrix(ds, ts, ranking, holidays, config.r_pct)
    rows = [e for e in examples if (e.key[0], e.key[1]) not in cal_union]
    models = {a: fit_gbt(rows, a, config.hyper) for a in config.alpha_grid}
    return models, examples


def train_gcqr_bundles(ds: Dataset, ts: TimeSlice, config: HarnessConfig,
                       ranking: ExtraProductRanking, holidays: frozenset,
                       titles: Optional[Sequence[str]] = None,
                       examples=None) -> dict:
    """Calibrated model per title; shared raw models when configured."""
    if titles is None:
        titles = sorted({r.title for r in ts.train})
    scheme = config.scheme()
    bundles = {}
    if config.shared_models:
        shared, _ = _shared_model_training(ds, ts, titles, config, ranking,
                                           holidays, examples=examples)
        pooled_table = None
        if config.pooled_corrections:
            splits = {t: split_for_title(ds, ts, t) for t in titles}
            pooled_table = calibrate_pooled(
                {t: shared for t in titles}, splits, ds, scheme, config.r_pct,
                ranking=ranking, holidays=holidays)
        for title in titles:
            if pooled_table is not None:
                corrections = pooled_table
            else:
                split = split_for_title(ds, ts, title)
                corrections = calibrate(shared, split, ds, scheme, config.r_pct,
                                        ranking=ranking, holidays=holidays)
            bundles[title] = CalibratedQuantileModel(
                title=title, alpha_grid=config.alpha_grid, models=dict(shared),
                scheme=scheme, corrections=corrections)
    else:
        if examples is None:
            examples = build_training_matrix(ds, ts, ranking, holidays,
                                             config.r_pct)
        for title in titles:
            split = split_for_title(ds, ts, title)
            cal_keys = split.cal_issue_keys()
            rows = [e for e in examples if (e.key[0], e.key[1]) not in cal_keys]
            models = {a: fit_gbt(rows, a, config.hyper) for a in config.alpha_grid}
            corrections = calibrate(models, split, ds, scheme, config.r_pct,
                                    ranking=ranking, holidays=holidays)
            bundles[title] = CalibratedQuantileModel(
                title=title, alpha_grid=config.alpha_grid, models=models,
                scheme=scheme, corrections=corrections)
    return bundles


def backtest(ds: Dataset, cutoff: date, config: HarnessConfig,
             holidays: frozenset, manifest: str = "") -> EvalReport:
    """Train all model variants as of the cutoff; report mean pinball loss
    per quantile level on the test period."""
    ts = time_slice(ds, cutoff)
    if not ts.train:
        raise ValueError("train view is empty at this cutoff")
    if not ts.test:
        raise ValueError("test view is empty at this cutoff")
    ranking = rank_extra_products(ds, ts, config.cost)

    trained_titles = {r.title for r in ts.train}
    skipped = tuple(sorted({r.title for r in ts.test} - trained_titles))
    test_records = [r for r in ts.test if r.title in trained_titles]
    test_rows = []
    targets = []
    for r in test_records:
        meta = ds.issue_meta[(r.title, r.issue)]
        test_rows.append(build_features(ds, r.key(), meta.period_start,
                                        ranking, holidays))
        targets.append(reconstruct_demand(r, config.r_pct))
    targets = np.asarray(targets)

    examples = build_training_matrix(ds, ts, ranking, holidays, config.r_pct)

    losses: dict = {}

    # point-forecast baselines are constant across alpha
    for kind in ("naive", "s_naive"):
        model = BaselineModel(kind)
        preds = np.asarray([
            predict(model, HistoryContext(
                ds, r.title, r.pos,
                ds.issue_meta[(r.title, r.issue)].period_start,
                target_start=ds.issue_meta[(r.title, r.issue)].period_start))
            for r in test_records
        ])
        losses[kind] = _loss_row(config.eval_alphas, targets,
                                 {a: preds for a in config.eval_alphas})

    variants = {
        "gbt_no_refs": replace(config.hyper, transform="log1p",
                               exclude_features=("mean_ref", "max_ref")),
        "gbt_linear": replace(config.hyper, transform="identity",
                              exclude_features=()),
        "gbt_log": replace(config.hyper, transform="log1p",
                           exclude_features=()),
    }
    for name, hyper in variants.items():
        preds_by_alpha = {}
        for alpha in config.eval_alphas:
            model = fit_gbt(examples, alpha, hyper)
            preds_by_alpha[alpha] = model.predict_rows(test_rows)
        losses[name] = _loss_row(config.eval_alphas, targets, preds_by_alpha)

    # the calibrated variant only needs models at the evaluation alphas here
    eval_config = replace(config, alpha_grid=tuple(sorted(config.eval_alphas)))
    bundles = train_gcqr_bundles(ds, ts, eval_config, ranking, holidays,
                                 titles=sorted(trained_titles),
                                 examples=examples)
    preds_by_alpha = {a: np.zeros(len(test_records)) for a in config.eval_alphas}
    for title in sorted(trained_titles):
        idx = [i for i, r in enumerate(test_records) if r.title == title]
        if not idx:
            continue
        bundle = bundles[title]
        rows = [test_rows[i] for i in idx]
        groups = [bundle.scheme.group_of(r.mean_sales_12m) for r in rows]
        encoder = bundle.models[bundle.alpha_grid[0]].encoder
        X = encoder.encode_matrix(rows)
        for alpha in config.eval_alphas:
            raw = bundle.models[alpha].predict_matrix(X)
            corr = np.asarray([bundle.corrections.correction(g, alpha)
                               for g in groups])
            preds = np.maximum(0.0, raw + corr)
            for j, i in enumerate(idx):
                preds_by_alpha[alpha][i] = preds[j]
    losses["gbt_log_gcqr"] = _loss_row(config.eval_alphas, targets, preds_by_alpha)

    return EvalReport(cutoff=cutoff, n_test_rows=len(test_records),
                      skipped_titles=skipped, losses=losses,
                      manifest_hash=manifest)


def _loss_row(alphas, targets, preds_by_alpha) -> dict:
    row = {}
    for a in alphas:
        preds = preds_by_alpha[a]
        row[a] = float(np.mean([pinball(a, d, p) for d, p in zip(targets, preds)]))
    row["mean"] = float(np.mean([row[a] for a in alphas]))
    return row


@dataclass(frozen=True)
class PlanReport:
    cutoff: date
    n_issues: int
    totals: dict            # plan name -> {"supply": int, "profit": Decimal, "oos": int}
    conformance: float      # share of issues whose distribution plan is in band
    skipped_titles: tuple
    manifest_hash: str = ""

    def pct(self, plan: str, metric: str) -> float:
        real = self.totals["real"][metric]
        ours = self.totals[plan][metric]
        if float(real) == 0.0:
            return float("nan")
        return float(ours) / float(real) * 100.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["plan", "total_supply", "supply_pct", "profit",
                    "profit_pct", "oos", "oos_pct"])
        for name in PLAN_ROW_ORDER:
            t = self.totals[name]
            w.writerow([
                name, t["supply"], f"{self.pct(name, 'supply'):.2f}",
                str(t["profit"]), f"{self.pct(name, 'profit'):.2f}",
                t["oos"], f"{self.pct(name, 'oos'):.2f}",
            ])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "cutoff": self.cutoff.isoformat(),
            "n_issues": self.n_issues,
            "constraint_conformance": self.conformance,
            "skipped_titles": list(self.skipped_titles),
            "manifest_hash": self.manifest_hash,
            "plans": {
                name: {
                    "total_supply": t["supply"],
                    "profit": str(t["profit"]),
                    "oos": t["oos"],
                    "supply_pct": self.pct(name, "supply"),
                    "profit_pct": self.pct(name, "profit"),
                    "oos_pct": self.pct(name, "oos"),
                }
                for name, t in sorted(self.totals.items())
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)


@dataclass(frozen=True)
class TitlePlanner:
    """Everything needed to plan any issue of one title at a given cutoff."""

    bundle: CalibratedQuantileModel
    ctx: ReplayContext
    scores: tuple
    price: Decimal


def prepare_title_planner(ds: Dataset, ts: TimeSlice, title: str,
                          bundle: CalibratedQuantileModel,
                          config: HarnessConfig, ranking: ExtraProductRanking,
                          holidays: frozenset) -> TitlePlanner:
    split = split_for_title(ds, ts, title)
    ctx = ReplayContext.build(bundle, split, ds, ranking=ranking,
                              holidays=holidays)
    price = ds.issue_meta[(title, split.cal_issues[-1])].price
    scenarios = enumerate_scenarios(config.alpha_grid,
                                    bundle.scheme.n_groups,
                                    config.scenario_budget)
    scores = tuple(
        replay(sc, bundle, split, ds, price, config.cost, ctx=ctx)
        for sc in scenarios
    )
    return TitlePlanner(bundle=bundle, ctx=ctx, scores=scores, price=price)


def plan_issue(planner: TitlePlanner, ds: Dataset, meta: IssueMeta,
               config: HarnessConfig, ranking: ExtraProductRanking,
               holidays: frozenset,
               plate: Optional[Sequence[str]] = None) -> PlanSet:
    """Scenario selection plus plan emission for one issue."""
    if plate is None:
        plate = sorted(ds.pos_meta)
    selected = select_optimal(list(planner.scores), meta.n_total, meta.delta)
    features = {
        pos: build_features(ds, (meta.title, meta.issue, pos),
                            meta.period_start, ranking, holidays)
        for pos in plate
    }
    return emit_plans(planner.bundle, meta, plate, features, selected,
                      config.cost)


def _baseline_plan(planner: TitlePlanner, ds: Dataset, meta: IssueMeta,
                   config: HarnessConfig, plate: Sequence[str],
                   features: Mapping) -> dict:
    """Quantile regression at the baseline alpha, proportionally rescaled to
    the supply constraint."""
    grid = planner.bundle.alpha_grid
    alpha = min(grid, key=lambda a: (abs(a - config.baseline_alpha), a))
    model = planner.bundle.models[alpha]
    rows = [features[pos] for pos in plate]
    preds = model.predict_rows(rows)
    alloc = {pos: int(math.ceil(p)) for pos, p in zip(plate, preds)}
    total = sum(alloc.values())
    if total > 0 and total != meta.n_total:
        alloc = largest_remainder(alloc, meta.n_total)
    return alloc


def plan_eval(ds: Dataset, cutoff: date, config: HarnessConfig,
              holidays: frozenset, gt: Optional[GroundTruth] = None,
              manifest: str = "") -> PlanReport:
    """Score optimizer plans against the historical plan on the test period.

    With ground truth (synthetic runs) realized sales of a candidate plan
    are censor(true demand, allocation); on real data the recorded sales
    cap them instead (demand beyond the historical supply is unobservable).
    """
    ts = time_slice(ds, cutoff)
    if not ts.test:
        raise ValueError("test view is empty at this cutoff")
    ranking = rank_extra_products(ds, ts, config.cost)
    trained_titles = {r.title for r in ts.train}
    test_issues = sorted({(r.title, r.issue) for r in ts.test})
    skipped = tuple(sorted({t for t, _ in test_issues} - trained_titles))

    bundles = train_gcqr_bundles(ds, ts, config, ranking, holidays,
                                 titles=sorted(trained_titles))
    planners = {
        title: prepare_title_planner(ds, ts, title, bundles[title], config,
                                     ranking, holidays)
        for title in sorted(trained_titles)
    }

    zero = {"supply": 0, "profit": Decimal("0"), "oos": 0}
    totals = {name: dict(zero) for name in PLAN_ROW_ORDER}
    in_band = 0
    n_issues = 0
    for title, issue in test_issues:
        if title not in planners:
            continue
        meta = ds.issue_meta[(title, issue)]
        issue_records = {r.pos: r for r in ds.issue_records(title, issue)
                         if r.period_start >= cutoff}
        if not issue_records:
            continue
        plate = sorted(issue_records)
        planner = planners[title]
        features = {
            pos: build_features(ds, (title, issue, pos), meta.period_start,
                                ranking, holidays)
            for pos in plate
        }
        selected = select_optimal(list(planner.scores), meta.n_total, meta.delta)
        plan_set = emit_plans(planner.bundle, meta, plate, features, selected,
                              config.cost)
        baseline_alloc = _baseline_plan(planner, ds, meta, config, plate, features)
        real_alloc = {pos: issue_records[pos].supply for pos in plate}

        candidates = {
            "real": real_alloc,
            "qr_scaled_baseline": baseline_alloc,
            OPTIMAL_DISTRIBUTION_LABEL: plan_set.optimal_distribution_plan.allocations,
            OPTIMAL_SUPPLY_LABEL: plan_set.optimal_supply_plan.allocations,
        }
        for name, alloc in candidates.items():
            if gt is not None:
                sales = {pos: censor(gt.demand((title, issue, pos)), alloc[pos])
                         for pos in plate}
            elif name == "real":
                sales = {pos: issue_records[pos].sales for pos in plate}
            else:
                sales = {pos: min(issue_records[pos].sales, alloc[pos])
                         for pos in plate}
            kpis = plan_kpis(alloc, sales, meta.price, config.cost)
            totals[name]["supply"] += kpis.total_supply
            totals[name]["profit"] += kpis.profit
            totals[name]["oos"] += kpis.oos_count
        dist_total = plan_set.optimal_distribution_plan.total_supply
        if meta.n_total - meta.delta <= dist_total <= meta.n_total + meta.delta:
            in_band += 1
        n_issues += 1

    if n_issues == 0:
        raise ValueError("no test issues could be planned")
    return PlanReport(cutoff=cutoff, n_issues=n_issues, totals=totals,
                      conformance=in_band / n_issues, skipped_titles=skipped,
                      manifest_hash=manifest)
