"""plate-opt: command line driver for the whole pipeline.

Every subcommand reads one TOML config file (plus a few flag overrides) and
writes its outputs under ``out/<run-id>/`` together with a manifest of
config and input-data digests, so any report can be regenerated bit for bit
from the same directory.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import date
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from plateopt import __version__, ingest
from plateopt.core import CostConfig, DEFAULT_COST_CONFIG
from plateopt.features import load_holidays, rank_extra_products
from plateopt.gcqr import DEFAULT_ALPHA_GRID, GroupScheme, calibration_report_csv
from plateopt.harness import (
    HarnessConfig,
    backtest,
    build_manifest,
    file_sha256,
    manifest_hash,
    plan_eval,
    plan_issue,
    prepare_title_planner,
    train_gcqr_bundles,
)
from plateopt.ingest import ValidationError
from plateopt.optimizer import frontier_csv
from plateopt.qreg import GbtHyper
from plateopt.rules import apply_rules, parse_rules, reconcile_constraint
from plateopt.synth import GeneratorSpec, load_ground_truth, write_world

DATA_FILES = ("sales.csv", "pos.csv", "issues.jsonl")


class CliError(Exception):
    """Validation-level failure: exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"{p}: invalid TOML: {exc}")


def harness_config_from(doc: dict) -> HarnessConfig:
    model = doc.get("model", {})
    gcqr = doc.get("gcqr", {})
    opt = doc.get("optimizer", {})
    cost_path = doc.get("data", {}).get("cost_config")
    cost = DEFAULT_COST_CONFIG
    if cost_path:
        try:
            cost = CostConfig.from_json(Path(cost_path).read_text())
        except (OSError, ValueError) as exc:
            raise CliError(f"data.cost_config: {exc}")
    hyper = GbtHyper(
        n_trees=int(model.get("n_trees", 150)),
        max_depth=int(model.get("max_depth", 6)),
        min_leaf=int(model.get("min_leaf", 20)),
        learning_rate=float(model.get("learning_rate", 0.1)),
        transform=model.get("transform", "log1p"),
        max_bins=int(model.get("max_bins", 64)),
        seed=int(model.get("seed", 0)),
    )
    return HarnessConfig(
        r_pct=float(doc.get("r_pct", 30.0)),
        alpha_grid=tuple(gcqr.get("alpha_grid", DEFAULT_ALPHA_GRID)),
        group_boundaries=tuple(gcqr.get("group_boundaries",
                                        GroupScheme().boundaries)),
        hyper=hyper,
        shared_models=bool(gcqr.get("shared_models", True)),
        pooled_corrections=bool(gcqr.get("pooled_corrections", True)),
        scenario_budget=int(opt.get("scenario_budget", 60)),
        baseline_alpha=float(opt.get("baseline_alpha", 0.75)),
        cost=cost,
    )


def _load_world(doc: dict):
    data = doc.get("data", {})
    data_dir = data.get("dir")
    if not data_dir:
        raise CliError("config is missing [data] dir")
    data_dir = Path(data_dir)
    try:
        ds = ingest.load_dir(data_dir)
    except (OSError, ValidationError) as exc:
        raise CliError(str(exc))
    holidays_path = data.get("holidays", data_dir / "holidays.txt")
    holidays = frozenset()
    if Path(holidays_path).exists():
        holidays = load_holidays(holidays_path)
    return ds, holidays, data_dir


def _run_dir(doc: dict, manifest: dict) -> Path:
    out_root = Path(doc.get("out", "out"))
    run = out_root / manifest_hash(manifest)
    run.mkdir(parents=True, exist_ok=True)
    (run / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return run


def _manifest(doc: dict, data_dir: Path, seed=None) -> dict:
    digests = {}
    for name in DATA_FILES + ("holidays.txt", "groundtruth.jsonl",
                              "cost_config.json"):
        p = data_dir / name
        if p.exists():
            digests[name] = file_sha256(p)
    return build_manifest(doc, digests, seed=seed)


def cmd_generate(args) -> int:
    doc = load_config(args.spec) if args.spec else {}
    gen = doc.get("generator", {})
    if args.seed is not None:
        gen["seed"] = args.seed
    try:
        spec = GeneratorSpec.from_dict(gen) if gen else GeneratorSpec()
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid generator spec: {exc}")
    write_world(spec, args.out)
    print(f"wrote synthetic world to {args.out} (seed={spec.seed})")
    return 0


def cmd_validate(args) -> int:
    try:
        ds = ingest.load_dir(args.data_dir)
    except (OSError, ValidationError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    lo, hi = ds.date_range()
    print(f"ok: {len(ds.records)} records, {len(ds.pos_meta)} POSes, "
          f"{len(ds.issue_meta)} issues, {lo}..{hi}")
    return 0


def _cutoff(doc: dict, args) -> date:
    raw = getattr(args, "cutoff", None) or doc.get("cutoff")
    if not raw:
        raise CliError("no cutoff date given (flag --cutoff or config key)")
    try:
        return date.fromisoformat(str(raw))
    except ValueError:
        raise CliError(f"invalid cutoff date: {raw!r}")


def _prepared(doc, args):
    ds, holidays, data_dir = _load_world(doc)
    cutoff = _cutoff(doc, args)
    config = harness_config_from(doc)
    ts = ingest.slice(ds, cutoff)
    if not ts.train:
        raise CliError(f"no training data before cutoff {cutoff}")
    ranking = rank_extra_products(ds, ts, config.cost)
    return ds, holidays, data_dir, cutoff, config, ts, ranking


def cmd_train(args) -> int:
    doc = load_config(args.config)
    ds, holidays, data_dir, cutoff, config, ts, ranking = _prepared(doc, args)
    manifest = _manifest(doc, data_dir)
    run = _run_dir(doc, manifest)
    bundles = train_gcqr_bundles(ds, ts, config, ranking, holidays)
    models_dir = run / "models"
    models_dir.mkdir(exist_ok=True)
    for title, bundle in sorted(bundles.items()):
        (models_dir / f"{title}.json").write_text(bundle.to_json(),
                                                  encoding="utf-8")
    print(f"trained {len(bundles)} title bundle(s) -> {models_dir}")
    return 0


def cmd_calibrate(args) -> int:
    doc = load_config(args.config)
    ds, holidays, data_dir, cutoff, config, ts, ranking = _prepared(doc, args)
    manifest = _manifest(doc, data_dir)
    run = _run_dir(doc, manifest)
    bundles = train_gcqr_bundles(ds, ts, config, ranking, holidays)
    report = calibration_report_csv([bundles[t] for t in sorted(bundles)])
    path = run / "calibration.csv"
    path.write_text(report, encoding="utf-8")
    print(f"wrote calibration report -> {path}")
    return 0


def cmd_plan(args) -> int:
    doc = load_config(args.config)
    ds, holidays, data_dir, cutoff, config, ts, ranking = _prepared(doc, args)
    key = (args.title, args.issue)
    meta = ds.issue_meta.get(key)
    if meta is None:
        raise CliError(f"unknown issue {key}")
    manifest = _manifest(doc, data_dir)
    run = _run_dir(doc, manifest)
    bundles = train_gcqr_bundles(ds, ts, config, ranking, holidays,
                                 titles=[args.title])
    planner = prepare_title_planner(ds, ts, args.title, bundles[args.title],
                                    config, ranking, holidays)
    plate = sorted({r.pos for r in ds.issue_records(args.title, args.issue)}
                   or ds.pos_meta)
    plans = plan_issue(planner, ds, meta, config, ranking, holidays, plate=plate)
    plan_dir = run / "plans" / f"{args.title}_{args.issue}"
    plan_dir.mkdir(parents=True, exist_ok=True)
    for plan in (plans.optimal_supply_plan, plans.optimal_distribution_plan):
        (plan_dir / f"{plan.label}.csv").write_text(plan.to_csv(), encoding="utf-8")
        (plan_dir / f"{plan.label}.kpis.json").write_text(
            plan.kpi_sidecar() + "\n", encoding="utf-8")
    (plan_dir / "frontier.csv").write_text(
        frontier_csv(list(plans.scenario_frontier)), encoding="utf-8")
    print(f"wrote plans ({plans.constraint_status}) -> {plan_dir}")
    return 0


def cmd_rules(args) -> int:
    doc = load_config(args.config)
    ds, holidays, data_dir, cutoff, config, ts, ranking = _prepared(doc, args)
    try:
        rules = parse_rules(Path(args.rules).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CliError(f"rules file: {exc}")
    key = (args.title, args.issue)
    meta = ds.issue_meta.get(key)
    if meta is None:
        raise CliError(f"unknown issue {key}")
    bundles = train_gcqr_bundles(ds, ts, config, ranking, holidays,
                                 titles=[args.title])
    planner = prepare_title_planner(ds, ts, args.title, bundles[args.title],
                                    config, ranking, holidays)
    plate = sorted({r.pos for r in ds.issue_records(args.title, args.issue)}
                   or ds.pos_meta)
    plans = plan_issue(planner, ds, meta, config, ranking, holidays, plate=plate)
    plan = plans.optimal_supply_plan if args.plan == "optimal_supply" \
        else plans.optimal_distribution_plan
    adjusted, report = apply_rules(plan, ds, rules, cfg=config.cost)
    if args.reconcile and not (
            meta.n_total - meta.delta <= adjusted.total_supply
            <= meta.n_total + meta.delta):
        adjusted = reconcile_constraint(adjusted, meta.n_total, meta.delta,
                                        mode=args.reconcile, ds=ds,
                                        cfg=config.cost)
    manifest = _manifest(doc, data_dir)
    run = _run_dir(doc, manifest)
    out_dir = run / "plans" / f"{args.title}_{args.issue}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{plan.label}.adjusted.csv").write_text(adjusted.to_csv(),
                                                        encoding="utf-8")
    (out_dir / f"{plan.label}.rule_report.json").write_text(
        report.to_json() + "\n", encoding="utf-8")
    print(f"applied {len(rules)} rule(s); total supply "
          f"{plan.total_supply} -> {adjusted.total_supply}")
    return 0


def cmd_backtest(args) -> int:
    doc = load_config(args.config)
    ds, holidays, data_dir, cutoff, config, ts, ranking = _prepared(doc, args)
    manifest = _manifest(doc, data_dir)
    run = _run_dir(doc, manifest)
    report = backtest(ds, cutoff, config, holidays,
                      manifest=manifest_hash(manifest))
    (run / "demand_sensing.csv").write_text(report.to_csv(), encoding="utf-8")
    (run / "demand_sensing.json").write_text(report.to_json() + "\n",
                                             encoding="utf-8")
    print(report.to_csv())
    print(f"wrote reports -> {run}")
    return 0


def cmd_plan_eval(args) -> int:
    doc = load_config(args.config)
    ds, holidays, data_dir, cutoff, config, ts, ranking = _prepared(doc, args)
    gt = None
    gt_path = data_dir / "groundtruth.jsonl"
    if gt_path.exists():
        gt = load_ground_truth(gt_path)
    manifest = _manifest(doc, data_dir)
    run = _run_dir(doc, manifest)
    report = plan_eval(ds, cutoff, config, holidays, gt=gt,
                       manifest=manifest_hash(manifest))
    (run / "plan_eval.csv").write_text(report.to_csv(), encoding="utf-8")
    (run / "plan_eval.json").write_text(report.to_json() + "\n",
                                        encoding="utf-8")
    print(report.to_csv())
    print(f"wrote reports -> {run}")
    return 0


def cmd_serve(args) -> int:
    from plateopt.service import Workspace, create_app
    import uvicorn

    doc = load_config(args.config)
    workspace = Workspace.from_config(doc, cutoff_flag=args.cutoff)
    app = create_app(workspace, token=doc.get("serve", {}).get("token"))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="plate-opt",
                     description="Supply planning for fixed-inventory retail")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="emit a synthetic world")
    p.add_argument("--spec", help="TOML file with a [generator] table")
    p.add_argument("--seed", type=int, help="override the generator seed")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("validate", help="validate a data directory")
    p.add_argument("data_dir")
    p.set_defaults(fn=cmd_validate)

    for name, fn in (("train", cmd_train), ("calibrate", cmd_calibrate),
                     ("backtest", cmd_backtest), ("plan-eval", cmd_plan_eval)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--cutoff")
        p.set_defaults(fn=fn)

    p = sub.add_parser("plan", help="emit supply plans for one issue")
    p.add_argument("--config", required=True)
    p.add_argument("--cutoff")
    p.add_argument("--title", required=True)
    p.add_argument("--issue", required=True)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("rules", help="apply business rules to a plan")
    p.add_argument("--config", required=True)
    p.add_argument("--cutoff")
    p.add_argument("--title", required=True)
    p.add_argument("--issue", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--plan", default="optimal_supply",
                   choices=["optimal_supply", "optimal_distribution"])
    p.add_argument("--reconcile", choices=["scale", "relax"])
    p.set_defaults(fn=cmd_rules)

    p = sub.add_parser("serve", help="run the planner service")
    p.add_argument("--config", required=True)
    p.add_argument("--cutoff")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
