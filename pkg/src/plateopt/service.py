"""Operating-stage HTTP API for human planners.

Serves issues, their generated plans and historical statistics; accepts
metadata edits (which trigger a synchronous re-plan of that issue) and plan
selections with per-POS adjustments.  Every mutation carries a
client-supplied request id and is idempotent under it; selections and meta
updates append to a JSON-lines audit log whose replay reconstructs the
current state exactly.

Persistence is plain files in the run directory: no database at desk scale.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException
from pydantic import BaseModel, Field

from plateopt import __version__, ingest
from plateopt.core import IssueMeta, plan_kpis
from plateopt.features import load_holidays, rank_extra_products
from plateopt.harness import (
    HarnessConfig,
    build_manifest,
    file_sha256,
    manifest_hash,
    plan_issue,
    prepare_title_planner,
    train_gcqr_bundles,
)
from plateopt.ingest import Dataset, ValidationError

PLAN_LABELS = ("optimal_supply", "optimal_distribution", "manual")


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def _body_hash(doc) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, default=str).encode()
    ).hexdigest()


def field_error(status: int, errors):
    """Machine-readable field errors, same shape FastAPI validation uses."""
    detail = [{"loc": ["body"] + list(loc), "msg": msg, "type": "value_error"}
              for loc, msg in errors]
    return HTTPException(status_code=status, detail=detail)


class MetaUpdate(BaseModel):
    request_id: str = Field(min_length=1)
    price: Optional[float] = None
    extra_product_id: Optional[str] = None
    references: Optional[list] = None
    atypical_exclusions: Optional[list] = None
    n_total: Optional[int] = None
    delta: Optional[int] = None


class Adjustment(BaseModel):
    pos: str
    supply: int
    reason: str = Field(min_length=1)


class Selection(BaseModel):
    request_id: str = Field(min_length=1)
    label: str
    adjustments: list[Adjustment] = Field(default_factory=list)
    actor: str = Field(min_length=1)


@dataclass
class Workspace:
    """Mutable service state over one dataset and its planning config."""

    ds: Dataset
    holidays: frozenset
    config: HarnessConfig
    cutoff: date
    audit_path: Path
    manifest: dict = field(default_factory=dict)
    plans: dict = field(default_factory=dict)        # (t, i) -> PlanSet
    plan_manifests: dict = field(default_factory=dict)
    selections: dict = field(default_factory=dict)   # (t, i) -> last selection
    request_log: dict = field(default_factory=dict)  # request_id -> (hash, resp)
    locks: dict = field(default_factory=dict)
    _big_lock: threading.Lock = field(default_factory=threading.Lock)

    @classmethod
    def from_config(cls, doc: dict, cutoff_flag=None) -> "Workspace":
        from plateopt.cli import CliError, harness_config_from

        data = doc.get("data", {})
        data_dir = Path(data.get("dir", "."))
        ds = ingest.load_dir(data_dir)
        holidays_path = Path(data.get("holidays", data_dir / "holidays.txt"))
        holidays = load_holidays(holidays_path) if holidays_path.exists() else frozenset()
        raw_cutoff = cutoff_flag or doc.get("cutoff")
        if not raw_cutoff:
            raise CliError("service needs a cutoff date")
        run_dir = Path(doc.get("serve", {}).get("run_dir", "out/service"))
        run_dir.mkdir(parents=True, exist_ok=True)
        ws = cls(ds=ds, holidays=holidays, config=harness_config_from(doc),
                 cutoff=date.fromisoformat(str(raw_cutoff)),
                 audit_path=run_dir / "audit.jsonl")
        ws.manifest = build_manifest(doc, {
            p.name: file_sha256(p) for p in sorted(data_dir.glob("*"))
            if p.is_file()
        })
        ws.replay_audit()
        return ws

    # --- planning -------------------------------------------------------

    def lock_for(self, key) -> threading.RLock:
        # reentrant: the meta-update path holds the lock while replanning
        with self._big_lock:
            return self.locks.setdefault(key, threading.RLock())

    def plannable_issues(self):
        ts = ingest.slice(self.ds, self.cutoff)
        trained = {r.title for r in ts.train}
        return sorted(
            k for k in self.ds.issue_meta
            if k[0] in trained
            and self.ds.issue_meta[k].period_start >= self.cutoff
        )

    def ensure_plans(self, key):
        if key in self.plans:
            return self.plans[key]
        return self.replan(key)

    def replan(self, key):
        title, issue = key
        meta = self.ds.issue_meta.get(key)
        if meta is None:
            raise KeyError(key)
        with self.lock_for(key):
            ts = ingest.slice(self.ds, self.cutoff)
            ranking = rank_extra_products(self.ds, ts, self.config.cost)
            bundles = train_gcqr_bundles(self.ds, ts, self.config, ranking,
                                         self.holidays, titles=[title])
            planner = prepare_title_planner(self.ds, ts, title, bundles[title],
                                            self.config, ranking, self.holidays)
            plate = sorted({r.pos for r in self.ds.issue_records(title, issue)}
                           or self.ds.pos_meta)
            plan_set = plan_issue(planner, self.ds, meta, self.config, ranking,
                                  self.holidays, plate=plate)
            self.plans[key] = plan_set
            self.plan_manifests[key] = manifest_hash({
                **self.manifest,
                "issue_meta": _meta_doc(meta),
            })
            return plan_set

    def update_meta(self, key, update: MetaUpdate) -> IssueMeta:
        title, issue = key
        old = self.ds.issue_meta[key]
        refs = old.references if update.references is None else tuple(
            (t, i) for t, i in update.references)
        excl = old.atypical_exclusions if update.atypical_exclusions is None \
            else frozenset((t, i) for t, i in update.atypical_exclusions)
        meta = IssueMeta(
            title=old.title, issue=old.issue,
            price=Decimal(str(update.price)) if update.price is not None else old.price,
            periodicity=old.periodicity, age_bracket=old.age_bracket,
            extra_product_id=(old.extra_product_id
                              if update.extra_product_id is None
                              else (update.extra_product_id or None)),
            references=refs, atypical_exclusions=excl,
            period_start=old.period_start, period_end=old.period_end,
            n_total=update.n_total if update.n_total is not None else old.n_total,
            delta=update.delta if update.delta is not None else old.delta,
        )
        issue_meta = dict(self.ds.issue_meta)
        issue_meta[key] = meta
        self.ds = Dataset.build(self.ds.records, self.ds.pos_meta, issue_meta)
        self.plans.pop(key, None)
        return meta

    # --- audit ----------------------------------------------------------

    def append_audit(self, entry: dict) -> None:
        with self._big_lock:
            with open(self.audit_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True, default=str) + "\n")

    def replay_audit(self) -> None:
        self.selections.clear()
        self.request_log.clear()
        if not self.audit_path.exists():
            return
        with open(self.audit_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                rid = entry.get("request_id")
                if rid:
                    self.request_log[rid] = (entry.get("body_hash"),
                                             entry.get("response"))
                if entry.get("kind") == "selection":
                    self.selections[(entry["title"], entry["issue"])] = entry


def _meta_doc(meta: IssueMeta) -> dict:
    return {
        "title": meta.title,
        "issue": meta.issue,
        "price": str(meta.price),
        "periodicity": meta.periodicity,
        "age_bracket": meta.age_bracket,
        "extra_product_id": meta.extra_product_id,
        "references": [list(r) for r in meta.references],
        "atypical_exclusions": sorted(list(x) for x in meta.atypical_exclusions),
        "period_start": meta.period_start.isoformat(),
        "period_end": meta.period_end.isoformat(),
        "n_total": meta.n_total,
        "delta": meta.delta,
    }


def _plan_doc(plan) -> dict:
    return {
        "label": plan.label,
        "title": plan.title,
        "issue": plan.issue,
        "scenario": list(plan.scenario.alphas),
        "allocations": dict(sorted(plan.allocations.items())),
        "total_supply": plan.total_supply,
        "kpis_forecast": plan.kpis_forecast.as_dict(),
        "annotations": list(plan.annotations),
    }


def _score_doc(score) -> dict:
    return {
        "scenario": list(score.scenario.alphas),
        "kpis": score.kpis.as_dict(),
        "reference_kpis": score.reference_kpis.as_dict(),
    }


def create_app(ws: Workspace, token: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="plateopt planner service", version=__version__)

    def auth(authorization: Optional[str] = Header(default=None)):
        if token is None:
            return
        if authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    def issue_or_404(title: str, issue: str):
        meta = ws.ds.issue_meta.get((title, issue))
        if meta is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown issue ({title}, {issue})")
        return meta

    def idempotent(request_id: str, body: dict):
        """Returns a stored response for a replayed id; 409 on divergence."""
        if request_id in ws.request_log:
            stored_hash, stored_response = ws.request_log[request_id]
            if stored_hash != _body_hash(body):
                raise HTTPException(
                    status_code=409,
                    detail=f"request id {request_id!r} was already used "
                           f"with a different body")
            return stored_response
        return None

    @app.get("/health")
    def health(_=Depends(auth)):
        return {"status": "ok", "version": __version__,
                "manifest": manifest_hash(ws.manifest)}

    @app.get("/issues")
    def issues(_=Depends(auth)):
        out = []
        for key in ws.plannable_issues():
            meta = ws.ds.issue_meta[key]
            status = "planned" if key in ws.plans else "unplanned"
            if key in ws.selections:
                status = "selected"
            out.append({
                "title": key[0], "issue": key[1],
                "period_start": meta.period_start.isoformat(),
                "period_end": meta.period_end.isoformat(),
                "price": str(meta.price),
                "n_total": meta.n_total, "delta": meta.delta,
                "status": status,
            })
        return out

    @app.get("/issues/{title}/{issue}/plans")
    def plans(title: str, issue: str, _=Depends(auth)):
        issue_or_404(title, issue)
        try:
            plan_set = ws.ensure_plans((title, issue))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "optimal_supply": _plan_doc(plan_set.optimal_supply_plan),
            "optimal_distribution": _plan_doc(plan_set.optimal_distribution_plan),
            "scenario_frontier": [_score_doc(s) for s in plan_set.scenario_frontier],
            "constraint_status": plan_set.constraint_status,
            "manifest_hash": ws.plan_manifests[(title, issue)],
        }

    @app.get("/issues/{title}/{issue}/stats")
    def stats(title: str, issue: str, _=Depends(auth)):
        issue_or_404(title, issue)
        series = []
        seen = sorted(
            {k for k in ws.ds.issue_meta if k[0] == title},
            key=lambda k: ws.ds.issue_meta[k].period_start,
        )
        for key in seen:
            records = ws.ds.issue_records(*key)
            if not records:
                continue
            meta = ws.ds.issue_meta[key]
            if meta.period_end >= ws.cutoff and key != (title, issue):
                continue
            plan = {r.pos: r.supply for r in records}
            sales = {r.pos: r.sales for r in records}
            kpis = plan_kpis(plan, sales, meta.price, ws.config.cost)
            series.append({
                "issue": key[1],
                "period_start": meta.period_start.isoformat(),
                "total_supply": kpis.total_supply,
                "total_sales": sum(sales.values()),
                "sellthrough_rate": kpis.sellthrough_rate,
                "profit": str(kpis.profit),
                "oos_count": kpis.oos_count,
            })
        return {"title": title, "series": series}

    @app.put("/issues/{title}/{issue}/meta")
    def put_meta(title: str, issue: str, update: MetaUpdate, _=Depends(auth)):
        meta = issue_or_404(title, issue)
        errors = []
        if update.references is not None and len(update.references) not in (0, 2):
            errors.append((["references"],
                           "references must hold exactly 0 or 2 issues"))
        if update.price is not None and update.price <= 0:
            errors.append((["price"], "price must be positive"))
        n_total = update.n_total if update.n_total is not None else meta.n_total
        delta = update.delta if update.delta is not None else meta.delta
        if n_total <= 0:
            errors.append((["n_total"], "n_total must be positive"))
        elif not 0 <= delta <= n_total:
            errors.append((["delta"], "delta must satisfy 0 <= delta <= n_total"))
        if update.references:
            for ref in update.references:
                if tuple(ref) not in ws.ds.issue_meta:
                    errors.append((["references"], f"unknown issue {ref}"))
        if errors:
            raise field_error(422, errors)
        body = update.model_dump()
        stored = idempotent(update.request_id, body)
        if stored is not None:
            return stored
        with ws.lock_for((title, issue)):
            try:
                new_meta = ws.update_meta((title, issue), update)
            except (ValidationError, ValueError) as exc:
                raise field_error(422, [([], str(exc))])
            ws.replan((title, issue))
        response = {
            "status": "replanned",
            "meta": _meta_doc(new_meta),
            "manifest_hash": ws.plan_manifests[(title, issue)],
        }
        ws.request_log[update.request_id] = (_body_hash(body), response)
        ws.append_audit({
            "kind": "meta_update", "ts": _now_iso(),
            "title": title, "issue": issue,
            "request_id": update.request_id, "body_hash": _body_hash(body),
            "body": body, "response": response,
        })
        return response

    @app.post("/issues/{title}/{issue}/selection")
    def post_selection(title: str, issue: str, sel: Selection, _=Depends(auth)):
        issue_or_404(title, issue)
        errors = []
        if sel.label not in PLAN_LABELS:
            errors.append((["label"], f"label must be one of {PLAN_LABELS}"))
        for k, adj in enumerate(sel.adjustments):
            if adj.supply < 0:
                errors.append((["adjustments", k, "supply"],
                               "adjusted supply must be >= 0"))
            if adj.pos not in ws.ds.pos_meta:
                errors.append((["adjustments", k, "pos"],
                               f"unknown POS {adj.pos!r}"))
        if errors:
            raise field_error(422, errors)
        body = sel.model_dump()
        stored = idempotent(sel.request_id, body)
        if stored is not None:
            return stored
        entry = {
            "kind": "selection", "ts": _now_iso(),
            "title": title, "issue": issue,
            "label": sel.label,
            "adjustments": [a.model_dump() for a in sel.adjustments],
            "actor": sel.actor,
            "request_id": sel.request_id,
            "body_hash": _body_hash(body),
        }
        response = {"status": "recorded", "title": title, "issue": issue,
                    "label": sel.label,
                    "n_adjustments": len(sel.adjustments)}
        entry["response"] = response
        ws.request_log[sel.request_id] = (_body_hash(body), response)
        ws.selections[(title, issue)] = entry
        ws.append_audit(entry)
        return response

    @app.get("/issues/{title}/{issue}/selection")
    def get_selection(title: str, issue: str, _=Depends(auth)):
        issue_or_404(title, issue)
        entry = ws.selections.get((title, issue))
        if entry is None:
            raise HTTPException(status_code=404, detail="no selection recorded")
        return entry

    return app
