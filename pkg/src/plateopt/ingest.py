"""Loading, validation and time-slicing of the three input datasets.

File formats (UTF-8, LF line endings):

* ``sales.csv``   header ``title,issue,pos,supply,sales,period_start,period_end``
* ``pos.csv``     header ``pos,establishment,revenue_bracket``
* ``issues.jsonl`` one JSON object per issue with the IssueMeta field names

A loaded ``Dataset`` is immutable and fully cross-referenced; every record
resolves to POS and issue metadata, selling periods agree with the issue,
and each (title, issue, pos) appears at most once.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from pathlib import Path
from typing import Iterable

from plateopt.core import IssueMeta, PosMeta, SalesRecord

SALES_HEADER = ["title", "issue", "pos", "supply", "sales", "period_start", "period_end"]
POS_HEADER = ["pos", "establishment", "revenue_bracket"]
ISSUE_FIELDS = [
    "title", "issue", "price", "periodicity", "age_bracket", "extra_product_id",
    "references", "atypical_exclusions", "period_start", "period_end",
    "n_total", "delta",
]


class ValidationError(ValueError):
    """Input data violated the schema or a cross-reference invariant."""


@dataclass(frozen=True)
class Dataset:
    records: tuple
    pos_meta: dict
    issue_meta: dict
    by_title_pos: dict = field(repr=False, default_factory=dict)
    by_issue: dict = field(repr=False, default_factory=dict)

    @classmethod
    def build(cls, records: Iterable[SalesRecord], pos_meta: dict,
              issue_meta: dict) -> "Dataset":
        records = tuple(sorted(records, key=lambda r: r.key()))
        seen = set()
        for r in records:
            if r.key() in seen:
                raise ValidationError(f"duplicate record for {r.key()}")
            seen.add(r.key())
            if r.pos not in pos_meta:
                raise ValidationError(f"{r.key()}: unknown POS {r.pos!r}")
            meta = issue_meta.get((r.title, r.issue))
            if meta is None:
                raise ValidationError(f"{r.key()}: unknown issue ({r.title}, {r.issue})")
            if (r.period_start, r.period_end) != (meta.period_start, meta.period_end):
                raise ValidationError(
                    f"{r.key()}: selling period {r.period_start}..{r.period_end} "
                    f"does not match the issue metadata"
                )
        issues_with_records = {(r.title, r.issue) for r in records}
        for meta in issue_meta.values():
            for ref in meta.references:
                if tuple(ref) not in issue_meta:
                    raise ValidationError(
                        f"{meta.key()}: reference {tuple(ref)} has no issue metadata"
                    )
                if tuple(ref) not in issues_with_records:
                    raise ValidationError(
                        f"{meta.key()}: reference {tuple(ref)} has no observed sales"
                    )
        by_title_pos: dict = {}
        by_issue: dict = {}
        for r in records:
            by_title_pos.setdefault((r.title, r.pos), []).append(r)
            by_issue.setdefault((r.title, r.issue), []).append(r)
        for k in by_title_pos:
            by_title_pos[k] = tuple(sorted(by_title_pos[k],
                                           key=lambda r: (r.period_start, r.issue)))
        for k in by_issue:
            by_issue[k] = tuple(by_issue[k])
        return cls(records=records, pos_meta=dict(pos_meta),
                   issue_meta=dict(issue_meta),
                   by_title_pos=by_title_pos, by_issue=by_issue)

    def history(self, title: str, pos: str) -> tuple:
        """Records of one title at one POS, sorted by period_start."""
        return self.by_title_pos.get((title, pos), ())

    def issue_records(self, title: str, issue: str) -> tuple:
        return self.by_issue.get((title, issue), ())

    def date_range(self) -> tuple:
        if not self.records:
            raise ValidationError("dataset holds no records")
        return (min(r.period_start for r in self.records),
                max(r.period_end for r in self.records))


@dataclass(frozen=True)
class TimeSlice:
    """Disjoint train/test views of a dataset around a cutoff date.

    Issues straddling the cutoff belong to neither view; they are listed in
    ``straddling`` so a report can surface them.
    """

    cutoff: date
    train: tuple
    test: tuple
    straddling: tuple

    def train_issue_keys(self) -> set:
        return {(r.title, r.issue) for r in self.train}

    def test_issue_keys(self) -> set:
        return {(r.title, r.issue) for r in self.test}


def _parse_int(value: str, path: str, row: int, fld: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"{path}:{row}: field {fld!r} is not an integer: {value!r}")


def _parse_date(value: str, path: str, row: int, fld: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise ValidationError(f"{path}:{row}: field {fld!r} is not an ISO date: {value!r}")


def _load_sales(path: Path) -> list:
    records = []
    seen: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SALES_HEADER:
            raise ValidationError(f"{path}: bad header {header!r}, want {SALES_HEADER}")
        for n, row in enumerate(reader, start=2):
            if len(row) != len(SALES_HEADER):
                raise ValidationError(f"{path}:{n}: expected {len(SALES_HEADER)} fields")
            title, issue, pos = row[0], row[1], row[2]
            key = (title, issue, pos)
            if key in seen:
                raise ValidationError(
                    f"{path}:{n}: duplicate (title, issue, pos) {key}, "
                    f"first seen at row {seen[key]}"
                )
            seen[key] = n
            try:
                rec = SalesRecord(
                    title=title, issue=issue, pos=pos,
                    supply=_parse_int(row[3], str(path), n, "supply"),
                    sales=_parse_int(row[4], str(path), n, "sales"),
                    period_start=_parse_date(row[5], str(path), n, "period_start"),
                    period_end=_parse_date(row[6], str(path), n, "period_end"),
                )
            except ValueError as exc:
                raise ValidationError(f"{path}:{n}: {exc}") from exc
            records.append(rec)
    return records


def _load_pos(path: Path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != POS_HEADER:
            raise ValidationError(f"{path}: bad header {header!r}, want {POS_HEADER}")
        for n, row in enumerate(reader, start=2):
            if len(row) != len(POS_HEADER):
                raise ValidationError(f"{path}:{n}: expected {len(POS_HEADER)} fields")
            if row[0] in out:
                raise ValidationError(f"{path}:{n}: duplicate POS {row[0]!r}")
            try:
                out[row[0]] = PosMeta(
                    pos=row[0], establishment=row[1],
                    pos_revenue_bracket=_parse_int(row[2], str(path), n, "revenue_bracket"),
                )
            except ValueError as exc:
                raise ValidationError(f"{path}:{n}: {exc}") from exc
    return out


def _load_issues(path: Path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line, parse_float=Decimal)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{n}: invalid JSON: {exc}") from exc
            unknown = set(raw) - set(ISSUE_FIELDS)
            if unknown:
                raise ValidationError(f"{path}:{n}: unknown fields {sorted(unknown)}")
            missing = set(ISSUE_FIELDS) - set(raw)
            if missing:
                raise ValidationError(f"{path}:{n}: missing fields {sorted(missing)}")
            try:
                meta = IssueMeta(
                    title=raw["title"],
                    issue=raw["issue"],
                    price=Decimal(str(raw["price"])),
                    periodicity=raw["periodicity"],
                    age_bracket=raw["age_bracket"],
                    extra_product_id=raw["extra_product_id"],
                    references=tuple((t, i) for t, i in raw["references"]),
                    atypical_exclusions=frozenset(
                        (t, i) for t, i in raw["atypical_exclusions"]
                    ),
                    period_start=_parse_date(raw["period_start"], str(path), n, "period_start"),
                    period_end=_parse_date(raw["period_end"], str(path), n, "period_end"),
                    n_total=int(raw["n_total"]),
                    delta=int(raw["delta"]),
                )
            except (ValueError, TypeError) as exc:
                raise ValidationError(f"{path}:{n}: {exc}") from exc
            if meta.key() in out:
                raise ValidationError(f"{path}:{n}: duplicate issue {meta.key()}")
            out[meta.key()] = meta
    return out


def load(sales_path, pos_path, issues_path) -> Dataset:
    """Load and cross-validate the three input files into a Dataset."""
    pos_meta = _load_pos(Path(pos_path))
    issue_meta = _load_issues(Path(issues_path))
    records = _load_sales(Path(sales_path))
    return Dataset.build(records, pos_meta, issue_meta)


def load_dir(data_dir) -> Dataset:
    d = Path(data_dir)
    return load(d / "sales.csv", d / "pos.csv", d / "issues.jsonl")


def slice(ds: Dataset, cutoff: date) -> TimeSlice:  # noqa: A001 - spec name
    """Split into a train view (ended before cutoff) and test view (starting
    at or after it).  Issues whose period straddles the cutoff are excluded
    from both and reported."""
    train, test, straddle = [], [], set()
    for r in ds.records:
        if r.period_end < cutoff:
            train.append(r)
        elif r.period_start >= cutoff:
            test.append(r)
        else:
            straddle.add((r.title, r.issue))
    return TimeSlice(
        cutoff=cutoff,
        train=tuple(train),
        test=tuple(test),
        straddling=tuple(sorted(straddle)),
    )


def _issue_meta_to_json(meta: IssueMeta) -> str:
    doc = {
        "title": meta.title,
        "issue": meta.issue,
        "price": str(meta.price),
        "periodicity": meta.periodicity,
        "age_bracket": meta.age_bracket,
        "extra_product_id": meta.extra_product_id,
        "references": [list(r) for r in meta.references],
        "atypical_exclusions": sorted([list(x) for x in meta.atypical_exclusions]),
        "period_start": meta.period_start.isoformat(),
        "period_end": meta.period_end.isoformat(),
        "n_total": meta.n_total,
        "delta": meta.delta,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def write(ds: Dataset, out_dir) -> None:
    """Canonical writer: rows sorted, LF endings, stable field formatting.

    ``load`` then ``write`` normalizes any valid input byte-for-byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SALES_HEADER)
    for r in ds.records:  # already sorted by key
        w.writerow([r.title, r.issue, r.pos, r.supply, r.sales,
                    r.period_start.isoformat(), r.period_end.isoformat()])
    (out / "sales.csv").write_text(buf.getvalue(), encoding="utf-8", newline="\n")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POS_HEADER)
    for pos in sorted(ds.pos_meta):
        m = ds.pos_meta[pos]
        w.writerow([m.pos, m.establishment, m.pos_revenue_bracket])
    (out / "pos.csv").write_text(buf.getvalue(), encoding="utf-8", newline="\n")

    lines = [
        _issue_meta_to_json(ds.issue_meta[k]) for k in sorted(ds.issue_meta)
    ]
    (out / "issues.jsonl").write_text("\n".join(lines) + "\n",
                                      encoding="utf-8", newline="\n")
