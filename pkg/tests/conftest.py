"""Shared fixture builders: tiny in-memory datasets with known shapes."""

from datetime import date, timedelta
from decimal import Decimal

import pytest

from plateopt.core import IssueMeta, PosMeta, SalesRecord
from plateopt.ingest import Dataset


def mk_pos(pos, establishment="kiosk", bracket=1):
    return PosMeta(pos=pos, establishment=establishment, pos_revenue_bracket=bracket)


def mk_issue(title, issue, start, *, days=27, price="5.00", periodicity="monthly",
             age_bracket="kids", extra=None, refs=(), excl=(), n_total=100, delta=10):
    start = date.fromisoformat(start) if isinstance(start, str) else start
    return IssueMeta(
        title=title,
        issue=issue,
        price=Decimal(price),
        periodicity=periodicity,
        age_bracket=age_bracket,
        extra_product_id=extra,
        references=tuple(refs),
        atypical_exclusions=frozenset(excl),
        period_start=start,
        period_end=start + timedelta(days=days),
        n_total=n_total,
        delta=delta,
    )


def monthly_issues(title, n, first="2022-01-01", **kw):
    """n monthly issues I1..In spaced 28 days apart, 27-day periods."""
    start = date.fromisoformat(first)
    out = []
    for k in range(n):
        out.append(mk_issue(title, f"I{k + 1}", start + timedelta(days=28 * k), **kw))
    return out


def build_dataset(issue_metas, pos_metas, observations):
    """observations: iterable of (title, issue, pos, supply, sales)."""
    issue_map = {m.key(): m for m in issue_metas}
    pos_map = {m.pos: m for m in pos_metas}
    records = []
    for title, issue, pos, supply, sales in observations:
        meta = issue_map[(title, issue)]
        records.append(SalesRecord(
            title=title, issue=issue, pos=pos, supply=supply, sales=sales,
            period_start=meta.period_start, period_end=meta.period_end,
        ))
    return Dataset.build(records, pos_map, issue_map)


@pytest.fixture
def small_dataset():
    """One monthly title over 10 issues at 2 POSes with simple sales."""
    issues = monthly_issues("T1", 10)
    poses = [mk_pos("P1"), mk_pos("P2", establishment="supermarket", bracket=3)]
    obs = []
    for k in range(10):
        issue = f"I{k + 1}"
        obs.append(("T1", issue, "P1", 4, min(4, 2 + k % 3)))
        obs.append(("T1", issue, "P2", 6, min(6, 3 + k % 4)))
    return build_dataset(issues, poses, obs)
