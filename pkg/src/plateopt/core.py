"""Domain types and the economic primitives of the supply planner.

Everything downstream (feature engineering, calibration, scenario search,
business rules, the service) is built on the four operations here:

* ``censor``             demand observed through a finite shelf
* ``reconstruct_demand`` undo the censoring on historical sales
* ``pos_cost``           per-POS cost of shipping / selling / returning copies
* ``plan_kpis``          KPI roll-up of a full per-POS supply plan

Money is fixed-point: ``Decimal`` quantized to 4 fractional digits with
banker's rounding at every aggregation boundary, so two independent
implementations of the same roll-up agree bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import date
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Mapping, Optional

TitleId = str
IssueId = str
PosId = str

PERIODICITIES = ("weekly", "monthly", "bimonthly", "quarterly", "special")

MONEY_QUANTUM = Decimal("0.0001")


def money(value) -> Decimal:
    """Quantize to the 4-digit fixed-point money grid, half-even."""
    return Decimal(value).quantize(MONEY_QUANTUM, rounding=ROUND_HALF_EVEN)


@dataclass(frozen=True)
class SalesRecord:
    """One (title, issue, POS) observation of a completed selling period."""

    title: TitleId
    issue: IssueId
    pos: PosId
    supply: int
    sales: int
    period_start: date
    period_end: date

    def __post_init__(self):
        if not self.title or not self.issue or not self.pos:
            raise ValueError("title, issue and pos must be non-empty")
        if self.supply < 0 or self.sales < 0:
            raise ValueError(f"{self.key()}: supply and sales must be >= 0")
        if self.sales > self.supply:
            raise ValueError(
                f"{self.key()}: sales ({self.sales}) exceed supply ({self.supply})"
            )
        if self.period_start > self.period_end:
            raise ValueError(f"{self.key()}: period_start after period_end")

    def key(self) -> tuple:
        return (self.title, self.issue, self.pos)

    @property
    def is_oos(self) -> bool:
        """Out of stock: the shelf sold out, demand beyond supply is unseen."""
        return self.supply > 0 and self.sales == self.supply


@dataclass(frozen=True)
class PosMeta:
    pos: PosId
    establishment: str
    pos_revenue_bracket: int

    def __post_init__(self):
        if not self.pos:
            raise ValueError("pos id must be non-empty")
        if self.pos_revenue_bracket < 0:
            raise ValueError(f"{self.pos}: revenue bracket must be >= 0")


@dataclass(frozen=True)
class IssueMeta:
    """Planner-entered description of one issue of a title.

    ``references`` carry exactly 0 or 2 similar historical issues chosen by a
    subject-matter expert; ``atypical_exclusions`` lists issues that must not
    enter trend or yearly-lag aggregates.
    """

    title: TitleId
    issue: IssueId
    price: Decimal
    periodicity: str
    age_bracket: str
    extra_product_id: Optional[str]
    references: tuple
    atypical_exclusions: frozenset
    period_start: date
    period_end: date
    n_total: int
    delta: int

    def __post_init__(self):
        if not self.title or not self.issue:
            raise ValueError("title and issue must be non-empty")
        if self.price <= 0:
            raise ValueError(f"{self.key()}: price must be positive")
        if self.periodicity not in PERIODICITIES:
            raise ValueError(
                f"{self.key()}: periodicity {self.periodicity!r} not one of {PERIODICITIES}"
            )
        if len(self.references) not in (0, 2):
            raise ValueError(
                f"{self.key()}: references must hold exactly 0 or 2 issues, "
                f"got {len(self.references)}"
            )
        if self.period_start > self.period_end:
            raise ValueError(f"{self.key()}: period_start after period_end")
        if self.n_total <= 0:
            raise ValueError(f"{self.key()}: n_total must be positive")
        if self.delta < 0 or self.delta > self.n_total:
            raise ValueError(f"{self.key()}: delta must satisfy 0 <= delta <= n_total")

    def key(self) -> tuple:
        return (self.title, self.issue)


@dataclass(frozen=True)
class CostConfig:
    """Parametric cost structure of one shipped copy.

    Production cost is tiered on the issue's total supply; distribution and
    unsold handling are flat per copy; the POS commission is a fraction of
    the cover price per sold copy; registration is charged once per issue.
    """

    commission_rate: Decimal
    production_tiers: tuple  # ((min_total_supply, unit_cost), ...) first at 0
    distribution_cost_per_copy: Decimal
    unsold_cost_per_copy: Decimal
    registration_cost_per_issue: Decimal

    def __post_init__(self):
        if not (0 <= self.commission_rate < 1):
            raise ValueError("commission_rate must be in [0, 1)")
        if not self.production_tiers:
            raise ValueError("at least one production tier is required")
        mins = [t[0] for t in self.production_tiers]
        if mins[0] != 0:
            raise ValueError("first production tier must start at 0")
        if any(b <= a for a, b in zip(mins, mins[1:])):
            raise ValueError("production tiers must be strictly increasing")
        for _, unit in self.production_tiers:
            if unit < 0:
                raise ValueError("tier unit costs must be >= 0")
        for name in ("distribution_cost_per_copy", "unsold_cost_per_copy",
                     "registration_cost_per_issue"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def unit_cost_for(self, total_supply: int) -> Decimal:
        """Per-copy production cost of the tier containing ``total_supply``."""
        chosen = self.production_tiers[0][1]
        for threshold, unit in self.production_tiers:
            if total_supply >= threshold:
                chosen = unit
            else:
                break
        return chosen

    @classmethod
    def from_json(cls, text: str) -> "CostConfig":
        """Parse the JSON document; unknown fields are rejected."""
        raw = json.loads(text, parse_float=Decimal, parse_int=Decimal)
        expected = {
            "commission_rate",
            "production_tiers",
            "distribution_cost_per_copy",
            "unsold_cost_per_copy",
            "registration_cost_per_issue",
        }
        unknown = set(raw) - expected
        if unknown:
            raise ValueError(f"unknown CostConfig fields: {sorted(unknown)}")
        missing = expected - set(raw)
        if missing:
            raise ValueError(f"missing CostConfig fields: {sorted(missing)}")
        tiers = tuple(
            (int(t[0]), Decimal(t[1])) for t in raw["production_tiers"]
        )
        return cls(
            commission_rate=Decimal(raw["commission_rate"]),
            production_tiers=tiers,
            distribution_cost_per_copy=Decimal(raw["distribution_cost_per_copy"]),
            unsold_cost_per_copy=Decimal(raw["unsold_cost_per_copy"]),
            registration_cost_per_issue=Decimal(raw["registration_cost_per_issue"]),
        )

    def to_json(self) -> str:
        doc = {
            "commission_rate": str(self.commission_rate),
            "production_tiers": [[t, str(u)] for t, u in self.production_tiers],
            "distribution_cost_per_copy": str(self.distribution_cost_per_copy),
            "unsold_cost_per_copy": str(self.unsold_cost_per_copy),
            "registration_cost_per_issue": str(self.registration_cost_per_issue),
        }
        return json.dumps(doc, indent=2, sort_keys=True)


#: Default economics used by the synthetic world and the demos.  Flat
#: production tier, 20% commission, small handling costs.
DEFAULT_COST_CONFIG = CostConfig(
    commission_rate=Decimal("0.20"),
    production_tiers=((0, Decimal("1.00")),),
    distribution_cost_per_copy=Decimal("0.10"),
    unsold_cost_per_copy=Decimal("0.05"),
    registration_cost_per_issue=Decimal("1.00"),
)


@dataclass(frozen=True)
class Kpis:
    total_supply: int
    revenue: Decimal
    cost: Decimal
    profit: Decimal
    oos_count: int
    sellthrough_rate: float

    def as_dict(self) -> dict:
        return {
            "total_supply": self.total_supply,
            "revenue": str(self.revenue),
            "cost": str(self.cost),
            "profit": str(self.profit),
            "oos_count": self.oos_count,
            "sellthrough_rate": self.sellthrough_rate,
        }


def censor(demand: float, supply: int) -> int:
    """Sales observed when real-valued demand meets an integer shelf.

    Copies are indivisible, so the min is floored.
    """
    if demand < 0:
        raise ValueError("demand must be >= 0")
    if supply < 0:
        raise ValueError("supply must be >= 0")
    return int(math.floor(min(demand, float(supply))))


def reconstruct_demand(record: SalesRecord, r_pct: float) -> float:
    """Approximate latent demand behind an observed sales figure.

    Sales below supply are taken at face value.  A sold-out shelf is assumed
    to have been able to move an extra ``r_pct`` percent of what it sold.
    """
    if r_pct < 0:
        raise ValueError("r_pct must be >= 0")
    if record.supply == 0:
        return 0.0
    if record.sales < record.supply:
        return float(record.sales)
    return (1.0 + r_pct / 100.0) * record.sales


def pos_cost(supply: int, total_supply: int, sales: int, price: Decimal,
             cfg: CostConfig) -> Decimal:
    """Cost booked against one POS for one issue.

    unit(total)*supply + distribution*supply + unsold*(supply - sales)
    + commission*price*sales, quantized to the money grid.
    """
    if sales > supply:
        raise ValueError("sales must not exceed supply")
    if total_supply < supply:
        raise ValueError("total_supply must be >= the POS supply")
    if supply < 0:
        raise ValueError("supply must be >= 0")
    unit = cfg.unit_cost_for(total_supply)
    raw = (
        unit * supply
        + cfg.distribution_cost_per_copy * supply
        + cfg.unsold_cost_per_copy * (supply - sales)
        + cfg.commission_rate * Decimal(price) * sales
    )
    return money(raw)


def plan_kpis(plan: Mapping[str, int], sales: Mapping[str, int],
              price: Decimal, cfg: CostConfig) -> Kpis:
    """Roll a per-POS plan and its realized (or simulated) sales into KPIs.

    ``plan`` and ``sales`` must share a key set.  Registration is charged
    once per issue, even for an empty plan.
    """
    if set(plan) != set(sales):
        raise ValueError("plan and sales must cover the same POS keys")
    total_supply = 0
    total_sales = 0
    oos = 0
    for key in plan:
        s, z = plan[key], sales[key]
        if z > s:
            raise ValueError(f"{key}: sales exceed supply")
        total_supply += s
        total_sales += z
        if s > 0 and z == s:
            oos += 1
    # The production tier depends on the plan total, so costs need the
    # totals pass to have completed first.
    cost = money(cfg.registration_cost_per_issue)
    for key in sorted(plan):
        cost += pos_cost(plan[key], total_supply, sales[key], price, cfg)
    revenue = money(Decimal(price) * total_sales)
    profit = revenue - cost
    sellthrough = (total_sales / total_supply) if total_supply > 0 else 0.0
    return Kpis(
        total_supply=total_supply,
        revenue=revenue,
        cost=cost,
        profit=profit,
        oos_count=oos,
        sellthrough_rate=sellthrough,
    )
