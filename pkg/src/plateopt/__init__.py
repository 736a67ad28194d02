"""plateopt: single-shot supply allocation planning for fixed-inventory retail.

The pipeline runs in four stages: demand sensing (quantile models with
per-group conformal corrections), scenario-based supply optimization,
declarative business rules, and an operating service for human planners.
"""

__version__ = "0.1.0"

from plateopt.core import (
    CostConfig,
    DEFAULT_COST_CONFIG,
    IssueMeta,
    Kpis,
    PosMeta,
    SalesRecord,
    censor,
    plan_kpis,
    pos_cost,
    reconstruct_demand,
)

__all__ = [
    "CostConfig",
    "DEFAULT_COST_CONFIG",
    "IssueMeta",
    "Kpis",
    "PosMeta",
    "SalesRecord",
    "censor",
    "plan_kpis",
    "pos_cost",
    "reconstruct_demand",
    "__version__",
]
