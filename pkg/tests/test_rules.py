from datetime import date
from fractions import Fraction

import pytest

from plateopt import ingest
from plateopt.core import DEFAULT_COST_CONFIG
from plateopt.optimizer import Scenario, SupplyPlan
from plateopt.rules import (
    Rule,
    RuleScope,
    apply_rules,
    largest_remainder,
    parse_rules,
    reconcile_constraint,
)

from conftest import build_dataset, mk_issue, mk_pos, monthly_issues
from test_optimizer import kpis


def make_plan(allocations, title="T1", issue="I5", demand=None):
    demand = demand or {p: float(v) for p, v in allocations.items()}
    return SupplyPlan(
        label="optimal_supply", title=title, issue=issue,
        allocations=dict(allocations), kpis_forecast=kpis(10, sum(allocations.values())),
        scenario=Scenario((0.75,)), demand_forecast=demand,
    )


@pytest.fixture
def trend_ds():
    """T1 with 4 history issues at P1/P2 and a target issue I5."""
    issues = monthly_issues("T1", 5)
    poses = [mk_pos("P1"), mk_pos("P2")]
    obs = []
    for k in range(1, 5):
        obs.append(("T1", f"I{k}", "P1", 5, 3))   # max_trend 3 at P1
        obs.append(("T1", f"I{k}", "P2", 5, 1))   # max_trend 1 at P2
    obs.append(("T1", "I5", "P1", 1, 0))
    obs.append(("T1", "I5", "P2", 1, 0))
    return build_dataset(issues, poses, obs)


class TestApplyRules:
    def test_cap_vs_trend_clamps(self, trend_ds):
        plan = make_plan({"P1": 9, "P2": 9})
        rule = Rule(id="cap", kind="cap_vs_trend", params={"k": 2})
        adjusted, report = apply_rules(plan, trend_ds, [rule])
        assert adjusted.allocations == {"P1": 6, "P2": 2}
        assert report.effects[0].rows_touched == 2
        assert report.effects[0].supply_delta == -10

    def test_empty_rule_list_is_identity(self, trend_ds):
        plan = make_plan({"P1": 2, "P2": 3})
        adjusted, report = apply_rules(plan, trend_ds, [])
        assert adjusted.allocations == plan.allocations
        assert report.effects == ()

    def test_floor_raises_zeros(self, trend_ds):
        plan = make_plan({"P1": 0, "P2": 2})
        rule = Rule(id="f1", kind="floor", params={"f": 1})
        adjusted, report = apply_rules(plan, trend_ds, [rule])
        assert adjusted.allocations == {"P1": 1, "P2": 2}
        assert report.effects[0].rows_touched == 1

    def test_override_sets_exact_value(self, trend_ds):
        plan = make_plan({"P1": 4, "P2": 4})
        rule = Rule(id="o1", kind="override_pos", params={"supply": 7},
                    scope=RuleScope(pos_ids=("P2",)))
        adjusted, _ = apply_rules(plan, trend_ds, [rule])
        assert adjusted.allocations == {"P1": 4, "P2": 7}

    def test_conflicting_overrides_rejected(self, trend_ds):
        plan = make_plan({"P1": 4, "P2": 4})
        rules = [
            Rule(id="o1", kind="override_pos", params={"supply": 7},
                 scope=RuleScope(pos_ids=("P2",))),
            Rule(id="o2", kind="override_pos", params={"supply": 3},
                 scope=RuleScope(pos_ids=("P2",))),
        ]
        with pytest.raises(ValueError, match="conflicting overrides"):
            apply_rules(plan, trend_ds, rules)

    def test_unknown_scope_pos_rejected(self, trend_ds):
        plan = make_plan({"P1": 4, "P2": 4})
        rule = Rule(id="o1", kind="override_pos", params={"supply": 7},
                    scope=RuleScope(pos_ids=("P9",)))
        with pytest.raises(ValueError, match="outside the plate"):
            apply_rules(plan, trend_ds, [rule])

    def test_scale_title(self, trend_ds):
        plan = make_plan({"P1": 4, "P2": 6})
        rule = Rule(id="s1", kind="scale_title", params={"factor": 0.5})
        adjusted, report = apply_rules(plan, trend_ds, [rule])
        assert sum(adjusted.allocations.values()) == 5
        assert report.total_supply_delta == -5

    def test_order_sensitivity(self, trend_ds):
        plan = make_plan({"P1": 9, "P2": 0})
        cap = Rule(id="cap", kind="cap_vs_trend", params={"k": 1})
        floor = Rule(id="fl", kind="floor", params={"f": 5})
        a, _ = apply_rules(plan, trend_ds, [cap, floor])
        b, _ = apply_rules(plan, trend_ds, [floor, cap])
        assert a.allocations == {"P1": 5, "P2": 5}   # floor after cap wins
        assert b.allocations == {"P1": 3, "P2": 1}   # cap after floor wins

    def test_independent_rules_commute(self, trend_ds):
        plan = make_plan({"P1": 9, "P2": 9})
        r1 = Rule(id="a", kind="floor", params={"f": 10},
                  scope=RuleScope(pos_ids=("P1",)))
        r2 = Rule(id="b", kind="override_pos", params={"supply": 2},
                  scope=RuleScope(pos_ids=("P2",)))
        a, _ = apply_rules(plan, trend_ds, [r1, r2])
        b, _ = apply_rules(plan, trend_ds, [r2, r1])
        assert a.allocations == b.allocations

    def test_deltas_sum_to_plan_change(self, trend_ds):
        plan = make_plan({"P1": 9, "P2": 9})
        rules = [
            Rule(id="cap", kind="cap_vs_trend", params={"k": 2}),
            Rule(id="fl", kind="floor", params={"f": 3}),
        ]
        adjusted, report = apply_rules(plan, trend_ds, rules)
        assert report.total_supply_delta == (
            sum(adjusted.allocations.values()) - sum(plan.allocations.values())
        )

    def test_no_negative_allocations_ever(self, trend_ds):
        plan = make_plan({"P1": 9, "P2": 9})
        rules = [Rule(id="s", kind="scale_title", params={"factor": 0.01})]
        adjusted, _ = apply_rules(plan, trend_ds, rules)
        assert all(v >= 0 for v in adjusted.allocations.values())


class TestLargestRemainder:
    def test_spec_example(self):
        got = largest_remainder({"P1": 3, "P2": 3, "P3": 4}, 5)
        assert got == {"P1": 2, "P2": 1, "P3": 2}
        assert sum(got.values()) == 5

    def test_equal_allocations_spread_by_pos_order(self):
        got = largest_remainder({"P1": 2, "P2": 2, "P3": 2}, 7)
        assert got == {"P1": 3, "P2": 2, "P3": 2}
        got = largest_remainder({"P1": 2, "P2": 2, "P3": 2}, 8)
        assert got == {"P1": 3, "P2": 3, "P3": 2}

    def test_total_exact_and_deviation_below_one(self):
        import random
        rng = random.Random(5)
        for _ in range(200):
            n = rng.randint(1, 12)
            allocs = {f"P{k:02d}": rng.randint(0, 9) for k in range(n)}
            if sum(allocs.values()) == 0:
                continue
            target = rng.randint(0, 40)
            got = largest_remainder(allocs, target)
            assert sum(got.values()) == target
            total = sum(allocs.values())
            for p, v in got.items():
                exact = Fraction(allocs[p] * target, total)
                assert abs(Fraction(v) - exact) < 1

    def test_zero_total_rejected(self):
        with pytest.raises(ValueError):
            largest_remainder({"P1": 0}, 5)


class TestReconcileConstraint:
    def test_scale_hits_n_total_exactly(self, trend_ds):
        plan = make_plan({"P1": 3, "P2": 3, "P3": 4})
        # P3 is not in trend_ds but reconcile does not consult the dataset
        got = reconcile_constraint(plan, n_total=5, delta=1, mode="scale")
        assert sum(got.allocations.values()) == 5
        assert "scaled_to_constraint" in got.annotations

    def test_within_band_is_noop_with_note(self):
        plan = make_plan({"P1": 3, "P2": 3})
        got = reconcile_constraint(plan, n_total=6, delta=1, mode="scale")
        assert got.allocations == plan.allocations
        assert "already_within_constraint" in got.annotations

    def test_relax_keeps_allocations(self):
        plan = make_plan({"P1": 30, "P2": 30})
        got = reconcile_constraint(plan, n_total=10, delta=2, mode="relax")
        assert got.allocations == plan.allocations
        assert any(a.startswith("constraint_relaxed") for a in got.annotations)

    def test_zero_total_scale_is_error(self):
        plan = make_plan({"P1": 0, "P2": 0})
        with pytest.raises(ValueError):
            reconcile_constraint(plan, n_total=5, delta=1, mode="scale")


class TestParseRules:
    def test_round_trip(self):
        text = """
        [
          {"id": "cap", "kind": "cap_vs_trend", "params": {"k": 2},
           "scope": {"title": "T1"}},
          {"id": "fl", "kind": "floor", "params": {"f": 1},
           "scope": {"pos_ids": ["P1", "P2"]}}
        ]
        """
        rules = parse_rules(text)
        assert [r.id for r in rules] == ["cap", "fl"]
        assert rules[0].scope.title == "T1"
        assert rules[1].scope.pos_ids == ("P1", "P2")

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            parse_rules('[{"id": "x", "kind": "boost", "params": {}}]')

    def test_missing_params_rejected(self):
        with pytest.raises(ValueError, match="missing params"):
            parse_rules('[{"id": "x", "kind": "floor", "params": {}}]')
