import json
import warnings
from pathlib import Path

import pytest

from plateopt.cli import main

warnings.filterwarnings("ignore", message=".*observed issue")

SPEC_TOML = """
[generator]
seed = 23
n_pos = 50
n_titles = 2
issues_per_title = 10
"""

CONFIG_TOML = """
cutoff = "{cutoff}"
out = "{out}"

[data]
dir = "{data}"
cost_config = "{data}/cost_config.json"

[model]
n_trees = 8
max_depth = 3
min_leaf = 10
learning_rate = 0.3

[gcqr]
alpha_grid = [0.65, 0.8, 0.95]

[optimizer]
scenario_budget = 10
baseline_alpha = 0.8
"""


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliworld")
    spec = root / "spec.toml"
    spec.write_text(SPEC_TOML, encoding="utf-8")
    data = root / "data"
    assert main(["generate", "--spec", str(spec), "--out", str(data)]) == 0
    issues = [json.loads(l) for l in
              (data / "issues.jsonl").read_text().splitlines()]
    cutoff = sorted(i["period_start"] for i in issues)[-2]
    config = root / "config.toml"
    config.write_text(CONFIG_TOML.format(cutoff=cutoff, out=root / "out",
                                         data=data), encoding="utf-8")
    return root, data, config


class TestGenerateValidate:
    def test_generate_then_validate(self, world, capsys):
        root, data, config = world
        assert main(["validate", str(data)]) == 0
        out = capsys.readouterr().out
        assert "ok:" in out

    def test_validate_rejects_corruption(self, world, tmp_path):
        root, data, config = world
        bad = tmp_path / "bad"
        bad.mkdir()
        for name in ("sales.csv", "pos.csv", "issues.jsonl"):
            bad.joinpath(name).write_text((data / name).read_text(),
                                          encoding="utf-8")
        text = (bad / "sales.csv").read_text().splitlines()
        row = text[1].split(",")
        row[4] = str(int(row[3]) + 1)  # sales above supply
        text[1] = ",".join(row)
        (bad / "sales.csv").write_text("\n".join(text) + "\n", encoding="utf-8")
        assert main(["validate", str(bad)]) == 1


class TestUsageErrors:
    def test_unknown_subcommand_exits_1(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_unknown_flag_exits_1(self, world):
        root, data, config = world
        assert main(["validate", str(data), "--frob"]) == 1

    def test_missing_config_exits_1(self):
        assert main(["backtest", "--config", "/nope/missing.toml"]) == 1

    def test_malformed_config_names_problem(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("cutoff = [unclosed", encoding="utf-8")
        assert main(["backtest", "--config", str(bad)]) == 1
        assert "TOML" in capsys.readouterr().err


class TestPipeline:
    def test_backtest_writes_reports_and_manifest(self, world):
        root, data, config = world
        assert main(["backtest", "--config", str(config)]) == 0
        runs = list((root / "out").iterdir())
        assert len(runs) == 1
        run = runs[0]
        assert (run / "manifest.json").exists()
        assert (run / "demand_sensing.csv").exists()
        report = json.loads((run / "demand_sensing.json").read_text())
        assert report["manifest_hash"] == run.name

    def test_backtest_rerun_is_byte_identical(self, world):
        root, data, config = world
        run = next((root / "out").iterdir())
        before = (run / "demand_sensing.csv").read_bytes()
        assert main(["backtest", "--config", str(config)]) == 0
        assert (run / "demand_sensing.csv").read_bytes() == before

    def test_plan_eval_and_plan(self, world):
        root, data, config = world
        assert main(["plan-eval", "--config", str(config)]) == 0
        run = next((root / "out").iterdir())
        assert (run / "plan_eval.csv").exists()
        issues = [json.loads(l) for l in
                  (data / "issues.jsonl").read_text().splitlines()]
        target = max(issues, key=lambda i: i["period_start"])
        assert main(["plan", "--config", str(config), "--title",
                     target["title"], "--issue", target["issue"]]) == 0
        plan_dir = run / "plans" / f"{target['title']}_{target['issue']}"
        assert (plan_dir / "optimal_supply.csv").exists()
        assert (plan_dir / "optimal_supply.kpis.json").exists()
        assert (plan_dir / "frontier.csv").exists()

    def test_rules_command(self, world, tmp_path):
        root, data, config = world
        rules = tmp_path / "rules.json"
        rules.write_text(json.dumps([
            {"id": "floor1", "kind": "floor", "params": {"f": 1}},
        ]), encoding="utf-8")
        issues = [json.loads(l) for l in
                  (data / "issues.jsonl").read_text().splitlines()]
        target = max(issues, key=lambda i: i["period_start"])
        assert main(["rules", "--config", str(config), "--title",
                     target["title"], "--issue", target["issue"],
                     "--rules", str(rules)]) == 0
        run = next((root / "out").iterdir())
        plan_dir = run / "plans" / f"{target['title']}_{target['issue']}"
        assert (plan_dir / "optimal_supply.adjusted.csv").exists()
        report = json.loads(
            (plan_dir / "optimal_supply.rule_report.json").read_text())
        assert report[0]["rule_id"] == "floor1"

    def test_calibrate_report(self, world):
        root, data, config = world
        assert main(["calibrate", "--config", str(config)]) == 0
        run = next((root / "out").iterdir())
        header = (run / "calibration.csv").read_text().splitlines()[0]
        assert header == "title,group,alpha,n,q"
