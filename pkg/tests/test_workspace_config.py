import json
import warnings
from datetime import timedelta

import pytest
from fastapi.testclient import TestClient

from plateopt.service import Workspace, create_app
from plateopt.synth import GeneratorSpec, write_world

warnings.filterwarnings("ignore", message=".*observed issue")


@pytest.fixture(scope="module")
def run_config(tmp_path_factory):
    root = tmp_path_factory.mktemp("serveworld")
    data = root / "data"
    spec = GeneratorSpec(seed=19, n_pos=30, n_titles=2, issues_per_title=8)
    write_world(spec, data)
    issues = [json.loads(l) for l in
              (data / "issues.jsonl").read_text().splitlines()]
    cutoff = sorted(i["period_start"] for i in issues)[-1]
    doc = {
        "cutoff": cutoff,
        "data": {"dir": str(data), "cost_config": str(data / "cost_config.json")},
        "model": {"n_trees": 6, "max_depth": 3, "min_leaf": 5,
                  "learning_rate": 0.3},
        "gcqr": {"alpha_grid": [0.65, 0.9]},
        "optimizer": {"scenario_budget": 8, "baseline_alpha": 0.65},
        "serve": {"run_dir": str(root / "run")},
    }
    return doc


def test_from_config_builds_working_service(run_config):
    ws = Workspace.from_config(run_config)
    assert ws.plannable_issues()
    client = TestClient(create_app(ws))
    issues = client.get("/issues").json()
    assert issues
    first = issues[0]
    plans = client.get(f"/issues/{first['title']}/{first['issue']}/plans")
    assert plans.status_code == 200
    assert ws.audit_path.parent.exists()


def test_missing_cutoff_rejected(run_config):
    from plateopt.cli import CliError
    doc = {k: v for k, v in run_config.items() if k != "cutoff"}
    with pytest.raises(CliError, match="cutoff"):
        Workspace.from_config(doc)
