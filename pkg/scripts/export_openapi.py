"""Regenerate frontend/openapi.json from the live FastAPI app.

The planner UI treats this document as the source of truth for the service
contract; rerun after any endpoint change:

    python scripts/export_openapi.py
"""

import json
from datetime import timedelta
from pathlib import Path

from plateopt.harness import HarnessConfig
from plateopt.qreg import GbtHyper
from plateopt.service import Workspace, create_app
from plateopt.synth import GeneratorSpec, generate, holidays_for


def main() -> None:
    ds, _ = generate(GeneratorSpec(seed=1, n_pos=10, n_titles=1,
                                   issues_per_title=4))
    lo, hi = ds.date_range()
    ws = Workspace(
        ds=ds,
        holidays=holidays_for(lo - timedelta(days=730), hi),
        config=HarnessConfig(hyper=GbtHyper(n_trees=2, max_depth=2, min_leaf=2)),
        cutoff=hi,
        audit_path=Path("/tmp/openapi-export-audit.jsonl"),
    )
    app = create_app(ws)
    out = Path(__file__).resolve().parent.parent / "frontend" / "openapi.json"
    out.write_text(json.dumps(app.openapi(), indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
